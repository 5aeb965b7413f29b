#pragma once

// Task-descriptor orchestration: turn a long prompt into one or more task
// descriptions via a generation backend, and evaluate the supervised loss of
// a target description.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tpc/backends.hpp"
#include "tpc/task_description.hpp"
#include "tpc/templates.hpp"
#include "tpc/textseg.hpp"

namespace tpc {

enum class DescriptorMode {
  /// General instruct model; the document is wrapped in an instruction header.
  InstructHeader,
  /// Fine-tuned descriptor endpoint; the document is sent verbatim.
  FineTuned,
};

struct DescriptorOptions {
  DescriptorMode mode = DescriptorMode::InstructHeader;
  std::string header_template = std::string(templates::kCtdQueryName);
};

inline std::string descriptor_prompt(const RawDocument& p, const DescriptorOptions& opts = {}) {
  if (opts.mode == DescriptorMode::FineTuned) return p.text;
  return templates::render(templates::by_name(opts.header_template), {{"text", p.text}});
}

/// Greedy-by-default parameters for production describe calls.
inline GenerationParams default_descriptor_params() {
  GenerationParams params;
  params.max_new_tokens = 128;
  params.temperature = 0.0;
  return params;
}

inline std::vector<TaskDescription> describe_candidates(const RawDocument& p, const GenerationBackend& backend,
                                                        std::size_t n, GenerationParams params,
                                                        const DescriptorOptions& opts = {}) {
  if (is_blank(p.text)) throw Error(ErrorCode::EmptyDocument, "document '" + p.id + "' has no text");
  if (n < 1) throw Error(ErrorCode::InvalidParams, "candidate count must be >= 1");
  if (n > 1 && params.temperature == 0.0) {
    throw Error(ErrorCode::InvalidSampling, "sampling several candidates needs temperature > 0");
  }
  params.num_candidates = static_cast<int>(n);
  const auto completions = generate(backend, descriptor_prompt(p, opts), params);
  std::vector<TaskDescription> out;
  out.reserve(completions.size());
  for (const auto& c : completions) {
    const auto text = trim(c.text);
    if (text.empty()) {
      throw Error(ErrorCode::DescriptionEmpty,
                  backend.id() + " returned an empty description (candidate " + std::to_string(c.candidate_index) + ")");
    }
    TaskDescription td;
    td.text = std::string(text);
    td.origin = DescriptionOrigin::Generated;
    td.candidate_rank = c.candidate_index;
    td.gen_params = params;
    out.push_back(std::move(td));
  }
  return out;
}

inline TaskDescription describe(const RawDocument& p, const GenerationBackend& backend,
                                const GenerationParams& params = default_descriptor_params(),
                                const DescriptorOptions& opts = {}) {
  GenerationParams single = params;
  single.num_candidates = 1;
  auto out = describe_candidates(p, backend, 1, single, opts);
  out.front().candidate_rank.reset();
  return std::move(out.front());
}

/// Prompt-aware bypass: an explicit question is used as-is and the descriptor
/// backend is never contacted.
inline TaskDescription resolve_task(const RawDocument& p, const std::optional<std::string>& question,
                                    const GenerationBackend& backend,
                                    const GenerationParams& params = default_descriptor_params(),
                                    const DescriptorOptions& opts = {}) {
  if (question) return TaskDescription::user_supplied(*question);
  return describe(p, backend, params, opts);
}

struct NllResult {
  double total = 0.0;  // -sum_t log P(q_t | q_<t, p)
  double mean = 0.0;   // total / tokens
  std::size_t tokens = 0;
};

/// Negative log-likelihood of `target` under teacher forcing.
inline NllResult nll(const GenerationBackend& backend, std::string_view prompt, std::string_view target) {
  const auto dists = score_continuation(backend, prompt, target, 1);
  NllResult r;
  for (const auto& d : dists) r.total -= d.gold_logprob;
  r.total = r.total == 0.0 ? 0.0 : r.total;  // no -0
  r.tokens = dists.size();
  r.mean = r.total / static_cast<double>(r.tokens);
  return r;
}

}  // namespace tpc
