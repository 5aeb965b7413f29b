#pragma once

// Backend construction from an EngineConfig and the single-document
// compression pipeline shared by the CLI and the service.

#include <memory>

#include "tpc/config.hpp"
#include "tpc/mock_backends.hpp"
#include "tpc/remote_backends.hpp"

namespace tpc {

struct BackendSet {
  std::shared_ptr<GenerationBackend> descriptor;
  std::shared_ptr<GenerationBackend> llm;
  std::shared_ptr<EmbeddingBackend> embedder;
  TokenizerHandle tokenizer;

  RefineBackends refine() const { return {*descriptor, *llm, *embedder, *tokenizer}; }
  EvalBackends eval() const { return {*descriptor, *llm, *embedder, *tokenizer}; }
};

namespace detail {

inline std::shared_ptr<GenerationBackend> make_generation(const GenerationBackendConfig& c,
                                                          const std::shared_ptr<remote::InflightLimiter>& limiter) {
  if (c.kind == BackendKind::Remote) {
    if (c.base_url.empty()) throw Error(ErrorCode::InvalidParams, "remote backend '" + c.id + "' needs base_url");
    return std::make_shared<remote::RemoteGenerationBackend>(
        c.id, remote::ClientOptions{c.base_url, c.api_key_env, c.timeout_ms, c.max_retries, 200, limiter});
  }
  mock::MockGenerationBackend::Options o;
  o.id = c.id;
  o.vocab_size = c.vocab_size;
  o.context_window = c.context_window;
  o.distributions = c.logprobs;
  auto b = std::make_shared<mock::MockGenerationBackend>(o);
  b->responder(mock::curation_responder(c.fault_rate));
  return b;
}

inline std::shared_ptr<EmbeddingBackend> make_embedding(const EmbeddingBackendConfig& c,
                                                        const std::shared_ptr<remote::InflightLimiter>& limiter) {
  if (c.kind == BackendKind::Remote) {
    if (c.base_url.empty()) throw Error(ErrorCode::InvalidParams, "remote backend '" + c.id + "' needs base_url");
    return std::make_shared<remote::RemoteEmbeddingBackend>(
        c.id, c.dim, c.max_input_tokens,
        remote::ClientOptions{c.base_url, c.api_key_env, c.timeout_ms, c.max_retries, 200, limiter});
  }
  mock::HashEmbeddingBackend::Options o;
  o.id = c.id;
  o.dim = c.dim;
  o.context_weight = c.context_weight;
  o.lexical = c.lexical;
  o.max_input_tokens = c.max_input_tokens;
  return std::make_shared<mock::HashEmbeddingBackend>(o);
}

}  // namespace detail

/// Every remote client built here shares one max_inflight limiter.
inline BackendSet make_backends(const EngineConfig& c,
                                const TokenizerRegistry& registry = TokenizerRegistry::global()) {
  auto limiter = std::make_shared<remote::InflightLimiter>(c.max_inflight);
  BackendSet s;
  s.descriptor = detail::make_generation(c.descriptor, limiter);
  s.llm = detail::make_generation(c.llm, limiter);
  s.embedder = detail::make_embedding(c.embedder, limiter);
  s.tokenizer = registry.get(c.tokenizer_id);
  return s;
}

struct CompressionRun {
  TaskDescription task;
  CompressedPrompt prompt;
  bool prompt_aware = false;
};

/// Segment, resolve the task description (bypassing the descriptor when a
/// question is given) and compress under `constraint`.
inline CompressionRun compress_document(const EngineConfig& c, const BackendSet& b, const RawDocument& doc,
                                        const std::optional<std::string>& question,
                                        const CompressionConstraint& constraint) {
  constraint.validate();
  if (is_blank(doc.text)) throw Error(ErrorCode::EmptyDocument, "document '" + doc.id + "' is empty");
  if (question && is_blank(*question)) throw Error(ErrorCode::EmptyQuestion, "question is empty");
  const auto ctx = segment(doc, *b.tokenizer, segmenter_options(c));
  CompressionRun run;
  run.prompt_aware = question.has_value();
  run.task = resolve_task(doc, question, *b.descriptor, c.descriptor_params, descriptor_options(c));
  run.prompt = compress(ctx, run.task, constraint, *b.embedder, compress_options(c));
  return run;
}

/// Response body of the service and the CLI's --stats file.
inline nlohmann::json compression_json(const CompressionRun& run, const std::string& digest) {
  const auto& out = run.prompt;
  nlohmann::json j = {
      {"compressed", out.text},
      {"selected_indices", out.selected_indices()},
      {"scores", out.scores},
      {"tokens", out.total_tokens},
      {"original_tokens", out.original_tokens},
      {"achieved_ratio", detail::finite_or_null(out.achieved_ratio)},
      {"budget_tokens", out.budget_tokens ? nlohmann::json(*out.budget_tokens) : nlohmann::json(nullptr)},
      {"empty_selection", out.empty_selection},
      {"mode", run.prompt_aware ? "prompt_aware" : "prompt_agnostic"},
      {"config_digest", digest},
  };
  if (!run.prompt_aware) j["task_description"] = run.task.text;
  if (out.empty_selection) j["warning"] = "empty selection: no sentence fits the budget";
  return j;
}

}  // namespace tpc
