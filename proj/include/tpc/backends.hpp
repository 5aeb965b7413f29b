#pragma once

// Contracts for the two kinds of model access the engine needs: text
// generation with per-token log-probabilities, and context-aware embedding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tpc/error.hpp"
#include "tpc/textseg.hpp"

namespace tpc {

struct GenerationParams {
  int max_new_tokens = 64;
  double temperature = 0.0;
  double top_p = 1.0;
  int num_candidates = 1;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> stop_sequences;

  void validate() const {
    if (max_new_tokens < 1) throw Error(ErrorCode::InvalidParams, "max_new_tokens must be >= 1");
    if (!std::isfinite(temperature) || temperature < 0.0) {
      throw Error(ErrorCode::InvalidParams, "temperature must be finite and >= 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::InvalidParams, "top_p must be in (0,1]");
    if (num_candidates < 1) throw Error(ErrorCode::InvalidParams, "num_candidates must be >= 1");
    if (temperature == 0.0 && num_candidates > 1) {
      throw Error(ErrorCode::InvalidSampling, "greedy decoding (temperature 0) yields a single candidate");
    }
  }
};

struct Completion {
  std::string text;
  std::size_t candidate_index = 0;
};

using TokenId = std::int64_t;

/// Next-token distribution at one continuation position. Entries are sorted by
/// descending log-probability (ties by ascending token id). The gold token is
/// always present in `entries`, even when it falls outside the requested top-k.
struct TokenDistribution {
  std::size_t position = 0;
  std::vector<std::pair<TokenId, double>> entries;
  bool is_truncated = false;
  TokenId gold_token = -1;
  double gold_logprob = 0.0;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::optional<std::size_t> sentence_index;  // unset for question vectors
  bool is_question = false;

  std::size_t dim() const noexcept { return values.size(); }
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  virtual std::string id() const = 0;

  /// Returns params.num_candidates completions.
  virtual std::vector<Completion> generate(std::string_view prompt,
                                           const GenerationParams& params) const = 0;

  /// Teacher-forced scoring of `continuation` given `prompt`.
  virtual std::vector<TokenDistribution> score_continuation(std::string_view prompt,
                                                            std::string_view continuation,
                                                            std::size_t top_k) const = 0;

  /// Log-likelihood of the continuation. Backends that cannot return
  /// per-position distributions may still implement this.
  virtual double sequence_logprob(std::string_view prompt, std::string_view continuation) const {
    double sum = 0.0;
    for (const auto& d : score_continuation(prompt, continuation, 1)) sum += d.gold_logprob;
    return sum;
  }

  virtual bool healthy() const { return true; }
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;

  /// Largest marked input (in whitespace-tokenizer tokens) accepted per
  /// call; 0 means unbounded.
  virtual std::size_t max_input_tokens() const { return 0; }

  /// One vector per marker occurrence in `marked.text`, in marker order.
  virtual std::vector<std::vector<double>> embed_raw(const MarkedText& marked) const = 0;

  virtual bool healthy() const { return true; }
};

// ---------------------------------------------------------------------------
// Checked entry points. Backend implementations stay thin; the contract
// (preconditions, counts, widths, finiteness) is enforced here.

inline std::vector<Completion> generate(const GenerationBackend& backend, std::string_view prompt,
                                        const GenerationParams& params) {
  if (is_blank(prompt)) throw Error(ErrorCode::InvalidParams, "prompt is empty");
  params.validate();
  auto out = backend.generate(prompt, params);
  if (out.size() != static_cast<std::size_t>(params.num_candidates)) {
    throw Error(ErrorCode::BackendRejected,
                backend.id() + " returned " + std::to_string(out.size()) + " completions, expected " +
                    std::to_string(params.num_candidates));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].candidate_index = i;
  return out;
}

inline std::vector<TokenDistribution> score_continuation(const GenerationBackend& backend,
                                                         std::string_view prompt,
                                                         std::string_view continuation,
                                                         std::size_t top_k) {
  if (top_k < 1) throw Error(ErrorCode::InvalidParams, "top_k must be >= 1");
  if (is_blank(continuation)) throw Error(ErrorCode::InvalidParams, "continuation is empty");
  auto dists = backend.score_continuation(prompt, continuation, top_k);
  if (dists.empty()) throw Error(ErrorCode::InvalidParams, "continuation produced no tokens");
  for (std::size_t i = 0; i < dists.size(); ++i) {
    auto& d = dists[i];
    d.position = i;
    for (const auto& [tok, lp] : d.entries) {
      if (std::isnan(lp) || lp > 0.0) {
        throw Error(ErrorCode::InvalidDistribution, "log-probability must be <= 0");
      }
    }
    const bool has_gold = std::any_of(d.entries.begin(), d.entries.end(),
                                      [&](const auto& e) { return e.first == d.gold_token; });
    if (!has_gold) d.entries.emplace_back(d.gold_token, d.gold_logprob);
    std::stable_sort(d.entries.begin(), d.entries.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
  }
  return dists;
}

inline std::vector<EmbeddingVector> embed(const EmbeddingBackend& backend, const MarkedText& marked) {
  const std::size_t markers = count_occurrences(marked.text, marked.marker);
  if (markers == 0) throw Error(ErrorCode::InvalidParams, "marked text contains no marker");
  auto raw = backend.embed_raw(marked);
  if (raw.size() != markers) {
    throw Error(ErrorCode::DimensionMismatch, backend.id() + " returned " + std::to_string(raw.size()) +
                                                  " vectors for " + std::to_string(markers) + " markers");
  }
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  const std::size_t dim = backend.dim();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].size() != dim || dim == 0) {
      throw Error(ErrorCode::DimensionMismatch, backend.id() + " returned a vector of width " +
                                                    std::to_string(raw[i].size()) + ", expected " +
                                                    std::to_string(dim));
    }
    for (double v : raw[i]) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, backend.id() + " returned NaN/Inf");
    }
    EmbeddingVector ev;
    ev.values = std::move(raw[i]);
    ev.is_question = marked.kind == MarkerKind::Question;
    if (!ev.is_question) ev.sentence_index = i;
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace tpc
