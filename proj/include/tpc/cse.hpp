#pragma once

// Relevance of each context sentence to a task description, read from
// marker-position embeddings of a context-aware encoder.

#include <cmath>
#include <span>
#include <vector>

#include "tpc/backends.hpp"
#include "tpc/task_description.hpp"
#include "tpc/textseg.hpp"
#include "tpc/util.hpp"

namespace tpc {

struct RelevanceScore {
  std::size_t sentence_index = 0;
  double score = 0.0;
};

enum class ScoringFunction { Cosine };

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "cosine of vectors with dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error(ErrorCode::NonFiniteValue, "NaN/Inf in embedding");
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

struct ScoringOptions {
  Markers markers;
  ScoringFunction function = ScoringFunction::Cosine;
  /// Per-call input limit in whitespace tokens; 0 defers to the backend's own
  /// max_input_tokens(), and 0 there means the whole document in one pass.
  std::size_t window_tokens = 0;
  std::size_t max_inflight = 8;
};

/// Contiguous sentence ranges [first, last) whose token totals fit `window`.
/// A sentence larger than the window gets a range of its own.
inline std::vector<std::pair<std::size_t, std::size_t>> embedding_windows(const SegmentedContext& ctx,
                                                                          std::size_t window) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (window == 0) {
    out.emplace_back(0, ctx.size());
    return out;
  }
  std::size_t first = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const std::size_t cost = ctx.sentences[i].token_count + 1;  // + marker
    if (i > first && used + cost > window) {
      out.emplace_back(first, i);
      first = i;
      used = 0;
    }
    used += cost;
  }
  out.emplace_back(first, ctx.size());
  return out;
}

/// Embeds the question and all sentences, returns cosine scores in sentence
/// order. The question text is embedded verbatim.
inline std::vector<RelevanceScore> score_context(const TaskDescription& q, const SegmentedContext& ctx,
                                                 const EmbeddingBackend& emb, const ScoringOptions& opts = {}) {
  if (ctx.empty()) throw Error(ErrorCode::EmptyDocument, "cannot score an empty context");
  const auto question = embed(emb, mark_question(q.text, opts.markers));
  const std::size_t window = opts.window_tokens ? opts.window_tokens : emb.max_input_tokens();
  const auto windows = embedding_windows(ctx, window);

  auto chunks = parallel_map(windows.size(), opts.max_inflight, [&](std::size_t w) {
    return embed(emb, mark_sentences(ctx, windows[w].first, windows[w].second, opts.markers));
  });

  std::vector<RelevanceScore> scores;
  scores.reserve(ctx.size());
  for (const auto& chunk : chunks) {
    for (const auto& v : chunk) {
      if (v.dim() != question.front().dim()) {
        throw Error(ErrorCode::DimensionMismatch, "question and sentence vectors differ in width");
      }
      scores.push_back({scores.size(), cosine(question.front(), v)});
    }
  }
  return scores;
}

}  // namespace tpc
