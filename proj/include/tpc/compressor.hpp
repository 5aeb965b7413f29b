#pragma once

// Sentence selection under a count or token-budget constraint.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tpc/cse.hpp"
#include "tpc/textseg.hpp"

namespace tpc {

enum class ConstraintMode { TopKCount, TokenBudget, Ratio };

struct CompressionConstraint {
  ConstraintMode mode = ConstraintMode::Ratio;
  std::optional<std::size_t> k;
  std::optional<std::size_t> budget_tokens;
  std::optional<double> ratio;  // 1/tau: original tokens per kept token

  static CompressionConstraint top_k(std::size_t k) { return {ConstraintMode::TopKCount, k, {}, {}}; }
  static CompressionConstraint token_budget(std::size_t b) { return {ConstraintMode::TokenBudget, {}, b, {}}; }
  static CompressionConstraint compression_ratio(double r) { return {ConstraintMode::Ratio, {}, {}, r}; }

  void validate() const {
    const int set = int(k.has_value()) + int(budget_tokens.has_value()) + int(ratio.has_value());
    if (set != 1) throw Error(ErrorCode::InvalidConstraint, "exactly one of k / budget_tokens / ratio must be set");
    switch (mode) {
      case ConstraintMode::TopKCount:
        if (!k || *k < 1) throw Error(ErrorCode::InvalidConstraint, "top-k mode needs k >= 1");
        break;
      case ConstraintMode::TokenBudget:
        if (!budget_tokens || *budget_tokens < 1) {
          throw Error(ErrorCode::InvalidConstraint, "budget mode needs budget_tokens >= 1");
        }
        break;
      case ConstraintMode::Ratio:
        if (!ratio || !std::isfinite(*ratio) || *ratio <= 1.0) {
          throw Error(ErrorCode::InvalidConstraint, "ratio mode needs a finite ratio > 1");
        }
        break;
    }
  }

  /// Token budget for budgeted modes; nullopt in top-k mode.
  std::optional<std::size_t> resolve_budget(std::size_t total_tokens) const {
    validate();
    if (mode == ConstraintMode::TokenBudget) return budget_tokens;
    if (mode == ConstraintMode::Ratio) {
      return static_cast<std::size_t>(std::floor(static_cast<double>(total_tokens) / *ratio));
    }
    return std::nullopt;
  }
};

/// How a budget is filled from the relevance ranking.
///  - Prefix: take the longest prefix of the ranking that fits. The kept set
///    only grows as the budget grows.
///  - SkipAndContinue: a sentence that does not fit is skipped and later,
///    smaller sentences may still be taken. Packs tighter, but a larger
///    budget can evict a sentence kept under a smaller one.
enum class BudgetFill { Prefix, SkipAndContinue };

struct SelectedSentence {
  std::size_t sentence_index = 0;
  double score = 0.0;
};

struct CompressedPrompt {
  std::vector<SelectedSentence> selected;  // ascending sentence_index
  std::string text;
  std::size_t total_tokens = 0;
  std::size_t original_tokens = 0;
  double achieved_ratio = 0.0;  // original / kept; +inf when nothing was kept
  std::optional<std::size_t> budget_tokens;
  std::vector<std::size_t> dropped_oversize;  // did not fit the remaining budget at their turn
  bool empty_selection = false;
  std::vector<double> scores;  // every sentence, in sentence order

  std::vector<std::size_t> selected_indices() const {
    std::vector<std::size_t> out;
    out.reserve(selected.size());
    for (const auto& s : selected) out.push_back(s.sentence_index);
    return out;
  }
};

/// Sentence indices by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_order(std::span<const RelevanceScore> scores) {
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) throw Error(ErrorCode::NonFiniteValue, "relevance score is NaN/Inf");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
    return scores[a].sentence_index < scores[b].sentence_index;
  });
  for (auto& i : order) i = scores[i].sentence_index;
  return order;
}

/// The min(k, n) highest-scoring sentence indices, ascending.
inline std::vector<std::size_t> select_top_k(std::span<const RelevanceScore> scores, std::size_t k) {
  auto order = rank_order(scores);
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

namespace detail {

inline std::string_view joiner(const SegmentedContext& ctx, std::size_t prev, std::size_t next) {
  return next == prev + 1 ? ctx.gap(next) : std::string_view(" ");
}

inline std::size_t max_joiner_tokens(const SegmentedContext& ctx, const Tokenizer& tok) {
  std::size_t j = count_tokens(" ", tok);
  for (std::size_t i = 1; i < ctx.size(); ++i) j = std::max(j, count_tokens(ctx.gap(i), tok));
  return j;
}

inline double score_of(std::span<const RelevanceScore> scores, std::size_t index) {
  if (index < scores.size() && scores[index].sentence_index == index) return scores[index].score;
  for (const auto& s : scores) {
    if (s.sentence_index == index) return s.score;
  }
  return 0.0;
}

}  // namespace detail

/// Builds the compressed prompt from ascending sentence indices. Adjacent
/// source sentences keep their original separator; others get one space.
inline CompressedPrompt assemble(const SegmentedContext& ctx, std::span<const RelevanceScore> scores,
                                 std::vector<std::size_t> indices, const Tokenizer& tok) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  CompressedPrompt out;
  out.original_tokens = ctx.total_tokens();
  out.scores.reserve(ctx.size());
  for (std::size_t i = 0; i < ctx.size(); ++i) out.scores.push_back(detail::score_of(scores, i));
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const std::size_t i = indices[n];
    if (i >= ctx.size()) throw Error(ErrorCode::InvalidParams, "sentence index out of range");
    if (n > 0) {
      const auto j = detail::joiner(ctx, indices[n - 1], i);
      out.text.append(j);
      out.total_tokens += count_tokens(j, tok);
    }
    out.text.append(ctx.sentences[i].text);
    out.total_tokens += ctx.sentences[i].token_count;
    out.selected.push_back({i, detail::score_of(scores, i)});
  }
  out.empty_selection = out.selected.empty();
  out.achieved_ratio = out.total_tokens == 0
                           ? std::numeric_limits<double>::infinity()
                           : static_cast<double>(out.original_tokens) / static_cast<double>(out.total_tokens);
  return out;
}

struct SelectionOptions {
  BudgetFill fill = BudgetFill::Prefix;
  const TokenizerRegistry* registry = &TokenizerRegistry::global();
};

/// Greedy selection in ranking order under a token budget. Each sentence
/// after the first is charged the largest separator cost so the assembled
/// text never exceeds the budget.
inline CompressedPrompt select_under_budget(std::span<const RelevanceScore> scores, const SegmentedContext& ctx,
                                            std::size_t budget_tokens, const SelectionOptions& opts = {}) {
  const auto tok = opts.registry->get(ctx.tokenizer_id);
  const std::size_t sep = detail::max_joiner_tokens(ctx, *tok);
  std::vector<std::size_t> picked;
  std::vector<std::size_t> dropped;
  std::size_t remaining = budget_tokens;
  for (std::size_t i : rank_order(scores)) {
    const std::size_t cost = ctx.sentences.at(i).token_count + (picked.empty() ? 0 : sep);
    if (cost <= remaining) {
      picked.push_back(i);
      remaining -= cost;
    } else {
      dropped.push_back(i);
      if (opts.fill == BudgetFill::Prefix) break;
    }
  }
  auto out = assemble(ctx, scores, std::move(picked), *tok);
  out.budget_tokens = budget_tokens;
  out.dropped_oversize = std::move(dropped);
  return out;
}

struct CompressOptions {
  ScoringOptions scoring;
  SelectionOptions selection;
};

/// Scores every sentence against `q` and applies `constraint`.
inline CompressedPrompt compress(const SegmentedContext& ctx, const TaskDescription& q,
                                 const CompressionConstraint& constraint, const EmbeddingBackend& emb,
                                 const CompressOptions& opts = {}) {
  constraint.validate();
  const auto scores = score_context(q, ctx, emb, opts.scoring);
  if (constraint.mode == ConstraintMode::TopKCount) {
    const auto tok = opts.selection.registry->get(ctx.tokenizer_id);
    return assemble(ctx, scores, select_top_k(scores, *constraint.k), *tok);
  }
  return select_under_budget(scores, ctx, *constraint.resolve_budget(ctx.total_tokens()), opts.selection);
}

}  // namespace tpc
