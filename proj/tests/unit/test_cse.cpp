#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "tpc/compressor.hpp"
#include "tpc/cse.hpp"
#include "tpc/mock_backends.hpp"

using namespace tpc;

TEST(Cosine, ClosedForms) {
  const std::vector<double> x = {1, 0, 0};
  const std::vector<double> y = {0, 2, 0};
  const std::vector<double> z = {-3, 0, 0};
  const std::vector<double> w = {1, 1, 0};
  EXPECT_DOUBLE_EQ(cosine(x, x), 1.0);
  EXPECT_DOUBLE_EQ(cosine(x, y), 0.0);
  EXPECT_DOUBLE_EQ(cosine(x, z), -1.0);
  EXPECT_NEAR(cosine(x, w), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, Errors) {
  const std::vector<double> a = {1, 2};
  const std::vector<double> b = {1, 2, 3};
  const std::vector<double> zero = {0, 0};
  const std::vector<double> nan = {std::nan(""), 1};
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  EXPECT_EQ(code([&] { cosine(a, b); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code([&] { cosine(a, zero); }), ErrorCode::ZeroVector);
  EXPECT_EQ(code([&] { cosine(a, nan); }), ErrorCode::NonFiniteValue);
}

TEST(Cosine, RandomVectorsStayInRangeAndSymmetric) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(8);
    std::vector<double> b(8);
    for (auto& v : a) v = rng.uniform01() * 2 - 1;
    for (auto& v : b) v = rng.uniform01() * 2 - 1;
    const double c = cosine(a, b);
    ASSERT_GE(c, -1.0);
    ASSERT_LE(c, 1.0);
    ASSERT_EQ(c, cosine(b, a));
  }
}

TEST(Windows, PartitionSentencesInOrder) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(1 + rng.uniform_index(30));
    for (auto& c : counts) c = 1 + rng.uniform_index(20);
    const auto ctx = fixture::context_with_counts(counts);
    const std::size_t window = rng.uniform_index(60);
    const auto ws = embedding_windows(ctx, window);
    std::size_t expect_first = 0;
    for (const auto& [first, last] : ws) {
      ASSERT_EQ(first, expect_first);
      ASSERT_LT(first, last);
      if (window && last - first > 1) {
        std::size_t used = 0;
        for (std::size_t i = first; i < last; ++i) used += counts[i] + 1;
        ASSERT_LE(used, window);
      }
      expect_first = last;
    }
    ASSERT_EQ(expect_first, ctx.size());
  }
}

TEST(ScoreContext, OrderedScoresAndLexicalPreference) {
  mock::HashEmbeddingBackend::Options o;
  o.context_weight = 0.0;
  mock::HashEmbeddingBackend emb(o);
  const auto ctx = segment(RawDocument{"d",
                                       "The treaty was signed in Vienna. Bananas are yellow. "
                                       "Rain fell all week. Vienna hosted the treaty talks.",
                                       {}},
                           WhitespaceTokenizer{});
  const auto scores = score_context(TaskDescription::user_supplied("Where was the treaty signed?"), ctx, emb);
  ASSERT_EQ(scores.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(scores[i].sentence_index, i);
  EXPECT_GT(scores[0].score, scores[1].score);
  EXPECT_GT(scores[0].score, scores[2].score);
  EXPECT_GT(scores[3].score, scores[1].score);
}

TEST(ScoreContext, WindowingDoesNotChangeContextFreeScores) {
  mock::HashEmbeddingBackend::Options o;
  o.context_weight = 0.0;
  mock::HashEmbeddingBackend emb(o);
  Rng rng(21);
  std::string text;
  for (int i = 0; i < 40; ++i) text += fixture::random_words(rng, 3 + rng.uniform_index(10)) + ". ";
  const auto ctx = segment(RawDocument{"d", text, {}}, WhitespaceTokenizer{});
  const auto q = TaskDescription::user_supplied("t1 t2 t3");
  ScoringOptions whole;
  ScoringOptions windowed;
  windowed.window_tokens = 25;
  windowed.max_inflight = 3;
  const auto a = score_context(q, ctx, emb, whole);
  const auto b = score_context(q, ctx, emb, windowed);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i].score, b[i].score);
  EXPECT_GT(emb.embed_calls(), 2u);
}

TEST(ScoreContext, BackendFailurePropagates) {
  mock::HashEmbeddingBackend emb;
  emb.set_available(false);
  const auto ctx = segment(RawDocument{"d", "A b. C d.", {}}, WhitespaceTokenizer{});
  try {
    score_context(TaskDescription::user_supplied("q"), ctx, emb);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}

TEST(Cosine, HandEvaluatedAndScaleInvariant) {
  const std::vector<double> a = {1, 1};
  const std::vector<double> b = {1, 0};
  EXPECT_NEAR(cosine(a, b), 1.0 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(cosine(a, b), 0.70710678, 1e-8);
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(6);
    std::vector<double> y(6);
    for (auto& v : x) v = rng.uniform01() - 0.5;
    for (auto& v : y) v = rng.uniform01() - 0.5;
    const double alpha = 0.01 + rng.uniform01() * 100;
    std::vector<double> ax = x;
    for (auto& v : ax) v *= alpha;
    ASSERT_NEAR(cosine(ax, y), cosine(x, y), 1e-12);
  }
}

TEST(ScoreContext, EngineeredSentenceMatchesQuestion) {
  // Sentence 2 (0-based 1) gets the question's vector.
  mock::CallbackEmbeddingBackend emb(3, [](const MarkedText& m) {
    if (m.kind == MarkerKind::Question) return std::vector<std::vector<double>>{{0.2, 0.9, 0.1}};
    return std::vector<std::vector<double>>{{1, 0, 0}, {0.2, 0.9, 0.1}, {0, 0, 1}};
  });
  const auto ctx = segment(RawDocument{"d", "One. Two. Three.", {}}, WhitespaceTokenizer{});
  const auto scores = score_context(TaskDescription::user_supplied("q"), ctx, emb);
  EXPECT_NEAR(scores[1].score, 1.0, 1e-15);
  EXPECT_EQ(rank_order(scores).front(), 1u);
}

TEST(ScoreContext, SingleSentence) {
  mock::HashEmbeddingBackend emb;
  const auto ctx = segment(RawDocument{"d", "Only one sentence here", {}}, WhitespaceTokenizer{});
  EXPECT_EQ(score_context(TaskDescription::user_supplied("q"), ctx, emb).size(), 1u);
}

TEST(ScoreContext, PermutationEquivarianceOnlyWithoutContext) {
  Rng rng(41);
  std::vector<std::string> sentences;
  for (int i = 0; i < 8; ++i) sentences.push_back(fixture::random_words(rng, 4 + rng.uniform_index(6)) + ".");
  std::vector<std::size_t> perm(sentences.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  auto join = [&](const std::vector<std::size_t>& order) {
    std::string t;
    for (std::size_t i : order) t += sentences[i] + " ";
    return t;
  };
  std::vector<std::size_t> identity(sentences.size());
  std::iota(identity.begin(), identity.end(), 0);
  const auto q = TaskDescription::user_supplied("t1 t2 t3 t4");

  auto run = [&](const EmbeddingBackend& emb) {
    const auto base = score_context(q, segment(RawDocument{"a", join(identity), {}}, WhitespaceTokenizer{}), emb);
    const auto moved = score_context(q, segment(RawDocument{"b", join(perm), {}}, WhitespaceTokenizer{}), emb);
    bool equal = true;
    for (std::size_t k = 0; k < perm.size(); ++k) equal = equal && moved[k].score == base[perm[k]].score;
    return equal;
  };
  mock::HashEmbeddingBackend::Options free_opts;
  free_opts.context_weight = 0.0;
  EXPECT_TRUE(run(mock::HashEmbeddingBackend(free_opts)));
  EXPECT_FALSE(run(mock::HashEmbeddingBackend()));
}

TEST(ScoreContext, RankingIsScaleInvariant) {
  mock::HashEmbeddingBackend::Options small;
  mock::HashEmbeddingBackend::Options large;
  large.scale = 37.5;
  Rng rng(51);
  std::string text;
  for (int i = 0; i < 30; ++i) text += fixture::random_words(rng, 3 + rng.uniform_index(8)) + ". ";
  const auto ctx = segment(RawDocument{"d", text, {}}, WhitespaceTokenizer{});
  const auto q = TaskDescription::user_supplied("t2 t9");
  EXPECT_EQ(rank_order(score_context(q, ctx, mock::HashEmbeddingBackend(small))),
            rank_order(score_context(q, ctx, mock::HashEmbeddingBackend(large))));
}
