#include <gtest/gtest.h>

#include <cmath>

#include "tpc/backends.hpp"
#include "tpc/mock_backends.hpp"

using namespace tpc;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no tpc::Error thrown";
  return ErrorCode::Io;
}

}  // namespace

TEST(GenerationParams, Validation) {
  GenerationParams p;
  EXPECT_NO_THROW(p.validate());
  p.num_candidates = 3;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidSampling);
  p.temperature = 0.7;
  EXPECT_NO_THROW(p.validate());
  p.top_p = 0.0;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidParams);
  p.top_p = 1.0;
  p.max_new_tokens = 0;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidParams);
}

TEST(MockGeneration, GreedyIsDeterministicAndSeedFree) {
  mock::MockGenerationBackend gen;
  GenerationParams a;
  a.seed = 1;
  GenerationParams b;
  b.seed = 99;
  const auto x = generate(gen, "Alpha bravo charlie delta echo.", a);
  const auto y = generate(gen, "Alpha bravo charlie delta echo.", b);
  ASSERT_EQ(x.size(), 1u);
  EXPECT_EQ(x[0].text, y[0].text);
  EXPECT_FALSE(x[0].text.empty());
}

TEST(MockGeneration, SampledCandidatesDependOnSeed) {
  mock::MockGenerationBackend gen;
  GenerationParams p;
  p.temperature = 0.8;
  p.num_candidates = 4;
  p.seed = 7;
  const std::string prompt = "Alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima.";
  const auto first = generate(gen, prompt, p);
  const auto again = generate(gen, prompt, p);
  ASSERT_EQ(first.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(first[i].text, again[i].text);
    EXPECT_EQ(first[i].candidate_index, i);
  }
  p.seed = 8;
  const auto other = generate(gen, prompt, p);
  bool differs = false;
  for (std::size_t i = 0; i < 4; ++i) differs = differs || other[i].text != first[i].text;
  EXPECT_TRUE(differs);
}

TEST(MockGeneration, ScriptStopSequencesAndEmptyPrompt) {
  mock::MockGenerationBackend gen;
  gen.script("q", {"hello STOP world"});
  GenerationParams p;
  p.stop_sequences = {"STOP"};
  EXPECT_EQ(generate(gen, "q", p)[0].text, "hello ");
  EXPECT_EQ(code_of([&] { generate(gen, "", p); }), ErrorCode::InvalidParams);
}

TEST(MockGeneration, AvailabilityAndContextWindow) {
  mock::MockGenerationBackend::Options o;
  o.context_window = 3;
  mock::MockGenerationBackend gen(o);
  try {
    generate(gen, "one two three four five", {});
    FAIL();
  } catch (const ContextOverflowError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ContextOverflow);
    EXPECT_EQ(e.overflow(), 2u);
    EXPECT_FALSE(e.retryable());
  }
  gen.set_available(false);
  EXPECT_FALSE(gen.healthy());
  try {
    generate(gen, "one", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
    EXPECT_TRUE(e.retryable());
  }
}

TEST(MockScoring, GoldAlwaysPresentAndSorted) {
  mock::MockGenerationBackend gen;
  const auto dists = score_continuation(gen, "some prompt words here", "alpha beta gamma", 2);
  ASSERT_EQ(dists.size(), 3u);
  const std::vector<std::string> toks = {"alpha", "beta", "gamma"};
  for (std::size_t t = 0; t < dists.size(); ++t) {
    const auto& d = dists[t];
    EXPECT_EQ(d.position, t);
    EXPECT_EQ(d.gold_token, mock::token_id(toks[t], gen.vocab_size()));
    EXPECT_TRUE(d.is_truncated);
    bool found = false;
    for (std::size_t i = 0; i < d.entries.size(); ++i) {
      EXPECT_LE(d.entries[i].second, 0.0);
      if (i) EXPECT_GE(d.entries[i - 1].second, d.entries[i].second);
      found = found || d.entries[i].first == d.gold_token;
    }
    EXPECT_TRUE(found);
    EXPECT_LE(d.entries.size(), 3u);
  }
}

TEST(MockScoring, SequenceLogprobMatchesGoldSum) {
  mock::MockGenerationBackend gen;
  const auto dists = score_continuation(gen, "x y z", "a b a", 1);
  double sum = 0.0;
  for (const auto& d : dists) sum += d.gold_logprob;
  EXPECT_NEAR(gen.sequence_logprob("x y z", "a b a"), sum, 1e-12);
}

TEST(MockScoring, LogprobsUnsupported) {
  mock::MockGenerationBackend::Options o;
  o.distributions = false;
  mock::MockGenerationBackend gen(o);
  EXPECT_EQ(code_of([&] { score_continuation(gen, "p", "c", 5); }), ErrorCode::LogprobsUnsupported);
  EXPECT_EQ(code_of([&] { score_continuation(gen, "p", "c", 0); }), ErrorCode::InvalidParams);
}

class FixedGen final : public GenerationBackend {
 public:
  std::vector<TokenDistribution> dists;
  std::string id() const override { return "fixed"; }
  std::vector<Completion> generate(std::string_view, const GenerationParams&) const override { return {}; }
  std::vector<TokenDistribution> score_continuation(std::string_view, std::string_view,
                                                    std::size_t) const override {
    return dists;
  }
};

TEST(ScoreContinuationChecks, RejectsPositiveAndNanLogprobs) {
  FixedGen gen;
  TokenDistribution d;
  d.gold_token = 1;
  d.gold_logprob = -0.5;
  d.entries = {{1, 0.2}};
  gen.dists = {d};
  EXPECT_EQ(code_of([&] { score_continuation(gen, "p", "c", 1); }), ErrorCode::InvalidDistribution);
  gen.dists[0].entries = {{1, std::nan("")}};
  EXPECT_EQ(code_of([&] { score_continuation(gen, "p", "c", 1); }), ErrorCode::InvalidDistribution);
}

TEST(ScoreContinuationChecks, InsertsMissingGold) {
  FixedGen gen;
  TokenDistribution d;
  d.gold_token = 9;
  d.gold_logprob = -3.0;
  d.entries = {{1, -0.1}};
  gen.dists = {d};
  const auto out = score_continuation(gen, "p", "c", 1);
  ASSERT_EQ(out[0].entries.size(), 2u);
  EXPECT_EQ(out[0].entries[1].first, 9);
}

TEST(CompletionCount, MismatchIsRejected) {
  FixedGen gen;
  EXPECT_EQ(code_of([&] { generate(gen, "p", {}); }), ErrorCode::BackendRejected);
}

TEST(Embedding, OneVectorPerMarker) {
  mock::HashEmbeddingBackend emb;
  const auto ctx = segment(RawDocument{"d", "One fish. Two fish. Red fish.", {}}, WhitespaceTokenizer{});
  const auto vs = embed(emb, mark_sentences(ctx));
  ASSERT_EQ(vs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(vs[i].dim(), emb.dim());
    EXPECT_EQ(vs[i].sentence_index, i);
    EXPECT_FALSE(vs[i].is_question);
  }
  const auto q = embed(emb, mark_question("Which fish?"));
  ASSERT_EQ(q.size(), 1u);
  EXPECT_TRUE(q[0].is_question);
  EXPECT_FALSE(q[0].sentence_index.has_value());
}

TEST(Embedding, SentenceVectorsAreContextSensitive) {
  mock::HashEmbeddingBackend emb;
  const auto a = segment(RawDocument{"a", "Apples are red. The sky is blue.", {}}, WhitespaceTokenizer{});
  const auto b = segment(RawDocument{"b", "Grass is green. The sky is blue.", {}}, WhitespaceTokenizer{});
  const auto va = embed(emb, mark_sentences(a));
  const auto vb = embed(emb, mark_sentences(b));
  EXPECT_NE(va[1].values, vb[1].values);
  // No preceding text: the first sentence of a document has no context part.
  const auto solo = segment(RawDocument{"c", "The sky is blue.", {}}, WhitespaceTokenizer{});
  EXPECT_EQ(embed(emb, mark_sentences(solo))[0].values, embed(emb, mark_sentences(solo))[0].values);
}

TEST(Embedding, ContractViolations) {
  mock::CallbackEmbeddingBackend wrong_count(2, [](const MarkedText&) {
    return std::vector<std::vector<double>>{{1.0, 0.0}, {0.0, 1.0}};
  });
  EXPECT_EQ(code_of([&] { embed(wrong_count, mark_question("q")); }), ErrorCode::DimensionMismatch);

  mock::CallbackEmbeddingBackend wrong_dim(3, [](const MarkedText&) {
    return std::vector<std::vector<double>>{{1.0, 0.0}};
  });
  EXPECT_EQ(code_of([&] { embed(wrong_dim, mark_question("q")); }), ErrorCode::DimensionMismatch);

  mock::CallbackEmbeddingBackend nan(2, [](const MarkedText&) {
    return std::vector<std::vector<double>>{{1.0, std::nan("")}};
  });
  EXPECT_EQ(code_of([&] { embed(nan, mark_question("q")); }), ErrorCode::NonFiniteValue);
}

TEST(MockScoring, UniformFourTokenVocabulary) {
  mock::MockGenerationBackend::Options o;
  o.vocab_size = 4;
  mock::MockGenerationBackend gen(o);
  gen.scoring_model(mock::uniform_model(4));
  const auto d = score_continuation(gen, "prompt", "x y", 4);
  ASSERT_EQ(d.size(), 2u);
  for (const auto& pos : d) {
    EXPECT_EQ(pos.entries.size(), 4u);
    EXPECT_FALSE(pos.is_truncated);
    for (const auto& [tok, lp] : pos.entries) EXPECT_DOUBLE_EQ(lp, std::log(0.25));
  }
}

TEST(MockScoring, GoldOutsideTopKIsStillReported) {
  mock::MockGenerationBackend::Options o;
  o.vocab_size = 8;
  mock::MockGenerationBackend gen(o);
  const TokenId gold = mock::token_id("g", 8);
  // Gold token ranks 5th.
  gen.scoring_model([gold](std::string_view, std::span<const std::string>) {
    std::vector<double> p(8, 0.0);
    std::vector<double> mass = {0.3, 0.25, 0.2, 0.1, 0.08, 0.04, 0.02, 0.01};
    std::size_t slot = 0;
    for (std::size_t t = 0; t < 8; ++t) {
      if (static_cast<TokenId>(t) == gold) continue;
      p[t] = mass[slot == 4 ? ++slot : slot];
      ++slot;
    }
    p[static_cast<std::size_t>(gold)] = mass[4];
    return p;
  });
  const auto d = score_continuation(gen, "prompt", "g", 3);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].entries.size(), 4u);
  EXPECT_EQ(d[0].entries.back().first, gold);
  EXPECT_DOUBLE_EQ(d[0].gold_logprob, std::log(0.08));
  EXPECT_TRUE(d[0].is_truncated);
  const auto again = score_continuation(gen, "prompt", "g", 3);
  EXPECT_EQ(again[0].entries, d[0].entries);
}
