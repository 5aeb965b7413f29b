#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "test_support.hpp"
#include "tpc/curation.hpp"
#include "tpc/mock_backends.hpp"

using namespace tpc;

namespace {

const char* kToyText =
    "John is married to Mary. They've decided to spend their marriage anniversary in Spain. Mary was "
    "afraid that their two small children, Jody and Sue, were too small for a flight. That's why she "
    "asked her elder sister Jane to look after them.";

// The worked response that follows the toy example inside the multi-hop prompt.
std::string toy_response() {
  const std::string_view tmpl = templates::kMcqrMultihopV1;
  const auto begin = tmpl.find("Questions:\n");
  const auto end = tmpl.find("\n\nNow, solve this example:");
  return std::string(tmpl.substr(begin, end - begin));
}

std::vector<RawDocument> synthetic_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RawDocument> out;
  for (std::size_t d = 0; d < n; ++d) {
    std::string text;
    const std::size_t sentences = 2 + rng.uniform_index(12);
    for (std::size_t s = 0; s < sentences; ++s) {
      text += "Item" + std::to_string(s) + " " + fixture::random_words(rng, 4 + rng.uniform_index(8)) + ". ";
    }
    out.push_back({"doc" + std::to_string(d), text, {}});
  }
  return out;
}

}  // namespace

TEST(Numbering, FormatAndInverse) {
  const auto two = segment(RawDocument{"d", "A. B.", {}}, WhitespaceTokenizer{});
  EXPECT_EQ(number_sentences(two), "[[1]] A. [[2]] B.");
  const auto one = segment(RawDocument{"d", "Only one", {}}, WhitespaceTokenizer{});
  EXPECT_EQ(number_sentences(one), "[[1]] Only one");

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t n = 1 + rng.uniform_index(15);
    for (std::size_t i = 0; i < n; ++i) text += fixture::random_words(rng, 1 + rng.uniform_index(6)) + ". ";
    const auto ctx = segment(RawDocument{"d", text, {}}, WhitespaceTokenizer{});
    const auto back = strip_numbering(number_sentences(ctx));
    ASSERT_EQ(back.size(), ctx.size());
    for (std::size_t i = 0; i < back.size(); ++i) ASSERT_EQ(back[i], ctx.sentences[i].text);
  }
  EXPECT_THROW(strip_numbering("[[2]] wrong start"), Error);
}

TEST(ParseMultihop, ToyExample) {
  const auto parsed = parse_multihop(toy_response());
  EXPECT_EQ(parsed.question, "How many children does John have?");
  EXPECT_EQ(parsed.necessary, (std::vector<std::size_t>{1, 3}));
  EXPECT_NE(parsed.rationale.find("Question 1: Who is John married to?"), std::string::npos);
}

TEST(ParseMultihop, DuplicatesAndNoise) {
  const auto p = parse_multihop("noise\nFinal question: Why?\n  necessary sentences: [[3]], [[3]], [[x]] [[2]]\n");
  EXPECT_EQ(p.necessary, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(p.question, "Why?");
}

TEST(ParseMultihop, Failures) {
  try {
    parse_multihop("Final question: Why?\nno citations here");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseFailure);
    EXPECT_EQ(e.raw_response(), "Final question: Why?\nno citations here");
  }
  EXPECT_THROW(parse_multihop("Necessary sentences: [[1]], [[2]]"), ParseError);
  EXPECT_THROW(parse_multihop("Final question:\nNecessary sentences: [[1]]"), ParseError);
  EXPECT_THROW(parse_multihop("Final question: Q\nNecessary sentences: none"), ParseError);
}

TEST(CurateMcqr, ToyExampleYieldsOneAndThree) {
  const RawDocument doc{"toy", kToyText, {}};
  const auto ctx = segment(doc, WhitespaceTokenizer{});
  ASSERT_EQ(ctx.size(), 4u);
  mock::MockGenerationBackend llm;
  llm.script(templates::render_multihop_prompt(number_sentences(ctx)), {toy_response()});
  const auto out = curate_mcqr({doc}, llm);
  ASSERT_EQ(out.records.size(), 1u);
  const auto& t = out.records.front();
  EXPECT_EQ(t.positive_indices, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(t.negative_indices, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(t.question, "How many children does John have?");
  EXPECT_FALSE(validate_tuple(t).has_value());
}

TEST(CurateMcqr, RejectReasons) {
  const RawDocument doc{"toy", kToyText, {}};
  const auto prompt = templates::render_multihop_prompt(number_sentences(segment(doc, WhitespaceTokenizer{})));
  auto reason_for = [&](const std::string& reply) {
    mock::MockGenerationBackend llm;
    llm.script(prompt, {reply});
    const auto out = curate_mcqr({doc}, llm);
    EXPECT_EQ(out.records.size() + out.rejects.size(), 1u);
    return out.rejects.empty() ? std::optional<RejectReason>() : out.rejects.front().reason;
  };
  EXPECT_EQ(reason_for("Final question: Q?\nNecessary sentences: [[2]]"), RejectReason::NotMultiHop);
  EXPECT_EQ(reason_for("Final question: Q?\nNecessary sentences: [[2]], [[3]], [[3]]").has_value(), false);
  EXPECT_EQ(reason_for("Final question: Q?\nNecessary sentences: [[1]], [[5]]"), RejectReason::IndexOutOfRange);
  EXPECT_EQ(reason_for("Final question: Q?\nNecessary sentences: [[0]], [[2]]"), RejectReason::IndexOutOfRange);
  EXPECT_EQ(reason_for("I do not know."), RejectReason::ParseFailure);

  mock::MockGenerationBackend llm;
  const auto short_doc = curate_mcqr({RawDocument{"s", "One. Two. Three.", {}}}, llm);
  ASSERT_EQ(short_doc.rejects.size(), 1u);
  EXPECT_EQ(short_doc.rejects.front().reason, RejectReason::TooFewSentences);

  llm.set_available(false);
  const auto down = curate_mcqr({doc}, llm);
  ASSERT_EQ(down.rejects.size(), 1u);
  EXPECT_EQ(down.rejects.front().reason, RejectReason::BackendError);
  EXPECT_FALSE(down.rejects.front().detail.empty());
}

TEST(CurateMcqr, NegativesAreSubsampled) {
  std::string text;
  for (int i = 0; i < 20; ++i) text += "Sentence number " + std::to_string(i) + " here. ";
  const RawDocument doc{"long", text, {}};
  const auto prompt = templates::render_multihop_prompt(number_sentences(segment(doc, WhitespaceTokenizer{})));
  mock::MockGenerationBackend llm;
  llm.script(prompt, {"Final question: Q?\nNecessary sentences: [[4]], [[9]]"});
  CurationOptions opts;
  opts.negatives_per_tuple = 5;
  const auto a = curate_mcqr({doc}, llm, opts);
  const auto b = curate_mcqr({doc}, llm, opts);
  ASSERT_EQ(a.records.size(), 1u);
  EXPECT_EQ(a.records[0].negative_indices.size(), 5u);
  EXPECT_EQ(a.records[0].negative_indices, b.records[0].negative_indices);
  EXPECT_FALSE(validate_tuple(a.records[0]).has_value());
  opts.negatives_per_tuple = 0;
  EXPECT_EQ(curate_mcqr({doc}, llm, opts).records[0].negative_indices.size(), 18u);
}

TEST(CurateMcqr, MockRunAccountsForEveryDocument) {
  mock::MockGenerationBackend llm;
  llm.responder(mock::curation_responder(0.2));
  const auto corpus = synthetic_corpus(100, 42);
  CurationOptions opts;
  opts.fanout = 2;
  const auto out = curate_mcqr(corpus, llm, opts);
  EXPECT_EQ(out.attempted, 200u);
  EXPECT_EQ(out.records.size() + out.rejects.size(), out.attempted);
  std::set<RejectReason> reasons;
  for (const auto& r : out.rejects) reasons.insert(r.reason);
  EXPECT_TRUE(reasons.count(RejectReason::TooFewSentences));
  EXPECT_TRUE(reasons.count(RejectReason::NotMultiHop));
  EXPECT_TRUE(reasons.count(RejectReason::IndexOutOfRange));
  EXPECT_TRUE(reasons.count(RejectReason::ParseFailure));
  for (const auto& t : out.records) ASSERT_FALSE(validate_tuple(t).has_value()) << t.id;

  const auto again = curate_mcqr(corpus, llm, opts);
  EXPECT_EQ(to_jsonl(out.records, [](const McqrTuple& t) { return to_json_value(t); }),
            to_jsonl(again.records, [](const McqrTuple& t) { return to_json_value(t); }));
  EXPECT_EQ(to_jsonl(out.rejects, [](const Reject& r) { return to_json_value(r); }),
            to_jsonl(again.rejects, [](const Reject& r) { return to_json_value(r); }));
}

TEST(CurateMcqr, FanoutNeedsSampling) {
  mock::MockGenerationBackend llm;
  CurationOptions opts;
  opts.fanout = 2;
  opts.params.temperature = 0.0;
  EXPECT_THROW(curate_mcqr({RawDocument{"d", kToyText, {}}}, llm, opts), Error);
}

TEST(CurateCtd, ScriptedRepliesAndRejects) {
  const std::vector<RawDocument> corpus = {
      {"ok", "Volcanoes erupt when pressure builds.", {}},
      {"empty", "Tides follow the moon.", {}},
      {"forbidden", "Glaciers carve valleys slowly.", {}},
      {"blank", "   ", {}},
      {"substring", "Deserts get little rain.", {}},
  };
  mock::MockGenerationBackend llm;
  llm.script(templates::render_query_prompt(corpus[0].text), {"Why do volcanoes erupt?"});
  llm.script(templates::render_query_prompt(corpus[1].text), {"  "});
  llm.script(templates::render_query_prompt(corpus[2].text), {"Summarize the CONTEXT about glaciers."});
  llm.script(templates::render_query_prompt(corpus[4].text), {"Describe contextual clues about deserts."});
  const auto out = curate_ctd_raw(corpus, llm);
  EXPECT_EQ(out.attempted, 5u);
  ASSERT_EQ(out.records.size(), 2u);
  EXPECT_EQ(out.records[0], (CtdPair{"ok", corpus[0].text, "Why do volcanoes erupt?", CtdStage::Raw, "ok"}));
  EXPECT_EQ(out.records[1].id, "substring");
  ASSERT_EQ(out.rejects.size(), 3u);
  EXPECT_EQ(out.rejects[0].reason, RejectReason::EmptyQuery);
  EXPECT_EQ(out.rejects[1].reason, RejectReason::ForbiddenTerm);
  EXPECT_EQ(out.rejects[1].raw_response, "Summarize the CONTEXT about glaciers.");
  EXPECT_EQ(out.rejects[2].reason, RejectReason::EmptyDocument);
}

TEST(StructureCtd, SubstitutesBothPlaceholders) {
  const CtdPair raw{"p", "Source with {braces} and \"quotes\".", "What is it?", CtdStage::Raw, "p"};
  mock::MockGenerationBackend llm;
  llm.script(templates::render_structure_prompt(raw.prompt, raw.question),
             {"Answer based on the text.\nQuestion: {question}\nText: {text}"});
  const auto out = structure_ctd({raw}, llm);
  ASSERT_EQ(out.records.size(), 1u);
  const auto& s = out.records.front();
  EXPECT_EQ(s.stage, CtdStage::Structured);
  EXPECT_EQ(s.prompt, "Answer based on the text.\nQuestion: What is it?\nText: Source with {braces} and \"quotes\".");
  EXPECT_NE(s.prompt.find(raw.prompt), std::string::npos);
  EXPECT_EQ(s.prompt.find("{question}"), std::string::npos);
}

TEST(StructureCtd, MissingPlaceholderAndStageCheck) {
  const CtdPair raw{"p", "Text body.", "Q?", CtdStage::Raw, "p"};
  mock::MockGenerationBackend llm;
  llm.script(templates::render_structure_prompt(raw.prompt, raw.question), {"Only {text} here"});
  const auto out = structure_ctd({raw}, llm);
  ASSERT_EQ(out.rejects.size(), 1u);
  EXPECT_EQ(out.rejects.front().reason, RejectReason::MissingPlaceholder);
  CtdPair structured = raw;
  structured.stage = CtdStage::Structured;
  EXPECT_THROW(structure_ctd({structured}, llm), Error);
}

TEST(StructureCtd, MockPipelineKeepsSourceBytes) {
  mock::MockGenerationBackend llm;
  llm.responder(mock::curation_responder(0.15));
  const auto corpus = synthetic_corpus(60, 3);
  const auto raw = curate_ctd_raw(corpus, llm);
  EXPECT_EQ(raw.records.size() + raw.rejects.size(), corpus.size());
  EXPECT_FALSE(raw.rejects.empty());
  for (bool shared : {false, true}) {
    CurationOptions opts;
    opts.shared_template = shared;
    const auto structured = structure_ctd(raw.records, llm, opts);
    EXPECT_EQ(structured.records.size() + structured.rejects.size(), raw.records.size());
    for (const auto& s : structured.records) {
      ASSERT_NE(s.prompt.find(corpus[std::stoul(s.source_doc_id.substr(3))].text), std::string::npos);
      ASSERT_NE(s.prompt.find(s.question), std::string::npos);
    }
  }
}

TEST(Corpus, DirectoryAndJsonl) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "tpc_corpus_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "docs");
  write_file((dir / "docs" / "b.txt").string(), "Second.");
  write_file((dir / "docs" / "a.txt").string(), "First.");
  write_file((dir / "docs" / "skip.md").string(), "ignored");
  const auto docs = load_corpus((dir / "docs").string());
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].id, "a");
  EXPECT_EQ(docs[1].text, "Second.");

  write_file((dir / "c.jsonl").string(), "{\"id\":\"x\",\"text\":\"Hello.\"}\n\n{\"id\":\"y\",\"text\":\"Bye.\"}\n");
  const auto lines = load_corpus((dir / "c.jsonl").string());
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[1].id, "y");
  write_file((dir / "bad.jsonl").string(), "{\"text\":\"no id\"}\n");
  EXPECT_THROW(load_corpus((dir / "bad.jsonl").string()), Error);
  fs::remove_all(dir);
}

TEST(Export, McqrHeadMode) {
  const RawDocument doc{"toy", kToyText, {}};
  McqrTuple t;
  t.id = "toy";
  t.question = "Q";
  t.context = segment(doc, WhitespaceTokenizer{});
  t.positive_indices = {1, 3};
  t.negative_indices = {2, 4};
  EXPECT_EQ(to_json_value(t, PositiveExport::Head)["positive_indices"], nlohmann::json::array({1}));
  EXPECT_EQ(to_json_value(t)["positive_indices"], nlohmann::json::array({1, 3}));
  EXPECT_EQ(to_json_value(t)["context_sentences"].size(), 4u);
  EXPECT_TRUE(to_json_value(t)["rationale"].is_null());
}
