#pragma once

// Synthetic dataset factories: (prompt, question) pairs for the task
// descriptor, and multi-hop (question, context, positives, negatives) tuples
// for the sentence encoder. Every attempted item ends up either emitted or in
// the rejects list, never both and never neither.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpc/backends.hpp"
#include "tpc/templates.hpp"
#include "tpc/textseg.hpp"
#include "tpc/util.hpp"

namespace tpc {

// ---------------------------------------------------------------------------
// Records

enum class CtdStage { Raw, Structured };

inline std::string_view to_string(CtdStage s) { return s == CtdStage::Raw ? "raw" : "structured"; }

struct CtdPair {
  std::string id;
  std::string prompt;
  std::string question;
  CtdStage stage = CtdStage::Raw;
  std::string source_doc_id;
  friend bool operator==(const CtdPair&, const CtdPair&) = default;
};

/// Indices are 1-based, matching the [[i]] numbering shown to the model.
struct McqrTuple {
  std::string id;
  std::string question;
  SegmentedContext context;
  std::vector<std::size_t> positive_indices;  // ascending, unique
  std::vector<std::size_t> negative_indices;  // ascending, unique
  std::optional<std::string> answer_rationale;
};

enum class RejectReason {
  EmptyDocument,
  EmptyQuery,
  ForbiddenTerm,
  MissingPlaceholder,
  NotMultiHop,
  IndexOutOfRange,
  ParseFailure,
  TooFewSentences,
  BackendError,
};

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::EmptyDocument: return "EmptyDocument";
    case RejectReason::EmptyQuery: return "EmptyQuery";
    case RejectReason::ForbiddenTerm: return "ForbiddenTerm";
    case RejectReason::MissingPlaceholder: return "MissingPlaceholder";
    case RejectReason::NotMultiHop: return "NotMultiHop";
    case RejectReason::IndexOutOfRange: return "IndexOutOfRange";
    case RejectReason::ParseFailure: return "ParseFailure";
    case RejectReason::TooFewSentences: return "TooFewSentences";
    case RejectReason::BackendError: return "BackendError";
  }
  return "?";
}

struct Reject {
  std::string id;
  std::string stage;  // "raw", "structured" or "mcqr"
  RejectReason reason = RejectReason::ParseFailure;
  std::string raw_response;
  std::string detail;
};

template <class T>
struct CurationResult {
  std::vector<T> records;
  std::vector<Reject> rejects;
  std::size_t attempted = 0;
};

// ---------------------------------------------------------------------------
// Numbered-sentence format

/// "[[1]] first sentence. [[2]] second sentence."
inline std::string number_sentences(const SegmentedContext& ctx) {
  if (ctx.empty()) throw Error(ErrorCode::EmptyDocument, "cannot number an empty context");
  std::string out;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (i) out.push_back(' ');
    out += "[[" + std::to_string(i + 1) + "]] ";
    out += ctx.sentences[i].text;
  }
  return out;
}

/// Inverse of number_sentences. Numbering must run 1, 2, 3, ... from the start.
inline std::vector<std::string> strip_numbering(std::string_view numbered) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (std::size_t i = 1;; ++i) {
    const std::string head = "[[" + std::to_string(i) + "]] ";
    if (numbered.substr(pos, head.size()) != head) {
      throw Error(ErrorCode::ParseFailure, "expected '" + head + "' at byte " + std::to_string(pos));
    }
    pos += head.size();
    const std::string next = " [[" + std::to_string(i + 1) + "]] ";
    const auto end = numbered.find(next, pos);
    out.emplace_back(numbered.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (end == std::string_view::npos) return out;
    pos = end + 1;
  }
}

/// Thrown by parse_multihop; keeps the unparseable response for audit.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw)
      : Error(ErrorCode::ParseFailure, message), raw_(std::move(raw)) {}
  const std::string& raw_response() const noexcept { return raw_; }

 private:
  std::string raw_;
};

struct MultihopParse {
  std::string question;
  std::vector<std::size_t> necessary;  // 1-based, ascending, unique; not range-checked
  std::string rationale;               // everything before the final-question line
};

namespace detail {

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    out.push_back(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && to_lower_ascii(s.substr(0, prefix.size())) == to_lower_ascii(prefix);
}

/// Every [[digits]] citation in `line`, in order of appearance.
inline std::vector<std::size_t> citations(std::string_view line) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while ((pos = line.find("[[", pos)) != std::string_view::npos) {
    std::size_t i = pos + 2;
    std::size_t value = 0;
    bool digits = false;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9' && value < 1000000) {
      value = value * 10 + static_cast<std::size_t>(line[i] - '0');
      digits = true;
      ++i;
    }
    if (digits && line.substr(i, 2) == "]]") out.push_back(value);
    pos += 2;
  }
  return out;
}

inline bool contains_word_ci(std::string_view text, std::string_view word) {
  const std::string hay = to_lower_ascii(text);
  const std::string needle = to_lower_ascii(word);
  auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; };
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_word(static_cast<unsigned char>(hay[pos - 1]));
    const std::size_t end = pos + needle.size();
    const bool right = end == hay.size() || !is_word(static_cast<unsigned char>(hay[end]));
    if (left && right) return true;
  }
  return false;
}

}  // namespace detail

/// Extracts the final question and the necessary-sentence citations from a
/// multi-hop response. Hop questions and answers around them are tolerated.
inline MultihopParse parse_multihop(std::string_view response) {
  const auto lines = detail::lines_of(response);
  std::optional<std::size_t> final_line;
  std::optional<std::size_t> necessary_line;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (detail::starts_with_ci(line, "final question:")) final_line = i;
    if (detail::starts_with_ci(line, "necessary sentences:")) necessary_line = i;
  }
  if (!final_line) throw ParseError("no 'Final question:' line", std::string(response));
  if (!necessary_line) throw ParseError("no 'Necessary sentences:' line", std::string(response));

  MultihopParse out;
  out.question = std::string(trim(trim(lines[*final_line]).substr(15)));
  if (out.question.empty()) throw ParseError("final question is empty", std::string(response));
  out.necessary = detail::citations(lines[*necessary_line]);
  if (out.necessary.empty()) throw ParseError("no [[i]] citations on the necessary-sentences line", std::string(response));
  std::sort(out.necessary.begin(), out.necessary.end());
  out.necessary.erase(std::unique(out.necessary.begin(), out.necessary.end()), out.necessary.end());

  std::string rationale;
  for (std::size_t i = 0; i < *final_line; ++i) {
    rationale.append(lines[i]);
    rationale.push_back('\n');
  }
  out.rationale = std::string(trim(rationale));
  return out;
}

/// Nullopt when `t` satisfies the tuple invariants, else the violated rule.
inline std::optional<RejectReason> validate_tuple(const McqrTuple& t) {
  const std::size_t n = t.context.size();
  auto in_range = [n](std::size_t i) { return i >= 1 && i <= n; };
  if (t.question.empty()) return RejectReason::ParseFailure;
  if (!std::all_of(t.positive_indices.begin(), t.positive_indices.end(), in_range) ||
      !std::all_of(t.negative_indices.begin(), t.negative_indices.end(), in_range)) {
    return RejectReason::IndexOutOfRange;
  }
  if (t.positive_indices.size() < 2) return RejectReason::NotMultiHop;
  for (std::size_t i : t.negative_indices) {
    if (std::binary_search(t.positive_indices.begin(), t.positive_indices.end(), i)) {
      return RejectReason::ParseFailure;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pipelines

inline GenerationParams default_curation_params() {
  GenerationParams params;
  params.max_new_tokens = 512;
  params.temperature = 0.7;
  params.top_p = 0.95;
  params.seed = 0;
  return params;
}

struct CurationOptions {
  GenerationParams params = default_curation_params();
  std::uint64_t seed = 0;
  std::size_t max_inflight = 8;
  std::vector<std::string> forbidden_terms = {"context"};
  /// One structuring template for the whole batch instead of one per pair.
  bool shared_template = false;
  std::size_t min_sentences = 4;
  /// Negatives kept per tuple; 0 keeps every non-positive sentence.
  std::size_t negatives_per_tuple = 8;
  /// Questions per document; each uses its own seed.
  std::size_t fanout = 1;
  SegmenterOptions segmenter;
  const Tokenizer* tokenizer = nullptr;  // whitespace-v1 when null
};

namespace detail {

inline GenerationParams item_params(const CurationOptions& opts, std::string_view id, std::size_t sub) {
  GenerationParams p = opts.params;
  p.num_candidates = 1;
  p.seed = hash_combine(hash_combine(opts.seed, fnv1a64(id)), sub);
  return p;
}

template <class T>
struct Outcome {
  std::optional<T> record;
  std::optional<Reject> reject;
};

template <class T>
CurationResult<T> collect(std::vector<Outcome<T>>&& outcomes) {
  CurationResult<T> out;
  out.attempted = outcomes.size();
  for (auto& o : outcomes) {
    if (o.record) out.records.push_back(std::move(*o.record));
    if (o.reject) out.rejects.push_back(std::move(*o.reject));
  }
  return out;
}

inline Reject make_reject(std::string id, std::string stage, RejectReason reason, std::string raw = {},
                          std::string detail = {}) {
  return Reject{std::move(id), std::move(stage), reason, std::move(raw), std::move(detail)};
}

}  // namespace detail

/// Stage 1: one raw (document, query) pair per document.
inline CurationResult<CtdPair> curate_ctd_raw(const std::vector<RawDocument>& corpus,
                                              const GenerationBackend& backend,
                                              const CurationOptions& opts = {}) {
  opts.params.validate();
  auto outcomes = parallel_map(corpus.size(), opts.max_inflight, [&](std::size_t i) {
    const auto& doc = corpus[i];
    detail::Outcome<CtdPair> o;
    if (is_blank(doc.text)) {
      o.reject = detail::make_reject(doc.id, "raw", RejectReason::EmptyDocument);
      return o;
    }
    std::string reply;
    try {
      reply = generate(backend, templates::render_query_prompt(doc.text), detail::item_params(opts, doc.id, 0))
                  .front()
                  .text;
    } catch (const Error& e) {
      o.reject = detail::make_reject(doc.id, "raw", RejectReason::BackendError, {}, e.what());
      return o;
    }
    const auto query = trim(reply);
    if (query.empty()) {
      o.reject = detail::make_reject(doc.id, "raw", RejectReason::EmptyQuery, reply);
      return o;
    }
    for (const auto& term : opts.forbidden_terms) {
      if (detail::contains_word_ci(query, term)) {
        o.reject = detail::make_reject(doc.id, "raw", RejectReason::ForbiddenTerm, reply, term);
        return o;
      }
    }
    o.record = CtdPair{doc.id, doc.text, std::string(query), CtdStage::Raw, doc.id};
    return o;
  });
  return detail::collect(std::move(outcomes));
}

/// Stage 2: asks for an instruction template holding {text} and {question}
/// and substitutes the pair into it.
inline CurationResult<CtdPair> structure_ctd(const std::vector<CtdPair>& pairs, const GenerationBackend& backend,
                                             const CurationOptions& opts = {}) {
  opts.params.validate();
  for (const auto& p : pairs) {
    if (p.stage != CtdStage::Raw) throw Error(ErrorCode::InvalidParams, "structure_ctd takes raw pairs only");
  }

  auto request = [&](const CtdPair& p) {
    return generate(backend, templates::render_structure_prompt(p.prompt, p.question),
                    detail::item_params(opts, p.id, 1))
        .front()
        .text;
  };

  std::optional<std::string> shared;
  std::optional<std::string> shared_error;
  if (opts.shared_template && !pairs.empty()) {
    try {
      shared = request(pairs.front());
    } catch (const Error& e) {
      shared_error = e.what();
    }
  }

  auto outcomes = parallel_map(pairs.size(), opts.max_inflight, [&](std::size_t i) {
    const auto& pair = pairs[i];
    detail::Outcome<CtdPair> o;
    std::string tmpl;
    if (opts.shared_template) {
      if (shared_error) {
        o.reject = detail::make_reject(pair.id, "structured", RejectReason::BackendError, {}, *shared_error);
        return o;
      }
      tmpl = *shared;
    } else {
      try {
        tmpl = request(pair);
      } catch (const Error& e) {
        o.reject = detail::make_reject(pair.id, "structured", RejectReason::BackendError, {}, e.what());
        return o;
      }
    }
    if (tmpl.find("{text}") == std::string::npos || tmpl.find("{question}") == std::string::npos) {
      o.reject = detail::make_reject(pair.id, "structured", RejectReason::MissingPlaceholder, tmpl);
      return o;
    }
    CtdPair out = pair;
    out.stage = CtdStage::Structured;
    out.prompt = templates::render(tmpl, {{"text", pair.prompt}, {"question", pair.question}});
    o.record = std::move(out);
    return o;
  });
  return detail::collect(std::move(outcomes));
}

/// Multi-hop tuples: numbers each document's sentences, asks for a final
/// question with its necessary sentences, and keeps the complement (or a
/// seeded sample of it) as negatives.
inline CurationResult<McqrTuple> curate_mcqr(const std::vector<RawDocument>& corpus,
                                             const GenerationBackend& backend, const CurationOptions& opts = {}) {
  opts.params.validate();
  if (opts.fanout < 1) throw Error(ErrorCode::InvalidParams, "fanout must be >= 1");
  if (opts.fanout > 1 && opts.params.temperature == 0.0) {
    throw Error(ErrorCode::InvalidSampling, "fanout > 1 needs temperature > 0 to vary questions");
  }
  const WhitespaceTokenizer fallback;
  const Tokenizer& tok = opts.tokenizer ? *opts.tokenizer : fallback;

  auto outcomes = parallel_map(corpus.size() * opts.fanout, opts.max_inflight, [&](std::size_t job) {
    const auto& doc = corpus[job / opts.fanout];
    const std::size_t sub = job % opts.fanout;
    const std::string id = opts.fanout == 1 ? doc.id : doc.id + "#" + std::to_string(sub);
    detail::Outcome<McqrTuple> o;
    if (is_blank(doc.text)) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::EmptyDocument);
      return o;
    }
    auto ctx = segment(doc, tok, opts.segmenter);
    if (ctx.size() < opts.min_sentences) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::TooFewSentences, {},
                                     std::to_string(ctx.size()) + " sentences");
      return o;
    }
    const auto params = detail::item_params(opts, doc.id, 2 + sub);
    std::string reply;
    try {
      reply = generate(backend, templates::render_multihop_prompt(number_sentences(ctx)), params).front().text;
    } catch (const Error& e) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::BackendError, {}, e.what());
      return o;
    }
    MultihopParse parsed;
    try {
      parsed = parse_multihop(reply);
    } catch (const ParseError& e) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::ParseFailure, reply, e.what());
      return o;
    }
    const std::size_t n = ctx.size();
    if (parsed.necessary.front() < 1 || parsed.necessary.back() > n) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::IndexOutOfRange, reply,
                                     "document has " + std::to_string(n) + " sentences");
      return o;
    }
    if (parsed.necessary.size() < 2) {
      o.reject = detail::make_reject(id, "mcqr", RejectReason::NotMultiHop, reply);
      return o;
    }

    McqrTuple t;
    t.id = id;
    t.question = parsed.question;
    t.positive_indices = parsed.necessary;
    for (std::size_t i = 1; i <= n; ++i) {
      if (!std::binary_search(t.positive_indices.begin(), t.positive_indices.end(), i)) {
        t.negative_indices.push_back(i);
      }
    }
    if (opts.negatives_per_tuple && t.negative_indices.size() > opts.negatives_per_tuple) {
      Rng rng(hash_combine(*params.seed, 0x6e6567ULL));
      rng.shuffle(t.negative_indices);
      t.negative_indices.resize(opts.negatives_per_tuple);
      std::sort(t.negative_indices.begin(), t.negative_indices.end());
    }
    if (!parsed.rationale.empty()) t.answer_rationale = parsed.rationale;
    t.context = std::move(ctx);
    o.record = std::move(t);
    return o;
  });
  return detail::collect(std::move(outcomes));
}

// ---------------------------------------------------------------------------
// Corpus input and JSON-Lines output

/// A directory of .txt files (id = file stem, sorted by name) or a JSON-Lines
/// file of {id, text} objects.
inline std::vector<RawDocument> load_corpus(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<RawDocument> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back({f.stem().string(), read_file(f.string()), f.string()});
    return out;
  }
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(), path});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseFailure, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json to_json_value(const CtdPair& p) {
  return {{"id", p.id},
          {"stage", to_string(p.stage)},
          {"prompt", p.prompt},
          {"question", p.question},
          {"source_doc_id", p.source_doc_id}};
}

/// Full exports every necessary sentence; Head exports only the first.
enum class PositiveExport { Full, Head };

inline nlohmann::json to_json_value(const McqrTuple& t, PositiveExport mode = PositiveExport::Full) {
  std::vector<std::string> sentences;
  for (const auto& s : t.context.sentences) sentences.push_back(s.text);
  auto positives = t.positive_indices;
  if (mode == PositiveExport::Head && !positives.empty()) positives.resize(1);
  return {{"id", t.id},
          {"question", t.question},
          {"context_sentences", sentences},
          {"positive_indices", positives},
          {"negative_indices", t.negative_indices},
          {"rationale", t.answer_rationale ? nlohmann::json(*t.answer_rationale) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json_value(const Reject& r) {
  return {{"id", r.id},
          {"stage", r.stage},
          {"reason", to_string(r.reason)},
          {"raw_response", r.raw_response},
          {"detail", r.detail}};
}

template <class Range, class Fn>
std::string to_jsonl(const Range& items, Fn&& fn) {
  std::string out;
  for (const auto& item : items) {
    out += fn(item).dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace tpc
