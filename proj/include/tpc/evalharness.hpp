#pragma once

// Reference metrics (Rouge-L, token F1, edit similarity), compression
// accounting, and a benchmark runner producing JSON / CSV reports.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpc/compressor.hpp"
#include "tpc/ctd.hpp"
#include "tpc/util.hpp"

namespace tpc {

// ---------------------------------------------------------------------------
// Metrics

inline std::vector<std::string> whitespace_split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t b = i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > b) out.emplace_back(text.substr(b, i - b));
  }
  return out;
}

inline constexpr std::string_view kRougeVariant = "rouge-l/sentence-lcs/f1-beta1/whitespace";

/// Sentence-level Rouge-L F-measure (beta = 1) over whitespace tokens.
inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = whitespace_split(candidate);
  const auto r = whitespace_split(reference);
  if (c.empty() || r.empty()) return 0.0;
  std::vector<std::size_t> prev(r.size() + 1, 0);
  std::vector<std::size_t> cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[r.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rec = lcs / static_cast<double>(r.size());
  return 2.0 * p * rec / (p + rec);
}

struct F1Normalization {
  bool lowercase = true;
  bool strip_punctuation = true;
  /// Dropped after normalization. Empty by default; {"a", "an", "the"} gives
  /// the SQuAD convention.
  std::vector<std::string> articles;

  std::string variant() const {
    std::string v = "token-f1/multiset";
    if (lowercase) v += "/lower";
    if (strip_punctuation) v += "/strip-punct";
    if (!articles.empty()) {
      v += "/drop:";
      for (std::size_t i = 0; i < articles.size(); ++i) v += (i ? "," : "") + articles[i];
    }
    return v;
  }
};

inline std::vector<std::string> normalize_tokens(std::string_view text, const F1Normalization& norm = {}) {
  std::string s;
  s.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (norm.strip_punctuation && c < 0x80 && std::ispunct(c)) continue;
    s.push_back(norm.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  auto tokens = whitespace_split(s);
  if (!norm.articles.empty()) {
    std::erase_if(tokens, [&](const std::string& t) {
      return std::find(norm.articles.begin(), norm.articles.end(), t) != norm.articles.end();
    });
  }
  return tokens;
}

/// Bag-of-tokens F1 with multiplicity over normalized tokens.
inline double token_f1(std::string_view candidate, std::string_view reference, const F1Normalization& norm = {}) {
  const auto c = normalize_tokens(candidate, norm);
  const auto r = normalize_tokens(reference, norm);
  if (c.empty() || r.empty()) return 0.0;
  std::map<std::string, long> counts;
  for (const auto& t : r) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : c) {
    if (auto it = counts.find(t); it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(c.size());
  const double rec = static_cast<double>(overlap) / static_cast<double>(r.size());
  return 2.0 * p * rec / (p + rec);
}

inline std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// 1 - levenshtein / max length, over Unicode code points.
inline double edit_similarity(std::string_view candidate, std::string_view reference) {
  const auto a = utf8_decode(candidate);
  const auto b = utf8_decode(reference);
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// Cases and reports

enum class TaskKind { Qa, Summarization, Code, Synthetic };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Qa: return "qa";
    case TaskKind::Summarization: return "summarization";
    case TaskKind::Code: return "code";
    case TaskKind::Synthetic: return "synthetic";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "qa") return TaskKind::Qa;
  if (s == "summarization") return TaskKind::Summarization;
  if (s == "code") return TaskKind::Code;
  if (s == "synthetic") return TaskKind::Synthetic;
  throw Error(ErrorCode::InvalidParams, "unknown task_kind '" + std::string(s) + "'");
}

/// qa and synthetic use token F1, summarization Rouge-L, code edit similarity.
inline std::string_view metric_for(TaskKind k) {
  switch (k) {
    case TaskKind::Summarization: return "rouge_l";
    case TaskKind::Code: return "edit_similarity";
    case TaskKind::Qa:
    case TaskKind::Synthetic: return "token_f1";
  }
  return "token_f1";
}

inline double score_metric(TaskKind k, std::string_view candidate, std::string_view reference,
                           const F1Normalization& norm = {}) {
  switch (k) {
    case TaskKind::Summarization: return rouge_l(candidate, reference);
    case TaskKind::Code: return edit_similarity(candidate, reference);
    case TaskKind::Qa:
    case TaskKind::Synthetic: return token_f1(candidate, reference, norm);
  }
  return 0.0;
}

struct EvalCase {
  std::string id;
  RawDocument context;
  std::optional<std::string> question;
  std::string reference;
  TaskKind task_kind = TaskKind::Qa;
};

enum class EvalMode { PromptAware, PromptAgnostic };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::PromptAware ? "prompt_aware" : "prompt_agnostic"; }

inline EvalMode parse_eval_mode(std::string_view s) {
  if (s == "prompt_aware") return EvalMode::PromptAware;
  if (s == "prompt_agnostic") return EvalMode::PromptAgnostic;
  throw Error(ErrorCode::InvalidParams, "unknown eval mode '" + std::string(s) + "'");
}

struct EvalRow {
  std::string id;
  TaskKind task_kind = TaskKind::Qa;
  std::string metric_name;
  std::optional<double> score;  // unset when the case failed
  std::size_t compressed_tokens = 0;
  std::size_t original_tokens = 0;
  double achieved_ratio = 0.0;
  std::optional<std::size_t> budget_tokens;
  std::optional<std::string> task_description;  // prompt-agnostic mode only
  std::optional<std::string> failure;
};

struct Aggregate {
  double mean = 0.0;
  std::size_t scored = 0;
  std::size_t failed = 0;
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct EvalReport {
  std::string run_id;
  std::string config_digest;
  EvalMode mode = EvalMode::PromptAware;
  std::map<std::string, std::string> metric_variants;
  std::vector<EvalRow> per_case;  // ascending id
  std::map<std::string, Aggregate> aggregates;  // keyed by task_kind
};

/// Mean score per task kind over scored rows; failures are counted separately.
inline std::map<std::string, Aggregate> aggregate_rows(const std::vector<EvalRow>& rows) {
  std::map<std::string, Aggregate> out;
  std::map<std::string, long double> sums;
  for (const auto& r : rows) {
    auto& a = out[std::string(to_string(r.task_kind))];
    if (r.score) {
      ++a.scored;
      sums[std::string(to_string(r.task_kind))] += *r.score;
    } else {
      ++a.failed;
    }
  }
  for (auto& [kind, a] : out) {
    a.mean = a.scored ? static_cast<double>(sums[kind] / static_cast<long double>(a.scored)) : 0.0;
  }
  return out;
}

inline std::vector<EvalCase> load_cases(const std::string& path) {
  std::vector<EvalCase> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalCase c;
      c.id = j.at("id").get<std::string>();
      c.context = {c.id, j.at("context").get<std::string>(), path};
      if (j.contains("question") && !j["question"].is_null()) c.question = j["question"].get<std::string>();
      c.reference = j.at("reference").get<std::string>();
      c.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
      if (is_blank(c.reference)) throw Error(ErrorCode::InvalidParams, "case '" + c.id + "' has an empty reference");
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseFailure, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner

struct EvalBackends {
  const GenerationBackend& descriptor;
  const GenerationBackend& answerer;
  const EmbeddingBackend& embedder;
  const Tokenizer& tokenizer;
};

inline GenerationParams default_answer_params() {
  GenerationParams params;
  params.max_new_tokens = 128;
  params.temperature = 0.0;
  return params;
}

struct EvalOptions {
  EvalMode mode = EvalMode::PromptAware;
  CompressionConstraint constraint = CompressionConstraint::compression_ratio(5.0);
  CompressOptions compress;
  SegmenterOptions segmenter;
  GenerationParams descriptor_params = default_descriptor_params();
  DescriptorOptions descriptor;
  GenerationParams answer_params = default_answer_params();
  F1Normalization normalization;
  std::size_t max_inflight = 8;
  std::string run_id;
  std::string config_digest;
};

/// The prompt sent to the answering model.
inline std::string answer_prompt(std::string_view compressed, const std::optional<std::string>& question) {
  std::string out(compressed);
  if (question) {
    out += "\n\nQuestion: ";
    out += *question;
    out += "\nAnswer:";
  }
  return out;
}

inline EvalRow evaluate_case(const EvalCase& c, const EvalBackends& backends, const EvalOptions& opts) {
  EvalRow row;
  row.id = c.id;
  row.task_kind = c.task_kind;
  row.metric_name = std::string(metric_for(c.task_kind));
  try {
    const auto ctx = segment(c.context, backends.tokenizer, opts.segmenter);
    row.original_tokens = ctx.total_tokens();
    TaskDescription q;
    if (opts.mode == EvalMode::PromptAware) {
      q = TaskDescription::user_supplied(*c.question);
    } else {
      q = describe(c.context, backends.descriptor, opts.descriptor_params, opts.descriptor);
      row.task_description = q.text;
    }
    const auto compressed = compress(ctx, q, opts.constraint, backends.embedder, opts.compress);
    row.compressed_tokens = compressed.total_tokens;
    row.achieved_ratio = compressed.achieved_ratio;
    row.budget_tokens = compressed.budget_tokens;
    GenerationParams params = opts.answer_params;
    params.num_candidates = 1;
    const auto answer = generate(backends.answerer, answer_prompt(compressed.text, c.question), params).front().text;
    row.score = score_metric(c.task_kind, answer, c.reference, opts.normalization);
  } catch (const Error& e) {
    row.score.reset();
    row.failure = e.what();
  }
  return row;
}

inline EvalReport run_eval(const std::vector<EvalCase>& cases, const EvalBackends& backends,
                           const EvalOptions& opts) {
  opts.constraint.validate();
  for (const auto& c : cases) {
    if (is_blank(c.reference)) throw Error(ErrorCode::InvalidParams, "case '" + c.id + "' has an empty reference");
    if (opts.mode == EvalMode::PromptAware && !c.question) {
      throw Error(ErrorCode::InvalidParams, "prompt-aware evaluation needs a question for case '" + c.id + "'");
    }
  }
  EvalReport report;
  report.run_id = opts.run_id;
  report.config_digest = opts.config_digest;
  report.mode = opts.mode;
  report.metric_variants = {{"rouge_l", std::string(kRougeVariant)},
                            {"token_f1", opts.normalization.variant()},
                            {"edit_similarity", "edit-sim/levenshtein/codepoints"}};
  report.per_case = parallel_map(cases.size(), opts.max_inflight,
                                 [&](std::size_t i) { return evaluate_case(cases[i], backends, opts); });
  std::stable_sort(report.per_case.begin(), report.per_case.end(),
                   [](const EvalRow& a, const EvalRow& b) { return a.id < b.id; });
  report.aggregates = aggregate_rows(report.per_case);
  return report;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

/// Finite doubles as numbers, infinities as null.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

inline nlohmann::json to_json_value(const EvalRow& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["task_kind"] = to_string(r.task_kind);
  j["metric_name"] = r.metric_name;
  j["score"] = r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr);
  j["compressed_tokens"] = r.compressed_tokens;
  j["original_tokens"] = r.original_tokens;
  j["achieved_ratio"] = detail::finite_or_null(r.achieved_ratio);
  j["budget_tokens"] = r.budget_tokens ? nlohmann::json(*r.budget_tokens) : nlohmann::json(nullptr);
  if (r.task_description) j["task_description"] = *r.task_description;
  if (r.failure) j["failure"] = *r.failure;
  return j;
}

inline nlohmann::json to_json_value(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.per_case) rows.push_back(to_json_value(r));
  nlohmann::json aggs = nlohmann::json::object();
  for (const auto& [kind, a] : report.aggregates) {
    aggs[kind] = {{"mean", a.mean}, {"scored", a.scored}, {"failed", a.failed}};
  }
  return {{"run_id", report.run_id},
          {"config_digest", report.config_digest},
          {"mode", to_string(report.mode)},
          {"metric_variants", report.metric_variants},
          {"per_case", rows},
          {"aggregates", aggs}};
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline std::string to_csv(const EvalReport& report) {
  std::string out = "id,task_kind,metric_name,score,compressed_tokens,original_tokens,achieved_ratio,failure\n";
  for (const auto& r : report.per_case) {
    const auto j = to_json_value(r);
    out += detail::csv_field(r.id) + ',' + std::string(to_string(r.task_kind)) + ',' + r.metric_name + ',';
    out += (r.score ? j["score"].dump() : std::string()) + ',';
    out += std::to_string(r.compressed_tokens) + ',' + std::to_string(r.original_tokens) + ',';
    out += (std::isfinite(r.achieved_ratio) ? j["achieved_ratio"].dump() : std::string("inf")) + ',';
    out += detail::csv_field(r.failure.value_or("")) + '\n';
  }
  return out;
}

}  // namespace tpc
