#pragma once

// Engine configuration: one JSON document with defaults for every field, a
// canonical digest stamped into every artifact, and run manifests.

#include <cstdlib>
#include <ctime>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpc/backends.hpp"
#include "tpc/compressor.hpp"
#include "tpc/ctd.hpp"
#include "tpc/curation.hpp"
#include "tpc/evalharness.hpp"
#include "tpc/reward.hpp"
#include "tpc/textseg.hpp"
#include "tpc/util.hpp"

namespace tpc {

inline constexpr std::string_view kEngineVersion = "0.1.0";

enum class BackendKind { Mock, Remote };

struct GenerationBackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string id;
  std::string base_url;     // remote only
  std::string api_key_env;  // name of the environment variable holding the key; never the key
  int timeout_ms = 30000;
  int max_retries = 3;
  // Mock only.
  std::size_t vocab_size = 512;
  std::size_t context_window = 0;
  bool logprobs = true;
  double fault_rate = 0.0;  // fraction of deliberately malformed curation replies
};

struct EmbeddingBackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string id = "mock-embed";
  std::string base_url;
  std::string api_key_env;
  int timeout_ms = 30000;
  int max_retries = 3;
  std::size_t dim = 64;
  std::size_t max_input_tokens = 0;
  // Mock only.
  double context_weight = 0.25;
  bool lexical = true;
};

struct EngineConfig {
  std::uint64_t seed = 0;
  std::size_t max_inflight = 8;
  std::optional<std::string> created_at;  // ISO-8601; see resolve_created_at
  std::string tokenizer_id = std::string(WhitespaceTokenizer::kId);
  Markers markers;
  std::size_t max_sentence_chars = 2048;
  std::size_t window_tokens = 0;

  GenerationBackendConfig descriptor{.id = "mock-descriptor"};
  GenerationBackendConfig llm{.id = "mock-llm", .fault_rate = 0.1};
  EmbeddingBackendConfig embedder;

  CompressionConstraint constraint = CompressionConstraint::compression_ratio(5.0);
  BudgetFill budget_fill = BudgetFill::Prefix;

  DescriptorMode descriptor_mode = DescriptorMode::InstructHeader;
  std::string descriptor_template = std::string(templates::kCtdQueryName);
  GenerationParams descriptor_params = default_descriptor_params();
  GenerationParams candidate_params = default_candidate_params();
  GenerationParams response_params = default_response_params();
  GenerationParams answer_params = default_answer_params();
  GenerationParams curation_params = default_curation_params();

  std::size_t n_candidates = 4;
  std::size_t reward_top_k = 20;
  Reduction reward_reduction = Reduction::Sum;

  std::size_t negatives_per_tuple = 8;
  std::size_t fanout = 1;
  bool shared_template = false;
  PositiveExport positive_export = PositiveExport::Full;

  std::vector<std::string> f1_articles;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::ParseFailure, std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorCode::ParseFailure, "unknown config key '" + std::string(where) + "." + key + "'");
    }
  }
}

inline std::string_view kind_name(BackendKind k) { return k == BackendKind::Mock ? "mock" : "remote"; }

inline BackendKind parse_kind(const std::string& s) {
  if (s == "mock") return BackendKind::Mock;
  if (s == "remote") return BackendKind::Remote;
  throw Error(ErrorCode::ParseFailure, "backend kind must be 'mock' or 'remote', got '" + s + "'");
}

}  // namespace detail

inline nlohmann::json params_json(const GenerationParams& p) {
  return {{"max_new_tokens", p.max_new_tokens},
          {"temperature", p.temperature},
          {"top_p", p.top_p},
          {"num_candidates", p.num_candidates},
          {"seed", p.seed ? nlohmann::json(*p.seed) : nlohmann::json(nullptr)},
          {"stop_sequences", p.stop_sequences}};
}

inline GenerationParams params_from_json(const nlohmann::json& j, GenerationParams p) {
  detail::reject_unknown(j, {"max_new_tokens", "temperature", "top_p", "num_candidates", "seed", "stop_sequences"},
                         "params");
  detail::read_opt(j, "max_new_tokens", p.max_new_tokens);
  detail::read_opt(j, "temperature", p.temperature);
  detail::read_opt(j, "top_p", p.top_p);
  detail::read_opt(j, "num_candidates", p.num_candidates);
  if (auto it = j.find("seed"); it != j.end()) {
    p.seed = it->is_null() ? std::nullopt : std::optional<std::uint64_t>(it->get<std::uint64_t>());
  }
  detail::read_opt(j, "stop_sequences", p.stop_sequences);
  return p;
}

inline nlohmann::json constraint_json(const CompressionConstraint& c) {
  switch (c.mode) {
    case ConstraintMode::TopKCount: return {{"top_k", *c.k}};
    case ConstraintMode::TokenBudget: return {{"budget_tokens", *c.budget_tokens}};
    case ConstraintMode::Ratio: return {{"ratio", *c.ratio}};
  }
  return nullptr;
}

/// {"ratio": r} | {"budget_tokens": b} | {"top_k": k}; exactly one key.
inline CompressionConstraint constraint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != 1) {
    throw Error(ErrorCode::InvalidConstraint, "constraint must have exactly one of ratio / budget_tokens / top_k");
  }
  CompressionConstraint c;
  try {
    if (j.contains("ratio")) {
      c = CompressionConstraint::compression_ratio(j["ratio"].get<double>());
    } else if (j.contains("budget_tokens")) {
      const auto v = j["budget_tokens"].get<long long>();
      if (v < 1) throw Error(ErrorCode::InvalidConstraint, "budget_tokens must be >= 1");
      c = CompressionConstraint::token_budget(static_cast<std::size_t>(v));
    } else if (j.contains("top_k")) {
      const auto v = j["top_k"].get<long long>();
      if (v < 1) throw Error(ErrorCode::InvalidConstraint, "top_k must be >= 1");
      c = CompressionConstraint::top_k(static_cast<std::size_t>(v));
    } else {
      throw Error(ErrorCode::InvalidConstraint, "constraint key must be ratio, budget_tokens or top_k");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConstraint, std::string("constraint value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json_value(const GenerationBackendConfig& b) {
  return {{"kind", detail::kind_name(b.kind)}, {"id", b.id},
          {"base_url", b.base_url},            {"api_key_env", b.api_key_env},
          {"timeout_ms", b.timeout_ms},        {"max_retries", b.max_retries},
          {"vocab_size", b.vocab_size},        {"context_window", b.context_window},
          {"logprobs", b.logprobs},            {"fault_rate", b.fault_rate}};
}

inline GenerationBackendConfig generation_backend_from_json(const nlohmann::json& j, GenerationBackendConfig b) {
  detail::reject_unknown(j,
                         {"kind", "id", "base_url", "api_key_env", "timeout_ms", "max_retries", "vocab_size",
                          "context_window", "logprobs", "fault_rate"},
                         "generation backend");
  if (j.contains("kind")) b.kind = detail::parse_kind(j["kind"].get<std::string>());
  detail::read_opt(j, "id", b.id);
  detail::read_opt(j, "base_url", b.base_url);
  detail::read_opt(j, "api_key_env", b.api_key_env);
  detail::read_opt(j, "timeout_ms", b.timeout_ms);
  detail::read_opt(j, "max_retries", b.max_retries);
  detail::read_opt(j, "vocab_size", b.vocab_size);
  detail::read_opt(j, "context_window", b.context_window);
  detail::read_opt(j, "logprobs", b.logprobs);
  detail::read_opt(j, "fault_rate", b.fault_rate);
  return b;
}

inline nlohmann::json to_json_value(const EmbeddingBackendConfig& b) {
  return {{"kind", detail::kind_name(b.kind)},
          {"id", b.id},
          {"base_url", b.base_url},
          {"api_key_env", b.api_key_env},
          {"timeout_ms", b.timeout_ms},
          {"max_retries", b.max_retries},
          {"dim", b.dim},
          {"max_input_tokens", b.max_input_tokens},
          {"context_weight", b.context_weight},
          {"lexical", b.lexical}};
}

inline EmbeddingBackendConfig embedding_backend_from_json(const nlohmann::json& j, EmbeddingBackendConfig b) {
  detail::reject_unknown(j,
                         {"kind", "id", "base_url", "api_key_env", "timeout_ms", "max_retries", "dim",
                          "max_input_tokens", "context_weight", "lexical"},
                         "embedding backend");
  if (j.contains("kind")) b.kind = detail::parse_kind(j["kind"].get<std::string>());
  detail::read_opt(j, "id", b.id);
  detail::read_opt(j, "base_url", b.base_url);
  detail::read_opt(j, "api_key_env", b.api_key_env);
  detail::read_opt(j, "timeout_ms", b.timeout_ms);
  detail::read_opt(j, "max_retries", b.max_retries);
  detail::read_opt(j, "dim", b.dim);
  detail::read_opt(j, "max_input_tokens", b.max_input_tokens);
  detail::read_opt(j, "context_weight", b.context_weight);
  detail::read_opt(j, "lexical", b.lexical);
  return b;
}

/// Fully resolved config, defaults included. Keys are sorted on dump.
inline nlohmann::json to_json_value(const EngineConfig& c) {
  return {
      {"seed", c.seed},
      {"max_inflight", c.max_inflight},
      {"created_at", c.created_at ? nlohmann::json(*c.created_at) : nlohmann::json(nullptr)},
      {"tokenizer_id", c.tokenizer_id},
      {"markers", {{"sentence", c.markers.sentence}, {"question", c.markers.question}}},
      {"segmenter", {{"max_sentence_chars", c.max_sentence_chars}, {"rule_version", kSegmenterRuleVersion}}},
      {"scoring", {{"function", "cosine"}, {"window_tokens", c.window_tokens}}},
      {"backends",
       {{"descriptor", to_json_value(c.descriptor)},
        {"llm", to_json_value(c.llm)},
        {"embedder", to_json_value(c.embedder)}}},
      {"constraint", constraint_json(c.constraint)},
      {"budget_fill", c.budget_fill == BudgetFill::Prefix ? "prefix" : "skip_and_continue"},
      {"descriptor",
       {{"mode", c.descriptor_mode == DescriptorMode::InstructHeader ? "instruct_header" : "fine_tuned"},
        {"template", c.descriptor_template}}},
      {"sampling",
       {{"descriptor", params_json(c.descriptor_params)},
        {"candidates", params_json(c.candidate_params)},
        {"response", params_json(c.response_params)},
        {"answer", params_json(c.answer_params)},
        {"curation", params_json(c.curation_params)}}},
      {"refine",
       {{"n_candidates", c.n_candidates}, {"reward_top_k", c.reward_top_k}, {"reduction", to_string(c.reward_reduction)}}},
      {"curation",
       {{"negatives_per_tuple", c.negatives_per_tuple},
        {"fanout", c.fanout},
        {"shared_template", c.shared_template},
        {"positive_export", c.positive_export == PositiveExport::Full ? "full" : "head"}}},
      {"eval", {{"f1_articles", c.f1_articles}}},
  };
}

inline EngineConfig config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  try {
    detail::reject_unknown(j,
                           {"seed", "max_inflight", "created_at", "tokenizer_id", "markers", "segmenter", "scoring",
                            "backends", "constraint", "budget_fill", "descriptor", "sampling", "refine", "curation",
                            "eval"},
                           "config");
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "max_inflight", c.max_inflight);
    if (j.contains("created_at") && !j["created_at"].is_null()) c.created_at = j["created_at"].get<std::string>();
    detail::read_opt(j, "tokenizer_id", c.tokenizer_id);
    if (j.contains("markers")) {
      const auto& m = j["markers"];
      detail::reject_unknown(m, {"sentence", "question"}, "markers");
      detail::read_opt(m, "sentence", c.markers.sentence);
      detail::read_opt(m, "question", c.markers.question);
    }
    if (j.contains("segmenter")) {
      const auto& s = j["segmenter"];
      detail::reject_unknown(s, {"max_sentence_chars", "rule_version"}, "segmenter");
      detail::read_opt(s, "max_sentence_chars", c.max_sentence_chars);
      if (s.contains("rule_version") && s["rule_version"] != kSegmenterRuleVersion) {
        throw Error(ErrorCode::InvalidParams, "config was written for segmenter rules " + s["rule_version"].dump());
      }
    }
    if (j.contains("scoring")) {
      const auto& s = j["scoring"];
      detail::reject_unknown(s, {"function", "window_tokens"}, "scoring");
      if (s.contains("function") && s["function"] != "cosine") {
        throw Error(ErrorCode::InvalidParams, "scoring.function must be 'cosine'");
      }
      detail::read_opt(s, "window_tokens", c.window_tokens);
    }
    if (j.contains("backends")) {
      const auto& b = j["backends"];
      detail::reject_unknown(b, {"descriptor", "llm", "embedder"}, "backends");
      if (b.contains("descriptor")) c.descriptor = generation_backend_from_json(b["descriptor"], c.descriptor);
      if (b.contains("llm")) c.llm = generation_backend_from_json(b["llm"], c.llm);
      if (b.contains("embedder")) c.embedder = embedding_backend_from_json(b["embedder"], c.embedder);
    }
    if (j.contains("constraint")) c.constraint = constraint_from_json(j["constraint"]);
    if (j.contains("budget_fill")) {
      const auto f = j["budget_fill"].get<std::string>();
      if (f == "prefix") {
        c.budget_fill = BudgetFill::Prefix;
      } else if (f == "skip_and_continue") {
        c.budget_fill = BudgetFill::SkipAndContinue;
      } else {
        throw Error(ErrorCode::InvalidParams, "budget_fill must be 'prefix' or 'skip_and_continue'");
      }
    }
    if (j.contains("descriptor")) {
      const auto& d = j["descriptor"];
      detail::reject_unknown(d, {"mode", "template"}, "descriptor");
      if (d.contains("mode")) {
        const auto m = d["mode"].get<std::string>();
        if (m != "instruct_header" && m != "fine_tuned") {
          throw Error(ErrorCode::InvalidParams, "descriptor.mode must be 'instruct_header' or 'fine_tuned'");
        }
        c.descriptor_mode = m == "fine_tuned" ? DescriptorMode::FineTuned : DescriptorMode::InstructHeader;
      }
      detail::read_opt(d, "template", c.descriptor_template);
      templates::by_name(c.descriptor_template);
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      detail::reject_unknown(s, {"descriptor", "candidates", "response", "answer", "curation"}, "sampling");
      if (s.contains("descriptor")) c.descriptor_params = params_from_json(s["descriptor"], c.descriptor_params);
      if (s.contains("candidates")) c.candidate_params = params_from_json(s["candidates"], c.candidate_params);
      if (s.contains("response")) c.response_params = params_from_json(s["response"], c.response_params);
      if (s.contains("answer")) c.answer_params = params_from_json(s["answer"], c.answer_params);
      if (s.contains("curation")) c.curation_params = params_from_json(s["curation"], c.curation_params);
    }
    if (j.contains("refine")) {
      const auto& r = j["refine"];
      detail::reject_unknown(r, {"n_candidates", "reward_top_k", "reduction"}, "refine");
      detail::read_opt(r, "n_candidates", c.n_candidates);
      detail::read_opt(r, "reward_top_k", c.reward_top_k);
      if (r.contains("reduction")) {
        const auto v = r["reduction"].get<std::string>();
        if (v != "sum" && v != "mean") throw Error(ErrorCode::InvalidParams, "refine.reduction must be sum or mean");
        c.reward_reduction = v == "sum" ? Reduction::Sum : Reduction::Mean;
      }
    }
    if (j.contains("curation")) {
      const auto& k = j["curation"];
      detail::reject_unknown(k, {"negatives_per_tuple", "fanout", "shared_template", "positive_export"}, "curation");
      detail::read_opt(k, "negatives_per_tuple", c.negatives_per_tuple);
      detail::read_opt(k, "fanout", c.fanout);
      detail::read_opt(k, "shared_template", c.shared_template);
      if (k.contains("positive_export")) {
        const auto v = k["positive_export"].get<std::string>();
        if (v != "full" && v != "head") throw Error(ErrorCode::InvalidParams, "positive_export must be full or head");
        c.positive_export = v == "full" ? PositiveExport::Full : PositiveExport::Head;
      }
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      detail::reject_unknown(e, {"f1_articles"}, "eval");
      detail::read_opt(e, "f1_articles", c.f1_articles);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("config: ") + e.what());
  }
  if (c.max_inflight < 1) throw Error(ErrorCode::InvalidParams, "max_inflight must be >= 1");
  if (c.n_candidates < 2) throw Error(ErrorCode::InvalidParams, "refine.n_candidates must be >= 2");
  if (c.reward_top_k < 1) throw Error(ErrorCode::InvalidParams, "refine.reward_top_k must be >= 1");
  for (const auto* p : {&c.descriptor_params, &c.candidate_params, &c.response_params, &c.answer_params,
                        &c.curation_params}) {
    p->validate();
  }
  return c;
}

inline EngineConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseFailure, path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Canonical form: the resolved config, keys sorted, no whitespace.
inline std::string canonical_config(const EngineConfig& c) { return to_json_value(c).dump(); }

inline std::string config_digest(const EngineConfig& c) { return sha256_hex(canonical_config(c)); }

/// Config value, else SOURCE_DATE_EPOCH, else the Unix epoch. Never the wall
/// clock, so repeated runs stay byte-identical.
inline std::string resolve_created_at(const EngineConfig& c) {
  if (c.created_at) return *c.created_at;
  std::time_t t = 0;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    char* end = nullptr;
    const long long v = std::strtoll(sde, &end, 10);
    if (end && *end == '\0' && v >= 0) t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Deterministic run identifier over (config digest, command, input digests).
inline std::string make_run_id(const std::string& digest, std::string_view command,
                               const std::vector<std::string>& input_digests) {
  std::string material = digest;
  material += '\n';
  material += command;
  for (const auto& d : input_digests) {
    material += '\n';
    material += d;
  }
  return sha256_hex(material).substr(0, 16);
}

inline nlohmann::json version_json(const std::string& digest) {
  return {{"engine_version", kEngineVersion},
          {"segmenter_rule_version", kSegmenterRuleVersion},
          {"config_digest", digest},
          {"templates", {templates::kCtdQueryName, templates::kCtdStructureName, templates::kMcqrMultihopName}}};
}

// ---------------------------------------------------------------------------
// Option bundles derived from the config

inline ScoringOptions scoring_options(const EngineConfig& c) {
  ScoringOptions o;
  o.markers = c.markers;
  o.window_tokens = c.window_tokens;
  o.max_inflight = c.max_inflight;
  return o;
}

inline CompressOptions compress_options(const EngineConfig& c) {
  CompressOptions o;
  o.scoring = scoring_options(c);
  o.selection.fill = c.budget_fill;
  return o;
}

inline SegmenterOptions segmenter_options(const EngineConfig& c) {
  SegmenterOptions o;
  o.max_sentence_chars = c.max_sentence_chars;
  return o;
}

inline DescriptorOptions descriptor_options(const EngineConfig& c) {
  return {c.descriptor_mode, c.descriptor_template};
}

inline CurationOptions curation_options(const EngineConfig& c) {
  CurationOptions o;
  o.params = c.curation_params;
  o.seed = c.seed;
  o.max_inflight = c.max_inflight;
  o.shared_template = c.shared_template;
  o.negatives_per_tuple = c.negatives_per_tuple;
  o.fanout = c.fanout;
  o.segmenter = segmenter_options(c);
  return o;
}

inline RefineOptions refine_options(const EngineConfig& c, const Provenance& provenance) {
  RefineOptions o;
  o.n_candidates = c.n_candidates;
  o.sampling = c.candidate_params;
  if (!o.sampling.seed) o.sampling.seed = c.seed;
  o.response = c.response_params;
  o.constraint = c.constraint;
  o.compress = compress_options(c);
  o.segmenter = segmenter_options(c);
  o.descriptor = descriptor_options(c);
  o.reward.top_k = c.reward_top_k;
  o.reward.reduction = c.reward_reduction;
  o.max_inflight = c.max_inflight;
  o.provenance = provenance;
  return o;
}

inline EvalOptions eval_options(const EngineConfig& c, EvalMode mode, const std::string& run_id,
                                const std::string& digest) {
  EvalOptions o;
  o.mode = mode;
  o.constraint = c.constraint;
  o.compress = compress_options(c);
  o.segmenter = segmenter_options(c);
  o.descriptor_params = c.descriptor_params;
  o.descriptor = descriptor_options(c);
  o.answer_params = c.answer_params;
  o.normalization.articles = c.f1_articles;
  o.max_inflight = c.max_inflight;
  o.run_id = run_id;
  o.config_digest = digest;
  return o;
}

}  // namespace tpc
