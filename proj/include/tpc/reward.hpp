#pragma once

// KL-divergence reward between the response distribution under a compressed
// prompt and under the full prompt, best-of-N selection over candidate task
// descriptions, and SFT dataset emission for an external trainer.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpc/backends.hpp"
#include "tpc/compressor.hpp"
#include "tpc/ctd.hpp"
#include "tpc/textseg.hpp"
#include "tpc/util.hpp"

namespace tpc {

inline constexpr double kNormalizationTolerance = 1e-9;
inline constexpr double kDefaultSmoothing = 1e-10;

/// KL(p || q) = sum_i p_i ln(p_i / q_i) over two probability vectors.
inline double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw Error(ErrorCode::InvalidDistribution, "distributions must be non-empty and of equal length");
  }
  double sp = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !(q[i] >= 0.0) || !std::isfinite(p[i]) || !std::isfinite(q[i])) {
      throw Error(ErrorCode::InvalidDistribution, "probabilities must be finite and non-negative");
    }
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > kNormalizationTolerance || std::abs(sq - 1.0) > kNormalizationTolerance) {
    throw Error(ErrorCode::InvalidDistribution, "distributions must sum to 1");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw Error(ErrorCode::SupportViolation, "q is zero where p has mass (index " + std::to_string(i) + ")");
    }
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, kl);
}

struct AlignedPair {
  std::vector<TokenId> support;  // shared token ids; the last slot is the OTHER bucket
  std::vector<double> left;
  std::vector<double> right;
  bool truncated = false;
};

/// Puts two (possibly top-k truncated) distributions on a common support:
/// the union of both entry sets (gold tokens included) plus one OTHER bucket
/// holding each side's unlisted mass, epsilon-smoothed and renormalized.
inline AlignedPair align_distributions(const TokenDistribution& left, const TokenDistribution& right,
                                       double epsilon = kDefaultSmoothing) {
  std::map<TokenId, std::pair<double, double>> merged;
  for (const auto& [tok, lp] : left.entries) merged[tok].first = std::exp(lp);
  for (const auto& [tok, lp] : right.entries) merged[tok].second = std::exp(lp);

  AlignedPair out;
  out.truncated = left.is_truncated || right.is_truncated;
  double lsum = 0.0;
  double rsum = 0.0;
  for (const auto& [tok, pr] : merged) {
    out.support.push_back(tok);
    out.left.push_back(pr.first);
    out.right.push_back(pr.second);
    lsum += pr.first;
    rsum += pr.second;
  }
  out.support.push_back(-1);
  out.left.push_back(std::max(0.0, 1.0 - lsum));
  out.right.push_back(std::max(0.0, 1.0 - rsum));

  for (auto* side : {&out.left, &out.right}) {
    double total = 0.0;
    for (auto& v : *side) total += (v += epsilon);
    for (auto& v : *side) v /= total;
  }
  return out;
}

enum class Reduction { Sum, Mean };

inline std::string_view to_string(Reduction r) { return r == Reduction::Sum ? "sum" : "mean"; }

struct RewardOptions {
  std::size_t top_k = 20;
  Reduction reduction = Reduction::Sum;
  double epsilon = kDefaultSmoothing;
};

struct RewardScore {
  double reward = 0.0;  // <= 0
  std::vector<double> per_position_kl;
  Reduction reduction = Reduction::Sum;
  bool truncation_note = false;
  bool surrogate = false;  // log-likelihood-gap fallback; no distributions were available
};

/// Reward of a compressed prompt: -reduce_t KL(P(r_t | compressed) || P(r_t | full))
/// under teacher forcing on `response`. When the backend cannot return
/// distributions the reward degrades to -|log L(r|compressed) - log L(r|full)|
/// and the record is flagged.
inline RewardScore response_reward(const GenerationBackend& backend, std::string_view full_prompt,
                                   std::string_view compressed_prompt, std::string_view response,
                                   const RewardOptions& opts = {}) {
  if (is_blank(response)) throw Error(ErrorCode::InvalidParams, "response is empty");
  RewardScore out;
  out.reduction = opts.reduction;
  try {
    const auto full = score_continuation(backend, full_prompt, response, opts.top_k);
    const auto comp = compressed_prompt == full_prompt
                          ? full
                          : score_continuation(backend, compressed_prompt, response, opts.top_k);
    if (full.size() != comp.size()) {
      throw Error(ErrorCode::InvalidDistribution, "response tokenized differently under the two prompts");
    }
    double total = 0.0;
    for (std::size_t t = 0; t < full.size(); ++t) {
      const auto aligned = align_distributions(comp[t], full[t], opts.epsilon);
      out.truncation_note = out.truncation_note || aligned.truncated;
      const double kl = kl_categorical(aligned.left, aligned.right);
      out.per_position_kl.push_back(kl);
      total += kl;
    }
    if (opts.reduction == Reduction::Mean) total /= static_cast<double>(full.size());
    out.reward = total == 0.0 ? 0.0 : -total;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::LogprobsUnsupported) throw;
    const double lf = backend.sequence_logprob(full_prompt, response);
    const double lc = compressed_prompt == full_prompt ? lf : backend.sequence_logprob(compressed_prompt, response);
    const double gap = std::abs(lc - lf);
    out.reward = gap == 0.0 ? 0.0 : -gap;
    out.per_position_kl.clear();
    out.truncation_note = true;
    out.surrogate = true;
  }
  return out;
}

/// Response cache keyed by (backend id, prompt digest). Concurrent callers
/// may race to generate; the first insert wins and every caller returns it.
class ResponseCache {
 public:
  std::string get_or_generate(const GenerationBackend& backend, std::string_view prompt,
                              const GenerationParams& params) {
    const std::string key = backend.id() + '\n' + sha256_hex(prompt);
    {
      std::lock_guard lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto text = generate(backend, prompt, params).front().text;
    std::lock_guard lock(mu_);
    ++misses_;
    return entries_.try_emplace(key, std::move(text)).first->second;
  }

  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mu_);
    return misses_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

inline GenerationParams default_response_params() {
  GenerationParams params;
  params.max_new_tokens = 64;
  params.temperature = 0.0;
  return params;
}

/// One greedy completion from the full prompt, reused for every candidate.
inline std::string generate_response(const GenerationBackend& backend, std::string_view full_prompt,
                                     GenerationParams params = default_response_params(),
                                     ResponseCache* cache = nullptr) {
  params.temperature = 0.0;
  params.num_candidates = 1;
  if (cache) return cache->get_or_generate(backend, full_prompt, params);
  return generate(backend, full_prompt, params).front().text;
}

// ---------------------------------------------------------------------------
// Best-of-N refinement

struct Provenance {
  std::string run_id;
  std::string config_digest;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct RewardRecord {
  TaskDescription candidate;
  CompressedPrompt compressed;
  double reward = 0.0;  // -inf when the compression kept nothing
  std::vector<double> per_position_kl;
  Reduction reduction = Reduction::Sum;
  bool truncation_note = false;
  bool surrogate = false;
  bool empty_compression = false;
};

struct SftRecord {
  std::string prompt;
  std::string target;
  double reward = 0.0;
  std::size_t candidate_pool_size = 0;
  Provenance provenance;
  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

struct RefineBackends {
  const GenerationBackend& descriptor;
  const GenerationBackend& llm;
  const EmbeddingBackend& embedder;
  const Tokenizer& tokenizer;
};

inline GenerationParams default_candidate_params() {
  GenerationParams params = default_descriptor_params();
  params.temperature = 0.8;
  params.top_p = 0.95;
  params.seed = 0;
  return params;
}

struct RefineOptions {
  std::size_t n_candidates = 4;
  GenerationParams sampling = default_candidate_params();
  GenerationParams response = default_response_params();
  CompressionConstraint constraint = CompressionConstraint::compression_ratio(5.0);
  CompressOptions compress;
  SegmenterOptions segmenter;
  DescriptorOptions descriptor;
  RewardOptions reward;
  std::size_t max_inflight = 8;
  Provenance provenance;
};

struct RefineResult {
  SftRecord sft;
  std::size_t selected_rank = 0;
  std::vector<RewardRecord> rewards;  // candidate_rank order
};

/// Samples candidates, compresses the document under each, scores each
/// compression against the shared full-prompt response and keeps the
/// max-reward candidate (ties go to the lowest candidate_rank).
inline RefineResult refine_step(const RawDocument& p, const RefineBackends& backends, const RefineOptions& opts,
                                ResponseCache* cache = nullptr) {
  if (opts.n_candidates < 2) throw Error(ErrorCode::InvalidParams, "refinement needs at least 2 candidates");
  auto candidates = describe_candidates(p, backends.descriptor, opts.n_candidates, opts.sampling, opts.descriptor);
  const auto ctx = segment(p, backends.tokenizer, opts.segmenter);
  const auto response = generate_response(backends.llm, p.text, opts.response, cache);

  auto records = parallel_map(candidates.size(), opts.max_inflight, [&](std::size_t i) {
    RewardRecord rec;
    rec.candidate = candidates[i];
    rec.reduction = opts.reward.reduction;
    rec.compressed = compress(ctx, candidates[i], opts.constraint, backends.embedder, opts.compress);
    if (rec.compressed.empty_selection) {
      rec.empty_compression = true;
      rec.reward = -std::numeric_limits<double>::infinity();
      return rec;
    }
    auto score = response_reward(backends.llm, p.text, rec.compressed.text, response, opts.reward);
    rec.reward = score.reward;
    rec.per_position_kl = std::move(score.per_position_kl);
    rec.truncation_note = score.truncation_note;
    rec.surrogate = score.surrogate;
    return rec;
  });

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].empty_compression) continue;
    if (!best || records[i].reward > records[*best].reward) best = i;
  }
  if (!best) throw Error(ErrorCode::EmptyCompressionPool, "every candidate compressed '" + p.id + "' to nothing");

  RefineResult out;
  out.selected_rank = *best;
  out.sft.prompt = p.text;
  out.sft.target = records[*best].candidate.text;
  out.sft.reward = records[*best].reward;
  out.sft.candidate_pool_size = records.size();
  out.sft.provenance = opts.provenance;
  out.rewards = std::move(records);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const Provenance& p) {
  j = {{"run_id", p.run_id}, {"config_digest", p.config_digest}};
}
inline void from_json(const nlohmann::json& j, Provenance& p) {
  j.at("run_id").get_to(p.run_id);
  j.at("config_digest").get_to(p.config_digest);
}

inline void to_json(nlohmann::json& j, const SftRecord& r) {
  j = {{"prompt", r.prompt},
       {"target", r.target},
       {"reward", r.reward},
       {"candidate_pool_size", r.candidate_pool_size},
       {"provenance", r.provenance}};
}
inline void from_json(const nlohmann::json& j, SftRecord& r) {
  j.at("prompt").get_to(r.prompt);
  j.at("target").get_to(r.target);
  j.at("reward").get_to(r.reward);
  j.at("candidate_pool_size").get_to(r.candidate_pool_size);
  j.at("provenance").get_to(r.provenance);
}

inline nlohmann::json reward_record_json(const RewardRecord& r) {
  nlohmann::json j;
  j["candidate_rank"] = r.candidate.candidate_rank.value_or(0);
  j["candidate"] = r.candidate.text;
  j["reward"] = r.empty_compression ? nlohmann::json(nullptr) : nlohmann::json(r.reward);
  j["per_position_kl"] = r.per_position_kl;
  j["reduction"] = to_string(r.reduction);
  j["truncation_note"] = r.truncation_note;
  j["surrogate"] = r.surrogate;
  j["empty_compression"] = r.empty_compression;
  j["selected_indices"] = r.compressed.selected_indices();
  j["compressed_tokens"] = r.compressed.total_tokens;
  return j;
}

struct Manifest {
  std::string run_id;
  std::string config_digest;
  std::size_t count = 0;
  std::string created_at;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"run_id", m.run_id}, {"config_digest", m.config_digest}, {"count", m.count}, {"created_at", m.created_at}};
}
inline void from_json(const nlohmann::json& j, Manifest& m) {
  j.at("run_id").get_to(m.run_id);
  j.at("config_digest").get_to(m.config_digest);
  j.at("count").get_to(m.count);
  j.at("created_at").get_to(m.created_at);
}

inline std::string manifest_path(const std::string& dataset_path) { return dataset_path + ".manifest.json"; }

/// Writes one JSON object per line plus `<path>.manifest.json`. `extra`
/// fields are merged into the manifest; they cannot replace the core ones.
inline Manifest emit_sft_dataset(std::span<const SftRecord> records, const std::string& path,
                                 const Provenance& provenance, const std::string& created_at,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
  std::string body;
  for (const auto& r : records) {
    body += nlohmann::json(r).dump();
    body += '\n';
  }
  write_file(path, body);
  Manifest m{provenance.run_id, provenance.config_digest, records.size(), created_at};
  nlohmann::json j = extra;
  j.update(nlohmann::json(m));
  write_file(manifest_path(path), j.dump(2) + "\n");
  return m;
}

inline std::vector<SftRecord> read_sft_dataset(const std::string& path) {
  std::vector<SftRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    out.push_back(nlohmann::json::parse(line).get<SftRecord>());
  }
  return out;
}

}  // namespace tpc
