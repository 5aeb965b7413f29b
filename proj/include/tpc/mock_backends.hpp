#pragma once

// Deterministic in-process backends for offline runs and tests. Every output
// is a pure function of (configuration, inputs, seed), so pipelines built on
// them are byte-reproducible.

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpc/backends.hpp"
#include "tpc/templates.hpp"
#include "tpc/textseg.hpp"
#include "tpc/util.hpp"

namespace tpc::mock {

inline TokenId token_id(std::string_view token, std::size_t vocab_size) {
  return static_cast<TokenId>(fnv1a64(token) % vocab_size);
}

/// Probability vector over the mock vocabulary for the next token, given the
/// prompt and the gold continuation tokens before the current position.
using ScoringModel =
    std::function<std::vector<double>(std::string_view prompt, std::span<const std::string> prefix)>;

/// Optional override for generation. Returning nullopt falls through to the
/// backend's seeded sampler.
using Responder = std::function<std::optional<std::string>(
    std::string_view prompt, const GenerationParams& params, std::size_t candidate, std::uint64_t stream_seed)>;

inline ScoringModel uniform_model(std::size_t vocab_size) {
  return [vocab_size](std::string_view, std::span<const std::string>) {
    return std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size));
  };
}

/// Add-one unigram model over the bag of tokens in prompt + prefix. Depends on
/// the full token history, so teacher-forced scores obey the chain rule.
inline ScoringModel unigram_model(std::size_t vocab_size) {
  return [vocab_size](std::string_view prompt, std::span<const std::string> prefix) {
    std::vector<double> counts(vocab_size, 1.0);
    double total = static_cast<double>(vocab_size);
    for (const auto& tok : WhitespaceTokenizer{}.tokenize(prompt)) {
      counts[token_id(tok, vocab_size)] += 1.0;
      total += 1.0;
    }
    for (const auto& tok : prefix) {
      counts[token_id(tok, vocab_size)] += 1.0;
      total += 1.0;
    }
    for (auto& c : counts) c /= total;
    return counts;
  };
}

/// The favoured token at each position gets `low + (high - low) * f` of the
/// mass, where f is the fraction of `key_sentences` found verbatim in the
/// prompt; the rest is uniform. Two prompts covering the same key sentences
/// therefore yield identical distributions.
inline ScoringModel coverage_model(std::vector<std::string> key_sentences, std::size_t vocab_size,
                                   double low = 0.3, double high = 0.9) {
  return [keys = std::move(key_sentences), vocab_size, low, high](std::string_view prompt,
                                                                 std::span<const std::string> prefix) {
    std::size_t present = 0;
    for (const auto& k : keys) {
      if (prompt.find(k) != std::string_view::npos) ++present;
    }
    const double f = keys.empty() ? 1.0 : static_cast<double>(present) / static_cast<double>(keys.size());
    const double peak = low + (high - low) * f;
    const auto favoured = static_cast<std::size_t>(mix64(prefix.size()) % vocab_size);
    std::vector<double> p(vocab_size, (1.0 - peak) / static_cast<double>(vocab_size - 1));
    p[favoured] = peak;
    return p;
  };
}

class MockGenerationBackend final : public GenerationBackend {
 public:
  struct Options {
    std::string id = "mock-gen";
    std::size_t vocab_size = 512;
    std::size_t context_window = 0;  // whitespace tokens, 0 = unbounded
    bool distributions = true;       // false: score_continuation raises LogprobsUnsupported
    bool sequence_logprobs = true;
  };

  MockGenerationBackend() : MockGenerationBackend(Options{}) {}
  explicit MockGenerationBackend(Options opts)
      : opts_(std::move(opts)), model_(unigram_model(opts_.vocab_size)) {}

  MockGenerationBackend& script(std::string prompt, std::vector<std::string> completions) {
    script_[std::move(prompt)] = std::move(completions);
    return *this;
  }
  MockGenerationBackend& responder(Responder r) {
    responder_ = std::move(r);
    return *this;
  }
  MockGenerationBackend& scoring_model(ScoringModel m) {
    model_ = std::move(m);
    return *this;
  }

  void set_available(bool available) { available_ = available; }

  std::string id() const override { return opts_.id; }
  std::size_t vocab_size() const { return opts_.vocab_size; }
  std::size_t generate_calls() const { return generate_calls_.load(); }
  std::size_t score_calls() const { return score_calls_.load(); }

  std::vector<Completion> generate(std::string_view prompt, const GenerationParams& params) const override {
    ++generate_calls_;
    check_available();
    check_window(prompt);
    std::vector<Completion> out;
    const std::uint64_t prompt_digest = fnv1a64(prompt);
    for (int c = 0; c < params.num_candidates; ++c) {
      const auto cand = static_cast<std::size_t>(c);
      // Greedy decoding ignores the seed: the output depends on the prompt only.
      const std::uint64_t stream =
          params.temperature > 0.0
              ? hash_combine(hash_combine(params.seed.value_or(0), prompt_digest), cand + 1)
              : prompt_digest;
      std::string text;
      if (auto it = script_.find(std::string(prompt)); it != script_.end() && !it->second.empty()) {
        text = it->second[cand % it->second.size()];
      } else if (auto r = responder_ ? responder_(prompt, params, cand, stream) : std::nullopt) {
        text = std::move(*r);
      } else {
        text = sample_words(prompt, params, stream);
      }
      for (const auto& stop : params.stop_sequences) {
        if (auto pos = text.find(stop); !stop.empty() && pos != std::string::npos) text.resize(pos);
      }
      out.push_back({std::move(text), cand});
    }
    return out;
  }

  std::vector<TokenDistribution> score_continuation(std::string_view prompt, std::string_view continuation,
                                                    std::size_t top_k) const override {
    ++score_calls_;
    check_available();
    if (!opts_.distributions) {
      throw Error(ErrorCode::LogprobsUnsupported, opts_.id + " does not expose token distributions");
    }
    check_window(prompt);
    const auto tokens = WhitespaceTokenizer{}.tokenize(continuation);
    std::vector<TokenDistribution> out;
    out.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto probs = model_(prompt, std::span<const std::string>(tokens.data(), t));
      out.push_back(to_distribution(probs, token_id(tokens[t], opts_.vocab_size), t, top_k));
    }
    return out;
  }

  double sequence_logprob(std::string_view prompt, std::string_view continuation) const override {
    ++score_calls_;
    check_available();
    if (!opts_.sequence_logprobs) {
      throw Error(ErrorCode::LogprobsUnsupported, opts_.id + " does not expose log-likelihoods");
    }
    const auto tokens = WhitespaceTokenizer{}.tokenize(continuation);
    double sum = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto probs = model_(prompt, std::span<const std::string>(tokens.data(), t));
      sum += std::log(probs[static_cast<std::size_t>(token_id(tokens[t], opts_.vocab_size))]);
    }
    return sum;
  }

  bool healthy() const override { return available_.load(); }

 private:
  void check_available() const {
    if (!available_.load()) throw Error(ErrorCode::BackendUnavailable, opts_.id + " is down");
  }

  void check_window(std::string_view prompt) const {
    if (opts_.context_window == 0) return;
    const std::size_t n = WhitespaceTokenizer{}.count(prompt);
    if (n > opts_.context_window) throw ContextOverflowError(opts_.context_window, n);
  }

  TokenDistribution to_distribution(const std::vector<double>& probs, TokenId gold, std::size_t position,
                                    std::size_t top_k) const {
    if (probs.size() != opts_.vocab_size) {
      throw Error(ErrorCode::DimensionMismatch, "scoring model returned wrong vocabulary width");
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    TokenDistribution d;
    d.position = position;
    d.gold_token = gold;
    const auto g = static_cast<std::size_t>(gold);
    d.gold_logprob = probs[g] > 0.0 ? std::log(probs[g]) : -std::numeric_limits<double>::infinity();
    d.is_truncated = order.size() > top_k;
    bool gold_in = false;
    for (std::size_t i = 0; i < order.size() && i < top_k; ++i) {
      d.entries.emplace_back(static_cast<TokenId>(order[i]), std::log(probs[order[i]]));
      gold_in = gold_in || order[i] == g;
    }
    if (!gold_in) d.entries.emplace_back(gold, d.gold_logprob);
    return d;
  }

  static std::string sample_words(std::string_view prompt, const GenerationParams& params,
                                  std::uint64_t stream) {
    std::vector<std::string> words;
    for (auto& tok : WhitespaceTokenizer{}.tokenize(prompt)) {
      if (tok.size() >= 3 && std::isalpha(static_cast<unsigned char>(tok[0]))) {
        words.push_back(to_lower_ascii(tok));
      }
    }
    if (words.empty()) return "ok";
    Rng rng(stream);
    const std::size_t len =
        std::min<std::size_t>(static_cast<std::size_t>(params.max_new_tokens), 6 + rng.uniform_index(6));
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) out.push_back(' ');
      out += words[rng.uniform_index(words.size())];
    }
    return out;
  }

  Options opts_;
  ScoringModel model_;
  std::map<std::string, std::vector<std::string>, std::less<>> script_;
  Responder responder_;
  std::atomic<bool> available_{true};
  mutable std::atomic<std::size_t> generate_calls_{0};
  mutable std::atomic<std::size_t> score_calls_{0};
};

// ---------------------------------------------------------------------------
// Embedding

/// Hash-projection embedder. The base vector of a span is either a bag of
/// per-word pseudo-random vectors (lexical mode, so shared words mean
/// similar vectors) or one pseudo-random vector seeded by the span digest.
/// With context_weight > 0, sentence vectors also get a component seeded by
/// (digest of all preceding text, digest of the sentence), making them
/// context-sensitive. Question vectors never get the context component.
class HashEmbeddingBackend final : public EmbeddingBackend {
 public:
  struct Options {
    std::string id = "mock-embed";
    std::size_t dim = 64;
    double context_weight = 0.25;
    bool lexical = true;
    double scale = 1.0;
    std::size_t max_input_tokens = 0;
  };

  HashEmbeddingBackend() : HashEmbeddingBackend(Options{}) {}
  explicit HashEmbeddingBackend(Options opts) : opts_(std::move(opts)) {}

  void set_available(bool available) { available_ = available; }

  std::string id() const override { return opts_.id; }
  std::size_t dim() const override { return opts_.dim; }
  std::size_t max_input_tokens() const override { return opts_.max_input_tokens; }
  std::size_t embed_calls() const { return embed_calls_.load(); }
  bool healthy() const override { return available_.load(); }

  std::vector<std::vector<double>> embed_raw(const MarkedText& marked) const override {
    ++embed_calls_;
    if (!available_.load()) throw Error(ErrorCode::BackendUnavailable, opts_.id + " is down");
    std::vector<std::vector<double>> out;
    const std::string_view text = marked.text;
    std::size_t seg_begin = 0;
    // Running digest of the preceding sentences, newline-joined.
    std::uint64_t preceding = fnv1a64("");
    bool has_preceding = false;
    for (auto pos = text.find(marked.marker); pos != std::string_view::npos;
         pos = text.find(marked.marker, seg_begin)) {
      const std::string_view span = trim(text.substr(seg_begin, pos - seg_begin));
      auto v = base_vector(span);
      if (marked.kind == MarkerKind::Sentence && opts_.context_weight > 0.0 && has_preceding) {
        const auto ctx = random_vector(hash_combine(preceding, fnv1a64(span)));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += opts_.context_weight * ctx[i];
      }
      if (!span.empty()) {
        if (has_preceding) preceding = fnv1a64("\n", preceding);
        preceding = fnv1a64(span, preceding);
        has_preceding = true;
      }
      for (auto& x : v) x *= opts_.scale;
      out.push_back(std::move(v));
      seg_begin = pos + marked.marker.size();
    }
    return out;
  }

 private:
  std::vector<double> random_vector(std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> v(opts_.dim);
    for (auto& x : v) x = rng.uniform01() * 2.0 - 1.0;
    return v;
  }

  std::vector<double> base_vector(std::string_view span) const {
    std::vector<double> v(opts_.dim, 0.0);
    bool any = false;
    if (opts_.lexical) {
      for (const auto& tok : WhitespaceTokenizer{}.tokenize(span)) {
        if (tok.size() == 1 && std::ispunct(static_cast<unsigned char>(tok[0]))) continue;
        const auto w = random_vector(fnv1a64(to_lower_ascii(tok)));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += w[i];
        any = true;
      }
    }
    if (!any) v = random_vector(fnv1a64(span, 0x84222325cbf29ce4ULL));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  }

  Options opts_;
  std::atomic<bool> available_{true};
  mutable std::atomic<std::size_t> embed_calls_{0};
};

/// Test double that delegates to a function.
class CallbackEmbeddingBackend final : public EmbeddingBackend {
 public:
  using Fn = std::function<std::vector<std::vector<double>>(const MarkedText&)>;

  CallbackEmbeddingBackend(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  std::string id() const override { return "callback-embed"; }
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<double>> embed_raw(const MarkedText& marked) const override { return fn_(marked); }

 private:
  std::size_t dim_;
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Simulated instruct LLM for the curation prompts

namespace detail {

inline bool starts_with_template(std::string_view prompt, std::string_view tmpl) {
  const auto head = tmpl.substr(0, tmpl.find('{'));
  return prompt.substr(0, head.size()) == head;
}

inline std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> words;
  for (auto& tok : WhitespaceTokenizer{}.tokenize(text)) {
    if (tok.size() >= 4 && std::isalpha(static_cast<unsigned char>(tok[0]))) words.push_back(to_lower_ascii(tok));
  }
  return words;
}

// Numbered sentences "[[i]] ..." from the multi-hop prompt's input section.
inline std::vector<std::string> numbered_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = text.find("[[");
  while (pos != std::string_view::npos) {
    const auto close = text.find("]]", pos);
    if (close == std::string_view::npos) break;
    const auto next = text.find("[[", close);
    out.emplace_back(trim(text.substr(close + 2, next == std::string_view::npos ? std::string_view::npos
                                                                                  : next - close - 2)));
    pos = next;
  }
  return out;
}

}  // namespace detail

/// Responder that answers the three curation prompts the way an instruct
/// model would, with a `fault_rate` fraction of deliberately bad replies
/// (empty, forbidden word, missing placeholder, single-hop, out-of-range,
/// unparseable) so reject paths get exercised.
inline Responder curation_responder(double fault_rate = 0.1) {
  return [fault_rate](std::string_view prompt, const GenerationParams&, std::size_t,
                      std::uint64_t stream) -> std::optional<std::string> {
    Rng rng(hash_combine(stream, 0x6375726174696f6eULL));
    const bool fault = rng.uniform01() < fault_rate;
    const auto fault_kind = rng.uniform_index(3);

    if (detail::starts_with_template(prompt, templates::kCtdQueryV1)) {
      const auto begin = prompt.find("Long context: ") + 14;
      const auto end = prompt.rfind("\nQuery:");
      auto words = detail::content_words(prompt.substr(begin, end - begin));
      if (words.empty()) return std::string();
      if (fault) return fault_kind == 0 ? std::string() : "Explain the context of " + words.front() + ".";
      const auto& a = words[rng.uniform_index(words.size())];
      const auto& b = words[rng.uniform_index(words.size())];
      static constexpr std::string_view kForms[] = {
          "What does the text say about {a} and {b}?", "Summarize the passage about {a}.",
          "Explain how {a} relates to {b}.", "List the key facts about {a}."};
      return templates::render(kForms[rng.uniform_index(4)], {{"a", a}, {"b", b}});
    }

    if (detail::starts_with_template(prompt, templates::kCtdStructureV1)) {
      if (fault) return std::string("Answer the following based on the text.\nText: {text}\nAnswer:");
      static constexpr std::string_view kTemplates[] = {
          "You are given a text and a question related to it. Answer the question based on the text.\n"
          "Question: {question}\nText: {text}\nNow answer the question:",
          "Read the passage below.\n{text}\nUsing only the passage, respond to: {question}",
          "Task: {question}\nSource material:\n{text}\nWrite your response:"};
      return std::string(kTemplates[rng.uniform_index(3)]);
    }

    if (detail::starts_with_template(prompt, templates::kMcqrMultihopV1)) {
      const auto begin = prompt.rfind("Now, solve this example:\n");
      const auto sentences = detail::numbered_sentences(prompt.substr(begin));
      const std::size_t n = sentences.size();
      if (n < 2) return std::string("I cannot produce a question for this text.");
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 1);
      rng.shuffle(idx);
      std::size_t hops = std::min<std::size_t>(n, 2 + rng.uniform_index(2));
      std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(hops));
      std::sort(chosen.begin(), chosen.end());
      if (fault && fault_kind == 0) chosen.resize(1);
      if (fault && fault_kind == 1) chosen.back() = n + 1;

      std::string out = "Questions:\n";
      for (std::size_t h = 0; h < chosen.size(); ++h) {
        const auto k = chosen[h];
        const auto words = k <= n ? detail::content_words(sentences[k - 1]) : std::vector<std::string>{};
        const std::string topic = words.empty() ? "it" : words.front();
        out += "Question " + std::to_string(h + 1) + ": What is stated about " + topic + "?\n";
        out += "Answer " + std::to_string(h + 1) + ": As stated in [[" + std::to_string(k) + "]].\n";
      }
      out += "\nCombining the questions to create a multi-hop question:\n";
      for (std::size_t h = 0; h < chosen.size(); ++h) {
        out += std::to_string(h + 1) + ". See [[" + std::to_string(chosen[h]) + "]].\n";
      }
      out += "Final question: How are the facts in these sentences connected?\n";
      if (fault && fault_kind == 2) return out;
      out += "Necessary sentences: ";
      for (std::size_t h = 0; h < chosen.size(); ++h) {
        if (h) out += ", ";
        out += "[[" + std::to_string(chosen[h]) + "]]";
      }
      out += "\n";
      return out;
    }
    return std::nullopt;
  };
}

}  // namespace tpc::mock
