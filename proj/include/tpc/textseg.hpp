#pragma once

// Sentence segmentation, special-token marking and token counting.
//
// Offsets and lengths are in bytes of the UTF-8 document text.

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tpc/error.hpp"
#include "tpc/util.hpp"

namespace tpc {

/// Bumped whenever a change to the rules below can move a boundary.
inline constexpr std::string_view kSegmenterRuleVersion = "tpc-seg/1";

struct RawDocument {
  std::string id;
  std::string text;
  std::optional<std::string> source;
};

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Sentence {
  std::size_t index = 0;
  std::string text;
  CharSpan span;
  std::size_t token_count = 0;
};

// ---------------------------------------------------------------------------
// Tokenizers

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::string id() const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  virtual std::size_t count(std::string_view text) const { return tokenize(text).size(); }
};

using TokenizerHandle = std::shared_ptr<const Tokenizer>;

/// Offline fallback: maximal runs of word bytes form one token, every ASCII
/// punctuation byte is its own token, whitespace separates and is dropped.
/// Non-ASCII bytes count as word bytes.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  static constexpr std::string_view kId = "whitespace-v1";

  std::string id() const override { return std::string(kId); }

  std::vector<std::string> tokenize(std::string_view text) const override {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (is_space(c)) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      } else if (c < 0x80 && std::ispunct(c)) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        out.emplace_back(1, ch);
      } else {
        cur.push_back(ch);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  std::size_t count(std::string_view text) const override {
    std::size_t n = 0;
    bool in_word = false;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (is_space(c)) {
        in_word = false;
      } else if (c < 0x80 && std::ispunct(c)) {
        in_word = false;
        ++n;
      } else if (!in_word) {
        in_word = true;
        ++n;
      }
    }
    return n;
  }
};

/// Adapter for tokenizers that live outside the engine (e.g. the target
/// LLM's own vocabulary exposed through a binding).
class CallbackTokenizer final : public Tokenizer {
 public:
  using Fn = std::function<std::vector<std::string>(std::string_view)>;

  CallbackTokenizer(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

  std::string id() const override { return id_; }
  std::vector<std::string> tokenize(std::string_view text) const override { return fn_(text); }

 private:
  std::string id_;
  Fn fn_;
};

class TokenizerRegistry {
 public:
  TokenizerRegistry() { add(std::make_shared<WhitespaceTokenizer>()); }

  void add(TokenizerHandle tokenizer) {
    std::unique_lock lock(mu_);
    auto key = tokenizer->id();
    entries_[std::move(key)] = std::move(tokenizer);
  }

  TokenizerHandle get(std::string_view id) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(std::string(id));
    if (it == entries_.end()) {
      throw Error(ErrorCode::UnknownTokenizer, "no tokenizer registered as '" + std::string(id) + "'");
    }
    return it->second;
  }

  bool contains(std::string_view id) const {
    std::shared_lock lock(mu_);
    return entries_.count(std::string(id)) > 0;
  }

  static TokenizerRegistry& global() {
    static TokenizerRegistry registry;
    return registry;
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, TokenizerHandle> entries_;
};

inline std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer) {
  if (text.empty()) return 0;
  return tokenizer.count(text);
}

inline std::size_t count_tokens(std::string_view text, std::string_view tokenizer_id,
                                const TokenizerRegistry& registry = TokenizerRegistry::global()) {
  auto tok = registry.get(tokenizer_id);
  return count_tokens(text, *tok);
}

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentedContext {
  RawDocument document;
  std::vector<Sentence> sentences;
  std::string tokenizer_id;
  std::size_t separator_tokens = 0;  // tokens inside the gaps between/around sentences

  std::size_t size() const noexcept { return sentences.size(); }
  bool empty() const noexcept { return sentences.empty(); }

  std::size_t total_tokens() const noexcept {
    std::size_t sum = separator_tokens;
    for (const auto& s : sentences) sum += s.token_count;
    return sum;
  }

  /// Text between sentence i-1 and sentence i; gap(0) is the leading
  /// whitespace and gap(size()) the trailing whitespace.
  std::string_view gap(std::size_t i) const {
    const std::string_view text = document.text;
    const std::size_t begin = i == 0 ? 0 : sentences[i - 1].span.end;
    const std::size_t end = i == sentences.size() ? text.size() : sentences[i].span.begin;
    return text.substr(begin, end - begin);
  }
};

inline const std::vector<std::string>& default_abbreviations() {
  static const std::vector<std::string> list = {
      "dr",  "mr",   "mrs",  "ms",  "prof", "sr",   "jr",  "st",  "vs",  "e.g", "i.e",
      "inc", "ltd",  "corp", "fig", "al",   "approx", "dept", "gen", "gov", "lt", "col",
      "capt", "mt",  "rev",  "jan", "feb",  "mar",  "apr", "jun", "jul", "aug", "sep",
      "sept", "oct", "nov",  "dec", "u.s",  "ph.d", "a.m", "p.m"};
  return list;
}

struct SegmenterOptions {
  std::size_t max_sentence_chars = 2048;
  std::vector<std::string> abbreviations = default_abbreviations();
};

namespace detail {

inline bool is_closer(unsigned char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

// "…" is E2 80 A6; right quotes ’ ” are E2 80 99 / E2 80 9D.
inline std::size_t ellipsis_len(std::string_view t, std::size_t i) {
  return t.substr(i, 3) == "\xE2\x80\xA6" ? 3 : 0;
}
inline std::size_t closing_quote_len(std::string_view t, std::size_t i) {
  auto s = t.substr(i, 3);
  return (s == "\xE2\x80\x99" || s == "\xE2\x80\x9D") ? 3 : 0;
}

inline bool is_abbreviation(std::string_view text, std::size_t dot_pos,
                            const std::vector<std::string>& abbreviations) {
  std::size_t b = dot_pos;
  while (b > 0 && !is_space(static_cast<unsigned char>(text[b - 1]))) --b;
  std::string_view word = text.substr(b, dot_pos - b);
  while (!word.empty() && (word.front() == '(' || word.front() == '"' || word.front() == '\'' ||
                           word.front() == '[')) {
    word.remove_prefix(1);
  }
  if (word.empty()) return false;
  const std::string lower = to_lower_ascii(word);
  return std::find(abbreviations.begin(), abbreviations.end(), lower) != abbreviations.end();
}

// Position of the first newline of a blank-line break starting at i, or npos.
inline bool blank_line_at(std::string_view t, std::size_t i, std::size_t& after) {
  if (t[i] != '\n') return false;
  std::size_t j = i + 1;
  while (j < t.size() && (t[j] == ' ' || t[j] == '\t' || t[j] == '\r')) ++j;
  if (j < t.size() && t[j] == '\n') {
    after = j + 1;
    return true;
  }
  return false;
}

inline std::vector<CharSpan> raw_spans(std::string_view t, const SegmenterOptions& opts) {
  std::vector<CharSpan> spans;
  std::size_t i = 0;
  const std::size_t n = t.size();
  auto skip_space = [&](std::size_t p) {
    while (p < n && is_space(static_cast<unsigned char>(t[p]))) ++p;
    return p;
  };
  auto close = [&](std::size_t b, std::size_t e) {
    while (e > b && is_space(static_cast<unsigned char>(t[e - 1]))) --e;
    if (e > b) spans.push_back({b, e});
  };

  i = skip_space(0);
  std::size_t start = i;
  while (i < n) {
    std::size_t after = 0;
    if (blank_line_at(t, i, after)) {
      close(start, i);
      i = skip_space(after);
      start = i;
      continue;
    }
    const auto c = static_cast<unsigned char>(t[i]);
    const std::size_t ell = ellipsis_len(t, i);
    if (c == '.' || c == '!' || c == '?' || ell > 0) {
      const std::size_t run_begin = i;
      std::size_t j = i;
      while (j < n) {
        const auto cj = static_cast<unsigned char>(t[j]);
        if (cj == '.' || cj == '!' || cj == '?') {
          ++j;
        } else if (std::size_t e = ellipsis_len(t, j); e > 0) {
          j += e;
        } else {
          break;
        }
      }
      const bool single_dot = (j - run_begin == 1) && c == '.';
      while (j < n) {
        if (is_closer(static_cast<unsigned char>(t[j]))) {
          ++j;
        } else if (std::size_t q = closing_quote_len(t, j); q > 0) {
          j += q;
        } else {
          break;
        }
      }
      const bool at_boundary = j == n || is_space(static_cast<unsigned char>(t[j]));
      if (at_boundary && !(single_dot && is_abbreviation(t, run_begin, opts.abbreviations))) {
        close(start, j);
        i = skip_space(j);
        // A blank line right after the punctuation is consumed by skip_space.
        start = i;
        continue;
      }
      i = j;
      continue;
    }
    ++i;
  }
  if (start < n) close(start, n);
  return spans;
}

// Splits an over-long span at the last clause boundary that fits, else hard.
inline void split_long(std::string_view t, CharSpan span, std::size_t max_chars,
                       std::vector<CharSpan>& out) {
  while (span.size() > max_chars) {
    const std::size_t limit = span.begin + max_chars;
    std::size_t cut = std::string_view::npos;
    for (std::size_t k = limit; k > span.begin + 1; --k) {
      const char ch = t[k - 1];
      if (ch == ',' || ch == ';') {
        cut = k;
        break;
      }
    }
    if (cut == std::string_view::npos) {
      cut = limit;
      while (cut > span.begin + 1 && !is_utf8_boundary(t, cut)) --cut;
    }
    std::size_t piece_end = cut;
    while (piece_end > span.begin && is_space(static_cast<unsigned char>(t[piece_end - 1]))) {
      --piece_end;
    }
    out.push_back({span.begin, piece_end});
    std::size_t next = cut;
    while (next < span.end && is_space(static_cast<unsigned char>(t[next]))) ++next;
    span.begin = next;
  }
  if (span.size() > 0) out.push_back(span);
}

}  // namespace detail

/// Splits `document` into sentences. Pure in (text, options, rule version).
inline SegmentedContext segment(const RawDocument& document, const Tokenizer& tokenizer,
                                const SegmenterOptions& opts = {}) {
  if (is_blank(document.text)) {
    throw Error(ErrorCode::EmptyDocument, "document '" + document.id + "' has no text");
  }
  const std::string_view t = document.text;
  std::vector<CharSpan> spans;
  for (const auto& raw : detail::raw_spans(t, opts)) {
    if (opts.max_sentence_chars > 0) {
      detail::split_long(t, raw, opts.max_sentence_chars, spans);
    } else {
      spans.push_back(raw);
    }
  }

  SegmentedContext ctx;
  ctx.document = document;
  ctx.tokenizer_id = tokenizer.id();
  ctx.sentences.reserve(spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    Sentence s;
    s.index = i;
    s.span = spans[i];
    s.text = std::string(t.substr(spans[i].begin, spans[i].size()));
    s.token_count = std::max<std::size_t>(1, count_tokens(s.text, tokenizer));
    ctx.sentences.push_back(std::move(s));
  }
  for (std::size_t i = 0; i <= ctx.sentences.size(); ++i) {
    ctx.separator_tokens += count_tokens(ctx.gap(i), tokenizer);
  }
  return ctx;
}

inline SegmentedContext segment(const RawDocument& document, std::string_view tokenizer_id,
                                const SegmenterOptions& opts = {},
                                const TokenizerRegistry& registry = TokenizerRegistry::global()) {
  return segment(document, *registry.get(tokenizer_id), opts);
}

// ---------------------------------------------------------------------------
// Special-token marking

struct Markers {
  std::string sentence = "<end_of_sent>";
  std::string question = "<end_of_question>";
};

enum class MarkerKind { Sentence, Question };

struct MarkedText {
  std::string text;
  MarkerKind kind = MarkerKind::Sentence;
  std::string marker;
  /// marker_offsets[i] is the byte offset of the i-th marker in `text`; for
  /// sentence marking, i is the sentence index relative to the marked range.
  std::vector<std::size_t> marker_offsets;
};

namespace detail {
inline void check_collision(std::string_view text, const Markers& markers) {
  if (text.find(markers.sentence) != std::string_view::npos ||
      text.find(markers.question) != std::string_view::npos) {
    throw Error(ErrorCode::MarkerCollision, "input already contains a marker literal");
  }
}
}  // namespace detail

/// Marks sentences [first, last). The full range reproduces the whole
/// document (leading and trailing whitespace included); partial ranges span
/// from the first sentence's start to the last sentence's end.
inline MarkedText mark_sentences(const SegmentedContext& ctx, std::size_t first, std::size_t last,
                                 const Markers& markers = {}) {
  if (ctx.empty() || first >= last || last > ctx.size()) {
    throw Error(ErrorCode::InvalidParams, "mark_sentences needs a non-empty sentence range");
  }
  detail::check_collision(ctx.document.text, markers);
  MarkedText out;
  out.kind = MarkerKind::Sentence;
  out.marker = markers.sentence;
  if (first == 0) out.text.append(ctx.gap(0));
  for (std::size_t i = first; i < last; ++i) {
    if (i > first) out.text.append(ctx.gap(i));
    out.text.append(ctx.sentences[i].text);
    out.marker_offsets.push_back(out.text.size());
    out.text.append(markers.sentence);
  }
  if (last == ctx.size()) out.text.append(ctx.gap(ctx.size()));
  return out;
}

inline MarkedText mark_sentences(const SegmentedContext& ctx, const Markers& markers = {}) {
  return mark_sentences(ctx, 0, ctx.size(), markers);
}

inline MarkedText mark_question(std::string_view question, const Markers& markers = {}) {
  if (is_blank(question)) throw Error(ErrorCode::EmptyQuestion, "question is empty");
  detail::check_collision(question, markers);
  MarkedText out;
  out.kind = MarkerKind::Question;
  out.marker = markers.question;
  out.text = std::string(question);
  out.marker_offsets.push_back(out.text.size());
  out.text.append(markers.question);
  return out;
}

/// Removes every occurrence of both marker literals.
inline std::string strip_markers(std::string_view text, const Markers& markers = {}) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, markers.sentence.size(), markers.sentence) == 0) {
      i += markers.sentence.size();
    } else if (text.compare(i, markers.question.size(), markers.question) == 0) {
      i += markers.question.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

}  // namespace tpc
