#pragma once

// Versioned prompt assets. Names are stable identifiers used in config files;
// the text under a name never changes once released (add a _v2 instead).

#include <map>
#include <string>
#include <string_view>

#include "tpc/error.hpp"

namespace tpc::templates {

/// Query-writing prompt; also the default instruction header for the task
/// descriptor when it is served by a general instruct model.
inline constexpr std::string_view kCtdQueryV1 =
    "You are tasked with writing user queries based on a long context. Consider the topic of the "
    "context when formulating the query. Queries should be concise and specific. You may also ask "
    "more complex questions, such as requesting specific knowledge extraction from the text, "
    "extending the text, answering questions based on the text, paraphrasing/rewriting the text, or "
    "summarizing the text.\n"
    "Do not include the word \"context\" in the query.\n"
    "Long context: {text}\n"
    "Query:\n";

/// Structuring prompt. Its body mentions the {text}/{question} placeholders
/// literally, so inputs are appended (see render_structure_prompt) rather than
/// substituted.
inline constexpr std::string_view kCtdStructureV1 =
    "You are tasked with writing a user query based on a long context. Create a complex template "
    "that integrates this context and a question into a single instruction.\n"
    "The template must include the placeholders {text} and {question}.\n"
    "Template examples:\n"
    "1. You are given a text and a question related to it. Answer the question based on the text.\n"
    "Question: {question}\n"
    "Text: {text}\n"
    "Now answer the question:\n"
    "2. Can you extend the following block of code: {text}\n"
    "such that it satisfies the requirement: {question}\n"
    "Now write the code:\n"
    "Provide various templates, taking into account the topic of the text and the question.\n";

inline constexpr std::string_view kMcqrMultihopV1 =
    "You are given a long text consisting of numbered sentences. Your task is to generate complex "
    "multi-hop questions about this text, such that answering them requires step-by-step reasoning "
    "(in multiple hops). To achieve this, first, ask a series of sequential factual questions and "
    "identify the corresponding sentences that contain the answers to these questions. Then, "
    "formulate a final question that can only be answered by combining the information from the "
    "previously generated questions and answers. Additionally, specify which sentences (by their "
    "numbers) contain the information necessary to answer the final question.\n"
    "\n"
    "Toy example:\n"
    "[[1]] John is married to Mary. [[2]] They've decided to spend their marriage anniversary in "
    "Spain. [[3]] Mary was afraid that their two small children, Jody and Sue, were too small for a "
    "flight. [[4]] That's why she asked her elder sister Jane to look after them.\n"
    "Questions:\n"
    "Question 1: Who is John married to?\n"
    "Answer 1: John is married to Mary, as stated in [[1]].\n"
    "Question 2: How many children does Mary have?\n"
    "Answer 2: Mary has two children, as stated in [[3]].\n"
    "\n"
    "Combining the questions to create a multi-hop question:\n"
    "1. John is married to Mary, as stated in [[1]].\n"
    "2. Mary has two children, as stated in [[3]].\n"
    "Final question: How many children does John have?\n"
    "Necessary sentences: [[1]], [[3]]\n"
    "\n"
    "Now, solve this example:\n"
    "{text}\n"
    "Questions:\n";

inline constexpr std::string_view kCtdQueryName = "ctd_query_v1";
inline constexpr std::string_view kCtdStructureName = "ctd_structure_v1";
inline constexpr std::string_view kMcqrMultihopName = "mcqr_multihop_v1";

inline std::string_view by_name(std::string_view name) {
  static const std::map<std::string_view, std::string_view> table = {
      {kCtdQueryName, kCtdQueryV1},
      {kCtdStructureName, kCtdStructureV1},
      {kMcqrMultihopName, kMcqrMultihopV1},
  };
  auto it = table.find(name);
  if (it == table.end()) throw Error(ErrorCode::InvalidParams, "unknown template '" + std::string(name) + "'");
  return it->second;
}

/// Single-pass placeholder substitution: every "{key}" in `tmpl` whose key is
/// in `values` is replaced; substituted values are never rescanned, so source
/// text containing brace sequences passes through byte-for-byte.
inline std::string render(std::string_view tmpl, const std::map<std::string, std::string_view>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out.append(it->second);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

inline std::string render_query_prompt(std::string_view text) {
  return render(kCtdQueryV1, {{"text", text}});
}

inline std::string render_structure_prompt(std::string_view text, std::string_view question) {
  std::string out(kCtdStructureV1);
  out += "\nLong context: ";
  out += text;
  out += "\nQuestion: ";
  out += question;
  out += "\nTemplate:\n";
  return out;
}

inline std::string render_multihop_prompt(std::string_view numbered_text) {
  return render(kMcqrMultihopV1, {{"text", numbered_text}});
}

}  // namespace tpc::templates
