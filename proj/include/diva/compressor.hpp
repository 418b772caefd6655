#pragma once

// Context compression: one LLM call per answer turns the shared trajectory
// into useful facts plus reasoning, parsed from a fixed three-section layout.

#include <nlohmann/json.hpp>

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/error.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/text.hpp"

namespace diva::compress {

enum class Verdict { correct, incorrect, intermediate };

inline std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::correct: return "Correct";
    case Verdict::incorrect: return "Incorrect";
    case Verdict::intermediate: return "Intermediate";
  }
  return "Incorrect";
}

/// Accepts exactly the three surface forms, ignoring case, surrounding
/// whitespace, brackets, asterisks and a trailing period.
inline std::optional<Verdict> parse_verdict(std::string_view raw) {
  auto s = text::trim(raw);
  auto strip = [](char c) { return c == '[' || c == ']' || c == '*' || c == '.' || c == '`'; };
  while (!s.empty() && (strip(s.front()) || text::is_space(s.front()))) s.remove_prefix(1);
  while (!s.empty() && (strip(s.back()) || text::is_space(s.back()))) s.remove_suffix(1);
  auto l = text::lower(s);
  if (l == "correct") return Verdict::correct;
  if (l == "incorrect") return Verdict::incorrect;
  if (l == "intermediate") return Verdict::intermediate;
  return std::nullopt;
}

struct CompressedTrajectory {
  std::vector<std::string> useful_facts;
  std::string reasoning;
  Verdict verdict = Verdict::incorrect;
  std::string answer_id;

  bool operator==(const CompressedTrajectory&) const = default;
};

inline nlohmann::json to_json(const CompressedTrajectory& ct) {
  return {{"answer_id", ct.answer_id},
          {"useful_facts", ct.useful_facts},
          {"reasoning", ct.reasoning},
          {"verdict", verdict_name(ct.verdict)}};
}

inline CompressedTrajectory compressed_from_json(const nlohmann::json& j) {
  CompressedTrajectory ct;
  ct.answer_id = j.value("answer_id", "");
  ct.useful_facts = j.value("useful_facts", std::vector<std::string>{});
  ct.reasoning = j.value("reasoning", "");
  auto v = parse_verdict(j.value("verdict", ""));
  if (!v) throw FormatError("unknown verdict in compressed trajectory JSON", j.dump());
  ct.verdict = *v;
  return ct;
}

namespace detail {

struct Header {
  std::string_view name;
  std::regex pattern;
};

inline const std::vector<Header>& section_headers() {
  // "**Name:**" with tolerance for "**Name**:" and inner spacing.
  static const std::vector<Header> headers{
      {"Useful Facts", std::regex(R"(\*\*\s*Useful\s+Facts\s*(:\s*\*\*|\*\*\s*:))",
                                  std::regex::icase)},
      {"Reasoning", std::regex(R"(\*\*\s*Reasoning\s*(:\s*\*\*|\*\*\s*:))", std::regex::icase)},
      {"Final Verdict", std::regex(R"(\*\*\s*Final\s+Verdict\s*(:\s*\*\*|\*\*\s*:))",
                                   std::regex::icase)},
  };
  return headers;
}

}  // namespace detail

/// Splits on semicolons, trims, drops empty entries.
inline std::vector<std::string> split_facts(std::string_view s) {
  std::vector<std::string> out;
  for (auto& part : text::split(s, ';')) {
    auto t = text::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

/// Strict parser: each header exactly once, in the order Useful Facts,
/// Reasoning, Final Verdict. Text before the first header is ignored.
inline CompressedTrajectory parse_compression_output(std::string_view reply) {
  std::string s(reply);
  const auto& headers = detail::section_headers();
  struct Span {
    std::size_t begin, end;
  };
  std::vector<Span> spans;
  for (const auto& h : headers) {
    std::vector<Span> found;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), h.pattern);
         it != std::sregex_iterator(); ++it) {
      found.push_back({static_cast<std::size_t>(it->position()),
                       static_cast<std::size_t>(it->position() + it->length())});
    }
    if (found.empty()) throw FormatError("missing " + std::string(h.name) + " section", s);
    if (found.size() > 1) throw FormatError("duplicated " + std::string(h.name) + " section", s);
    spans.push_back(found.front());
  }
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].begin < spans[i - 1].end)
      throw FormatError(std::string(headers[i].name) + " section out of order", s);
  }
  auto body = [&](std::size_t i) {
    auto end = i + 1 < spans.size() ? spans[i + 1].begin : s.size();
    return text::trim(std::string_view(s).substr(spans[i].end, end - spans[i].end));
  };
  CompressedTrajectory ct;
  ct.useful_facts = split_facts(body(0));
  ct.reasoning = std::string(body(1));
  if (ct.reasoning.empty()) throw FormatError("empty Reasoning section", s);
  auto v = parse_verdict(body(2));
  if (!v) throw FormatError("unrecognized Final Verdict '" + std::string(body(2)) + "'", s);
  ct.verdict = *v;
  return ct;
}

/// Canonical section layout; parse_compression_output inverts it.
inline std::string serialize_compression(const CompressedTrajectory& ct) {
  return "**Useful Facts:** " + text::join(ct.useful_facts, "; ") + "\n\n**Reasoning:** " +
         ct.reasoning + "\n\n**Final Verdict:** " + std::string(verdict_name(ct.verdict));
}

inline constexpr std::string_view kFormatReminder =
    "Your previous reply did not follow the required format. Reply again using exactly the "
    "three sections **Useful Facts:**, **Reasoning:** and **Final Verdict:**, in that order, "
    "with no other text.";

/// Renders the compression prompt, calls the backend once and parses. One
/// retry with a format reminder; a second parse failure is a FormatError.
inline CompressedTrajectory compress(const agent::Trajectory& trajectory,
                                     const agent::Question& question,
                                     const agent::AnswerCandidate& answer,
                                     llm::ChatBackend& backend,
                                     const llm::TemplateStore& templates,
                                     const llm::ChatParams& params = {}) {
  if (trajectory.question_id != question.id)
    throw std::invalid_argument("trajectory " + trajectory.question_id +
                                " does not belong to question " + question.id);
  std::vector<llm::ChatMessage> conv{llm::ChatMessage::user(
      templates.render(llm::TemplateId::context_compression,
                       {{"search_history", agent::render_search_history(trajectory)},
                        {"question", question.text},
                        {"answer", answer.text}}))};
  auto call = [&]() {
    try {
      return llm::chat_complete(backend, conv, params);
    } catch (const BackendError&) {
      throw;
    } catch (const Error& e) {
      throw BackendError(std::string("compression call failed: ") + e.what(), e.detail());
    }
  };
  auto first = call();
  try {
    auto ct = parse_compression_output(first.content);
    ct.answer_id = answer.id;
    return ct;
  } catch (const FormatError&) {
  }
  conv.push_back(first.content.empty() ? llm::ChatMessage::assistant("(empty reply)") : first);
  conv.push_back(llm::ChatMessage::user(std::string(kFormatReminder)));
  auto second = call();
  auto ct = parse_compression_output(second.content);
  ct.answer_id = answer.id;
  return ct;
}

// ---------------------------------------------------------------------------
// Scorer input

inline constexpr int kDefaultMaxLength = 1024;

/// "Question: ...\nAnswer: ...\nFacts: f1; f2\nReasoning: ...". The verdict
/// is not part of the layout. When the whole text exceeds `max_len`
/// whitespace tokens, the Facts/Reasoning region is cut from its tail.
inline std::string render_scorer_input(std::string_view question, std::string_view answer,
                                       const std::vector<std::string>& facts,
                                       std::string_view reasoning,
                                       int max_len = kDefaultMaxLength) {
  std::string head = "Question: " + std::string(question) + "\nAnswer: " + std::string(answer);
  std::string evidence = "Facts: " + text::join(facts, "; ") + "\nReasoning: " +
                         std::string(reasoning);
  auto head_tokens = static_cast<int>(text::whitespace_tokens(head).size());
  if (head_tokens > max_len)
    throw OverflowUnavoidable("question and answer alone take " + std::to_string(head_tokens) +
                              " tokens, limit is " + std::to_string(max_len));
  auto ev_tokens = text::whitespace_tokens(evidence);
  auto budget = static_cast<std::size_t>(max_len - head_tokens);
  if (ev_tokens.size() <= budget) return head + "\n" + evidence;
  if (budget == 0) return head;
  const auto& last = ev_tokens[budget - 1];
  auto cut = static_cast<std::size_t>(last.data() + last.size() - evidence.data());
  return head + "\n" + evidence.substr(0, cut);
}

inline std::string render_scorer_input(const agent::Question& q, const agent::AnswerCandidate& a,
                                       const CompressedTrajectory& ct,
                                       int max_len = kDefaultMaxLength) {
  return render_scorer_input(q.text, a.text, ct.useful_facts, ct.reasoning, max_len);
}

}  // namespace diva::compress
