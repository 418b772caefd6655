#pragma once

// Think / Search / Observe loop producing an evidence trajectory for one
// question and all of its candidate answers.

#include <nlohmann/json.hpp>

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "diva/error.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/retrieval.hpp"

namespace diva::agent {

struct Question {
  std::string id;
  std::string text;
  std::optional<std::string> reference;
  std::optional<std::string> source_dataset;
};

enum class BinaryLabel { correct, incorrect };

struct AnswerCandidate {
  std::string id;
  std::string text;
  std::optional<int> gold_rank;
  std::optional<BinaryLabel> binary_label;
};

enum class Tool { search_web, search_local };

inline std::string_view tool_name(Tool t) {
  return t == Tool::search_web ? "search_web" : "search_local";
}

enum class StepKind { thought, tool_call, observation };

inline std::string_view step_kind_name(StepKind k) {
  switch (k) {
    case StepKind::thought: return "thought";
    case StepKind::tool_call: return "tool_call";
    case StepKind::observation: return "observation";
  }
  return "thought";
}

struct TrajectoryStep {
  StepKind kind = StepKind::thought;
  std::string text;                               // thought
  Tool tool = Tool::search_web;                   // tool_call
  std::string query;                              // tool_call
  std::vector<retrieval::SearchResult> results;   // observation
  std::optional<std::string> error;               // observation: the tool failed

  static TrajectoryStep thought(std::string t) {
    TrajectoryStep s;
    s.kind = StepKind::thought;
    s.text = std::move(t);
    return s;
  }
  static TrajectoryStep call(Tool tool, std::string q) {
    TrajectoryStep s;
    s.kind = StepKind::tool_call;
    s.tool = tool;
    s.query = std::move(q);
    return s;
  }
  static TrajectoryStep observation(std::vector<retrieval::SearchResult> r,
                                    std::optional<std::string> err = std::nullopt) {
    TrajectoryStep s;
    s.kind = StepKind::observation;
    s.results = std::move(r);
    s.error = std::move(err);
    return s;
  }

  bool operator==(const TrajectoryStep&) const = default;
};

enum class Termination { sentinel, budget_exhausted, backend_error };

inline std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::sentinel: return "sentinel";
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::backend_error: return "backend_error";
  }
  return "sentinel";
}

struct Trajectory {
  std::string question_id;
  std::vector<TrajectoryStep> steps;
  Termination termination = Termination::sentinel;
  int turn_count = 0;
  std::optional<std::string> error;  // set when termination == backend_error
  std::vector<std::string> warnings;

  std::size_t tool_calls() const {
    return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const auto& s) {
      return s.kind == StepKind::tool_call;
    }));
  }
  std::size_t observations() const {
    return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const auto& s) {
      return s.kind == StepKind::observation;
    }));
  }

  bool operator==(const Trajectory&) const = default;
};

/// Pairing and content checks; returns the first violation.
inline std::optional<std::string> validate_trajectory(const Trajectory& t,
                                                      std::optional<int> max_turns = {}) {
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    if (s.kind == StepKind::thought && text::trim(s.text).empty())
      return "empty thought at step " + std::to_string(i);
    if (s.kind == StepKind::tool_call &&
        (i + 1 >= t.steps.size() || t.steps[i + 1].kind != StepKind::observation))
      return "tool_call at step " + std::to_string(i) + " lacks its observation";
    if (s.kind == StepKind::observation && (i == 0 || t.steps[i - 1].kind != StepKind::tool_call))
      return "observation at step " + std::to_string(i) + " without a tool_call";
  }
  if (max_turns && t.turn_count > *max_turns) return "turn_count exceeds max_turns";
  return std::nullopt;
}

struct AgentConfig {
  int max_turns = 6;
  std::vector<std::string> sentinels{"READY_FOR_EVALUATION", "READY_FOR_ANSWERING"};
  bool one_query_per_turn = true;
  double temperature = 0.0;
  int max_tokens = 1024;

  std::optional<std::string> validate() const {
    if (max_turns < 1) return "max_turns must be >= 1";
    if (sentinels.empty()) return "at least one sentinel is required";
    for (const auto& s : sentinels)
      if (s.empty()) return "sentinel must be non-empty";
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Reply parsing

struct ToolCall {
  Tool tool;
  std::string query;

  bool operator==(const ToolCall&) const = default;
};

enum class ReplyKind { tool_call, done, thought_only };

struct AgentAction {
  ReplyKind kind = ReplyKind::thought_only;
  std::vector<ToolCall> calls;  // honored calls, in reply order
  std::optional<std::string> warning;
};

/// Finds search_local("...") / search_web("...") calls (double, single or
/// ``...'' quoting). The sentinel wins over any calls in the same reply.
inline AgentAction parse_agent_reply(std::string_view reply, const AgentConfig& cfg) {
  AgentAction action;
  for (const auto& s : cfg.sentinels) {
    if (text::contains(reply, s)) {
      action.kind = ReplyKind::done;
      return action;
    }
  }
  static const std::regex call_re(
      R"re((search_web|search_local)\s*\(\s*(?:"([^"]*)"|``([^\n]*?)''|'([^']*)')\s*\))re");
  std::string s(reply);
  std::vector<ToolCall> found;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), call_re); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    std::string q = m[2].matched ? m[2].str() : m[3].matched ? m[3].str() : m[4].str();
    auto trimmed = std::string(text::trim(q));
    if (trimmed.empty()) continue;
    found.push_back({m[1].str() == "search_web" ? Tool::search_web : Tool::search_local, trimmed});
  }
  if (found.empty()) return action;
  action.kind = ReplyKind::tool_call;
  if (cfg.one_query_per_turn && found.size() > 1) {
    action.warning = "reply contained " + std::to_string(found.size()) +
                     " tool calls; only the first was honored";
    found.resize(1);
  }
  action.calls = std::move(found);
  return action;
}

// ---------------------------------------------------------------------------
// Rendering helpers

inline std::string answers_block(const std::vector<AnswerCandidate>& answers) {
  std::string out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (i) out += "\n";
    out += "Answer " + std::to_string(i + 1) + ": " + answers[i].text;
  }
  return out;
}

inline std::string render_observation(Tool tool, const TrajectoryStep& obs) {
  std::string out = "Observations (" + std::string(tool_name(tool)) + "):";
  if (obs.error) return out + " error: " + *obs.error;
  if (obs.results.empty()) return out + " no results.";
  for (const auto& r : obs.results) {
    out += "\n[" + std::to_string(r.rank) + "] ";
    if (!r.title.empty()) out += r.title + ": ";
    out += r.snippet;
  }
  return out;
}

/// Plain-text search history fed to the compression prompt.
inline std::string render_search_history(const Trajectory& t) {
  std::string out;
  Tool last_tool = Tool::search_web;
  for (const auto& s : t.steps) {
    if (!out.empty()) out += "\n";
    switch (s.kind) {
      case StepKind::thought:
        out += "Thought: " + s.text;
        break;
      case StepKind::tool_call:
        last_tool = s.tool;
        out += "Tool Call: " + std::string(tool_name(s.tool)) + "(\"" + s.query + "\")";
        break;
      case StepKind::observation:
        out += render_observation(last_tool, s);
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const TrajectoryStep& s) {
  nlohmann::json j{{"kind", step_kind_name(s.kind)}};
  switch (s.kind) {
    case StepKind::thought: j["text"] = s.text; break;
    case StepKind::tool_call:
      j["tool"] = tool_name(s.tool);
      j["query"] = s.query;
      break;
    case StepKind::observation: {
      auto& arr = j["results"] = nlohmann::json::array();
      for (const auto& r : s.results) arr.push_back(retrieval::to_json(r));
      if (s.error) j["error"] = *s.error;
      break;
    }
  }
  return j;
}

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json j{{"question_id", t.question_id},
                   {"termination", termination_name(t.termination)},
                   {"turn_count", t.turn_count}};
  auto& steps = j["steps"] = nlohmann::json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  if (t.error) j["error"] = *t.error;
  if (!t.warnings.empty()) j["warnings"] = t.warnings;
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.question_id = j.at("question_id").get<std::string>();
  auto term = j.at("termination").get<std::string>();
  t.termination = term == "sentinel"           ? Termination::sentinel
                  : term == "budget_exhausted" ? Termination::budget_exhausted
                                               : Termination::backend_error;
  t.turn_count = j.value("turn_count", 0);
  for (const auto& s : j.at("steps")) {
    auto kind = s.at("kind").get<std::string>();
    if (kind == "thought") {
      t.steps.push_back(TrajectoryStep::thought(s.at("text").get<std::string>()));
    } else if (kind == "tool_call") {
      auto tool = s.at("tool").get<std::string>() == "search_web" ? Tool::search_web
                                                                   : Tool::search_local;
      t.steps.push_back(TrajectoryStep::call(tool, s.at("query").get<std::string>()));
    } else if (kind == "observation") {
      std::vector<retrieval::SearchResult> results;
      for (const auto& r : s.at("results")) results.push_back(retrieval::search_result_from_json(r));
      std::optional<std::string> err;
      if (s.contains("error")) err = s["error"].get<std::string>();
      t.steps.push_back(TrajectoryStep::observation(std::move(results), std::move(err)));
    } else {
      throw std::invalid_argument("unknown trajectory step kind '" + kind + "'");
    }
  }
  if (j.contains("error")) t.error = j["error"].get<std::string>();
  if (j.contains("warnings")) t.warnings = j["warnings"].get<std::vector<std::string>>();
  return t;
}

// ---------------------------------------------------------------------------
// The loop

struct AgentRun {
  Trajectory trajectory;
  std::vector<llm::ChatMessage> conversation;  // ends with the final assistant turn
};

inline AgentRun run_agentic_search(const Question& question,
                                   const std::vector<AnswerCandidate>& candidates,
                                   llm::ChatBackend& backend, retrieval::SearchTools& tools,
                                   const llm::TemplateStore& templates, const AgentConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("run_agentic_search: no candidates");
  if (auto err = cfg.validate()) throw std::invalid_argument(*err);

  AgentRun run;
  auto& traj = run.trajectory;
  traj.question_id = question.id;
  auto& conv = run.conversation;
  conv.push_back(llm::ChatMessage::user(templates.render(
      llm::TemplateId::agentic_search,
      {{"question", question.text}, {"answers_block", answers_block(candidates)}})));

  llm::ChatParams params{cfg.temperature, cfg.max_tokens, std::nullopt};
  for (int turn = 0; turn < cfg.max_turns; ++turn) {
    llm::ChatMessage reply;
    try {
      reply = llm::chat_complete(backend, conv, params);
    } catch (const Error& e) {
      traj.termination = Termination::backend_error;
      traj.error = e.what();
      return run;
    }
    ++traj.turn_count;
    auto content = reply.content;
    if (text::trim(content).empty()) content = "(empty reply)";
    conv.push_back(llm::ChatMessage::assistant(content));
    traj.steps.push_back(TrajectoryStep::thought(content));

    auto action = parse_agent_reply(content, cfg);
    if (action.warning) traj.warnings.push_back(*action.warning);
    if (action.kind == ReplyKind::done) {
      traj.termination = Termination::sentinel;
      return run;
    }
    if (action.kind == ReplyKind::thought_only) {
      conv.push_back(llm::ChatMessage::user(
          "No search was issued. Call search_local(\"query\") or search_web(\"query\") with one "
          "query, or respond with " +
          cfg.sentinels.front() + " if you have enough information."));
      continue;
    }
    std::string observation_text;
    for (const auto& call : action.calls) {
      traj.steps.push_back(TrajectoryStep::call(call.tool, call.query));
      TrajectoryStep obs;
      try {
        auto results = call.tool == Tool::search_web ? tools.web(call.query)
                                                     : tools.local(call.query);
        obs = TrajectoryStep::observation(std::move(results));
      } catch (const Error& e) {
        obs = TrajectoryStep::observation({}, std::string(e.what()));
      }
      if (!observation_text.empty()) observation_text += "\n\n";
      observation_text += render_observation(call.tool, obs);
      traj.steps.push_back(std::move(obs));
    }
    conv.push_back(llm::ChatMessage::tool(observation_text));
  }
  traj.termination = Termination::budget_exhausted;
  return run;
}

}  // namespace diva::agent
