#pragma once

// Run configuration: an INI file with one section per module. Every key is
// addressed as "section.key" and the command line mirrors the same names.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/error.hpp"
#include "diva/http.hpp"
#include "diva/retrieval.hpp"
#include "diva/scorer.hpp"
#include "diva/text.hpp"

namespace diva::config {

using Settings = std::map<std::string, std::string>;
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

inline const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    for (const char* role : {"agent_llm", "judge_llm", "generator_llm"}) {
      std::string r(role);
      k.push_back({r + ".kind", "mock", "mock or remote"});
      k.push_back({r + ".endpoint", "", "chat-completions URL"});
      k.push_back({r + ".model", "", "model name sent to the endpoint"});
      k.push_back({r + ".script", "", "mock script (JSON)"});
      k.push_back({r + ".timeout", "60", "seconds per request"});
      k.push_back({r + ".max_retries", "2", "retries on transport errors, 429 and 5xx"});
    }
    k.push_back({"scorer.kind", "local", "local or remote"});
    k.push_back({"scorer.head", "", "head checkpoint for the local scorer"});
    k.push_back({"scorer.endpoint", "", "remote scoring URL"});
    k.push_back({"scorer.timeout", "60", "seconds per request"});
    k.push_back({"templates.dir", "", "prompt template directory"});
    k.push_back({"templates.verify", "true", "check template checksums"});
    k.push_back({"retrieval.corpus", "", "local corpus (JSONL)"});
    k.push_back({"retrieval.k_web", "10", "web results per query"});
    k.push_back({"retrieval.k_local", "3", "local results per query"});
    k.push_back({"retrieval.sources", "both", "both, web or local"});
    k.push_back({"retrieval.web_mode", "replay", "replay, live or record"});
    k.push_back({"retrieval.fixtures", "", "replay fixture directory"});
    k.push_back({"retrieval.provider_url", "https://google.serper.dev/search", "live search endpoint"});
    k.push_back({"retrieval.max_in_flight", "4", "concurrent web requests"});
    k.push_back({"agent.max_turns", "6", "search turn budget"});
    k.push_back({"agent.one_query_per_turn", "true", "honor only the first tool call of a reply"});
    k.push_back({"agent.max_tokens", "1024", "completion budget per call"});
    k.push_back({"train.margin", "0.1", "ranking margin"});
    k.push_back({"train.learning_rate", "2e-4", "peak learning rate"});
    k.push_back({"train.schedule", "cosine_decay", "constant or cosine_decay"});
    k.push_back({"train.optimizer", "adam_w", "sgd or adam_w"});
    k.push_back({"train.epochs", "3", "passes over the pairs"});
    k.push_back({"train.batch_size", "16", "pairs per step; 0 for full batch"});
    k.push_back({"train.weight_decay", "0", "decoupled weight decay"});
    k.push_back({"train.architecture", "linear", "linear or mlp1"});
    k.push_back({"train.hidden", "16", "hidden width for mlp1"});
    k.push_back({"train.max_length", "1024", "scorer input budget in whitespace tokens"});
    k.push_back({"run.seed", "42", "seed for every random choice"});
    k.push_back({"run.parallelism", "4", "bounded runner width"});
    k.push_back({"data.answers_per_question", "16", "samples per question when building pairs"});
    k.push_back({"data.pairs_per_question", "1", "pairs drawn per question"});
    k.push_back({"data.pool_size", "8", "samples per question when building the benchmark"});
    k.push_back({"data.temperature", "1.0", "generator temperature"});
    return k;
  }();
  return keys;
}

inline bool is_known_key(const std::string& key) {
  for (const auto& k : known_keys())
    if (k.key == key) return true;
  return false;
}

/// Reads "section.key" pairs from an INI file.
inline Settings read_settings(std::istream& in, std::vector<ConfigIssue>& issues) {
  Settings out;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    issues.push_back({"file", e.what()});
    return out;
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    auto key = item.fullname();
    std::string value;
    for (const auto& v : item.inputs) {
      if (!value.empty()) value += ' ';
      value += v;
    }
    if (!is_known_key(key)) {
      issues.push_back({key, "unknown key"});
      continue;
    }
    out[key] = value;
  }
  return out;
}

enum class LlmKind { mock, remote };
enum class ScorerKind { local, remote };
enum class WebMode { replay, live, record };

struct LlmSettings {
  LlmKind kind = LlmKind::mock;
  std::string endpoint;
  std::string model;
  std::string script;
  double timeout = 60;
  int max_retries = 2;
};

struct RunConfig {
  LlmSettings agent_llm, judge_llm, generator_llm;
  ScorerKind scorer_kind = ScorerKind::local;
  std::string scorer_head;
  std::string scorer_endpoint;
  double scorer_timeout = 60;
  std::string template_dir;
  bool verify_templates = true;
  std::string corpus;
  retrieval::RetrievalConfig retrieval;
  std::string sources = "both";
  WebMode web_mode = WebMode::replay;
  std::string fixtures;
  std::string provider_url;
  int max_in_flight = 4;
  agent::AgentConfig agent;
  scorer::TrainConfig train;
  std::uint64_t seed = 42;
  int parallelism = 4;
  int answers_per_question = 16;
  int pairs_per_question = 1;
  int pool_size = 8;
  double temperature = 1.0;
  Settings effective;  // every key after precedence, secrets never included
  std::optional<std::string> llm_api_key;
  std::optional<std::string> search_api_key;

  /// Effective settings for reports and manifests.
  nlohmann::json echo() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : effective) j[k] = v;
    return j;
  }
};

namespace detail {

struct Reader {
  const Settings& s;
  std::vector<ConfigIssue>& issues;

  const std::string& str(const std::string& key) const { return s.at(key); }

  long long integer(const std::string& key, long long min) const {
    long long v = 0;
    if (!text::parse_int(s.at(key), v)) {
      issues.push_back({key, "must be an integer"});
      return min;
    }
    if (v < min) issues.push_back({key, "must be >= " + std::to_string(min)});
    return v;
  }

  double real(const std::string& key, bool positive) const {
    const auto& raw = s.at(key);
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
    } catch (const std::exception&) {
      issues.push_back({key, "must be a number"});
      return 0;
    }
    if (!std::isfinite(v)) issues.push_back({key, "must be finite"});
    else if (positive && !(v > 0)) issues.push_back({key, "must be > 0"});
    else if (!positive && v < 0) issues.push_back({key, "must be >= 0"});
    return v;
  }

  bool boolean(const std::string& key) const {
    auto v = text::lower(s.at(key));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    issues.push_back({key, "must be true or false"});
    return false;
  }

  template <typename E>
  E choice(const std::string& key, const std::vector<std::pair<std::string, E>>& options) const {
    const auto& v = s.at(key);
    std::string allowed;
    for (const auto& [name, e] : options) {
      if (v == name) return e;
      allowed += (allowed.empty() ? "" : ", ") + name;
    }
    issues.push_back({key, "must be one of " + allowed});
    return options.front().second;
  }
};

inline LlmSettings read_llm(const Reader& r, const std::string& role) {
  LlmSettings l;
  l.kind = r.choice<LlmKind>(role + ".kind", {{"mock", LlmKind::mock}, {"remote", LlmKind::remote}});
  l.endpoint = r.str(role + ".endpoint");
  l.model = r.str(role + ".model");
  l.script = r.str(role + ".script");
  l.timeout = r.real(role + ".timeout", true);
  l.max_retries = static_cast<int>(r.integer(role + ".max_retries", 0));
  if (l.kind == LlmKind::remote) {
    if (!http::is_valid_url(l.endpoint)) r.issues.push_back({role + ".endpoint", "must be an http(s) URL"});
    if (l.model.empty()) r.issues.push_back({role + ".model", "required for a remote backend"});
  }
  return l;
}

}  // namespace detail

/// Defaults, then the file, then `overrides` (command-line flags). All
/// problems are collected and raised together as one ConfigError.
inline RunConfig load_config(const std::optional<std::string>& path, const EnvLookup& env,
                             const Settings& overrides = {}) {
  std::vector<ConfigIssue> issues;
  Settings s;
  for (const auto& k : known_keys()) s[k.key] = k.default_value;
  if (path) {
    std::ifstream in(*path);
    if (!in) {
      issues.push_back({"file", "cannot read " + *path});
    } else {
      for (auto& [k, v] : read_settings(in, issues)) s[k] = v;
    }
  }
  for (const auto& [k, v] : overrides) {
    if (!is_known_key(k)) {
      issues.push_back({k, "unknown key"});
      continue;
    }
    s[k] = v;
  }

  RunConfig c;
  detail::Reader r{s, issues};
  c.agent_llm = detail::read_llm(r, "agent_llm");
  c.judge_llm = detail::read_llm(r, "judge_llm");
  c.generator_llm = detail::read_llm(r, "generator_llm");

  c.scorer_kind = r.choice<ScorerKind>("scorer.kind", {{"local", ScorerKind::local}, {"remote", ScorerKind::remote}});
  c.scorer_head = s.at("scorer.head");
  c.scorer_endpoint = s.at("scorer.endpoint");
  c.scorer_timeout = r.real("scorer.timeout", true);
  if (c.scorer_kind == ScorerKind::remote && !http::is_valid_url(c.scorer_endpoint))
    issues.push_back({"scorer.endpoint", "must be an http(s) URL"});

  c.template_dir = s.at("templates.dir");
  c.verify_templates = r.boolean("templates.verify");

  c.corpus = s.at("retrieval.corpus");
  c.retrieval.k_web = static_cast<int>(r.integer("retrieval.k_web", 1));
  c.retrieval.k_local = static_cast<int>(r.integer("retrieval.k_local", 1));
  c.sources = s.at("retrieval.sources");
  using retrieval::Source;
  c.retrieval.enabled_sources = r.choice<std::set<Source>>(
      "retrieval.sources", {{"both", {Source::web, Source::local}},
                            {"web", {Source::web}},
                            {"local", {Source::local}}});
  c.web_mode = r.choice<WebMode>("retrieval.web_mode", {{"replay", WebMode::replay},
                                                        {"live", WebMode::live},
                                                        {"record", WebMode::record}});
  c.fixtures = s.at("retrieval.fixtures");
  c.provider_url = s.at("retrieval.provider_url");
  c.max_in_flight = static_cast<int>(r.integer("retrieval.max_in_flight", 1));
  if (!c.provider_url.empty() && !http::is_valid_url(c.provider_url))
    issues.push_back({"retrieval.provider_url", "must be an http(s) URL"});

  c.agent.max_turns = static_cast<int>(r.integer("agent.max_turns", 1));
  c.agent.one_query_per_turn = r.boolean("agent.one_query_per_turn");
  c.agent.max_tokens = static_cast<int>(r.integer("agent.max_tokens", 1));

  c.train.margin = r.real("train.margin", true);
  c.train.learning_rate = r.real("train.learning_rate", true);
  c.train.schedule = r.choice<scorer::Schedule>(
      "train.schedule", {{"cosine_decay", scorer::Schedule::cosine_decay}, {"constant", scorer::Schedule::constant}});
  c.train.optimizer = r.choice<scorer::Optimizer>(
      "train.optimizer", {{"adam_w", scorer::Optimizer::adam_w}, {"sgd", scorer::Optimizer::sgd}});
  c.train.epochs = static_cast<int>(r.integer("train.epochs", 1));
  c.train.batch_size = static_cast<int>(r.integer("train.batch_size", 0));
  c.train.weight_decay = r.real("train.weight_decay", false);
  c.train.architecture = r.choice<scorer::Architecture>(
      "train.architecture", {{"linear", scorer::Architecture::linear}, {"mlp1", scorer::Architecture::mlp1}});
  c.train.hidden = static_cast<std::size_t>(r.integer("train.hidden", 1));
  c.train.max_length = static_cast<int>(r.integer("train.max_length", 1));

  long long seed = 0;
  if (!text::parse_int(s.at("run.seed"), seed) || seed < 0) issues.push_back({"run.seed", "must be a non-negative integer"});
  c.seed = static_cast<std::uint64_t>(seed);
  c.train.seed = c.seed;
  c.parallelism = static_cast<int>(r.integer("run.parallelism", 1));

  c.answers_per_question = static_cast<int>(r.integer("data.answers_per_question", 2));
  c.pairs_per_question = static_cast<int>(r.integer("data.pairs_per_question", 1));
  c.pool_size = static_cast<int>(r.integer("data.pool_size", 3));
  c.temperature = r.real("data.temperature", false);

  c.llm_api_key = env("LLM_API_KEY");
  c.search_api_key = env("SEARCH_API_KEY");

  if (!issues.empty()) throw ConfigError(std::move(issues));
  c.effective = std::move(s);
  return c;
}

}  // namespace diva::config
