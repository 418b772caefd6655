#pragma once

// The diva command line: one entry point for every pipeline stage.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/compressor.hpp"
#include "diva/config.hpp"
#include "diva/data_pipelines.hpp"
#include "diva/error.hpp"
#include "diva/evalbench.hpp"
#include "diva/http.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/pipeline.hpp"
#include "diva/retrieval.hpp"
#include "diva/runner.hpp"
#include "diva/scorer.hpp"

namespace diva::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// ---------------------------------------------------------------------------
// JSONL

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file", path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(n) + ": " + e.what(), line);
    }
  }
  return out;
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows) {
  std::string data;
  for (const auto& r : rows) data += r.dump() + "\n";
  text::write_file(path, data);
}

/// Wraps a parse failure on one record with its position.
template <typename F>
auto parse_rows(const std::vector<nlohmann::json>& rows, const std::string& path, F parse) {
  std::vector<decltype(parse(rows.front()))> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      out.push_back(parse(rows[i]));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": record " + std::to_string(i + 1) + ": " + e.what(), rows[i].dump());
    } catch (const std::invalid_argument& e) {
      throw FormatError(path + ": record " + std::to_string(i + 1) + ": " + e.what(), rows[i].dump());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wiring from configuration

inline std::unique_ptr<llm::ChatBackend> make_backend(const config::LlmSettings& s,
                                                      const std::string& role,
                                                      const std::optional<std::string>& api_key) {
  if (s.kind == config::LlmKind::mock) {
    if (s.script.empty()) throw ConfigError(role + ".script", "required for a mock backend");
    return std::make_unique<llm::MockChatBackend>(llm::MockScript::from_file(s.script));
  }
  llm::LlmBackend desc;
  desc.kind = llm::BackendKind::remote;
  desc.endpoint = s.endpoint;
  desc.model_name = s.model;
  desc.timeout_seconds = s.timeout;
  desc.max_retries = s.max_retries;
  return std::make_unique<llm::RemoteChatBackend>(desc, std::make_shared<http::HttplibTransport>(),
                                                  api_key);
}

inline llm::TemplateStore make_templates(const config::RunConfig& c) {
  if (c.template_dir.empty()) {
#ifdef DIVA_DEFAULT_TEMPLATE_DIR
    return llm::TemplateStore::load(DIVA_DEFAULT_TEMPLATE_DIR, c.verify_templates);
#else
    return llm::TemplateStore::load("templates", c.verify_templates);
#endif
  }
  return llm::TemplateStore::load(c.template_dir, c.verify_templates);
}

inline std::unique_ptr<retrieval::SearchTools> make_tools(const config::RunConfig& c) {
  using retrieval::Source;
  std::shared_ptr<retrieval::WebSearchClient> web;
  std::shared_ptr<const retrieval::LocalCorpus> corpus;
  if (c.retrieval.enabled(Source::web)) {
    std::shared_ptr<retrieval::WebProvider> provider;
    if (c.web_mode != config::WebMode::live && c.fixtures.empty())
      throw ConfigError("retrieval.fixtures", "required when web search replays or records");
    if (c.web_mode != config::WebMode::replay && !http::is_valid_url(c.provider_url))
      throw ConfigError("retrieval.provider_url", "must be an http(s) URL");
    if (c.web_mode == config::WebMode::replay) {
      provider = std::make_shared<retrieval::ReplayProvider>(c.fixtures);
    } else {
      if (!c.search_api_key)
        throw ConfigError("SEARCH_API_KEY", "required for live web search");
      auto live = std::make_shared<retrieval::SerperProvider>(
          std::make_shared<http::HttplibTransport>(), *c.search_api_key, c.provider_url);
      if (c.web_mode == config::WebMode::record) {
        provider = std::make_shared<retrieval::RecordingProvider>(live, c.fixtures);
      } else {
        provider = live;
      }
    }
    web = std::make_shared<retrieval::WebSearchClient>(provider, c.max_in_flight);
  }
  if (c.retrieval.enabled(Source::local)) {
    if (c.corpus.empty())
      throw ConfigError("retrieval.corpus", "required when local search is enabled");
    corpus = std::make_shared<const retrieval::LocalCorpus>(
        retrieval::build_local_index(retrieval::load_corpus_jsonl(c.corpus)));
  }
  return std::make_unique<retrieval::SearchTools>(web, corpus, c.retrieval);
}

inline std::unique_ptr<scorer::Scorer> make_scorer(const config::RunConfig& c) {
  if (c.scorer_kind == config::ScorerKind::remote) {
    return std::make_unique<scorer::RemoteScorer>(
        std::make_shared<http::HttplibTransport>(), c.scorer_endpoint,
        std::chrono::milliseconds(static_cast<long long>(c.scorer_timeout * 1000)));
  }
  if (c.scorer_head.empty()) throw ConfigError("scorer.head", "required for the local scorer");
  auto ckpt = scorer::load_checkpoint(c.scorer_head);
  if (ckpt.featurizer != scorer::FeaturizerKind::hashed_text)
    throw ConfigError("scorer.head", "only hashed-text checkpoints can be served locally");
  auto fz = std::make_shared<scorer::HashedFeaturizer>(ckpt.head.dim, ckpt.normalized);
  return std::make_unique<scorer::LocalHeadScorer>(std::move(ckpt.head), fz, ckpt.max_length);
}

/// Mock scripts are consumed in call order, so any mock backend pins the
/// runner to one worker.
inline std::size_t effective_width(const config::RunConfig& c,
                                   std::initializer_list<const config::LlmSettings*> used) {
  for (const auto* s : used)
    if (s->kind == config::LlmKind::mock) return 1;
  return static_cast<std::size_t>(c.parallelism);
}

// ---------------------------------------------------------------------------
// Run manifest

struct Manifest {
  std::string command;
  nlohmann::json counts = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

inline void write_manifest(const std::string& path, const Manifest& m, const config::RunConfig& c,
                           std::chrono::steady_clock::time_point started) {
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - started)
                     .count();
  nlohmann::json j{{"command", m.command},
                   {"seed", c.seed},
                   {"config", c.echo()},
                   {"counts", m.counts},
                   {"outputs", m.outputs},
                   {"elapsed_ms", elapsed}};
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  text::write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Record helpers shared by search / compress / score / rank

inline nlohmann::json answers_with_evidence(const data::BenchItem& item,
                                            const std::vector<compress::CompressedTrajectory>& cts) {
  auto j = to_json(item);
  for (std::size_t i = 0; i < cts.size(); ++i) {
    j["answers"][i]["facts"] = cts[i].useful_facts;
    j["answers"][i]["reasoning"] = cts[i].reasoning;
    j["answers"][i]["verdict"] = compress::verdict_name(cts[i].verdict);
  }
  return j;
}

inline std::vector<std::pair<agent::AnswerCandidate, compress::CompressedTrajectory>> evidence_of(
    const data::BenchItem& item, const nlohmann::json& row) {
  std::vector<std::pair<agent::AnswerCandidate, compress::CompressedTrajectory>> out;
  const auto& answers = row.at("answers");
  for (std::size_t i = 0; i < item.answers.size(); ++i) {
    const auto& aj = answers.at(i);
    compress::CompressedTrajectory ct;
    ct.answer_id = item.answers[i].id;
    ct.useful_facts = aj.value("facts", std::vector<std::string>{});
    ct.reasoning = aj.value("reasoning", "");
    if (aj.contains("verdict")) {
      auto v = compress::parse_verdict(aj["verdict"].get<std::string>());
      if (!v) throw FormatError("bad verdict in record " + item.id, aj.dump());
      ct.verdict = *v;
    }
    out.emplace_back(item.answers[i], std::move(ct));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Entry point

struct Paths {
  std::string input, output, manifest, pairs, head, remote, bench, review, report, questions,
      mode = "diva", sources;
  int n = 16;
  bool table = false;
};

inline std::string default_manifest(const Paths& p, const std::string& fallback) {
  if (!p.manifest.empty()) return p.manifest;
  return (p.output.empty() ? fallback : p.output) + ".manifest.json";
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
               const config::EnvLookup& env = config::process_env()) {
  CLI::App app{"Discriminative factuality verification toolkit", "diva"};
  app.require_subcommand(1, 1);
  std::string config_path;
  app.add_option("--config", config_path, "INI configuration file");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const auto& k : config::known_keys())
    flag_opts[k.key] = app.add_option("--" + k.key, flag_values[k.key], k.help);

  Paths p;
  auto add_manifest = [&](CLI::App* s) {
    s->add_option("--manifest", p.manifest, "run manifest path (default: <out>.manifest.json)");
  };
  auto* search = app.add_subcommand("search", "run agentic search for each item");
  search->add_option("--input", p.input, "items (bench JSONL)")->required();
  search->add_option("--out", p.output, "trajectories JSONL")->required();
  auto* compress_cmd = app.add_subcommand("compress", "compress trajectories per answer");
  compress_cmd->add_option("--input", p.input, "output of search")->required();
  compress_cmd->add_option("--out", p.output, "compressed JSONL")->required();
  auto* score = app.add_subcommand("score", "score compressed answers");
  auto* rank = app.add_subcommand("rank", "rank compressed answers");
  for (auto* s : {score, rank}) {
    s->add_option("--input", p.input, "output of compress")->required();
    s->add_option("--out", p.output, "output JSONL")->required();
    s->add_option("--head", p.head, "head checkpoint");
    s->add_option("--remote", p.remote, "remote scoring URL");
  }
  auto* train = app.add_subcommand("train", "train the scoring head on preference pairs");
  train->add_option("--pairs", p.pairs, "pairs JSONL")->required();
  train->add_option("--out", p.output, "head checkpoint")->required();
  auto* build_pairs = app.add_subcommand("build-pairs", "build preference pairs");
  auto* build_bench = app.add_subcommand("build-bench", "build three-answer benchmark items");
  for (auto* s : {build_pairs, build_bench}) {
    s->add_option("--questions", p.questions, "questions JSONL")->required();
    s->add_option("--out", p.output, "output JSONL")->required();
  }
  auto* review = app.add_subcommand("review", "export or import human review files");
  review->require_subcommand(1, 1);
  auto* review_export = review->add_subcommand("export", "write a review file");
  review_export->add_option("--bench", p.bench, "bench JSONL")->required();
  review_export->add_option("--out", p.output, "review file")->required();
  auto* review_import = review->add_subcommand("import", "apply a review file");
  review_import->add_option("--bench", p.bench, "bench JSONL")->required();
  review_import->add_option("--review", p.review, "edited review file")->required();
  review_import->add_option("--out", p.output, "reviewed bench JSONL")->required();
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a verifier on accepted bench items");
  eval_cmd->add_option("--bench", p.bench, "bench JSONL")->required();
  eval_cmd->add_option("--mode", p.mode, "verifier mode");
  eval_cmd->add_option("--sources", p.sources, "both, web or local");
  eval_cmd->add_option("--head", p.head, "head checkpoint");
  eval_cmd->add_option("--remote", p.remote, "remote scoring URL");
  eval_cmd->add_option("--report", p.output, "report JSON")->required();
  eval_cmd->add_flag("--table", p.table, "print the result table");
  auto* select = app.add_subcommand("select", "best-of-N answer selection");
  select->add_option("--input", p.input, "questions JSONL with optional candidates")->required();
  select->add_option("--out", p.output, "selections JSONL")->required();
  select->add_option("--n", p.n, "candidates to sample when none are given");
  select->add_option("--mode", p.mode, "verifier mode");
  select->add_option("--head", p.head, "head checkpoint");
  select->add_option("--remote", p.remote, "remote scoring URL");
  for (auto* s : {search, compress_cmd, score, rank, train, build_pairs, build_bench, review_export,
                  review_import, eval_cmd, select}) {
    add_manifest(s);
    s->fallthrough();
  }
  review->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error[Usage]: " << e.what() << "\n" << app.help();
    return kExitValidation;
  }

  auto started = std::chrono::steady_clock::now();
  config::RunConfig cfg;
  try {
    config::Settings overrides;
    for (const auto& [k, opt] : flag_opts)
      if (opt->count() > 0) overrides[k] = flag_values[k];
    if (!p.head.empty()) {
      overrides["scorer.kind"] = "local";
      overrides["scorer.head"] = p.head;
    }
    if (!p.remote.empty()) {
      overrides["scorer.kind"] = "remote";
      overrides["scorer.endpoint"] = p.remote;
    }
    if (!p.sources.empty()) overrides["retrieval.sources"] = p.sources;
    cfg = config::load_config(config_path.empty() ? std::nullopt : std::optional(config_path), env,
                              overrides);
  } catch (const ConfigError& e) {
    for (const auto& i : e.issues()) err << "error[ConfigError]: " << i.key << ": " << i.reason << "\n";
    return kExitValidation;
  }

  Manifest m;
  try {
    if (search->parsed()) {
      m.command = "search";
      auto rows = read_jsonl(p.input);
      auto items = parse_rows(rows, p.input, data::bench_item_from_json);
      auto templates = make_templates(cfg);
      auto tools = make_tools(cfg);
      auto llm = make_backend(cfg.agent_llm, "agent_llm", cfg.llm_api_key);
      auto width = effective_width(cfg, {&cfg.agent_llm});
      auto runs = run_bounded(items.size(), width, [&](std::size_t i) {
        return agent::run_agentic_search(items[i].as_question(), items[i].answers, *llm, *tools,
                                         templates, cfg.agent);
      });
      std::vector<nlohmann::json> outrows;
      std::size_t failed = 0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        auto j = to_json(items[i]);
        j["trajectory"] = agent::to_json(runs[i].trajectory);
        if (runs[i].trajectory.termination == agent::Termination::backend_error) ++failed;
        outrows.push_back(std::move(j));
      }
      write_jsonl(p.output, outrows);
      m.counts = {{"items", items.size()},
                  {"failed", failed},
                  {"llm_calls", llm->calls()},
                  {"web_calls", tools->web_calls()},
                  {"local_calls", tools->local_calls()}};
      m.outputs = {{"trajectories", p.output}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "searched " << items.size() << " items, " << failed << " failed\n";
      return failed ? kExitRuntime : kExitOk;
    }

    if (compress_cmd->parsed()) {
      m.command = "compress";
      auto rows = read_jsonl(p.input);
      auto items = parse_rows(rows, p.input, data::bench_item_from_json);
      auto templates = make_templates(cfg);
      auto llm = make_backend(cfg.agent_llm, "agent_llm", cfg.llm_api_key);
      auto width = effective_width(cfg, {&cfg.agent_llm});
      llm::ChatParams params{cfg.agent.temperature, cfg.agent.max_tokens, std::nullopt};
      auto cts = run_bounded(items.size(), width, [&](std::size_t i) {
        auto traj = agent::trajectory_from_json(rows[i].at("trajectory"));
        std::vector<compress::CompressedTrajectory> v;
        for (const auto& a : items[i].answers)
          v.push_back(compress::compress(traj, items[i].as_question(), a, *llm, templates, params));
        return v;
      });
      std::vector<nlohmann::json> outrows;
      for (std::size_t i = 0; i < items.size(); ++i) outrows.push_back(answers_with_evidence(items[i], cts[i]));
      write_jsonl(p.output, outrows);
      m.counts = {{"items", items.size()}, {"llm_calls", llm->calls()}};
      m.outputs = {{"compressed", p.output}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "compressed " << items.size() << " items\n";
      return kExitOk;
    }

    if (score->parsed() || rank->parsed()) {
      bool ranking = rank->parsed();
      m.command = ranking ? "rank" : "score";
      auto rows = read_jsonl(p.input);
      auto items = parse_rows(rows, p.input, data::bench_item_from_json);
      auto sc = make_scorer(cfg);
      std::vector<nlohmann::json> outrows;
      for (std::size_t i = 0; i < items.size(); ++i) {
        auto ev = evidence_of(items[i], rows[i]);
        auto q = items[i].as_question();
        nlohmann::json j{{"id", items[i].id}};
        if (ranking) {
          j["ranking"] = nlohmann::json::array();
          for (const auto& r : scorer::rank_answers(*sc, q, ev))
            j["ranking"].push_back({{"answer_id", r.answer_id}, {"score", r.score}, {"rank", r.rank}, {"tie", r.tie}});
        } else {
          j["scores"] = nlohmann::json::array();
          for (const auto& [a, ct] : ev)
            j["scores"].push_back({{"answer_id", a.id}, {"score", sc->score(scorer::make_scorer_input(q, a, ct))}});
        }
        outrows.push_back(std::move(j));
      }
      write_jsonl(p.output, outrows);
      m.counts = {{"items", items.size()}, {"scorer_calls", sc->calls()}};
      m.outputs = {{m.command, p.output}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << m.command << "d " << items.size() << " items\n";
      return kExitOk;
    }

    if (train->parsed()) {
      m.command = "train";
      auto rows = read_jsonl(p.pairs);
      auto records = parse_rows(rows, p.pairs, data::pair_from_json);
      auto pairs = data::to_preference_pairs(records);
      scorer::HashedFeaturizer fz;
      auto result = scorer::train_scorer(pairs, fz, cfg.train, std::nullopt, [&](int epoch, double loss) {
        out << "epoch " << epoch << " loss " << loss << "\n";
      });
      scorer::Checkpoint ckpt{result.head, scorer::FeaturizerKind::hashed_text, true, cfg.train.max_length};
      auto bytes = scorer::serialize_checkpoint(ckpt);
      text::write_file(p.output, bytes);
      m.counts = {{"records", records.size()}, {"pairs", pairs.size()}};
      m.outputs = {{"head", p.output}};
      m.extra = {{"epoch_losses", result.epoch_losses}, {"head_sha256", text::sha256_hex(bytes)}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "head sha256 " << text::sha256_hex(bytes) << "\n";
      return kExitOk;
    }

    if (build_pairs->parsed()) {
      m.command = "build-pairs";
      auto rows = read_jsonl(p.questions);
      auto questions = parse_rows(rows, p.questions, data::question_from_json);
      auto templates = make_templates(cfg);
      auto tools = make_tools(cfg);
      auto agent_llm = make_backend(cfg.agent_llm, "agent_llm", cfg.llm_api_key);
      auto judge = make_backend(cfg.judge_llm, "judge_llm", cfg.llm_api_key);
      auto generator = make_backend(cfg.generator_llm, "generator_llm", cfg.llm_api_key);
      PipelineContext ctx{*agent_llm, *tools, templates, cfg.agent};
      data::PairBuildConfig pc{cfg.answers_per_question, cfg.temperature,
                               static_cast<std::size_t>(cfg.pairs_per_question), cfg.seed};
      auto rep = data::build_pairs(questions, *generator, *judge, ctx, pc);
      std::vector<nlohmann::json> outrows;
      for (const auto& r : rep.pairs) outrows.push_back(data::to_json(r));
      write_jsonl(p.output, outrows);
      nlohmann::json dropped = nlohmann::json::array(), skipped = nlohmann::json::array();
      for (const auto& d : rep.dropped) dropped.push_back({{"question_id", d.question_id}, {"reason", d.reason}});
      for (const auto& s : rep.skipped) skipped.push_back({{"question_id", s.question_id}, {"reason", s.reason}});
      m.counts = {{"questions", rep.questions},       {"generated", rep.generated},
                  {"duplicates_dropped", rep.duplicates_dropped}, {"sampled", rep.sampled},
                  {"verified", rep.verified},         {"exported", rep.exported},
                  {"search_runs", rep.search_runs}};
      m.outputs = {{"pairs", p.output}};
      m.extra = {{"dropped", dropped}, {"skipped", skipped}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "exported " << rep.exported << " pairs\n";
      return kExitOk;
    }

    if (build_bench->parsed()) {
      m.command = "build-bench";
      auto rows = read_jsonl(p.questions);
      auto questions = parse_rows(rows, p.questions, data::question_from_json);
      auto templates = make_templates(cfg);
      auto judge = make_backend(cfg.judge_llm, "judge_llm", cfg.llm_api_key);
      auto generator = make_backend(cfg.generator_llm, "generator_llm", cfg.llm_api_key);
      data::BenchBuildConfig bc{cfg.pool_size, cfg.temperature, cfg.seed};
      auto rep = data::build_bench_items(questions, *generator, *judge, templates, bc);
      std::vector<nlohmann::json> outrows;
      for (const auto& it : rep.items) outrows.push_back(data::to_json(it));
      write_jsonl(p.output, outrows);
      nlohmann::json skipped = nlohmann::json::array();
      for (const auto& s : rep.skipped) skipped.push_back({{"question_id", s.question_id}, {"reason", s.reason}});
      m.counts = {{"questions", questions.size()}, {"items", rep.items.size()}, {"skipped", rep.skipped.size()}};
      m.outputs = {{"bench", p.output}};
      m.extra = {{"skipped", skipped}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "built " << rep.items.size() << " items, skipped " << rep.skipped.size() << "\n";
      return kExitOk;
    }

    if (review_export->parsed() || review_import->parsed()) {
      auto rows = read_jsonl(p.bench);
      auto items = parse_rows(rows, p.bench, data::bench_item_from_json);
      if (review_export->parsed()) {
        m.command = "review export";
        text::write_file(p.output, data::export_review(items));
        m.counts = {{"items", items.size()}};
        m.outputs = {{"review", p.output}};
      } else {
        m.command = "review import";
        auto reviewed = data::import_review(items, text::read_file(p.review));
        std::vector<nlohmann::json> outrows;
        std::size_t acc = 0, rej = 0, pend = 0;
        for (const auto& it : reviewed) {
          outrows.push_back(data::to_json(it));
          (it.review_status == data::ReviewStatus::accepted   ? acc
           : it.review_status == data::ReviewStatus::rejected ? rej
                                                              : pend) += 1;
        }
        write_jsonl(p.output, outrows);
        m.counts = {{"items", reviewed.size()}, {"accepted", acc}, {"rejected", rej}, {"pending", pend}};
        m.outputs = {{"bench", p.output}};
      }
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << m.command << ": " << items.size() << " items\n";
      return kExitOk;
    }

    if (eval_cmd->parsed() || select->parsed()) {
      auto mode = eval::parse_mode(p.mode);
      if (!mode) {
        err << "error[ConfigError]: mode: unknown verifier mode '" << p.mode << "'\n";
        return kExitValidation;
      }
      std::optional<llm::TemplateStore> templates;
      std::unique_ptr<llm::ChatBackend> llm;
      std::unique_ptr<retrieval::SearchTools> tools;
      std::unique_ptr<scorer::Scorer> sc;
      bool needs_llm = *mode != eval::VerifierMode::discriminative_naive || select->parsed();
      if (needs_llm) {
        templates = make_templates(cfg);
        llm = make_backend(cfg.agent_llm, "agent_llm", cfg.llm_api_key);
      }
      if (eval::mode_searches(*mode)) tools = make_tools(cfg);
      if (eval::mode_uses_scorer(*mode)) sc = make_scorer(cfg);
      eval::VerifierResources res{llm.get(), tools.get(), templates ? &*templates : nullptr, sc.get(), cfg.agent};
      auto width = needs_llm ? effective_width(cfg, {&cfg.agent_llm}) : static_cast<std::size_t>(cfg.parallelism);

      if (eval_cmd->parsed()) {
        m.command = "eval";
        auto rows = read_jsonl(p.bench);
        auto items = parse_rows(rows, p.bench, data::bench_item_from_json);
        auto echo = cfg.echo();
        echo["mode"] = std::string(eval::mode_name(*mode));
        echo["enabled_sources"] = cfg.effective.at("retrieval.sources");
        auto report = eval::evaluate_dataset(items, *mode, res, echo, width);
        text::write_file(p.output, eval::to_json(report).dump(2) + "\n");
        if (p.table) out << eval::render_table(report);
        m.counts = {{"items", report.counters.items},
                    {"failed", report.failures.size()},
                    {"llm_calls", report.counters.llm_calls},
                    {"retrieval_calls", report.counters.retrieval_calls},
                    {"scorer_calls", report.counters.scorer_calls}};
        m.outputs = {{"report", p.output}};
        write_manifest(default_manifest(p, p.output), m, cfg, started);
        out << "P@1 " << report.overall.precision_at_1 << " tau " << report.overall.kendall_tau << "\n";
        return kExitOk;
      }

      m.command = "select";
      if (p.n < 2) {
        err << "error[ConfigError]: n: must be >= 2\n";
        return kExitValidation;
      }
      auto rows = read_jsonl(p.input);
      std::unique_ptr<llm::ChatBackend> generator;
      std::vector<nlohmann::json> outrows;
      double f1_sum = 0;
      std::size_t f1_n = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        auto q = data::question_from_json(rows[i]);
        std::vector<agent::AnswerCandidate> cands;
        if (rows[i].contains("candidates")) {
          for (const auto& c : rows[i]["candidates"])
            cands.push_back({std::to_string(cands.size() + 1), c.get<std::string>(), {}, {}});
        } else {
          if (!generator) generator = make_backend(cfg.generator_llm, "generator_llm", cfg.llm_api_key);
          cands = data::generate_answers(q, *generator, *templates, p.n, cfg.temperature, cfg.seed).candidates;
        }
        auto sel = eval::best_of_n_select(q, cands, *mode, res, q.reference);
        nlohmann::json j{{"id", q.id}, {"chosen_id", sel.chosen_id}, {"chosen_text", sel.chosen_text},
                         {"tie_at_top", sel.tie_at_top}, {"candidates", cands.size()}};
        if (sel.token_f1) {
          j["token_f1"] = *sel.token_f1;
          f1_sum += *sel.token_f1;
          ++f1_n;
        }
        outrows.push_back(std::move(j));
      }
      write_jsonl(p.output, outrows);
      m.counts = {{"questions", rows.size()}};
      if (f1_n) m.extra = {{"mean_token_f1", f1_sum / static_cast<double>(f1_n)}};
      m.outputs = {{"selections", p.output}};
      write_manifest(default_manifest(p, p.output), m, cfg, started);
      out << "selected answers for " << rows.size() << " questions\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    for (const auto& i : e.issues()) err << "error[ConfigError]: " << i.key << ": " << i.reason << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error[" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error[Internal]: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "error[Usage]: no subcommand\n" << app.help();
  return kExitValidation;
}

}  // namespace diva::cli
