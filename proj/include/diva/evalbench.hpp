#pragma once

// Ranking metrics, the five verifier modes, binary and long-form protocols,
// best-of-N selection and dataset-level reports.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/compressor.hpp"
#include "diva/data_pipelines.hpp"
#include "diva/error.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/pipeline.hpp"
#include "diva/retrieval.hpp"
#include "diva/runner.hpp"
#include "diva/scorer.hpp"

namespace diva::eval {

using agent::AnswerCandidate;
using agent::Question;
using scorer::RankedAnswer;

// ---------------------------------------------------------------------------
// Metrics

/// Checks that `ranks` is a permutation of 1..k.
inline void check_permutation(const std::vector<int>& ranks, std::string_view what) {
  std::vector<bool> seen(ranks.size() + 1, false);
  for (int r : ranks) {
    if (r < 1 || static_cast<std::size_t>(r) > ranks.size() || seen[static_cast<std::size_t>(r)])
      throw NotAPermutation(std::string(what) + " is not a permutation of 1..k");
    seen[static_cast<std::size_t>(r)] = true;
  }
}

/// Tau-a between two strict rankings. `predicted[i]` and `gold[i]` are the
/// 1-based ranks given to item i.
inline double kendall_tau(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size())
    throw NotAPermutation("rankings have different lengths");
  if (predicted.size() < 2) throw NotAPermutation("kendall_tau needs at least two items");
  check_permutation(predicted, "predicted ranking");
  check_permutation(gold, "gold ranking");
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = i + 1; j < predicted.size(); ++j) {
      auto p = (predicted[i] < predicted[j]) ? 1 : -1;
      auto g = (gold[i] < gold[j]) ? 1 : -1;
      (p == g ? concordant : discordant) += 1;
    }
  }
  double n = static_cast<double>(predicted.size());
  return static_cast<double>(concordant - discordant) / (n * (n - 1) / 2.0);
}

/// One ranked item with its gold ranks by answer id.
struct ScoredItem {
  std::string id;
  std::string source;
  std::vector<RankedAnswer> ranking;
  std::map<std::string, int> gold;  // answer id -> gold rank
};

inline bool top_is_tied(const std::vector<RankedAnswer>& ranking) {
  return ranking.size() > 1 && ranking[0].score == ranking[1].score;
}

inline bool top_is_correct(const ScoredItem& item) {
  if (item.ranking.empty() || top_is_tied(item.ranking)) return false;
  auto it = item.gold.find(item.ranking.front().answer_id);
  return it != item.gold.end() && it->second == 1;
}

/// Fraction of items whose strictly highest score is the gold rank-1 answer.
inline double precision_at_1(const std::vector<ScoredItem>& items) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& it : items) hits += top_is_correct(it) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

inline double item_tau(const ScoredItem& item) {
  std::vector<int> predicted, gold;
  for (const auto& r : item.ranking) {
    auto g = item.gold.find(r.answer_id);
    if (g == item.gold.end()) throw NotAPermutation("answer " + r.answer_id + " has no gold rank");
    predicted.push_back(r.rank);
    gold.push_back(g->second);
  }
  return kendall_tau(predicted, gold);
}

struct RankingMetrics {
  double precision_at_1 = 0.0;
  double kendall_tau = 0.0;
  std::size_t n_items = 0;
  std::size_t n_ties = 0;

  bool operator==(const RankingMetrics&) const = default;
};

inline RankingMetrics ranking_metrics(const std::vector<ScoredItem>& items) {
  RankingMetrics m;
  m.n_items = items.size();
  if (items.empty()) return m;
  double tau_sum = 0.0;
  for (const auto& it : items) {
    tau_sum += item_tau(it);
    for (const auto& r : it.ranking)
      if (r.tie) {
        ++m.n_ties;
        break;
      }
  }
  m.precision_at_1 = eval::precision_at_1(items);
  m.kendall_tau = tau_sum / static_cast<double>(items.size());
  return m;
}

/// SQuAD-style token F1.
inline double token_f1(std::string_view prediction, std::string_view gold) {
  auto pn = text::squad_normalize(prediction);
  auto gn = text::squad_normalize(gold);
  auto pt = text::whitespace_tokens(pn);
  auto gt = text::whitespace_tokens(gn);
  if (pt.empty() && gt.empty()) return 1.0;
  if (pt.empty() || gt.empty()) return 0.0;
  std::map<std::string_view, int> counts;
  for (auto t : gt) ++counts[t];
  int common = 0;
  for (auto t : pt) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / static_cast<double>(pt.size());
  double recall = static_cast<double>(common) / static_cast<double>(gt.size());
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Binary verification

inline constexpr std::string_view kBinaryF1Protocol =
    "pairwise-majority: an answer is predicted correct iff its score is strictly higher than a "
    "strict majority of the other answers of its item; F1 is over the correct class";

struct BinaryScored {
  agent::BinaryLabel label;
  double score;
};

struct BinaryMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_answers = 0;

  bool operator==(const BinaryMetrics&) const = default;
};

inline BinaryMetrics binary_eval(const std::vector<std::vector<BinaryScored>>& items) {
  BinaryMetrics m;
  std::size_t wins = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& item = items[k];
    bool has_c = false, has_i = false;
    for (const auto& a : item) (a.label == agent::BinaryLabel::correct ? has_c : has_i) = true;
    if (!has_c || !has_i)
      throw MissingLabels("item " + std::to_string(k) + " needs a correct and an incorrect answer");
    for (const auto& c : item) {
      if (c.label != agent::BinaryLabel::correct) continue;
      for (const auto& i : item) {
        if (i.label != agent::BinaryLabel::incorrect) continue;
        ++m.n_pairs;
        if (c.score > i.score) ++wins;
      }
    }
    for (std::size_t a = 0; a < item.size(); ++a) {
      std::size_t beaten = 0;
      for (std::size_t b = 0; b < item.size(); ++b)
        if (a != b && item[a].score > item[b].score) ++beaten;
      bool predicted = 2 * beaten > item.size() - 1;
      bool actual = item[a].label == agent::BinaryLabel::correct;
      ++m.n_answers;
      if (predicted && actual) ++tp;
      if (predicted && !actual) ++fp;
      if (!predicted && actual) ++fn;
    }
  }
  if (m.n_pairs) m.accuracy = static_cast<double>(wins) / static_cast<double>(m.n_pairs);
  if (tp) {
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = 2.0 * precision * recall / (precision + recall);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Verifier modes

enum class VerifierMode {
  diva,
  generative_naive,
  agentic_generative_verifier,
  agentic_generative_scorer,
  discriminative_naive,
};

inline std::string_view mode_name(VerifierMode m) {
  switch (m) {
    case VerifierMode::diva: return "diva";
    case VerifierMode::generative_naive: return "generative_naive";
    case VerifierMode::agentic_generative_verifier: return "agentic_generative_verifier";
    case VerifierMode::agentic_generative_scorer: return "agentic_generative_scorer";
    case VerifierMode::discriminative_naive: return "discriminative_naive";
  }
  return "diva";
}

inline std::optional<VerifierMode> parse_mode(std::string_view s) {
  for (auto m : {VerifierMode::diva, VerifierMode::generative_naive,
                 VerifierMode::agentic_generative_verifier, VerifierMode::agentic_generative_scorer,
                 VerifierMode::discriminative_naive})
    if (mode_name(m) == s) return m;
  return std::nullopt;
}

inline bool mode_searches(VerifierMode m) {
  return m == VerifierMode::diva || m == VerifierMode::agentic_generative_verifier ||
         m == VerifierMode::agentic_generative_scorer;
}

inline bool mode_uses_scorer(VerifierMode m) {
  return m == VerifierMode::diva || m == VerifierMode::discriminative_naive;
}

/// Whatever a mode may need; unused members may stay null.
struct VerifierResources {
  llm::ChatBackend* llm = nullptr;
  retrieval::SearchTools* tools = nullptr;
  const llm::TemplateStore* templates = nullptr;
  scorer::Scorer* scorer = nullptr;
  agent::AgentConfig agent_cfg{};
};

inline void check_resources(VerifierMode mode, const VerifierResources& res) {
  if (mode_uses_scorer(mode) && !res.scorer)
    throw std::invalid_argument(std::string(mode_name(mode)) + " needs a scorer");
  if (mode != VerifierMode::discriminative_naive && (!res.llm || !res.templates))
    throw std::invalid_argument(std::string(mode_name(mode)) + " needs an LLM backend and templates");
  if (mode_searches(mode) && !res.tools)
    throw std::invalid_argument(std::string(mode_name(mode)) + " needs search tools");
}

struct VerifierOutput {
  std::vector<RankedAnswer> ranking;
  std::optional<agent::Trajectory> trajectory;
  std::vector<compress::CompressedTrajectory> compressed;
  std::vector<std::string> raw_verdicts;
};

/// Parses "AnswerX > AnswerY > ..." from the last <verdict> tag into 0-based
/// candidate positions. Every candidate must appear exactly once.
inline std::vector<std::size_t> parse_order_verdict(std::string_view reply, std::size_t n) {
  auto tag = data::detail::last_verdict_tag(reply);
  if (!tag) throw VerdictParseError("no <verdict> tag in reply", std::string(reply));
  static const std::regex item(R"(^\s*Answer\s*(\d+)\s*$)", std::regex::icase);
  std::vector<std::size_t> order;
  std::vector<bool> seen(n, false);
  for (const auto& part : text::split(*tag, '>')) {
    std::smatch m;
    if (!std::regex_match(part, m, item))
      throw VerdictParseError("bad ranking element '" + std::string(text::trim(part)) + "'",
                              std::string(reply));
    long long k = 0;
    text::parse_int(m[1].str(), k);
    if (k < 1 || static_cast<std::size_t>(k) > n || seen[static_cast<std::size_t>(k - 1)])
      throw VerdictParseError("ranking is not a permutation of the answers", std::string(reply));
    seen[static_cast<std::size_t>(k - 1)] = true;
    order.push_back(static_cast<std::size_t>(k - 1));
  }
  if (order.size() != n)
    throw VerdictParseError("ranking does not list every answer", std::string(reply));
  return order;
}

/// Parses the 1-10 factuality score from the last <verdict> tag.
inline double parse_score_verdict(std::string_view reply) {
  auto tag = data::detail::last_verdict_tag(reply);
  if (!tag) throw VerdictParseError("no <verdict> tag in reply", std::string(reply));
  static const std::regex num(R"(^\s*(\d+(?:\.\d+)?)\s*(?:/\s*10)?\s*$)");
  std::smatch m;
  if (!std::regex_match(*tag, m, num))
    throw VerdictParseError("verdict is not a number", std::string(reply));
  double s = std::stod(m[1].str());
  if (s < 1.0 || s > 10.0) throw VerdictParseError("score outside 1-10", std::string(reply));
  return s;
}

namespace detail {

inline std::vector<RankedAnswer> ranking_from_order(const std::vector<AnswerCandidate>& cands,
                                                    const std::vector<std::size_t>& order) {
  std::vector<std::pair<std::string, double>> scored;
  auto n = static_cast<double>(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    scored.emplace_back(cands[order[pos]].id, n - static_cast<double>(pos));
  return scorer::rank_scored(std::move(scored));
}

inline std::string ask(llm::ChatBackend& llm, const std::vector<llm::ChatMessage>& conv,
                       const agent::AgentConfig& cfg) {
  llm::ChatParams params{cfg.temperature, cfg.max_tokens, std::nullopt};
  try {
    return llm::chat_complete(llm, conv, params).content;
  } catch (const BackendError&) {
    throw;
  } catch (const Error& e) {
    throw BackendError(std::string("verifier call failed: ") + e.what(), e.detail());
  }
}

inline agent::AgentRun search_or_throw(const Question& q, const std::vector<AnswerCandidate>& cands,
                                       VerifierResources& res) {
  auto run = agent::run_agentic_search(q, cands, *res.llm, *res.tools, *res.templates, res.agent_cfg);
  if (run.trajectory.termination == agent::Termination::backend_error)
    throw BackendError("agentic search failed for question " + q.id,
                       run.trajectory.error.value_or(""));
  return run;
}

}  // namespace detail

inline VerifierOutput run_verifier(VerifierMode mode, const Question& q,
                                   const std::vector<AnswerCandidate>& cands,
                                   VerifierResources& res) {
  if (cands.empty()) throw std::invalid_argument("run_verifier: no candidates");
  check_resources(mode, res);
  VerifierOutput out;
  switch (mode) {
    case VerifierMode::diva: {
      PipelineContext ctx{*res.llm, *res.tools, *res.templates, res.agent_cfg};
      auto v = run_diva(ctx, *res.scorer, q, cands);
      out.trajectory = std::move(v.evidence.run.trajectory);
      out.compressed = std::move(v.evidence.compressed);
      out.ranking = std::move(v.ranking);
      break;
    }
    case VerifierMode::discriminative_naive: {
      std::vector<std::pair<std::string, double>> scored;
      for (const auto& a : cands) scored.emplace_back(a.id, res.scorer->score({q.text, a.text, {}, ""}));
      out.ranking = scorer::rank_scored(std::move(scored));
      break;
    }
    case VerifierMode::generative_naive: {
      std::vector<llm::ChatMessage> conv{llm::ChatMessage::user(res.templates->render(
          llm::TemplateId::naive_generative_verify,
          {{"question", q.text}, {"answers_block", agent::answers_block(cands)}}))};
      auto reply = detail::ask(*res.llm, conv, res.agent_cfg);
      out.raw_verdicts.push_back(reply);
      out.ranking = detail::ranking_from_order(cands, parse_order_verdict(reply, cands.size()));
      break;
    }
    case VerifierMode::agentic_generative_verifier: {
      auto run = detail::search_or_throw(q, cands, res);
      auto conv = run.conversation;
      conv.push_back(llm::ChatMessage::user(res.templates->render(
          llm::TemplateId::agentic_generative_verify,
          {{"question", q.text}, {"answers_block", agent::answers_block(cands)}})));
      auto reply = detail::ask(*res.llm, conv, res.agent_cfg);
      out.raw_verdicts.push_back(reply);
      out.trajectory = std::move(run.trajectory);
      out.ranking = detail::ranking_from_order(cands, parse_order_verdict(reply, cands.size()));
      break;
    }
    case VerifierMode::agentic_generative_scorer: {
      auto run = detail::search_or_throw(q, cands, res);
      std::vector<std::pair<std::string, double>> scored;
      for (const auto& a : cands) {
        auto conv = run.conversation;
        conv.push_back(llm::ChatMessage::user(res.templates->render(
            llm::TemplateId::agentic_generative_score, {{"question", q.text}, {"answer", a.text}})));
        auto reply = detail::ask(*res.llm, conv, res.agent_cfg);
        out.raw_verdicts.push_back(reply);
        scored.emplace_back(a.id, parse_score_verdict(reply));
      }
      out.trajectory = std::move(run.trajectory);
      out.ranking = scorer::rank_scored(std::move(scored));
      break;
    }
  }
  return out;
}

inline VerifierOutput run_verifier(VerifierMode mode, const data::BenchItem& item,
                                   VerifierResources& res) {
  return run_verifier(mode, item.as_question(), item.answers, res);
}

// ---------------------------------------------------------------------------
// Best-of-N

struct SelectionResult {
  std::string chosen_id;
  std::string chosen_text;
  std::vector<RankedAnswer> ranking;
  bool tie_at_top = false;
  std::optional<double> token_f1;
};

/// Scores every candidate with the verifier and keeps the top of the ranking.
inline SelectionResult best_of_n_select(const Question& q, const std::vector<AnswerCandidate>& cands,
                                        VerifierMode mode, VerifierResources& res,
                                        const std::optional<std::string>& gold = std::nullopt) {
  if (cands.size() < 2) throw std::invalid_argument("best_of_n_select: need at least two candidates");
  auto out = run_verifier(mode, q, cands, res);
  SelectionResult sel;
  sel.ranking = std::move(out.ranking);
  sel.chosen_id = sel.ranking.front().answer_id;
  sel.tie_at_top = top_is_tied(sel.ranking);
  for (const auto& c : cands)
    if (c.id == sel.chosen_id) sel.chosen_text = c.text;
  if (gold) sel.token_f1 = token_f1(sel.chosen_text, *gold);
  return sel;
}

// ---------------------------------------------------------------------------
// Long-form

/// Claims are the lines starting with "- ".
inline std::vector<std::string> parse_claims(std::string_view reply) {
  std::vector<std::string> out;
  for (const auto& line : text::split(reply, '\n')) {
    auto t = text::trim(line);
    if (t.size() > 1 && (t[0] == '-' || t[0] == '*') && text::is_space(t[1])) {
      auto claim = text::trim(t.substr(2));
      if (!claim.empty()) out.emplace_back(claim);
    }
  }
  return out;
}

struct ResponseScore {
  std::string id;
  std::vector<std::string> claims;
  std::vector<double> claim_scores;
  double score = 0.0;
  bool decomposition_empty = false;
};

struct LongformResult {
  std::vector<ResponseScore> responses;
  std::vector<RankedAnswer> ranking;
  std::optional<double> precision_at_1;
  std::optional<double> kendall_tau;
};

/// Decomposes each response into claims, verifies every claim with the full
/// search, compress and score path, and scores a response by its mean claim
/// score. A response with no claims scores 0 and is flagged.
inline LongformResult longform_evaluate(const Question& q, const std::vector<AnswerCandidate>& responses,
                                        VerifierResources& res) {
  if (responses.empty()) throw std::invalid_argument("longform_evaluate: no responses");
  check_resources(VerifierMode::diva, res);
  LongformResult out;
  PipelineContext ctx{*res.llm, *res.tools, *res.templates, res.agent_cfg};
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& r : responses) {
    ResponseScore rs;
    rs.id = r.id;
    std::vector<llm::ChatMessage> conv{llm::ChatMessage::user(res.templates->render(
        llm::TemplateId::claim_decomposition, {{"question", q.text}, {"response", r.text}}))};
    rs.claims = parse_claims(detail::ask(*res.llm, conv, res.agent_cfg));
    if (rs.claims.empty()) {
      rs.decomposition_empty = true;
    } else {
      double sum = 0.0;
      for (std::size_t i = 0; i < rs.claims.size(); ++i) {
        AnswerCandidate claim{r.id + "." + std::to_string(i + 1), rs.claims[i], {}, {}};
        auto v = run_diva(ctx, *res.scorer, q, {claim});
        rs.claim_scores.push_back(v.ranking.front().score);
        sum += v.ranking.front().score;
      }
      rs.score = sum / static_cast<double>(rs.claims.size());
    }
    scored.emplace_back(rs.id, rs.score);
    out.responses.push_back(std::move(rs));
  }
  out.ranking = scorer::rank_scored(std::move(scored));
  bool has_gold = true;
  ScoredItem item{q.id, q.source_dataset.value_or(""), out.ranking, {}};
  for (const auto& r : responses) {
    if (!r.gold_rank) has_gold = false;
    else item.gold[r.id] = *r.gold_rank;
  }
  if (has_gold && responses.size() >= 2) {
    out.precision_at_1 = precision_at_1({item});
    out.kendall_tau = item_tau(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset evaluation

struct ItemReport {
  std::string id;
  std::string source;
  std::vector<RankedAnswer> ranking;
  std::map<std::string, int> gold;
  double precision_at_1 = 0.0;
  double kendall_tau = 0.0;
  bool tie = false;

  bool operator==(const ItemReport&) const = default;
};

struct FailedItem {
  std::string id;
  std::string error;

  bool operator==(const FailedItem&) const = default;
};

struct WorkCounters {
  std::size_t items = 0;
  std::size_t llm_calls = 0;
  std::size_t retrieval_calls = 0;
  std::size_t scorer_calls = 0;

  bool operator==(const WorkCounters&) const = default;
};

struct EvalReport {
  std::string mode;
  RankingMetrics overall;
  std::map<std::string, RankingMetrics> per_source;
  std::optional<BinaryMetrics> binary;
  std::optional<double> token_f1;
  nlohmann::json config = nlohmann::json::object();
  WorkCounters counters;
  std::vector<ItemReport> items;
  std::vector<FailedItem> failures;

  bool operator==(const EvalReport&) const = default;
};

inline nlohmann::json to_json(const RankingMetrics& m) {
  return {{"precision_at_1", m.precision_at_1},
          {"kendall_tau", m.kendall_tau},
          {"n_items", m.n_items},
          {"n_ties", m.n_ties}};
}

inline RankingMetrics ranking_metrics_from_json(const nlohmann::json& j) {
  return {j.at("precision_at_1").get<double>(), j.at("kendall_tau").get<double>(),
          j.at("n_items").get<std::size_t>(), j.at("n_ties").get<std::size_t>()};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["overall"] = to_json(r.overall);
  j["per_source"] = nlohmann::json::object();
  for (const auto& [k, v] : r.per_source) j["per_source"][k] = to_json(v);
  if (r.binary)
    j["binary"] = {{"accuracy", r.binary->accuracy},
                   {"f1", r.binary->f1},
                   {"n_pairs", r.binary->n_pairs},
                   {"n_answers", r.binary->n_answers},
                   {"f1_protocol", kBinaryF1Protocol}};
  if (r.token_f1) j["token_f1"] = *r.token_f1;
  j["config"] = r.config;
  j["counters"] = {{"items", r.counters.items},
                   {"llm_calls", r.counters.llm_calls},
                   {"retrieval_calls", r.counters.retrieval_calls},
                   {"scorer_calls", r.counters.scorer_calls}};
  j["items"] = nlohmann::json::array();
  for (const auto& it : r.items) {
    nlohmann::json ranking = nlohmann::json::array();
    for (const auto& a : it.ranking)
      ranking.push_back({{"answer_id", a.answer_id}, {"score", a.score}, {"rank", a.rank}, {"tie", a.tie}});
    j["items"].push_back({{"id", it.id},
                          {"source", it.source},
                          {"ranking", ranking},
                          {"gold", it.gold},
                          {"precision_at_1", it.precision_at_1},
                          {"kendall_tau", it.kendall_tau},
                          {"tie", it.tie}});
  }
  j["failures"] = nlohmann::json::array();
  for (const auto& f : r.failures) j["failures"].push_back({{"id", f.id}, {"error", f.error}});
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.overall = ranking_metrics_from_json(j.at("overall"));
  for (const auto& [k, v] : j.at("per_source").items()) r.per_source[k] = ranking_metrics_from_json(v);
  if (j.contains("binary")) {
    const auto& b = j["binary"];
    r.binary = BinaryMetrics{b.at("accuracy").get<double>(), b.at("f1").get<double>(),
                             b.at("n_pairs").get<std::size_t>(), b.at("n_answers").get<std::size_t>()};
  }
  if (j.contains("token_f1")) r.token_f1 = j["token_f1"].get<double>();
  r.config = j.value("config", nlohmann::json::object());
  const auto& c = j.at("counters");
  r.counters = {c.at("items").get<std::size_t>(), c.at("llm_calls").get<std::size_t>(),
                c.at("retrieval_calls").get<std::size_t>(), c.at("scorer_calls").get<std::size_t>()};
  for (const auto& ij : j.at("items")) {
    ItemReport it;
    it.id = ij.at("id").get<std::string>();
    it.source = ij.at("source").get<std::string>();
    for (const auto& a : ij.at("ranking"))
      it.ranking.push_back({a.at("answer_id").get<std::string>(), a.at("score").get<double>(),
                            a.at("rank").get<int>(), a.at("tie").get<bool>()});
    it.gold = ij.at("gold").get<std::map<std::string, int>>();
    it.precision_at_1 = ij.at("precision_at_1").get<double>();
    it.kendall_tau = ij.at("kendall_tau").get<double>();
    it.tie = ij.at("tie").get<bool>();
    r.items.push_back(std::move(it));
  }
  for (const auto& f : j.value("failures", nlohmann::json::array()))
    r.failures.push_back({f.at("id").get<std::string>(), f.at("error").get<std::string>()});
  return r;
}

/// Evaluates every accepted item with `mode`. Items whose verifier fails
/// (backend or verdict parse errors) are listed under failures and left out
/// of the metrics.
inline EvalReport evaluate_dataset(const std::vector<data::BenchItem>& bench, VerifierMode mode,
                                   VerifierResources& res, nlohmann::json config_echo = nlohmann::json::object(),
                                   std::size_t width = 1) {
  std::vector<const data::BenchItem*> accepted;
  for (const auto& it : bench)
    if (it.review_status == data::ReviewStatus::accepted) accepted.push_back(&it);
  if (accepted.empty()) throw EmptyDataset("no accepted items to evaluate");
  for (const auto* it : accepted)
    if (!it->gold_is_permutation())
      throw FormatError("item " + it->id + " does not carry gold ranks 1..3", it->id);
  check_resources(mode, res);

  auto llm_before = res.llm ? res.llm->calls() : 0;
  auto ret_before = res.tools ? res.tools->total_calls() : 0;
  auto sc_before = res.scorer ? res.scorer->calls() : 0;

  struct Outcome {
    std::optional<VerifierOutput> out;
    std::string error;
  };
  auto outcomes = run_bounded(accepted.size(), width, [&](std::size_t i) {
    Outcome o;
    try {
      o.out = run_verifier(mode, *accepted[i], res);
    } catch (const BackendError& e) {
      o.error = e.what();
    } catch (const VerdictParseError& e) {
      o.error = e.what();
    } catch (const FormatError& e) {
      o.error = e.what();
    }
    return o;
  });

  EvalReport rep;
  rep.mode = std::string(mode_name(mode));
  rep.config = std::move(config_echo);
  std::vector<ScoredItem> all;
  std::map<std::string, std::vector<ScoredItem>> by_source;
  std::vector<std::vector<BinaryScored>> binary;
  bool binary_complete = true;
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    const auto& item = *accepted[i];
    if (!outcomes[i].out) {
      rep.failures.push_back({item.id, outcomes[i].error});
      continue;
    }
    ScoredItem si{item.id, item.source_dataset, outcomes[i].out->ranking, {}};
    for (const auto& a : item.answers) si.gold[a.id] = *a.gold_rank;
    ItemReport ir{si.id, si.source, si.ranking, si.gold, top_is_correct(si) ? 1.0 : 0.0,
                  item_tau(si), false};
    for (const auto& r : si.ranking) ir.tie = ir.tie || r.tie;
    rep.items.push_back(ir);

    std::vector<BinaryScored> bs;
    bool has_c = false, has_i = false;
    for (const auto& a : item.answers) {
      if (!a.binary_label) {
        binary_complete = false;
        break;
      }
      (*a.binary_label == agent::BinaryLabel::correct ? has_c : has_i) = true;
      for (const auto& r : si.ranking)
        if (r.answer_id == a.id) bs.push_back({*a.binary_label, r.score});
    }
    if (!has_c || !has_i) binary_complete = false;
    binary.push_back(std::move(bs));

    by_source[si.source].push_back(si);
    all.push_back(std::move(si));
  }
  rep.overall = ranking_metrics(all);
  for (const auto& [src, items] : by_source) rep.per_source[src] = ranking_metrics(items);
  if (binary_complete && !binary.empty()) rep.binary = binary_eval(binary);

  rep.counters.items = accepted.size();
  rep.counters.llm_calls = (res.llm ? res.llm->calls() : 0) - llm_before;
  rep.counters.retrieval_calls = (res.tools ? res.tools->total_calls() : 0) - ret_before;
  rep.counters.scorer_calls = (res.scorer ? res.scorer->calls() : 0) - sc_before;
  return rep;
}

/// Plain-text table: one row per source plus the average.
inline std::string render_table(const EvalReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "Mode: %s\n", r.mode.c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-20s %8s %8s %7s %6s\n", "Dataset", "P@1", "K-tau", "Items", "Ties");
  out += buf;
  auto row = [&](const std::string& name, const RankingMetrics& m) {
    std::snprintf(buf, sizeof buf, "%-20s %8.2f %8.2f %7zu %6zu\n", name.c_str(),
                  100.0 * m.precision_at_1, 100.0 * m.kendall_tau, m.n_items, m.n_ties);
    out += buf;
  };
  for (const auto& [src, m] : r.per_source) row(src.empty() ? "(none)" : src, m);
  row("Overall", r.overall);
  if (r.binary) {
    std::snprintf(buf, sizeof buf, "Binary: ACC %.2f  F1 %.2f\n", 100.0 * r.binary->accuracy,
                  100.0 * r.binary->f1);
    out += buf;
  }
  if (!r.failures.empty()) {
    std::snprintf(buf, sizeof buf, "Failed items: %zu\n", r.failures.size());
    out += buf;
  }
  return out;
}

}  // namespace diva::eval
