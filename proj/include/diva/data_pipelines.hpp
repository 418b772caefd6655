#pragma once

// Pairwise preference data (generate, judge, sample, verify, attach evidence)
// and the three-answer ranking benchmark with its human review round trip.

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/compressor.hpp"
#include "diva/error.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/pipeline.hpp"
#include "diva/scorer.hpp"

namespace diva::data {

using agent::AnswerCandidate;
using agent::Question;
using JudgeLabel = compress::Verdict;

/// correct > intermediate > incorrect.
inline int label_order(JudgeLabel l) {
  switch (l) {
    case JudgeLabel::correct: return 2;
    case JudgeLabel::intermediate: return 1;
    case JudgeLabel::incorrect: return 0;
  }
  return 0;
}

/// Gold rank induced by a label: correct 1, intermediate 2, incorrect 3.
inline int label_rank(JudgeLabel l) { return 3 - label_order(l); }

inline std::string label_name(JudgeLabel l) { return text::lower(compress::verdict_name(l)); }

inline JudgeLabel parse_label(std::string_view s) {
  auto v = compress::parse_verdict(s);
  if (!v) throw FormatError("unknown label '" + std::string(s) + "'", std::string(s));
  return *v;
}

// ---------------------------------------------------------------------------
// Question IO

inline Question question_from_json(const nlohmann::json& j) {
  Question q;
  q.id = j.at("id").get<std::string>();
  q.text = j.at("question").get<std::string>();
  if (j.contains("reference") && !j["reference"].is_null()) q.reference = j["reference"].get<std::string>();
  if (j.contains("source") && !j["source"].is_null()) q.source_dataset = j["source"].get<std::string>();
  if (text::trim(q.text).empty()) throw std::invalid_argument("question " + q.id + " has empty text");
  return q;
}

inline nlohmann::json to_json(const Question& q) {
  nlohmann::json j{{"id", q.id}, {"question", q.text}};
  if (q.reference) j["reference"] = *q.reference;
  if (q.source_dataset) j["source"] = *q.source_dataset;
  return j;
}

// ---------------------------------------------------------------------------
// Step 1: answer generation

struct GenerationResult {
  std::vector<AnswerCandidate> candidates;
  std::size_t requested = 0;
  std::size_t duplicates_dropped = 0;
};

/// n samples from the generator, deduplicated on SQuAD-normalized text.
/// Candidate ids are "1".."k" in generation order.
inline GenerationResult generate_answers(const Question& q, llm::ChatBackend& generator,
                                         const llm::TemplateStore& templates, int n,
                                         double temperature, std::uint64_t seed = 0) {
  if (n < 2) throw std::invalid_argument("generate_answers: n must be >= 2");
  GenerationResult out;
  out.requested = static_cast<std::size_t>(n);
  std::set<std::string> seen;
  std::vector<llm::ChatMessage> conv{
      llm::ChatMessage::user(templates.render(llm::TemplateId::answer_generation, {{"question", q.text}}))};
  for (int i = 0; i < n; ++i) {
    llm::ChatParams params{temperature, 512, seed + static_cast<std::uint64_t>(i)};
    std::string reply;
    try {
      reply = llm::chat_complete(generator, conv, params).content;
    } catch (const BackendError&) {
      throw;
    } catch (const Error& e) {
      throw BackendError(std::string("answer generation failed: ") + e.what(), e.detail());
    }
    auto trimmed = std::string(text::trim(reply));
    auto key = text::squad_normalize(trimmed);
    if (trimmed.empty() || !seen.insert(key).second) {
      ++out.duplicates_dropped;
      continue;
    }
    out.candidates.push_back({std::to_string(out.candidates.size() + 1), trimmed, {}, {}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judge helpers

namespace detail {

inline std::string judge_call(llm::ChatBackend& judge, std::vector<llm::ChatMessage>& conv) {
  try {
    return llm::chat_complete(judge, conv).content;
  } catch (const BackendError&) {
    throw;
  } catch (const Error& e) {
    throw BackendError(std::string("judge call failed: ") + e.what(), e.detail());
  }
}

/// Content of the last <verdict>...</verdict>, if any.
inline std::optional<std::string> last_verdict_tag(std::string_view reply) {
  static const std::regex re(R"(<verdict>([\s\S]*?)</verdict>)", std::regex::icase);
  std::string s(reply);
  std::optional<std::string> last;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it)
    last = std::string(text::trim((*it)[1].str()));
  return last;
}

inline std::optional<JudgeLabel> parse_judge_label(std::string_view reply) {
  static const std::regex header(R"(\*\*\s*Final\s+Verdict\s*(:\s*\*\*|\*\*\s*:))",
                                 std::regex::icase);
  std::string s(reply);
  std::smatch m;
  if (std::regex_search(s, m, header)) {
    auto rest = std::string_view(s).substr(static_cast<std::size_t>(m.position() + m.length()));
    auto eol = rest.find('\n');
    return compress::parse_verdict(rest.substr(0, eol));
  }
  if (auto tag = last_verdict_tag(reply)) return compress::parse_verdict(*tag);
  return compress::parse_verdict(reply);
}

/// 1 or 2 for "Answer1"/"Answer2", else nullopt.
inline std::optional<int> parse_pairwise_choice(std::string_view reply) {
  std::string body = last_verdict_tag(reply).value_or(std::string(text::trim(reply)));
  static const std::regex re(R"(^\s*Answer\s*([12])\s*\.?\s*$)", std::regex::icase);
  std::smatch m;
  if (std::regex_match(body, m, re)) return m[1].str() == "1" ? 1 : 2;
  return std::nullopt;
}

inline constexpr std::string_view kJudgeReminder =
    "Your reply did not follow the required output format. Reply again with only the verdict in "
    "the requested format.";

/// One call, and one retry with a format reminder when `parse` rejects it.
template <typename Parse>
auto judge_with_retry(llm::ChatBackend& judge, std::string prompt, Parse parse,
                      std::string_view what) {
  std::vector<llm::ChatMessage> conv{llm::ChatMessage::user(std::move(prompt))};
  auto first = judge_call(judge, conv);
  if (auto v = parse(first)) return *v;
  conv.push_back(llm::ChatMessage::assistant(first.empty() ? "(empty reply)" : first));
  conv.push_back(llm::ChatMessage::user(std::string(kJudgeReminder)));
  auto second = judge_call(judge, conv);
  if (auto v = parse(second)) return *v;
  throw FormatError("unparseable " + std::string(what) + " reply", second);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Step 2: initial assessment

inline JudgeLabel assess_answer(const Question& q, const AnswerCandidate& a,
                                std::string_view reference, llm::ChatBackend& judge,
                                const llm::TemplateStore& templates) {
  auto prompt = templates.render(llm::TemplateId::judge_assess,
                                 {{"question", q.text},
                                  {"reference", std::string(reference)},
                                  {"answer", a.text}});
  return detail::judge_with_retry(judge, std::move(prompt), detail::parse_judge_label, "judge");
}

struct LabeledAnswer {
  AnswerCandidate answer;
  JudgeLabel label;
};

// ---------------------------------------------------------------------------
// Step 3: pair sampling

struct PairSide {
  AnswerCandidate answer;
  JudgeLabel label = JudgeLabel::incorrect;
  std::optional<compress::CompressedTrajectory> trajectory;
};

struct PairRecord {
  Question question;
  PairSide chosen;
  PairSide rejected;
  bool verified = false;

  bool trajectories_attached() const {
    return chosen.trajectory.has_value() && rejected.trajectory.has_value();
  }
};

/// Every ordered (better, worse) pair, in index order.
inline std::vector<std::pair<std::size_t, std::size_t>> valid_pairs(
    const std::vector<LabeledAnswer>& labeled) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    for (std::size_t j = 0; j < labeled.size(); ++j)
      if (label_order(labeled[i].label) > label_order(labeled[j].label)) out.emplace_back(i, j);
  return out;
}

/// Draws up to `max_pairs` distinct valid pairs uniformly without
/// replacement (seeded Fisher-Yates over the enumeration).
inline std::vector<PairRecord> sample_pairs(const Question& q,
                                            const std::vector<LabeledAnswer>& labeled,
                                            std::uint64_t seed, std::size_t max_pairs = 1) {
  auto pool = valid_pairs(labeled);
  if (pool.empty()) throw NoValidPair("all answers of question " + q.id + " share one label", q.id);
  std::mt19937_64 rng(seed ^ text::fnv1a64(q.id));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
  pool.resize(std::min(pool.size(), std::max<std::size_t>(max_pairs, 1)));
  std::vector<PairRecord> out;
  for (auto [c, r] : pool) {
    PairRecord rec;
    rec.question = q;
    rec.chosen = {labeled[c].answer, labeled[c].label, std::nullopt};
    rec.rejected = {labeled[r].answer, labeled[r].label, std::nullopt};
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 4: preference verification

/// The judge sees the chosen answer as Answer1; picking Answer2 means it
/// disagrees with the sampled order.
inline PairRecord verify_preference(PairRecord pair, llm::ChatBackend& judge,
                                    const llm::TemplateStore& templates) {
  auto prompt = templates.render(llm::TemplateId::judge_pairwise,
                                 {{"question", pair.question.text},
                                  {"reference", pair.question.reference.value_or("")},
                                  {"answer_a", pair.chosen.answer.text},
                                  {"answer_b", pair.rejected.answer.text}});
  int choice = detail::judge_with_retry(judge, std::move(prompt), detail::parse_pairwise_choice,
                                        "pairwise judge");
  pair.verified = choice == 1;
  return pair;
}

// ---------------------------------------------------------------------------
// Step 5: evidence for both sides

struct DroppedPair {
  std::string question_id;
  std::string reason;
};

struct AttachResult {
  std::vector<PairRecord> pairs;
  std::vector<DroppedPair> dropped;
  std::size_t search_runs = 0;
};

/// Groups verified pairs by question: one agentic search covers every answer
/// of the question, then each distinct answer is compressed once. Pairs whose
/// evidence could not be produced are dropped with the reason.
inline AttachResult attach_trajectories(const std::vector<PairRecord>& pairs, PipelineContext& ctx) {
  AttachResult out;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PairRecord*>> by_question;
  for (const auto& p : pairs) {
    if (!p.verified) {
      out.dropped.push_back({p.question.id, "pair is not verified"});
      continue;
    }
    if (!by_question.contains(p.question.id)) order.push_back(p.question.id);
    by_question[p.question.id].push_back(&p);
  }
  for (const auto& qid : order) {
    const auto& group = by_question[qid];
    const auto& q = group.front()->question;
    std::vector<AnswerCandidate> answers;
    std::map<std::string, std::size_t> index_of;  // by answer text
    for (const auto* p : group) {
      for (const auto* side : {&p->chosen, &p->rejected}) {
        if (index_of.emplace(side->answer.text, answers.size()).second) answers.push_back(side->answer);
      }
    }
    ++out.search_runs;
    auto run = agent::run_agentic_search(q, answers, ctx.llm, ctx.tools, ctx.templates, ctx.agent_cfg);
    if (run.trajectory.termination == agent::Termination::backend_error) {
      for (std::size_t i = 0; i < group.size(); ++i)
        out.dropped.push_back({qid, "search failed: " + run.trajectory.error.value_or("")});
      continue;
    }
    llm::ChatParams params{ctx.agent_cfg.temperature, ctx.agent_cfg.max_tokens, std::nullopt};
    std::vector<std::optional<compress::CompressedTrajectory>> cts(answers.size());
    std::vector<std::string> failures(answers.size());
    for (std::size_t i = 0; i < answers.size(); ++i) {
      try {
        cts[i] = compress::compress(run.trajectory, q, answers[i], ctx.llm, ctx.templates, params);
      } catch (const Error& e) {
        failures[i] = e.what();
      }
    }
    for (const auto* p : group) {
      auto ci = index_of.at(p->chosen.answer.text);
      auto ri = index_of.at(p->rejected.answer.text);
      if (!cts[ci] || !cts[ri]) {
        out.dropped.push_back({qid, "compression failed: " + (cts[ci] ? failures[ri] : failures[ci])});
        continue;
      }
      PairRecord rec = *p;
      rec.chosen.trajectory = cts[ci];
      rec.rejected.trajectory = cts[ri];
      rec.chosen.trajectory->answer_id = rec.chosen.answer.id;
      rec.rejected.trajectory->answer_id = rec.rejected.answer.id;
      out.pairs.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// pairs.jsonl

inline nlohmann::json side_to_json(const PairSide& s) {
  nlohmann::json j{{"id", s.answer.id}, {"text", s.answer.text}, {"label", label_name(s.label)}};
  if (s.trajectory) {
    j["facts"] = s.trajectory->useful_facts;
    j["reasoning"] = s.trajectory->reasoning;
    j["verdict"] = compress::verdict_name(s.trajectory->verdict);
  }
  return j;
}

inline PairSide side_from_json(const nlohmann::json& j) {
  PairSide s;
  s.answer.id = j.value("id", "");
  s.answer.text = j.at("text").get<std::string>();
  s.label = parse_label(j.at("label").get<std::string>());
  if (j.contains("facts") || j.contains("reasoning")) {
    compress::CompressedTrajectory ct;
    ct.answer_id = s.answer.id;
    ct.useful_facts = j.value("facts", std::vector<std::string>{});
    ct.reasoning = j.value("reasoning", "");
    ct.verdict = j.contains("verdict") ? parse_label(j["verdict"].get<std::string>()) : s.label;
    s.trajectory = std::move(ct);
  }
  return s;
}

inline nlohmann::json to_json(const PairRecord& p) {
  nlohmann::json j{{"question_id", p.question.id},
                   {"question", p.question.text},
                   {"chosen", side_to_json(p.chosen)},
                   {"rejected", side_to_json(p.rejected)},
                   {"verified", p.verified}};
  if (p.question.reference) j["reference"] = *p.question.reference;
  return j;
}

inline PairRecord pair_from_json(const nlohmann::json& j) {
  PairRecord p;
  p.question.id = j.at("question_id").get<std::string>();
  p.question.text = j.at("question").get<std::string>();
  if (j.contains("reference")) p.question.reference = j["reference"].get<std::string>();
  p.chosen = side_from_json(j.at("chosen"));
  p.rejected = side_from_json(j.at("rejected"));
  p.verified = j.value("verified", false);
  if (label_order(p.chosen.label) <= label_order(p.rejected.label))
    throw FormatError("pair " + p.question.id + " violates the label order", j.dump());
  return p;
}

/// Training view of exportable records (verified, both trajectories present).
inline std::vector<scorer::PreferencePair> to_preference_pairs(const std::vector<PairRecord>& records) {
  std::vector<scorer::PreferencePair> out;
  for (const auto& r : records) {
    if (!r.verified || !r.trajectories_attached()) continue;
    out.push_back({r.question, {r.chosen.answer, *r.chosen.trajectory},
                   {r.rejected.answer, *r.rejected.trajectory}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark items

enum class ReviewStatus { pending, accepted, rejected };

inline std::string_view review_status_name(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::pending: return "pending";
    case ReviewStatus::accepted: return "accepted";
    case ReviewStatus::rejected: return "rejected";
  }
  return "pending";
}

inline ReviewStatus parse_review_status(std::string_view s) {
  if (s == "pending") return ReviewStatus::pending;
  if (s == "accepted") return ReviewStatus::accepted;
  if (s == "rejected") return ReviewStatus::rejected;
  throw ReviewSchemaError("unknown review status '" + std::string(s) + "'", std::string(s));
}

struct BenchItem {
  std::string id;
  std::string source_dataset;
  std::string question;
  std::string reference;
  std::vector<AnswerCandidate> answers;
  ReviewStatus review_status = ReviewStatus::pending;

  agent::Question as_question() const { return {id, question, reference, source_dataset}; }

  /// Gold ranks are exactly {1, 2, 3}.
  bool gold_is_permutation() const {
    if (answers.size() != 3) return false;
    std::set<int> ranks;
    for (const auto& a : answers)
      if (a.gold_rank) ranks.insert(*a.gold_rank);
    return ranks == std::set<int>{1, 2, 3};
  }
};

inline nlohmann::json to_json(const BenchItem& item) {
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& a : item.answers) {
    nlohmann::json aj{{"id", a.id}, {"text", a.text}};
    if (a.gold_rank) aj["gold_rank"] = *a.gold_rank;
    if (a.binary_label) aj["binary_label"] = *a.binary_label == agent::BinaryLabel::correct ? "correct" : "incorrect";
    answers.push_back(std::move(aj));
  }
  return {{"id", item.id},
          {"source", item.source_dataset},
          {"question", item.question},
          {"reference", item.reference},
          {"answers", answers},
          {"review_status", review_status_name(item.review_status)}};
}

inline BenchItem bench_item_from_json(const nlohmann::json& j) {
  BenchItem item;
  item.id = j.at("id").get<std::string>();
  item.source_dataset = j.value("source", "");
  item.question = j.at("question").get<std::string>();
  item.reference = j.value("reference", "");
  int pos = 0;
  for (const auto& aj : j.at("answers")) {
    ++pos;
    AnswerCandidate a;
    a.id = aj.contains("id") ? aj["id"].get<std::string>() : std::to_string(pos);
    a.text = aj.at("text").get<std::string>();
    if (aj.contains("gold_rank") && !aj["gold_rank"].is_null()) a.gold_rank = aj["gold_rank"].get<int>();
    if (aj.contains("binary_label")) {
      auto l = aj["binary_label"].get<std::string>();
      if (l != "correct" && l != "incorrect") throw FormatError("bad binary_label '" + l + "'", l);
      a.binary_label = l == "correct" ? agent::BinaryLabel::correct : agent::BinaryLabel::incorrect;
    }
    item.answers.push_back(std::move(a));
  }
  item.review_status = parse_review_status(j.value("review_status", "pending"));
  std::set<int> seen;
  for (const auto& a : item.answers)
    if (a.gold_rank && !seen.insert(*a.gold_rank).second)
      throw FormatError("item " + item.id + " repeats gold rank " + std::to_string(*a.gold_rank), j.dump());
  return item;
}

struct SkippedQuestion {
  std::string question_id;
  std::string reason;
};

struct BuildBenchResult {
  std::vector<BenchItem> items;
  std::vector<SkippedQuestion> skipped;
};

/// Whether the judge considers the question verifiable.
inline bool judge_question_verifiable(const Question& q, llm::ChatBackend& judge,
                                      const llm::TemplateStore& templates) {
  auto prompt = templates.render(llm::TemplateId::judge_filter,
                                 {{"question", q.text}, {"reference", q.reference.value_or("")}});
  auto parse = [](std::string_view reply) -> std::optional<bool> {
    auto body = text::lower(detail::last_verdict_tag(reply).value_or(std::string(text::trim(reply))));
    auto t = std::string(text::trim(body));
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
    if (t == "yes") return true;
    if (t == "no") return false;
    return std::nullopt;
  };
  return detail::judge_with_retry(judge, std::move(prompt), parse, "question filter");
}

/// Builds one pending item from an already labeled pool: one answer per
/// label class drawn with `rng`, shuffled, ids "1".."3", gold rank by label.
inline std::optional<BenchItem> item_from_pool(const Question& q,
                                               const std::vector<LabeledAnswer>& pool,
                                               std::mt19937_64& rng, std::string* why) {
  std::map<int, std::vector<const LabeledAnswer*>> by_rank;
  for (const auto& la : pool) by_rank[label_rank(la.label)].push_back(&la);
  for (int r : {1, 2, 3}) {
    if (by_rank[r].empty()) {
      if (why)
        *why = "no " + label_name(r == 1 ? JudgeLabel::correct
                                  : r == 2 ? JudgeLabel::intermediate
                                           : JudgeLabel::incorrect) +
               " answer in the pool";
      return std::nullopt;
    }
  }
  std::vector<AnswerCandidate> picked;
  for (int r : {1, 2, 3}) {
    const auto& bucket = by_rank[r];
    auto a = bucket[rng() % bucket.size()]->answer;
    a.gold_rank = r;
    picked.push_back(std::move(a));
  }
  for (std::size_t i = picked.size(); i > 1; --i) std::swap(picked[i - 1], picked[rng() % i]);
  for (std::size_t i = 0; i < picked.size(); ++i) picked[i].id = std::to_string(i + 1);
  BenchItem item;
  item.id = q.id;
  item.source_dataset = q.source_dataset.value_or("");
  item.question = q.text;
  item.reference = q.reference.value_or("");
  item.answers = std::move(picked);
  return item;
}

struct BenchBuildConfig {
  int pool_size = 8;
  double temperature = 1.0;
  std::uint64_t seed = 42;
};

inline BuildBenchResult build_bench_items(const std::vector<Question>& questions,
                                          llm::ChatBackend& generator, llm::ChatBackend& judge,
                                          const llm::TemplateStore& templates,
                                          const BenchBuildConfig& cfg) {
  BuildBenchResult out;
  std::mt19937_64 rng(cfg.seed);
  for (const auto& q : questions) {
    if (!q.reference) {
      out.skipped.push_back({q.id, "no reference answer"});
      continue;
    }
    if (!judge_question_verifiable(q, judge, templates)) {
      out.skipped.push_back({q.id, "question is not verifiable"});
      continue;
    }
    auto gen = generate_answers(q, generator, templates, cfg.pool_size, cfg.temperature, cfg.seed);
    std::vector<LabeledAnswer> pool;
    for (const auto& a : gen.candidates)
      pool.push_back({a, assess_answer(q, a, *q.reference, judge, templates)});
    std::string why;
    if (auto item = item_from_pool(q, pool, rng, &why)) {
      out.items.push_back(std::move(*item));
    } else {
      out.skipped.push_back({q.id, why});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Review files
//
// Blocks separated by blank lines:
//   id: <item id>
//   source: / question: / reference: / rank N: <answer>   (informational)
//   review: <decision> [<decision> ...]
// Decisions are accept, reject or pending, one per annotator.

inline std::string escape_line(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\n') {
      out += "\\n";
    } else if (c == '\r') {
      continue;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

inline std::string export_review(const std::vector<BenchItem>& items) {
  std::string out =
      "# Review file. Set every \"review:\" line to accept, reject or pending.\n"
      "# Several space-separated decisions (one per annotator) are allowed; an item is\n"
      "# rejected when a majority of them reject it.\n";
  for (const auto& item : items) {
    out += "\nid: " + item.id + "\n";
    out += "source: " + escape_line(item.source_dataset) + "\n";
    out += "question: " + escape_line(item.question) + "\n";
    out += "reference: " + escape_line(item.reference) + "\n";
    std::vector<const AnswerCandidate*> ranked;
    for (const auto& a : item.answers) ranked.push_back(&a);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
      return a->gold_rank.value_or(99) < b->gold_rank.value_or(99);
    });
    for (const auto* a : ranked)
      out += "rank " + (a->gold_rank ? std::to_string(*a->gold_rank) : std::string("?")) + ": " +
             escape_line(a->text) + "\n";
    out += "review: ";
    out += item.review_status == ReviewStatus::accepted   ? "accept"
           : item.review_status == ReviewStatus::rejected ? "reject"
                                                          : "pending";
    out += "\n";
  }
  return out;
}

/// Combines annotator decisions: rejected on a strict majority of rejects,
/// otherwise pending while any decision is pending, otherwise accepted.
inline ReviewStatus combine_decisions(const std::vector<std::string>& decisions) {
  std::size_t rejects = 0, pendings = 0;
  for (const auto& d : decisions) {
    if (d == "reject") {
      ++rejects;
    } else if (d == "pending") {
      ++pendings;
    } else if (d != "accept") {
      throw ReviewSchemaError("unknown review decision '" + d + "'", d);
    }
  }
  if (decisions.empty()) throw ReviewSchemaError("empty review line");
  if (2 * rejects > decisions.size()) return ReviewStatus::rejected;
  if (pendings > 0) return ReviewStatus::pending;
  return ReviewStatus::accepted;
}

inline std::vector<BenchItem> import_review(std::vector<BenchItem> items, std::string_view review) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < items.size(); ++i) index[items[i].id] = i;
  std::set<std::string> reviewed;
  std::optional<std::string> current;
  bool has_review = false;
  std::istringstream in{std::string(review)};
  std::string line;
  std::size_t lineno = 0;
  auto finish_block = [&] {
    if (current && !has_review)
      throw ReviewSchemaError("item " + *current + " has no review line", *current);
    current.reset();
    has_review = false;
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto t = text::trim(line);
    if (t.empty()) {
      finish_block();
      continue;
    }
    if (t.front() == '#') continue;
    auto colon = t.find(':');
    if (colon == std::string_view::npos)
      throw ReviewSchemaError("line " + std::to_string(lineno) + " is not 'key: value'", std::string(t));
    auto key = std::string(text::trim(t.substr(0, colon)));
    auto value = std::string(text::trim(t.substr(colon + 1)));
    if (key == "id") {
      if (current) finish_block();
      if (!index.contains(value))
        throw ReviewSchemaError("line " + std::to_string(lineno) + ": unknown item id '" + value + "'", value);
      if (!reviewed.insert(value).second)
        throw ReviewSchemaError("item '" + value + "' reviewed twice", value);
      current = value;
    } else if (key == "review") {
      if (!current) throw ReviewSchemaError("line " + std::to_string(lineno) + ": review before id");
      if (has_review) throw ReviewSchemaError("item " + *current + " has two review lines", *current);
      std::vector<std::string> decisions;
      for (auto tok : text::whitespace_tokens(value)) decisions.push_back(text::lower(tok));
      items[index.at(*current)].review_status = combine_decisions(decisions);
      has_review = true;
    } else if (key == "source" || key == "question" || key == "reference" || key.rfind("rank ", 0) == 0) {
      if (!current) throw ReviewSchemaError("line " + std::to_string(lineno) + ": field before id");
    } else {
      throw ReviewSchemaError("line " + std::to_string(lineno) + ": unknown field '" + key + "'", key);
    }
  }
  finish_block();
  return items;
}

// ---------------------------------------------------------------------------
// End-to-end pair building

struct PairBuildConfig {
  int answers_per_question = 16;
  double temperature = 1.0;
  std::size_t pairs_per_question = 1;
  std::uint64_t seed = 42;
};

struct PairBuildReport {
  std::size_t questions = 0;
  std::size_t generated = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t sampled = 0;
  std::size_t verified = 0;
  std::size_t exported = 0;
  std::size_t search_runs = 0;
  std::vector<DroppedPair> dropped;
  std::vector<SkippedQuestion> skipped;
  std::vector<PairRecord> pairs;  // exportable: verified with trajectories
};

inline PairBuildReport build_pairs(const std::vector<Question>& questions,
                                   llm::ChatBackend& generator, llm::ChatBackend& judge,
                                   PipelineContext& ctx, const PairBuildConfig& cfg) {
  PairBuildReport rep;
  std::vector<PairRecord> verified;
  for (const auto& q : questions) {
    ++rep.questions;
    if (!q.reference) {
      rep.skipped.push_back({q.id, "no reference answer"});
      continue;
    }
    auto gen = generate_answers(q, generator, ctx.templates, cfg.answers_per_question,
                                cfg.temperature, cfg.seed);
    rep.generated += gen.candidates.size();
    rep.duplicates_dropped += gen.duplicates_dropped;
    std::vector<LabeledAnswer> labeled;
    for (const auto& a : gen.candidates)
      labeled.push_back({a, assess_answer(q, a, *q.reference, judge, ctx.templates)});
    std::vector<PairRecord> sampled;
    try {
      sampled = sample_pairs(q, labeled, cfg.seed, cfg.pairs_per_question);
    } catch (const NoValidPair& e) {
      rep.skipped.push_back({q.id, e.what()});
      continue;
    }
    rep.sampled += sampled.size();
    for (auto& p : sampled) {
      auto v = verify_preference(std::move(p), judge, ctx.templates);
      if (v.verified) {
        verified.push_back(std::move(v));
      } else {
        rep.dropped.push_back({q.id, "judge reversed the sampled preference"});
      }
    }
  }
  rep.verified = verified.size();
  auto attached = attach_trajectories(verified, ctx);
  rep.search_runs = attached.search_runs;
  rep.dropped.insert(rep.dropped.end(), attached.dropped.begin(), attached.dropped.end());
  rep.pairs = std::move(attached.pairs);
  rep.exported = rep.pairs.size();
  return rep;
}

}  // namespace diva::data
