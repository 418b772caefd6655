#pragma once

// Search -> compress -> score, the full verification path for one question.

#include <map>
#include <string>
#include <vector>

#include "diva/agent.hpp"
#include "diva/compressor.hpp"
#include "diva/llm_gateway.hpp"
#include "diva/retrieval.hpp"
#include "diva/scorer.hpp"

namespace diva {

/// Everything the search and compression stages need.
struct PipelineContext {
  llm::ChatBackend& llm;
  retrieval::SearchTools& tools;
  const llm::TemplateStore& templates;
  agent::AgentConfig agent_cfg{};
};

struct EvidenceResult {
  agent::AgentRun run;
  std::vector<compress::CompressedTrajectory> compressed;  // aligned with candidates
};

/// One shared search for all candidates, then one compression per candidate.
/// A search that ended in a backend error is raised as BackendError.
inline EvidenceResult gather_evidence(PipelineContext& ctx, const agent::Question& q,
                                      const std::vector<agent::AnswerCandidate>& candidates) {
  EvidenceResult out;
  out.run = agent::run_agentic_search(q, candidates, ctx.llm, ctx.tools, ctx.templates,
                                      ctx.agent_cfg);
  if (out.run.trajectory.termination == agent::Termination::backend_error)
    throw BackendError("agentic search failed for question " + q.id,
                       out.run.trajectory.error.value_or(""));
  llm::ChatParams params{ctx.agent_cfg.temperature, ctx.agent_cfg.max_tokens, std::nullopt};
  for (const auto& a : candidates)
    out.compressed.push_back(
        compress::compress(out.run.trajectory, q, a, ctx.llm, ctx.templates, params));
  return out;
}

struct DivaVerdict {
  EvidenceResult evidence;
  std::vector<scorer::RankedAnswer> ranking;
};

inline DivaVerdict run_diva(PipelineContext& ctx, scorer::Scorer& sc, const agent::Question& q,
                            const std::vector<agent::AnswerCandidate>& candidates) {
  DivaVerdict v;
  v.evidence = gather_evidence(ctx, q, candidates);
  std::vector<std::pair<agent::AnswerCandidate, compress::CompressedTrajectory>> pairs;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    pairs.emplace_back(candidates[i], v.evidence.compressed[i]);
  v.ranking = scorer::rank_answers(sc, q, pairs);
  return v;
}

}  // namespace diva
