#include <gtest/gtest.h>

#include "support.hpp"

using namespace diva;
using namespace diva::compress;
using testing_support::compression_reply;
using testing_support::script_of;

namespace {

agent::Trajectory small_trajectory() {
  agent::Trajectory t;
  t.question_id = "q1";
  t.steps = {agent::TrajectoryStep::thought("look"), agent::TrajectoryStep::call(agent::Tool::search_web, "x"),
             agent::TrajectoryStep::observation({{retrieval::Source::web, "T", "Rialto is in Venice.", 1, "l"}})};
  return t;
}

const agent::Question kQ{"q1", "Which bridge is in Venice?", std::nullopt, std::nullopt};
const agent::AnswerCandidate kA{"a1", "Rialto", {}, {}};

}  // namespace

TEST(Verdict, SurfaceForms) {
  EXPECT_EQ(parse_verdict("Correct"), Verdict::correct);
  EXPECT_EQ(parse_verdict(" [incorrect]. "), Verdict::incorrect);
  EXPECT_EQ(parse_verdict("**Intermediate**"), Verdict::intermediate);
  EXPECT_FALSE(parse_verdict("Partially correct"));
  EXPECT_FALSE(parse_verdict(""));
}

TEST(ParseCompression, CanonicalLayout) {
  auto ct = parse_compression_output(compression_reply("f1; f2 ;; f3", "because", "Correct"));
  EXPECT_EQ(ct.useful_facts, (std::vector<std::string>{"f1", "f2", "f3"}));
  EXPECT_EQ(ct.reasoning, "because");
  EXPECT_EQ(ct.verdict, Verdict::correct);
}

TEST(ParseCompression, HeaderVariantsAndPreamble) {
  auto ct = parse_compression_output(
      "Sure, here it is.\n**useful facts**: a\n** Reasoning :** r\n**FINAL VERDICT:** [Incorrect]");
  EXPECT_EQ(ct.useful_facts, std::vector<std::string>{"a"});
  EXPECT_EQ(ct.reasoning, "r");
  EXPECT_EQ(ct.verdict, Verdict::incorrect);
}

TEST(ParseCompression, EmptyFactsAllowed) {
  auto ct = parse_compression_output(compression_reply("", "r", "Intermediate"));
  EXPECT_TRUE(ct.useful_facts.empty());
}

TEST(ParseCompression, RejectsMalformed) {
  EXPECT_THROW(parse_compression_output("**Reasoning:** r\n**Final Verdict:** Correct"), FormatError);
  EXPECT_THROW(parse_compression_output(compression_reply("f", "r", "Maybe")), FormatError);
  EXPECT_THROW(parse_compression_output(compression_reply("f", "", "Correct")), FormatError);
  EXPECT_THROW(parse_compression_output("**Reasoning:** r\n**Useful Facts:** f\n**Final Verdict:** Correct"),
               FormatError);
  EXPECT_THROW(parse_compression_output(compression_reply("f", "r", "Correct") + "\n**Reasoning:** again"),
               FormatError);
  try {
    parse_compression_output("garbage");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.detail(), "garbage");
  }
}

TEST(ParseCompression, SerializeRoundTrip) {
  CompressedTrajectory ct{{"a fact", "another"}, "multi\nline reasoning", Verdict::intermediate, ""};
  EXPECT_EQ(parse_compression_output(serialize_compression(ct)), ct);
}

TEST(ParseCompression, JsonRoundTrip) {
  CompressedTrajectory ct{{"x"}, "r", Verdict::correct, "a7"};
  EXPECT_EQ(compressed_from_json(nlohmann::json::parse(to_json(ct).dump())), ct);
  auto bad = to_json(ct);
  bad["verdict"] = "nope";
  EXPECT_THROW(compressed_from_json(bad), FormatError);
}

TEST(Compress, PromptCarriesHistoryAndAnswer) {
  llm::MockChatBackend llm(script_of({compression_reply("Rialto is in Venice", "matches", "Correct")}));
  auto ct = compress::compress(small_trajectory(), kQ, kA, llm, testing_support::templates());
  EXPECT_EQ(ct.answer_id, "a1");
  EXPECT_EQ(ct.verdict, Verdict::correct);
  EXPECT_EQ(llm.calls(), 1u);
}

TEST(Compress, RetriesOnceWithReminder) {
  llm::MockScript script({{std::nullopt, "not formatted"},
                          {"did not follow the required format", compression_reply("f", "r", "Incorrect")}});
  llm::MockChatBackend llm(std::move(script));
  auto ct = compress::compress(small_trajectory(), kQ, kA, llm, testing_support::templates());
  EXPECT_EQ(ct.verdict, Verdict::incorrect);
  EXPECT_EQ(llm.calls(), 2u);
}

TEST(Compress, SecondFailureIsFormatError) {
  llm::MockChatBackend llm(script_of({"bad", "still bad"}));
  EXPECT_THROW(compress::compress(small_trajectory(), kQ, kA, llm, testing_support::templates()), FormatError);
  EXPECT_EQ(llm.calls(), 2u);
}

TEST(Compress, BackendFailureIsBackendError) {
  llm::MockChatBackend llm(script_of({}));
  EXPECT_THROW(compress::compress(small_trajectory(), kQ, kA, llm, testing_support::templates()), BackendError);
}

TEST(Compress, ForeignTrajectoryRejected) {
  llm::MockChatBackend llm(script_of({}));
  auto t = small_trajectory();
  t.question_id = "other";
  EXPECT_THROW(compress::compress(t, kQ, kA, llm, testing_support::templates()), std::invalid_argument);
}

TEST(ScorerInput, LayoutOmitsVerdict) {
  EXPECT_EQ(render_scorer_input("Q?", "A", {"f1", "f2"}, "R"), "Question: Q?\nAnswer: A\nFacts: f1; f2\nReasoning: R");
}

TEST(ScorerInput, TruncatesEvidenceFromTail) {
  // head = 4 tokens ("Question:", "Q?", "Answer:", "A")
  auto out = render_scorer_input("Q?", "A", {"one two"}, "three four five", 7);
  EXPECT_EQ(out, "Question: Q?\nAnswer: A\nFacts: one two");
  EXPECT_EQ(text::whitespace_tokens(out).size(), 7u);
  EXPECT_EQ(render_scorer_input("Q?", "A", {"x"}, "y", 4), "Question: Q?\nAnswer: A");
}

TEST(ScorerInput, OverflowWhenHeadTooLong) {
  EXPECT_THROW(render_scorer_input("a b c d e", "A", {}, "r", 5), OverflowUnavoidable);
}
