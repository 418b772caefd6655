#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace diva;
using namespace diva::llm;
using testing_support::FakeTransport;
using testing_support::TempDir;

namespace {

http::Response ok_reply(const std::string& content) {
  return {200, nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump()};
}

LlmBackend remote_desc(int retries = 2) {
  LlmBackend d;
  d.kind = BackendKind::remote;
  d.endpoint = "http://llm.test/v1/chat/completions";
  d.model_name = "m";
  d.max_retries = retries;
  d.retry_delay = std::chrono::milliseconds(0);
  return d;
}

}  // namespace

TEST(Text, TrimSplitJoin) {
  EXPECT_EQ(text::trim("  a b \n"), "a b");
  EXPECT_EQ(text::split("a;;b", ';'), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(text::join({"x", "y"}, ", "), "x, y");
}

TEST(Text, WordTokensSplitOnPunctuation) {
  EXPECT_EQ(text::word_tokens("Degl'amori, e de-gl'odii!"),
            (std::vector<std::string>{"degl", "amori", "e", "de", "gl", "odii"}));
}

TEST(Text, Utf8CapNeverSplitsSequences) {
  std::string s = "caf\xC3\xA9 \xE2\x82\xAC";  // "café €"
  EXPECT_EQ(text::utf8_cap_chars(s, 4), "caf\xC3\xA9");
  EXPECT_EQ(text::utf8_truncate(s, 4), "caf");
  EXPECT_EQ(text::utf8_cap_chars(s, 100), s);
}

TEST(Text, Sha256KnownVectors) {
  EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(text::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Text, SquadNormalize) {
  EXPECT_EQ(text::squad_normalize("The  Rialto Bridge!"), "rialto bridge");
  EXPECT_EQ(text::squad_normalize("an apple, a pear"), "apple pear");
}

TEST(Text, IdOrderingIsNumericWhenPossible) {
  EXPECT_TRUE(text::id_less("2", "10"));
  EXPECT_TRUE(text::id_less("a", "b"));
  EXPECT_FALSE(text::id_less("10", "2"));
}

TEST(Templates, ShippedTemplatesVerifyAndRender) {
  const auto& store = testing_support::templates();
  auto out = store.render(TemplateId::naive_generative_verify,
                          {{"question", "Q?"}, {"answers_block", "Answer 1: x"}});
  EXPECT_NE(out.find("Question: Q?"), std::string::npos);
  EXPECT_NE(out.find("Answer 1: x"), std::string::npos);
  EXPECT_EQ(out.find("{{"), std::string::npos);
}

TEST(Templates, MissingBindingThrows) {
  const auto& store = testing_support::templates();
  EXPECT_THROW(store.render(TemplateId::naive_generative_verify, {{"question", "Q"}}), MissingBinding);
}

TEST(Templates, ExtraBindingThrowsInStrictMode) {
  PromptTemplate t{TemplateId::answer_generation, "Q: {{question}}"};
  EXPECT_THROW(render_prompt(t, {{"question", "q"}, {"answer", "a"}}), UnknownPlaceholder);
  EXPECT_EQ(render_prompt(t, {{"question", "q"}, {"answer", "a"}}, false), "Q: q");
}

TEST(Templates, SubstitutionIsSinglePass) {
  PromptTemplate t{TemplateId::answer_generation, "[{{question}}] [{{answer}}]"};
  EXPECT_EQ(render_prompt(t, {{"question", "{{answer}}"}, {"answer", "A"}}), "[{{answer}}] [A]");
}

TEST(Templates, TamperedTemplateFailsChecksum) {
  TempDir dir;
  for (const auto& e : std::filesystem::directory_iterator(testing_support::repo_root() + "/templates"))
    std::filesystem::copy_file(e.path(), dir.path() / e.path().filename());
  text::write_file(dir.file("agentic_search.txt"), "tampered {{question}} {{answers_block}}");
  EXPECT_THROW(TemplateStore::load(dir.path()), TemplateChecksumMismatch);
  EXPECT_NO_THROW(TemplateStore::load(dir.path(), false));
}

TEST(Templates, ChecksumsMatchFilesOnDisk) {
  for (const auto& info : kTemplates) {
    auto body = text::read_file(testing_support::repo_root() + "/templates/" + std::string(info.name) + ".txt");
    EXPECT_EQ(text::sha256_hex(body), info.sha256) << info.name;
  }
}

TEST(MockBackend, ServesTurnsInOrderAndMatches) {
  MockScript script({{"beta", "B"}, {std::nullopt, "any"}, {"alpha", "A"}});
  MockChatBackend b(std::move(script));
  std::vector<ChatMessage> conv{ChatMessage::user("alpha here")};
  EXPECT_EQ(chat_complete(b, conv).content, "any");
  EXPECT_EQ(chat_complete(b, conv).content, "A");
  conv[0] = ChatMessage::user("beta");
  EXPECT_EQ(chat_complete(b, conv).content, "B");
  EXPECT_THROW(chat_complete(b, conv), ScriptExhausted);
  EXPECT_EQ(b.calls(), 4u);
}

TEST(MockBackend, ScriptFromJson) {
  auto s = MockScript::from_json(nlohmann::json::parse(R"({"turns":[{"match":"x","reply":"1"},{"reply":"2"}]})"));
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.next("nothing"), "2");
  EXPECT_EQ(s.next("x"), "1");
  EXPECT_EQ(s.remaining(), 0u);
}

TEST(ChatComplete, RejectsMalformedConversations) {
  MockChatBackend b(testing_support::script_of({"r"}));
  std::vector<ChatMessage> empty;
  EXPECT_THROW(chat_complete(b, empty), std::invalid_argument);
  std::vector<ChatMessage> ends_assistant{ChatMessage::user("q"), ChatMessage::assistant("a")};
  EXPECT_THROW(chat_complete(b, ends_assistant), std::invalid_argument);
  std::vector<ChatMessage> empty_user{ChatMessage::user("")};
  EXPECT_THROW(chat_complete(b, empty_user), std::invalid_argument);
  EXPECT_EQ(b.calls(), 0u);
}

TEST(RemoteBackend, SendsProtocolAndMapsToolRoleToUser) {
  auto t = std::make_shared<FakeTransport>([](const http::Request&) { return ok_reply("hi"); });
  RemoteChatBackend b(remote_desc(), t, "secret");
  std::vector<ChatMessage> conv{ChatMessage::system("s"), ChatMessage::user("u"),
                                ChatMessage::assistant("a"), ChatMessage::tool("obs")};
  EXPECT_EQ(chat_complete(b, conv, ChatParams{0.0, 77, 5}).content, "hi");
  auto reqs = t->requests();
  ASSERT_EQ(reqs.size(), 1u);
  auto j = nlohmann::json::parse(reqs[0].body);
  EXPECT_EQ(j["model"], "m");
  EXPECT_EQ(j["max_tokens"], 77);
  EXPECT_EQ(j["seed"], 5);
  EXPECT_EQ(j["messages"][3]["role"], "user");
  EXPECT_EQ(j["messages"][3]["content"], "obs");
  bool auth = false;
  for (const auto& [k, v] : reqs[0].headers) auth |= (k == "Authorization" && v == "Bearer secret");
  EXPECT_TRUE(auth);
}

TEST(RemoteBackend, RetriesTransientFailures) {
  int n = 0;
  auto t = std::make_shared<FakeTransport>([&](const http::Request&) -> http::Response {
    ++n;
    if (n == 1) throw http::TransportFailure("refused");
    if (n == 2) return {503, "busy"};
    return ok_reply("done");
  });
  RemoteChatBackend b(remote_desc(2), t);
  std::vector<ChatMessage> conv{ChatMessage::user("u")};
  EXPECT_EQ(chat_complete(b, conv).content, "done");
  EXPECT_EQ(t->count(), 3u);
}

TEST(RemoteBackend, GivesUpAfterRetryBudget) {
  auto t = std::make_shared<FakeTransport>([](const http::Request&) { return http::Response{429, ""}; });
  RemoteChatBackend b(remote_desc(3), t);
  std::vector<ChatMessage> conv{ChatMessage::user("u")};
  EXPECT_THROW(chat_complete(b, conv), TransportError);
  EXPECT_EQ(t->count(), 4u);
}

TEST(RemoteBackend, ClientErrorsAreNotRetried) {
  auto t = std::make_shared<FakeTransport>([](const http::Request&) { return http::Response{400, "bad"}; });
  RemoteChatBackend b(remote_desc(3), t);
  std::vector<ChatMessage> conv{ChatMessage::user("u")};
  EXPECT_THROW(chat_complete(b, conv), ProtocolError);
  EXPECT_EQ(t->count(), 1u);
}

TEST(RemoteBackend, MalformedBodyIsProtocolError) {
  auto t = std::make_shared<FakeTransport>([](const http::Request&) { return http::Response{200, "{\"choices\":[]}"}; });
  RemoteChatBackend b(remote_desc(), t);
  std::vector<ChatMessage> conv{ChatMessage::user("u")};
  EXPECT_THROW(chat_complete(b, conv), ProtocolError);
}

TEST(RemoteBackend, InvalidEndpointRejectedUpFront) {
  auto d = remote_desc();
  d.endpoint = "not a url";
  EXPECT_THROW(RemoteChatBackend(d, nullptr), std::invalid_argument);
}

TEST(RemoteBackend, TalksToRealHttpServer) {
  testing_support::StubServer server([](httplib::Server& s) {
    s.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
      auto j = nlohmann::json::parse(req.body);
      auto last = j["messages"].back()["content"].get<std::string>();
      res.set_content(ok_reply("echo: " + last).body, "application/json");
    });
  });
  auto d = remote_desc();
  d.endpoint = server.url("/v1/chat/completions");
  RemoteChatBackend b(d, std::make_shared<http::HttplibTransport>());
  std::vector<ChatMessage> conv{ChatMessage::user("ping")};
  EXPECT_EQ(chat_complete(b, conv).content, "echo: ping");
}

TEST(Url, Parsing) {
  http::ParsedUrl u;
  ASSERT_TRUE(http::parse_url("https://example.org/a/b", u));
  EXPECT_EQ(u.host, "example.org");
  EXPECT_EQ(u.port, 443);
  EXPECT_EQ(u.path, "/a/b");
  ASSERT_TRUE(http::parse_url("http://127.0.0.1:8080", u));
  EXPECT_EQ(u.port, 8080);
  EXPECT_EQ(u.path, "/");
  EXPECT_FALSE(http::is_valid_url("ftp://x"));
  EXPECT_FALSE(http::is_valid_url("http://"));
}
