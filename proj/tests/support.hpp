#pragma once

#include <httplib.h>
#include <unistd.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "diva/diva.hpp"

namespace testing_support {

inline std::string fixture(const std::string& rel) { return std::string(DIVA_FIXTURE_DIR) + "/" + rel; }

inline std::string repo_root() { return DIVA_SOURCE_DIR; }

/// A scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("diva_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Replays canned responses and records every request.
class FakeTransport : public diva::http::Transport {
 public:
  using Handler = std::function<diva::http::Response(const diva::http::Request&)>;

  explicit FakeTransport(Handler h) : handler_(std::move(h)) {}

  diva::http::Response post(const diva::http::Request& req) override {
    {
      std::lock_guard lock(mu_);
      requests_.push_back(req);
    }
    return handler_(req);
  }

  std::vector<diva::http::Request> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::size_t count() const {
    std::lock_guard lock(mu_);
    return requests_.size();
  }

 private:
  Handler handler_;
  mutable std::mutex mu_;
  std::vector<diva::http::Request> requests_;
};

/// Web provider returning fixed hits and counting calls.
class CountingWebProvider : public diva::retrieval::WebProvider {
 public:
  explicit CountingWebProvider(std::vector<diva::retrieval::WebHit> hits = {}) : hits_(std::move(hits)) {}

  std::vector<diva::retrieval::WebHit> search(const std::string&, int) override {
    ++calls;
    return hits_;
  }

  std::atomic<int> calls{0};

 private:
  std::vector<diva::retrieval::WebHit> hits_;
};

/// A local HTTP server on an ephemeral port, stopped on destruction.
class StubServer {
 public:
  explicit StubServer(std::function<void(httplib::Server&)> setup) {
    setup(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

/// Scoring service answering the shared protocol from a fixed table keyed by
/// answer text; unknown answers score `fallback`.
inline std::unique_ptr<StubServer> scripted_scorer(std::map<std::string, double> table, double fallback,
                                                   std::atomic<int>* hits = nullptr) {
  return std::make_unique<StubServer>([table, fallback, hits](httplib::Server& s) {
    s.Post("/score", [table, fallback, hits](const httplib::Request& req, httplib::Response& res) {
      if (hits) ++*hits;
      auto j = nlohmann::json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.contains("question") || !j.contains("answer") ||
          !j.contains("facts") || !j.contains("reasoning")) {
        res.status = 400;
        res.set_content(R"({"error":"schema"})", "application/json");
        return;
      }
      auto it = table.find(j["answer"].get<std::string>());
      double s = it == table.end() ? fallback : it->second;
      res.set_content(nlohmann::json{{"score", s}}.dump(), "application/json");
    });
  });
}

/// Chat backend whose reply is computed from the conversation.
class FnBackend final : public diva::llm::ChatBackend {
 public:
  using Fn = std::function<std::string(std::span<const diva::llm::ChatMessage>)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}

  diva::llm::ChatMessage complete(std::span<const diva::llm::ChatMessage> messages,
                                  const diva::llm::ChatParams&) override {
    ++calls_;
    std::lock_guard lock(mu_);
    return diva::llm::ChatMessage::assistant(fn_(messages));
  }
  const diva::llm::LlmBackend& descriptor() const override { return desc_; }

 private:
  Fn fn_;
  std::mutex mu_;
  diva::llm::LlmBackend desc_;
};

inline bool prompt_is(std::span<const diva::llm::ChatMessage> m, std::string_view needle) {
  return m.front().content.find(needle) != std::string::npos;
}

/// In-process scorer keyed by answer text.
class TableScorer final : public diva::scorer::Scorer {
 public:
  TableScorer(std::map<std::string, double> table, double fallback = 0.0)
      : table_(std::move(table)), fallback_(fallback) {}

  double score(const diva::scorer::ScorerInput& in) override {
    ++calls_;
    auto it = table_.find(in.answer);
    return it == table_.end() ? fallback_ : it->second;
  }

 private:
  std::map<std::string, double> table_;
  double fallback_;
};

inline diva::llm::MockScript script_of(std::vector<std::string> replies) {
  std::vector<diva::llm::MockTurn> turns;
  for (auto& r : replies) turns.push_back({std::nullopt, std::move(r)});
  return diva::llm::MockScript(std::move(turns));
}

inline std::string compression_reply(const std::string& facts, const std::string& reasoning,
                                     const std::string& verdict) {
  return "**Useful Facts:** " + facts + "\n\n**Reasoning:** " + reasoning + "\n\n**Final Verdict:** " + verdict;
}

inline const diva::llm::TemplateStore& templates() {
  static const auto store = diva::llm::TemplateStore::load(std::string(DIVA_SOURCE_DIR) + "/templates");
  return store;
}

/// SearchTools over a small in-memory corpus and an optional web provider.
inline std::unique_ptr<diva::retrieval::SearchTools> make_tools(
    std::shared_ptr<diva::retrieval::WebProvider> web,
    std::set<diva::retrieval::Source> sources = {diva::retrieval::Source::web, diva::retrieval::Source::local},
    std::vector<diva::retrieval::Document> docs = {}) {
  if (docs.empty()) docs = diva::retrieval::load_corpus_jsonl(fixture("corpus.jsonl"));
  auto corpus = std::make_shared<const diva::retrieval::LocalCorpus>(diva::retrieval::build_local_index(docs));
  diva::retrieval::RetrievalConfig cfg;
  cfg.enabled_sources = std::move(sources);
  std::shared_ptr<diva::retrieval::WebSearchClient> client;
  if (web) client = std::make_shared<diva::retrieval::WebSearchClient>(std::move(web));
  return std::make_unique<diva::retrieval::SearchTools>(client, corpus, cfg);
}

}  // namespace testing_support
