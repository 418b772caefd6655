#pragma once

// The two search tools available to the agent: a BM25 index over a local
// document corpus and a web-search client (live provider or recorded replay).

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "diva/error.hpp"
#include "diva/http.hpp"
#include "diva/text.hpp"

namespace diva::retrieval {

enum class Source { web, local };

inline std::string_view source_name(Source s) { return s == Source::web ? "web" : "local"; }

inline constexpr std::size_t kSnippetCap = 500;

struct SearchResult {
  Source source = Source::web;
  std::string title;
  std::string snippet;
  int rank = 0;
  std::string origin_id;

  bool operator==(const SearchResult&) const = default;
};

inline nlohmann::json to_json(const SearchResult& r) {
  return {{"source", source_name(r.source)}, {"title", r.title}, {"snippet", r.snippet},
          {"rank", r.rank}, {"origin_id", r.origin_id}};
}

inline SearchResult search_result_from_json(const nlohmann::json& j) {
  SearchResult r;
  r.source = j.at("source").get<std::string>() == "local" ? Source::local : Source::web;
  r.title = j.value("title", "");
  r.snippet = j.at("snippet").get<std::string>();
  r.rank = j.at("rank").get<int>();
  r.origin_id = j.value("origin_id", "");
  return r;
}

struct RetrievalConfig {
  int k_web = 10;
  int k_local = 3;
  std::set<Source> enabled_sources{Source::web, Source::local};

  std::optional<std::string> validate() const {
    if (k_web < 1) return "k_web must be >= 1";
    if (k_local < 1) return "k_local must be >= 1";
    if (enabled_sources.empty()) return "at least one source must be enabled";
    return std::nullopt;
  }
  bool enabled(Source s) const { return enabled_sources.contains(s); }
};

// ---------------------------------------------------------------------------
// Local corpus (BM25, k1 = 1.2, b = 0.75)

struct Document {
  std::string id;
  std::string title;
  std::string text;

  bool operator==(const Document&) const = default;
};

struct Posting {
  std::uint32_t doc = 0;  // index into documents
  std::uint32_t tf = 0;

  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

class LocalCorpus {
 public:
  LocalCorpus() = default;

  const std::vector<Document>& documents() const { return docs_; }
  const std::map<std::string, std::vector<Posting>, std::less<>>& postings() const {
    return postings_;
  }
  const std::vector<std::uint32_t>& doc_lengths() const { return lengths_; }
  double average_length() const { return avg_len_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  std::size_t document_frequency(std::string_view term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  double idf(std::string_view term) const {
    double n = static_cast<double>(docs_.size());
    double df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  /// BM25 score of every document with at least one query term.
  std::unordered_map<std::uint32_t, double> score(std::string_view query,
                                                  Bm25Params p = {}) const {
    std::unordered_map<std::uint32_t, double> scores;
    for (const auto& term : text::word_tokens(query)) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      double w = idf(term);
      for (const auto& post : it->second) {
        double tf = post.tf;
        double norm = 1.0 - p.b + p.b * lengths_[post.doc] / avg_len_;
        scores[post.doc] += w * tf * (p.k1 + 1.0) / (tf + p.k1 * norm);
      }
    }
    return scores;
  }

  bool operator==(const LocalCorpus&) const = default;

 private:
  friend LocalCorpus build_local_index(std::vector<Document> documents);

  std::vector<Document> docs_;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
  std::vector<std::uint32_t> lengths_;
  double avg_len_ = 0.0;
};

/// Indexes title and body together.
inline LocalCorpus build_local_index(std::vector<Document> documents) {
  if (documents.empty()) throw EmptyCorpus("cannot index an empty document list");
  std::set<std::string, std::less<>> seen;
  for (const auto& d : documents) {
    if (!seen.insert(d.id).second) throw DuplicateDocId("duplicate document id '" + d.id + "'", d.id);
  }
  LocalCorpus c;
  c.docs_ = std::move(documents);
  std::uint64_t total = 0;
  for (std::uint32_t i = 0; i < c.docs_.size(); ++i) {
    auto tokens = text::word_tokens(c.docs_[i].title + " " + c.docs_[i].text);
    std::map<std::string, std::uint32_t> tf;
    for (auto& t : tokens) ++tf[t];
    for (auto& [term, n] : tf) c.postings_[term].push_back({i, n});
    c.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total += tokens.size();
  }
  c.avg_len_ = static_cast<double>(total) / static_cast<double>(c.docs_.size());
  if (c.avg_len_ <= 0.0) c.avg_len_ = 1.0;
  return c;
}

inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
  std::vector<Document> docs;
  std::istringstream in(text::read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      docs.push_back({j.at("id").get<std::string>(), j.value("title", ""),
                      j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corpus line " + std::to_string(lineno) + ": " + e.what(), path);
    }
  }
  return docs;
}

inline std::vector<SearchResult> search_local(std::string_view query, const LocalCorpus& corpus,
                                              const RetrievalConfig& cfg) {
  if (!cfg.enabled(Source::local)) throw SourceDisabled("local search is disabled");
  if (corpus.empty()) throw EmptyCorpus("local corpus has no documents");
  auto scores = corpus.score(query);
  std::vector<std::pair<std::uint32_t, double>> ranked(scores.begin(), scores.end());
  const auto& docs = corpus.documents();
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return docs[a.first].id < docs[b.first].id;
  });
  std::vector<SearchResult> out;
  for (std::size_t i = 0; i < ranked.size() && out.size() < static_cast<std::size_t>(cfg.k_local);
       ++i) {
    const auto& d = docs[ranked[i].first];
    out.push_back({Source::local, d.title, text::utf8_cap_chars(d.text, kSnippetCap),
                   static_cast<int>(out.size()) + 1, d.id});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Web search

/// A raw provider hit before truncation and ranking.
struct WebHit {
  std::string title;
  std::string snippet;
  std::string link;
};

class WebProvider {
 public:
  virtual ~WebProvider() = default;
  virtual std::vector<WebHit> search(const std::string& query, int k) = 0;
};

inline std::string query_key(std::string_view query) {
  return text::sha256_hex(text::trim(query)).substr(0, 16);
}

inline std::vector<WebHit> hits_from_serper_json(const nlohmann::json& j) {
  std::vector<WebHit> hits;
  if (!j.contains("organic")) return hits;
  for (const auto& o : j["organic"]) {
    WebHit h;
    h.title = o.value("title", "");
    h.snippet = o.value("snippet", "");
    h.link = o.value("link", "");
    hits.push_back(std::move(h));
  }
  return hits;
}

/// Serper-style JSON API: POST {"q", "num"} with X-API-KEY, reads "organic".
class SerperProvider final : public WebProvider {
 public:
  SerperProvider(std::shared_ptr<http::Transport> transport, std::string api_key,
                 std::string endpoint = "https://google.serper.dev/search")
      : transport_(std::move(transport)), api_key_(std::move(api_key)),
        endpoint_(std::move(endpoint)) {}

  std::vector<WebHit> search(const std::string& query, int k) override {
    return hits_from_serper_json(search_raw(query, k));
  }

  nlohmann::json search_raw(const std::string& query, int k) {
    http::Request req;
    req.url = endpoint_;
    req.body = nlohmann::json{{"q", query}, {"num", k}}.dump();
    req.headers = {{"Content-Type", "application/json"}, {"X-API-KEY", api_key_}};
    http::Response res;
    try {
      res = transport_->post(req);
    } catch (const http::TransportFailure& e) {
      throw ProviderError(std::string("web search transport failure: ") + e.what(), "0");
    }
    if (res.status == 429 || res.status == 402)
      throw QuotaExceeded("web search quota exhausted (HTTP " + std::to_string(res.status) + ")",
                          std::to_string(res.status));
    if (res.status != 200)
      throw ProviderError("web search failed with HTTP " + std::to_string(res.status),
                          std::to_string(res.status));
    try {
      return nlohmann::json::parse(res.body);
    } catch (const nlohmann::json::exception&) {
      throw ProviderError("web search returned malformed JSON", std::to_string(res.status));
    }
  }

 private:
  std::shared_ptr<http::Transport> transport_;
  std::string api_key_;
  std::string endpoint_;
};

/// Reads recorded responses from `<dir>/<query_key>.json`.
class ReplayProvider final : public WebProvider {
 public:
  explicit ReplayProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::vector<WebHit> search(const std::string& query, int) override {
    auto path = dir_ / (query_key(query) + ".json");
    if (!std::filesystem::exists(path))
      throw ProviderError("no recorded fixture for query '" + query + "'", "404");
    return hits_from_serper_json(nlohmann::json::parse(text::read_file(path.string())));
  }

 private:
  std::filesystem::path dir_;
};

/// Calls a live provider and records every response for later replay.
class RecordingProvider final : public WebProvider {
 public:
  RecordingProvider(std::shared_ptr<SerperProvider> live, std::filesystem::path dir)
      : live_(std::move(live)), dir_(std::move(dir)) {}

  std::vector<WebHit> search(const std::string& query, int k) override {
    auto raw = live_->search_raw(query, k);
    raw["query"] = query;
    std::filesystem::create_directories(dir_);
    text::write_file((dir_ / (query_key(query) + ".json")).string(), raw.dump(2));
    return hits_from_serper_json(raw);
  }

 private:
  std::shared_ptr<SerperProvider> live_;
  std::filesystem::path dir_;
};

/// Provider order is kept; empty snippets are dropped and the rest capped.
class WebSearchClient {
 public:
  explicit WebSearchClient(std::shared_ptr<WebProvider> provider, int max_in_flight = 4)
      : provider_(std::move(provider)), max_in_flight_(std::max(1, max_in_flight)) {}

  std::vector<SearchResult> search(std::string_view query, const RetrievalConfig& cfg) {
    if (!cfg.enabled(Source::web)) throw SourceDisabled("web search is disabled");
    if (text::trim(query).empty()) throw std::invalid_argument("empty web query");
    std::vector<WebHit> hits;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
      ++in_flight_;
    }
    try {
      hits = provider_->search(std::string(query), cfg.k_web);
    } catch (...) {
      release();
      throw;
    }
    release();
    std::vector<SearchResult> out;
    for (auto& h : hits) {
      if (out.size() == static_cast<std::size_t>(cfg.k_web)) break;
      if (text::trim(h.snippet).empty()) continue;
      out.push_back({Source::web, h.title, text::utf8_cap_chars(h.snippet, kSnippetCap),
                     static_cast<int>(out.size()) + 1, h.link});
    }
    return out;
  }

 private:
  void release() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

  std::shared_ptr<WebProvider> provider_;
  int max_in_flight_;
  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

inline std::vector<SearchResult> search_web(std::string_view query, WebSearchClient& client,
                                            const RetrievalConfig& cfg) {
  return client.search(query, cfg);
}

/// Bundles both tools for the agent, with call counters for auditing.
class SearchTools {
 public:
  SearchTools(std::shared_ptr<WebSearchClient> web, std::shared_ptr<const LocalCorpus> corpus,
              RetrievalConfig cfg)
      : web_(std::move(web)), corpus_(std::move(corpus)), cfg_(std::move(cfg)) {}

  std::vector<SearchResult> web(std::string_view query) {
    if (!cfg_.enabled(Source::web)) throw SourceDisabled("web search is disabled");
    if (!web_) throw SourceDisabled("no web search client configured");
    ++web_calls_;
    return web_->search(query, cfg_);
  }

  std::vector<SearchResult> local(std::string_view query) {
    if (!cfg_.enabled(Source::local)) throw SourceDisabled("local search is disabled");
    if (!corpus_) throw EmptyCorpus("no local corpus configured");
    ++local_calls_;
    return search_local(query, *corpus_, cfg_);
  }

  const RetrievalConfig& config() const { return cfg_; }
  std::size_t web_calls() const { return web_calls_.load(); }
  std::size_t local_calls() const { return local_calls_.load(); }
  std::size_t total_calls() const { return web_calls() + local_calls(); }

 private:
  std::shared_ptr<WebSearchClient> web_;
  std::shared_ptr<const LocalCorpus> corpus_;
  RetrievalConfig cfg_;
  std::atomic<std::size_t> web_calls_{0};
  std::atomic<std::size_t> local_calls_{0};
};

}  // namespace diva::retrieval
