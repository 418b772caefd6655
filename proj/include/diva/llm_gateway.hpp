#pragma once

// Chat-completion access to remote or scripted LLM backends, plus the prompt
// template store.

#include <nlohmann/json.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "diva/error.hpp"
#include "diva/http.hpp"
#include "diva/text.hpp"

namespace diva::llm {

// ---------------------------------------------------------------------------
// Messages

enum class Role { system, user, assistant, tool };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  static ChatMessage system(std::string c) { return {Role::system, std::move(c)}; }
  static ChatMessage user(std::string c) { return {Role::user, std::move(c)}; }
  static ChatMessage assistant(std::string c) { return {Role::assistant, std::move(c)}; }
  static ChatMessage tool(std::string c) { return {Role::tool, std::move(c)}; }

  bool operator==(const ChatMessage&) const = default;
};

/// Checks the conversation invariants: user/assistant content non-empty and
/// no two assistant turns back to back. Returns the first violation, if any.
inline std::optional<std::string> validate_conversation(std::span<const ChatMessage> msgs) {
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto& m = msgs[i];
    if ((m.role == Role::user || m.role == Role::assistant) && m.content.empty())
      return "empty " + std::string(role_name(m.role)) + " message at " + std::to_string(i);
    if (i > 0 && m.role == Role::assistant && msgs[i - 1].role == Role::assistant)
      return "consecutive assistant messages at " + std::to_string(i);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Templates

enum class TemplateId {
  agentic_search,
  context_compression,
  naive_generative_verify,
  agentic_generative_verify,
  agentic_generative_score,
  // Authored in-repo for the data pipelines and long-form evaluation.
  answer_generation,
  judge_assess,
  judge_pairwise,
  judge_filter,
  claim_decomposition,
};

struct TemplateInfo {
  TemplateId id;
  std::string_view name;
  std::string_view sha256;
};

// Digests of the shipped template assets; loading refuses drifted files.
inline constexpr std::array<TemplateInfo, 10> kTemplates{{
    {TemplateId::agentic_search, "agentic_search",
     "6238e0f85ea506f378f4f875f0f5f03e5dc9fe3c3935d8c080f576529fdc0d0b"},
    {TemplateId::context_compression, "context_compression",
     "bebd8ccbc875ce5d320549cdc3c6ad61d96df4d89e95d84c4c7d4306d1a5cde8"},
    {TemplateId::naive_generative_verify, "naive_generative_verify",
     "992727ca665c232393e508a4ef895b1984f09b0758eb7b1f3573e1f37c9cc7d5"},
    {TemplateId::agentic_generative_verify, "agentic_generative_verify",
     "887f89fccf5f9b3ccf1fb47a76862c86bb95a9bb9e24f7e8cbef3b165e21a778"},
    {TemplateId::agentic_generative_score, "agentic_generative_score",
     "dc668b5f855ece9745eb1e70524127581b4da2c335b0372b8893729f0f95a0f7"},
    {TemplateId::answer_generation, "answer_generation",
     "f53c6be0efbe7c204856eaf1a6b39c887e66003c81172c2c2a35e8cb6aec7355"},
    {TemplateId::judge_assess, "judge_assess",
     "a23e12f73e5061d711efa03784c936b46b0c5530fcdad79db51af2ddb0b06820"},
    {TemplateId::judge_pairwise, "judge_pairwise",
     "f3f5c8017f8df6a75d910669259f32fcb95e1b63769190cab3ad50277751abf4"},
    {TemplateId::judge_filter, "judge_filter",
     "28091e50a3c2c63293463e8a5eb46d76330c023d2ab64127cb0b443588f6bde6"},
    {TemplateId::claim_decomposition, "claim_decomposition",
     "39c6d3135bf1c9b60c9ff210f7c701ff1d7273805a9f0d28349d5f7c047cef6b"},
}};

inline const TemplateInfo& template_info(TemplateId id) {
  for (const auto& t : kTemplates)
    if (t.id == id) return t;
  throw std::logic_error("unregistered template id");
}

/// Names a template body may reference.
inline const std::set<std::string, std::less<>>& known_placeholders() {
  static const std::set<std::string, std::less<>> names{
      "question", "answers_block", "search_history", "answer",
      "reference", "answer_a",     "answer_b",       "response"};
  return names;
}

/// Placeholder names in order of first appearance.
inline std::vector<std::string> placeholders_in(std::string_view body) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string_view::npos) {
    auto end = body.find("}}", pos + 2);
    if (end == std::string_view::npos) break;
    std::string name(body.substr(pos + 2, end - pos - 2));
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = end + 2;
  }
  return out;
}

struct PromptTemplate {
  TemplateId id;
  std::string body;

  std::vector<std::string> placeholders() const { return placeholders_in(body); }
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Single-pass substitution: bound values are inserted verbatim and never
/// rescanned, so a value containing "{{x}}" stays literal.
inline std::string render_prompt(const PromptTemplate& tpl, const Bindings& bindings,
                                 bool strict = true) {
  auto names = tpl.placeholders();
  for (const auto& n : names) {
    if (!bindings.contains(n)) throw MissingBinding("unbound placeholder {{" + n + "}}", n);
  }
  if (strict) {
    for (const auto& [k, v] : bindings) {
      if (std::find(names.begin(), names.end(), k) == names.end())
        throw UnknownPlaceholder("binding '" + k + "' not used by template", k);
    }
  }
  std::string out;
  out.reserve(tpl.body.size());
  std::string_view body = tpl.body;
  std::size_t pos = 0;
  while (true) {
    auto open = body.find("{{", pos);
    auto close = open == std::string_view::npos ? open : body.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(body.substr(pos));
      break;
    }
    out.append(body.substr(pos, open - pos));
    auto name = body.substr(open + 2, close - open - 2);
    out += bindings.find(name)->second;
    pos = close + 2;
  }
  return out;
}

/// Loaded, checksum-verified templates.
class TemplateStore {
 public:
  static TemplateStore load(const std::filesystem::path& dir, bool verify_checksums = true) {
    TemplateStore store;
    for (const auto& info : kTemplates) {
      auto path = dir / (std::string(info.name) + ".txt");
      auto body = text::read_file(path.string());
      if (verify_checksums) {
        auto digest = text::sha256_hex(body);
        if (digest != info.sha256)
          throw TemplateChecksumMismatch(
              "template " + std::string(info.name) + " differs from the shipped asset",
              path.string());
      }
      for (const auto& n : placeholders_in(body)) {
        if (!known_placeholders().contains(n))
          throw UnknownPlaceholder("template " + std::string(info.name) +
                                       " uses undeclared placeholder {{" + n + "}}",
                                   n);
      }
      store.templates_.emplace(info.id, PromptTemplate{info.id, std::move(body)});
    }
    return store;
  }

  static TemplateStore load_default() {
#ifdef DIVA_DEFAULT_TEMPLATE_DIR
    return load(DIVA_DEFAULT_TEMPLATE_DIR);
#else
    return load("templates");
#endif
  }

  const PromptTemplate& get(TemplateId id) const { return templates_.at(id); }

  std::string render(TemplateId id, const Bindings& b) const { return render_prompt(get(id), b); }

 private:
  std::map<TemplateId, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Backends

enum class BackendKind { remote, mock };

struct LlmBackend {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // full chat-completions URL, remote only
  std::string model_name;
  double timeout_seconds = 60.0;
  int max_retries = 2;
  std::chrono::milliseconds retry_delay{250};

  std::optional<std::string> validate() const {
    if (timeout_seconds <= 0) return "timeout must be > 0";
    if (max_retries < 0) return "max_retries must be >= 0";
    if (kind == BackendKind::remote && !http::is_valid_url(endpoint))
      return "invalid endpoint URL '" + endpoint + "'";
    return std::nullopt;
  }
};

struct ChatParams {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

struct MockTurn {
  std::optional<std::string> matcher;  // nullopt matches anything
  std::string reply;
};

/// Scripted replies. A turn is served when it is the first unconsumed turn
/// whose matcher occurs in the last message of the request.
class MockScript {
 public:
  MockScript() = default;
  explicit MockScript(std::vector<MockTurn> turns)
      : turns_(std::move(turns)), consumed_(turns_.size(), false) {}

  static MockScript from_json(const nlohmann::json& j) {
    std::vector<MockTurn> turns;
    for (const auto& t : j.at("turns")) {
      MockTurn turn;
      if (t.contains("match") && !t["match"].is_null()) turn.matcher = t["match"].get<std::string>();
      turn.reply = t.at("reply").get<std::string>();
      turns.push_back(std::move(turn));
    }
    return MockScript(std::move(turns));
  }

  static MockScript from_file(const std::string& path) {
    try {
      return from_json(nlohmann::json::parse(text::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed mock script: ") + e.what(), path);
    }
  }

  std::string next(std::string_view last_content) {
    for (std::size_t i = 0; i < turns_.size(); ++i) {
      if (consumed_[i]) continue;
      const auto& m = turns_[i].matcher;
      if (!m || text::contains(last_content, *m)) {
        consumed_[i] = true;
        ++cursor_;
        return turns_[i].reply;
      }
    }
    throw ScriptExhausted(cursor_ == turns_.size() ? "no scripted turns remain"
                                                   : "no remaining turn matches the request",
                          std::string(last_content.substr(0, 200)));
  }

  std::size_t cursor() const { return cursor_; }
  std::size_t size() const { return turns_.size(); }
  std::size_t remaining() const { return turns_.size() - cursor_; }

 private:
  std::vector<MockTurn> turns_;
  std::vector<bool> consumed_;
  std::size_t cursor_ = 0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatMessage complete(std::span<const ChatMessage> messages, const ChatParams& params) = 0;
  virtual const LlmBackend& descriptor() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  std::atomic<std::size_t> calls_{0};
};

class MockChatBackend final : public ChatBackend {
 public:
  explicit MockChatBackend(MockScript script, std::string model = "mock")
      : script_(std::move(script)) {
    desc_.kind = BackendKind::mock;
    desc_.model_name = std::move(model);
  }

  ChatMessage complete(std::span<const ChatMessage> messages, const ChatParams&) override {
    std::lock_guard lock(mu_);
    ++calls_;
    return ChatMessage::assistant(script_.next(messages.back().content));
  }

  const LlmBackend& descriptor() const override { return desc_; }
  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return script_.remaining();
  }

 private:
  LlmBackend desc_;
  mutable std::mutex mu_;
  MockScript script_;
};

/// JSON chat-completion client: POST {model, messages, temperature, ...},
/// reads choices[0].message.content. Tool messages travel as user turns since
/// tool calls are carried in plain text.
class RemoteChatBackend final : public ChatBackend {
 public:
  RemoteChatBackend(LlmBackend desc, std::shared_ptr<http::Transport> transport,
                    std::optional<std::string> api_key = std::nullopt)
      : desc_(std::move(desc)), transport_(std::move(transport)), api_key_(std::move(api_key)) {
    if (auto err = desc_.validate()) throw std::invalid_argument(*err);
  }

  ChatMessage complete(std::span<const ChatMessage> messages, const ChatParams& params) override {
    nlohmann::json body;
    body["model"] = desc_.model_name;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (params.seed) body["seed"] = *params.seed;
    auto& arr = body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) {
      auto role = m.role == Role::tool ? Role::user : m.role;
      arr.push_back({{"role", role_name(role)}, {"content", m.content}});
    }
    http::Request req;
    req.url = desc_.endpoint;
    req.body = body.dump();
    req.timeout = std::chrono::milliseconds(static_cast<long long>(desc_.timeout_seconds * 1000));
    req.headers.emplace_back("Content-Type", "application/json");
    if (api_key_) req.headers.emplace_back("Authorization", "Bearer " + *api_key_);

    std::string last_cause;
    const int attempts = 1 + desc_.max_retries;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0 && desc_.retry_delay.count() > 0)
        std::this_thread::sleep_for(desc_.retry_delay * (1 << std::min(attempt - 1, 6)));
      ++calls_;
      http::Response res;
      try {
        res = transport_->post(req);
      } catch (const http::TransportFailure& e) {
        last_cause = e.what();
        continue;
      }
      if (res.status == 429 || res.status >= 500) {
        last_cause = "HTTP " + std::to_string(res.status);
        continue;
      }
      if (res.status != 200)
        throw ProtocolError("unexpected HTTP status " + std::to_string(res.status), res.body);
      return ChatMessage::assistant(parse_reply(res.body));
    }
    throw TransportError("giving up on " + desc_.endpoint + " after " + std::to_string(attempts) +
                             " attempts: " + last_cause,
                         desc_.endpoint);
  }

  const LlmBackend& descriptor() const override { return desc_; }

  static std::string parse_reply(const std::string& raw) {
    try {
      auto j = nlohmann::json::parse(raw);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw ProtocolError("message content is not a string", raw);
      return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed chat-completion response: ") + e.what(), raw);
    }
  }

 private:
  LlmBackend desc_;
  std::shared_ptr<http::Transport> transport_;
  std::optional<std::string> api_key_;
};

/// Validates the request shape, then asks the backend for one assistant turn.
inline ChatMessage chat_complete(ChatBackend& backend, std::span<const ChatMessage> messages,
                                 const ChatParams& params = {}) {
  if (messages.empty()) throw std::invalid_argument("chat_complete: empty conversation");
  auto last = messages.back().role;
  if (last != Role::user && last != Role::tool)
    throw std::invalid_argument("chat_complete: last message must be user or tool");
  if (auto err = validate_conversation(messages))
    throw std::invalid_argument("chat_complete: " + *err);
  return backend.complete(messages, params);
}

}  // namespace diva::llm
