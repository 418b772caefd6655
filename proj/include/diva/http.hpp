#pragma once

// Minimal POST transport used by the chat, search, embedding and remote
// scorer clients. Tests swap in counting fakes through the Transport interface.

#include <httplib.h>

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "diva/error.hpp"

namespace diva::http {

struct Request {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  std::chrono::milliseconds timeout{30000};
};

struct Response {
  int status = 0;
  std::string body;
};

/// Raised by a transport when no HTTP response was obtained at all.
class TransportFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Response post(const Request& req) = 0;
};

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path;
};

/// Accepts http(s)://host[:port][/path]. Returns false on anything else.
inline bool parse_url(std::string_view url, ParsedUrl& out) {
  auto sep = url.find("://");
  if (sep == std::string_view::npos) return false;
  out.scheme = std::string(url.substr(0, sep));
  if (out.scheme != "http" && out.scheme != "https") return false;
  auto rest = url.substr(sep + 3);
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  if (authority.empty()) return false;
  auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    out.host = std::string(authority.substr(0, colon));
    auto port_str = authority.substr(colon + 1);
    if (port_str.empty()) return false;
    int port = 0;
    for (char c : port_str) {
      if (c < '0' || c > '9') return false;
      port = port * 10 + (c - '0');
      if (port > 65535) return false;
    }
    out.port = port;
  } else {
    out.host = std::string(authority);
    out.port = out.scheme == "https" ? 443 : 80;
  }
  for (char c : out.host) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_'))
      return false;
  }
  return !out.host.empty();
}

inline bool is_valid_url(std::string_view url) {
  ParsedUrl p;
  return parse_url(url, p);
}

class HttplibTransport final : public Transport {
 public:
  Response post(const Request& req) override {
    ParsedUrl u;
    if (!parse_url(req.url, u)) throw TransportFailure("invalid url " + req.url);
    httplib::Client client(u.scheme + "://" + u.host + ":" + std::to_string(u.port));
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(req.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(req.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : req.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = client.Post(u.path, headers, req.body, content_type);
    if (!res) throw TransportFailure(httplib::to_string(res.error()));
    return Response{res->status, res->body};
  }
};

}  // namespace diva::http
