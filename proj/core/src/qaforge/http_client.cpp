#include <httplib.h>

#include <nlohmann/json.hpp>

#include <cstdlib>

#include "radvqa/common/error.hpp"
#include "radvqa/qaforge/client.hpp"

namespace radvqa::qaforge {

HttpClient::HttpClient(std::string url, std::string api_key_env, int timeout_seconds)
    : url_(std::move(url)), timeout_seconds_(timeout_seconds) {
  if (const char* key = std::getenv(api_key_env.c_str())) api_key_ = key;
}

std::string HttpClient::generate(const std::string& prompt, const SamplingParams& sampling) {
  // Split "http://host:port/path" into scheme+authority and path.
  const auto scheme_end = url_.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("bad_url", "client url needs a scheme: " + url_);
  const auto path_start = url_.find('/', scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

  httplib::Client cli(origin);
  cli.set_connection_timeout(timeout_seconds_);
  cli.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  nlohmann::json body{{"prompt", prompt},
                      {"temperature", sampling.temperature},
                      {"max_tokens", sampling.max_tokens},
                      {"seed", sampling.seed}};
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) throw ClientError("http_unreachable", "request to " + url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw ClientError("http_status", "generator at " + url_ + " returned HTTP " + std::to_string(res->status));
  }
  auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
    throw ClientError("http_bad_body", "generator response lacks a string 'text' field");
  }
  return j["text"].get<std::string>();
}

}  // namespace radvqa::qaforge
