#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace radvqa::qaforge {

struct SamplingParams {
  double temperature = 0.7;
  int max_tokens = 512;
  std::uint64_t seed = 0;
};

/// Pluggable text generator (question synthesis, judging).
class TextGenClient {
 public:
  virtual ~TextGenClient() = default;
  virtual std::string generate(const std::string& prompt, const SamplingParams& sampling) = 0;
  /// Stable identity string recorded in provenance.
  virtual std::string identity() const = 0;
};

/// Key under which cassettes store a prompt.
std::string prompt_hash(const std::string& prompt);

/// Replays a cassette: JSONL of {"prompt_hash","text"}. Identical prompts
/// always return byte-identical text; unknown prompts raise ClientError
/// ("cassette_miss"). Read-only after construction, so thread-safe.
class ReplayClient : public TextGenClient {
 public:
  explicit ReplayClient(std::map<std::string, std::string> entries, std::string label = "inline");
  static ReplayClient load(const std::string& path);

  std::string generate(const std::string& prompt, const SamplingParams& sampling) override;
  std::string identity() const override;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::string> entries_;
  std::string label_;
};

/// Returns the prompt unchanged. Test double.
class EchoClient : public TextGenClient {
 public:
  std::string generate(const std::string& prompt, const SamplingParams& sampling) override;
  std::string identity() const override { return "local-echo"; }
};

/// Wraps a live client and records every exchange for later replay.
class RecordingClient : public TextGenClient {
 public:
  explicit RecordingClient(TextGenClient& inner) : inner_(inner) {}

  std::string generate(const std::string& prompt, const SamplingParams& sampling) override;
  std::string identity() const override { return inner_.identity(); }

  /// Cassette text, one entry per distinct prompt, sorted by hash.
  std::string cassette() const;
  void save(const std::string& path) const;

 private:
  TextGenClient& inner_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

/// Remote generator speaking POST {prompt, temperature, max_tokens, seed} -> {text}.
/// The API key is read from `api_key_env` at construction and sent as a
/// bearer token when non-empty.
class HttpClient : public TextGenClient {
 public:
  explicit HttpClient(std::string url, std::string api_key_env = "RADVQA_API_KEY", int timeout_seconds = 60);

  std::string generate(const std::string& prompt, const SamplingParams& sampling) override;
  std::string identity() const override { return "http:" + url_; }

 private:
  std::string url_;
  std::string api_key_;
  int timeout_seconds_;
};

}  // namespace radvqa::qaforge
