#include "radvqa/qaforge/client.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::qaforge {
using nlohmann::json;

std::string prompt_hash(const std::string& prompt) { return sha256_hex(prompt); }

ReplayClient::ReplayClient(std::map<std::string, std::string> entries, std::string label)
    : entries_(std::move(entries)), label_(std::move(label)) {}

ReplayClient ReplayClient::load(const std::string& path) {
  const std::string raw = text::read_file(path);
  std::map<std::string, std::string> entries;
  std::istringstream in(raw);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("prompt_hash") || !j.contains("text")) {
      throw DataError("bad_cassette", path + ":" + std::to_string(line_no) + ": expected {prompt_hash, text}");
    }
    entries[j["prompt_hash"].get<std::string>()] = j["text"].get<std::string>();
  }
  return ReplayClient(std::move(entries), sha256_hex(raw).substr(0, 16));
}

std::string ReplayClient::generate(const std::string& prompt, const SamplingParams&) {
  const auto it = entries_.find(prompt_hash(prompt));
  if (it == entries_.end()) {
    throw ClientError("cassette_miss", "no recorded response for prompt " + prompt_hash(prompt).substr(0, 16));
  }
  return it->second;
}

std::string ReplayClient::identity() const { return "replay:" + label_; }

std::string EchoClient::generate(const std::string& prompt, const SamplingParams&) { return prompt; }

std::string RecordingClient::generate(const std::string& prompt, const SamplingParams& sampling) {
  std::string out = inner_.generate(prompt, sampling);
  std::lock_guard lock(mu_);
  entries_.emplace(prompt_hash(prompt), out);
  return out;
}

std::string RecordingClient::cassette() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& [hash, text] : entries_) {
    nlohmann::ordered_json j;
    j["prompt_hash"] = hash;
    j["text"] = text;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

void RecordingClient::save(const std::string& path) const { text::write_file(path, cassette()); }

}  // namespace radvqa::qaforge
