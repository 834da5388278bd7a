#include "radvqa/evalkit/judge.hpp"

#include <algorithm>
#include <filesystem>
#include <future>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/evalkit/robust.hpp"

namespace radvqa::evalkit {

std::string_view to_string(Verdict v) { return v == Verdict::correct ? "correct" : "incorrect"; }

Verdict parse_verdict_name(std::string_view s) {
  const auto l = text::to_lower_ascii(text::trim(s));
  if (l == "correct") return Verdict::correct;
  if (l == "incorrect") return Verdict::incorrect;
  throw DataError("bad_enum", "unknown verdict '" + std::string(s) + "'");
}

nlohmann::ordered_json to_json(const JudgeVerdict& v) {
  nlohmann::ordered_json j;
  j["id"] = v.item_id;
  j["verdict"] = to_string(v.verdict);
  j["rationale"] = v.rationale;
  j["prompt_hash"] = v.prompt_hash;
  if (!v.reason.empty()) j["reason"] = v.reason;
  return j;
}

JudgeVerdict verdict_from_json(const nlohmann::json& j) {
  try {
    JudgeVerdict v;
    v.item_id = j.at("id").get<std::string>();
    v.verdict = parse_verdict_name(j.at("verdict").get<std::string>());
    v.rationale = j.value("rationale", "");
    v.prompt_hash = j.at("prompt_hash").get<std::string>();
    v.reason = j.value("reason", "");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_verdict", e.what());
  }
}

std::string serialize_verdicts(const std::vector<JudgeVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) out += to_json(v).dump() + "\n";
  return out;
}

std::optional<ParsedResponse> parse_judge_response(std::string_view response) {
  std::optional<Verdict> verdict;
  std::string rationale;
  std::istringstream in{std::string(response)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (!verdict && text::starts_with_ci(t, "verdict:")) {
      const auto value = text::to_lower_ascii(text::trim(std::string_view(t).substr(8)));
      // Accept trailing punctuation such as "correct." but nothing else.
      std::string word;
      for (char c : value) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
          word += c;
        } else {
          break;
        }
      }
      if (word == "correct") verdict = Verdict::correct;
      if (word == "incorrect") verdict = Verdict::incorrect;
    } else if (rationale.empty() && text::starts_with_ci(t, "rationale:")) {
      rationale = text::trim(std::string_view(t).substr(10));
    }
  }
  if (!verdict) return std::nullopt;
  return ParsedResponse{*verdict, rationale};
}

std::optional<JudgeVerdict> VerdictCache::get(const std::string& prompt_hash) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(prompt_hash);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void VerdictCache::put(const JudgeVerdict& v) {
  std::lock_guard lock(mu_);
  entries_[v.prompt_hash] = v;
}

std::size_t VerdictCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void VerdictCache::load(const std::string& path) {
  if (!std::filesystem::exists(path)) return;
  std::istringstream in(text::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    put(verdict_from_json(nlohmann::json::parse(line)));
  }
}

void VerdictCache::save(const std::string& path) const {
  std::vector<JudgeVerdict> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [h, v] : entries_) all.push_back(v);
  }
  text::write_file(path, serialize_verdicts(all));
}

void check_judge_template(const qaforge::PromptTemplate& tmpl) {
  const auto names = tmpl.placeholders();
  for (const char* need : {"question", "gold", "generated"}) {
    if (std::find(names.begin(), names.end(), need) == names.end()) {
      throw ConfigError("judge_template", std::string("judge template lacks {") + need + "}");
    }
  }
}

std::string render_judge_prompt(const qaforge::PromptTemplate& tmpl, const JudgeItem& item) {
  return tmpl.render({{"question", item.question}, {"gold", item.gold}, {"generated", item.generated}});
}

namespace {

std::string call_with_retries(qaforge::TextGenClient& client, const std::string& prompt,
                              const qaforge::SamplingParams& sampling, int max_retries) {
  for (int attempt = 0;; ++attempt) {
    try {
      return client.generate(prompt, sampling);
    } catch (const ClientError&) {
      if (attempt >= max_retries) throw;
    }
  }
}

JudgeVerdict judge_one(const JudgeItem& item, qaforge::TextGenClient& client, const qaforge::PromptTemplate& tmpl,
                       const JudgeOptions& options) {
  const auto prompt = render_judge_prompt(tmpl, item);
  const auto hash = qaforge::prompt_hash(prompt);
  if (options.cache) {
    if (auto hit = options.cache->get(hash)) {
      hit->item_id = item.item_id;
      return *hit;
    }
  }
  JudgeVerdict v;
  v.item_id = item.item_id;
  v.prompt_hash = hash;
  auto sampling = options.sampling;
  std::optional<ParsedResponse> parsed;
  for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
    sampling.seed = options.sampling.seed + static_cast<std::uint64_t>(attempt);
    parsed = parse_judge_response(call_with_retries(client, prompt, sampling, options.max_client_retries));
  }
  if (parsed) {
    v.verdict = parsed->verdict;
    v.rationale = parsed->rationale;
  } else {
    v.verdict = Verdict::incorrect;
    v.reason = "unparseable";
  }
  if (options.cache) options.cache->put(v);
  return v;
}

}  // namespace

std::vector<JudgeVerdict> judge_open(const std::vector<JudgeItem>& items, qaforge::TextGenClient& client,
                                     const qaforge::PromptTemplate& tmpl, const JudgeOptions& options) {
  check_judge_template(tmpl);
  std::vector<JudgeVerdict> out(items.size());
  const std::size_t width = std::max<std::size_t>(1, options.concurrency);
  for (std::size_t start = 0; start < items.size(); start += width) {
    const std::size_t end = std::min(items.size(), start + width);
    if (width == 1) {
      out[start] = judge_one(items[start], client, tmpl, options);
      continue;
    }
    std::vector<std::future<JudgeVerdict>> wave;
    for (std::size_t i = start; i < end; ++i) {
      wave.push_back(std::async(std::launch::async, [&, i] { return judge_one(items[i], client, tmpl, options); }));
    }
    for (std::size_t i = start; i < end; ++i) out[i] = wave[i - start].get();
  }
  return out;
}

std::string EchoJudgeClient::generate(const std::string& prompt, const qaforge::SamplingParams&) {
  const auto values = tmpl_.extract(prompt);
  if (!values) return "The prompt did not match the judge template.";
  const auto gold = normalize_answer(values->at("gold"));
  const auto generated = normalize_answer(values->at("generated"));
  if (!gold.empty() && gold == generated) {
    return "VERDICT: correct\nRATIONALE: answer matches the reference after normalization\n";
  }
  return "VERDICT: incorrect\nRATIONALE: answer differs from the reference\n";
}

}  // namespace radvqa::evalkit
