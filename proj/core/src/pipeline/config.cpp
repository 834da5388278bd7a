#include "radvqa/pipeline/config.hpp"

#include <cstdlib>
#include <set>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

namespace {

std::string interpolate_string(const std::string& s, const EnvLookup& env) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
      const auto close = s.find('}', i + 2);
      if (close == std::string::npos) throw ConfigError("bad_interpolation", "unterminated ${ in '" + s + "'");
      std::string body = s.substr(i + 2, close - i - 2);
      std::optional<std::string> fallback;
      if (const auto sep = body.find(":-"); sep != std::string::npos) {
        fallback = body.substr(sep + 2);
        body = body.substr(0, sep);
      }
      if (body.empty()) throw ConfigError("bad_interpolation", "empty variable name in '" + s + "'");
      auto value = env(body);
      if (!value || (value->empty() && fallback)) value = fallback;
      if (!value) throw ConfigError("unset_env", "environment variable " + body + " is not set");
      out += *value;
      i = close + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

// Reads an object while recording which keys were consumed, so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("bad_type", path_ + " must be an object");
  }
  ~Reader() = default;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad_type", "bad value for " + child(key));
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, v] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown_key", "unknown config key '" + child(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

SourceConfig parse_source(const json& j, const std::string& path, const fs::path& base, corpus::Adapter fallback) {
  Reader r(j, path);
  SourceConfig s;
  s.adapter = fallback;
  r.get("path", s.path);
  if (s.path.empty()) throw ConfigError("missing_field", path + ".path is required");
  s.path = resolve(base, s.path);
  if (r.has("adapter")) {
    try {
      s.adapter = corpus::parse_adapter(r.raw("adapter").get<std::string>());
    } catch (const Error& e) {
      throw ConfigError("bad_enum", r.child("adapter") + ": " + e.what());
    }
  }
  r.finish();
  return s;
}

ClientConfig parse_client(const json& j, const std::string& path, const fs::path& base, ClientConfig c) {
  Reader r(j, path);
  r.get("kind", c.kind);
  r.get("cassette", c.cassette);
  r.get("url", c.url);
  r.get("api_key_env", c.api_key_env);
  r.get("timeout_seconds", c.timeout_seconds);
  r.finish();
  if (c.kind != "replay" && c.kind != "echo" && c.kind != "http") {
    throw ConfigError("bad_enum", path + ".kind must be replay, echo or http");
  }
  if (c.kind == "replay" && c.cassette.empty()) throw ConfigError("missing_field", path + ".cassette is required");
  if (c.kind == "http" && c.url.empty()) throw ConfigError("missing_field", path + ".url is required");
  c.cassette = resolve(base, c.cassette);
  return c;
}

template <typename Fn>
auto wrap(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(e.code(), path + ": " + e.what());
  }
}

}  // namespace

json interpolate_env(const json& j, const EnvLookup& env) {
  if (j.is_string()) return interpolate_string(j.get<std::string>(), env);
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_env(v, env);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(interpolate_env(v, env));
    return out;
  }
  return j;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("bad_override", "override must look like key.path=value: '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad_override", "empty key segment in '" + key + "'");
    if (!node->is_object()) throw ConfigError("bad_override", "'" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_config(const json& raw_doc, const fs::path& base_dir, const EnvLookup& env) {
  const json doc = interpolate_env(raw_doc, env);
  RunConfig c;
  c.resolved = nlohmann::ordered_json::parse(doc.dump());
  c.hash = sha256_hex(doc.dump());  // nlohmann::json keeps keys sorted

  Reader top(doc, "");
  if (!top.has("run")) throw ConfigError("missing_field", "run section is required");
  {
    Reader r(top.raw("run"), "run");
    r.get("name", c.name);
    std::string out;
    r.get("output_dir", out);
    if (out.empty()) throw ConfigError("missing_field", "run.output_dir is required");
    c.output_dir = resolve(base_dir, out);
    r.get("seed", c.seed);
    r.finish();
  }

  if (!top.has("data")) throw ConfigError("missing_field", "data section is required");
  {
    Reader r(top.raw("data"), "data");
    if (!r.has("qa")) throw ConfigError("missing_field", "data.qa is required");
    c.qa = parse_source(r.raw("qa"), "data.qa", base_dir, corpus::Adapter::qa_pairs);
    if (!r.has("captions")) throw ConfigError("missing_field", "data.captions is required");
    c.captions = parse_source(r.raw("captions"), "data.captions", base_dir, corpus::Adapter::caption_pairs);
    if (r.has("enrichment")) {
      c.enrichment = parse_source(r.raw("enrichment"), "data.enrichment", base_dir, corpus::Adapter::qa_pairs);
    }
    if (r.has("split")) {
      Reader s(r.raw("split"), "data.split");
      s.get("train", c.split.train);
      s.get("val", c.split.val);
      s.get("test", c.split.test);
      s.get("seed", c.split_seed);
      s.finish();
    }
    r.get("train_dataset", c.train_dataset);
    r.finish();
    if (c.train_dataset != "qa" && c.train_dataset != "annealed") {
      throw ConfigError("bad_enum", "data.train_dataset must be qa or annealed");
    }
  }

  if (top.has("qagen")) {
    Reader r(top.raw("qagen"), "qagen");
    auto& q = c.qagen;
    r.get("enabled", q.enabled);
    if (r.has("captions")) {
      q.captions = parse_source(r.raw("captions"), "qagen.captions", base_dir, corpus::Adapter::caption_pairs);
    }
    if (r.has("mode")) {
      q.mode = wrap("qagen.mode", [&] { return qaforge::parse_template_mode(r.raw("mode").get<std::string>()); });
    }
    r.get("template", q.template_path);
    q.template_path = resolve(base_dir, q.template_path);
    if (r.has("client")) q.client = parse_client(r.raw("client"), "qagen.client", base_dir, q.client);
    if (r.has("filter")) {
      q.options.rules = wrap("qagen.filter", [&] { return qaforge::FilterRules::from_json(r.raw("filter")); });
    }
    if (r.has("sampling")) {
      Reader s(r.raw("sampling"), "qagen.sampling");
      s.get("temperature", q.options.sampling.temperature);
      s.get("max_tokens", q.options.sampling.max_tokens);
      s.get("seed", q.options.sampling.seed);
      s.finish();
    }
    r.get("open_per_caption", q.options.open_per_caption);
    r.get("closed_per_caption", q.options.closed_per_caption);
    r.get("concurrency", q.options.concurrency);
    r.get("max_retries", q.options.max_retries);
    r.finish();
    if (q.enabled) {
      if (q.captions.path.empty()) throw ConfigError("missing_field", "qagen.captions is required");
      if (q.template_path.empty()) throw ConfigError("missing_field", "qagen.template is required");
      if (q.mode == qaforge::TemplateMode::judge) throw ConfigError("bad_enum", "qagen.mode cannot be judge");
    }
  } else {
    c.qagen.enabled = false;
  }

  if (top.has("mix")) {
    Reader r(top.raw("mix"), "mix");
    r.get("taxonomy", c.mix.taxonomy);
    c.mix.taxonomy = resolve(base_dir, c.mix.taxonomy);
    r.get("enrichment_fraction", c.mix.enrichment_fraction);
    r.get("top_k_pathologies", c.mix.top_k_pathologies);
    r.get("seed", c.mix.seed);
    r.get("include_synthetic", c.mix.include_synthetic);
    r.finish();
  }
  if ((c.train_dataset == "annealed") && (c.mix.taxonomy.empty() || !c.enrichment)) {
    throw ConfigError("missing_field", "an annealed train dataset needs data.enrichment and mix.taxonomy");
  }

  if (top.has("stats")) {
    Reader r(top.raw("stats"), "stats");
    r.get("top_k", c.stats_top_k);
    r.finish();
  }

  if (top.has("model")) c.model = wrap("model", [&] { return toyvlm::vlm_config_from_json(top.raw("model")); });
  c.model.validate();
  auto hyper = [&](const char* key, toyvlm::TrainHyper& h) {
    h.seed = c.seed;
    if (top.has(key)) h = toyvlm::train_hyper_from_json(top.raw(key), h, key);
  };
  hyper("pretrain", c.pretrain);
  hyper("stage1", c.stage1);
  hyper("stage2", c.stage2);
  if (top.has("lora")) c.lora = wrap("lora", [&] { return toyvlm::lora_spec_from_json(top.raw("lora")); });

  if (top.has("evaluate")) {
    Reader r(top.raw("evaluate"), "evaluate");
    auto& e = c.evaluate;
    r.get("dataset", e.dataset);
    r.get("runs", e.runs);
    r.get("temperature", e.temperature);
    r.get("max_new_tokens", e.max_new_tokens);
    r.get("judge_template", e.judge_template);
    e.judge_template = resolve(base_dir, e.judge_template);
    if (r.has("judge_client")) e.judge_client = parse_client(r.raw("judge_client"), "evaluate.judge_client", base_dir, e.judge_client);
    r.get("judge_concurrency", e.judge_concurrency);
    r.finish();
    if (e.runs < 1) throw ConfigError("bad_value", "evaluate.runs must be at least 1");
    if (e.max_new_tokens < 1) throw ConfigError("bad_value", "evaluate.max_new_tokens must be at least 1");
  }
  if (c.evaluate.judge_template.empty()) throw ConfigError("missing_field", "evaluate.judge_template is required");

  if (top.has("ablate")) {
    Reader r(top.raw("ablate"), "ablate");
    r.get("datasets", c.ablate.datasets);
    r.finish();
  }

  if (top.has("scaling")) {
    Reader r(top.raw("scaling"), "scaling");
    r.get("points", c.scaling.points);
    c.scaling.points = resolve(base_dir, c.scaling.points);
    if (r.has("sweep")) {
      Reader s(r.raw("sweep"), "scaling.sweep");
      s.get("ranks", c.scaling.sweep.ranks);
      s.get("fractions", c.scaling.sweep.fractions);
      s.get("epochs", c.scaling.sweep.epochs);
      s.finish();
    }
    r.finish();
  }

  if (top.has("saliency")) {
    Reader r(top.raw("saliency"), "saliency");
    auto& s = c.saliency;
    r.get("record", s.record);
    r.get("token_index", s.token_index);
    if (r.has("methods")) {
      s.methods.clear();
      for (const auto& m : r.raw("methods")) {
        s.methods.push_back(wrap("saliency.methods", [&] { return saliency::parse_method(m.get<std::string>()); }));
      }
    }
    if (r.has("head_fusion")) {
      s.head_fusion =
          wrap("saliency.head_fusion", [&] { return saliency::parse_head_fusion(r.raw("head_fusion").get<std::string>()); });
    }
    r.get("max_new_tokens", s.max_new_tokens);
    r.finish();
  }

  top.finish();
  return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides, const EnvLookup& env) {
  json doc = json::parse(text::read_file(path), nullptr, false);
  if (doc.is_discarded()) throw ConfigError("bad_json", path + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  const fs::path base = fs::absolute(fs::path(path)).parent_path();
  return parse_config(doc, base, env);
}

}  // namespace radvqa::pipeline
