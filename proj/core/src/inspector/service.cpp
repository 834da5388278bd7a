#include "radvqa/inspector/service.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/image.hpp"
#include "radvqa/common/text.hpp"
#include "radvqa/evalkit/report.hpp"
#include "radvqa/saliency/saliency.hpp"
#include "radvqa/toyvlm/train.hpp"

namespace radvqa::inspector {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

struct InspectorService::Case {
  std::string id;
  std::string question;
  std::optional<corpus::Organ> organ;
  std::string created_at;
  std::string payload_sha256;
  int image_width = 0;
  int image_height = 0;
  toyvlm::Matrix patches;
  // Latest inference.
  std::optional<ordered_json> inference;
  std::optional<toyvlm::AttentionStack> lm_stack;
};

struct InspectorService::Impl {
  httplib::Server server;
  std::thread thread;
};

namespace {

Response error(int status, const std::string& code, const std::string& message, ordered_json extra = {}) {
  ordered_json e;
  e["code"] = code;
  e["message"] = message;
  if (extra.is_object()) {
    for (auto& [k, v] : extra.items()) e[k] = v;
  }
  return {status, ordered_json{{"error", e}}};
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string base64_decode(const std::string& in) {
  std::string clean;
  for (char ch : in) {
    if (!std::isspace(static_cast<unsigned char>(ch))) clean += ch;
  }
  if (clean.size() % 4 != 0) throw DataError("bad_base64", "base64 length is not a multiple of 4");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw DataError("bad_base64", "invalid base64 payload");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

ordered_json matrix_rows(const toyvlm::Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

toyvlm::Matrix matrix_from_rows(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw DataError("bad_features", "features must be a 2-D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  toyvlm::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw DataError("bad_features", "feature rows must all have the same length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw DataError("bad_features", "features must be numbers");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

std::optional<std::size_t> parse_index(const std::map<std::string, std::string>& q, const std::string& key) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty() || it->second == "all") return std::nullopt;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(it->second, &pos);
  } catch (const std::exception&) {
    throw ConfigError("bad_query", key + " must be a non-negative integer");
  }
  if (pos != it->second.size() || it->second[0] == '-') throw ConfigError("bad_query", key + " must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

ordered_json obj(std::initializer_list<std::pair<const char*, ordered_json>> fields) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : fields) j[k] = v;
  return j;
}

ordered_json type(const char* t) { return obj({{"type", t}}); }

ordered_json strs(std::initializer_list<const char*> items) {
  ordered_json a = ordered_json::array();
  for (const char* s : items) a.push_back(s);
  return a;
}

}  // namespace

ordered_json schema_document() {
  const ordered_json error_schema =
      obj({{"type", "object"},
           {"required", strs({"error"})},
           {"properties",
            obj({{"error", obj({{"type", "object"},
                                {"required", strs({"code", "message"})},
                                {"properties", obj({{"code", type("string")}, {"message", type("string")}})}})}})}});
  const ordered_json organ_enum = obj({{"enum", strs({"chest", "gastrointestinal", "musculoskeletal", "brain_neuro", "other"})}});
  const ordered_json case_schema =
      obj({{"type", "object"},
           {"required", strs({"id", "question", "created_at", "payload_sha256", "patch_count", "image_width", "image_height",
                         "has_inference"})},
           {"properties", obj({{"id", type("string")},
                               {"question", type("string")},
                               {"organ", obj({{"type", strs({"string", "null"})}})},
                               {"created_at", type("string")},
                               {"payload_sha256", type("string")},
                               {"patch_count", obj({{"type", "integer"}, {"minimum", 1}})},
                               {"image_width", type("integer")},
                               {"image_height", type("integer")},
                               {"has_inference", type("boolean")}})}});
  const ordered_json token_schema =
      obj({{"type", "object"},
           {"required", strs({"index", "id", "text", "position", "span"})},
           {"properties", obj({{"index", type("integer")},
                               {"id", type("integer")},
                               {"text", type("string")},
                               {"position", type("integer")},
                               {"span", obj({{"type", "array"}, {"items", type("integer")}, {"minItems", 2}, {"maxItems", 2}})}})}});
  const ordered_json inference_schema =
      obj({{"type", "object"},
           {"required", strs({"case_id", "answer", "tokens", "response_length", "attention_dump_id", "dump_sha256",
                         "checkpoint_hash", "sampling", "stopped_on_eos"})},
           {"properties", obj({{"case_id", type("string")},
                               {"answer", type("string")},
                               {"tokens", obj({{"type", "array"}, {"items", token_schema}})},
                               {"response_length", type("integer")},
                               {"attention_dump_id", type("string")},
                               {"dump_sha256", type("string")},
                               {"checkpoint_hash", type("string")},
                               {"sampling", type("object")},
                               {"stopped_on_eos", type("boolean")}})}});
  const ordered_json map_schema =
      obj({{"type", "object"},
           {"required", strs({"direction", "method", "scores", "argmax", "positions", "flags", "provenance"})},
           {"properties", obj({{"direction", obj({{"enum", strs({"token_to_image", "patch_to_tokens"})}})},
                               {"method", obj({{"enum", strs({"raw", "rollout"})}})},
                               {"scores", obj({{"type", "array"}, {"items", obj({{"type", "number"}, {"minimum", 0}})}})},
                               {"argmax", type("integer")},
                               {"positions", obj({{"type", "array"}, {"items", type("integer")}})},
                               {"flags", obj({{"type", "array"}, {"items", type("string")}})},
                               {"provenance", type("object")}})}});
  const ordered_json saliency_schema =
      obj({{"type", "object"},
           {"required", strs({"case_id", "attention_dump_id", "checkpoint_hash", "map"})},
           {"properties", obj({{"case_id", type("string")},
                               {"attention_dump_id", type("string")},
                               {"checkpoint_hash", type("string")},
                               {"map", map_schema},
                               {"grid", type("object")},
                               {"tokens", obj({{"type", "array"}, {"items", type("string")}})}})}});
  const ordered_json verdict_schema =
      obj({{"type", "object"},
           {"required", strs({"seq", "case_id", "verdict", "organ", "note", "timestamp"})},
           {"properties", obj({{"seq", type("integer")},
                               {"case_id", type("string")},
                               {"verdict", obj({{"enum", strs({"correct", "incorrect", "abstain"})}})},
                               {"organ", organ_enum},
                               {"note", type("string")},
                               {"timestamp", type("string")}})}});
  const ordered_json report_schema =
      obj({{"type", "object"},
           {"required", strs({"rows", "total_verdicts", "markdown", "log_entries"})},
           {"properties",
            obj({{"rows", obj({{"type", "array"},
                               {"items", obj({{"type", "object"},
                                              {"required", strs({"organ", "label", "correct", "incorrect", "abstain",
                                                            "total", "cell"})}})}})},
                 {"total_verdicts", type("integer")},
                 {"markdown", type("string")},
                 {"log_entries", type("integer")}})}});
  const ordered_json dump_schema = obj(
      {{"type", "object"},
       {"required", strs({"component", "n_layers", "n_heads", "seq_len", "image_token_count", "sep_index",
                          "generated_start", "token_ids", "weights"})},
       {"properties",
        obj({{"component", obj({{"enum", strs({"vision", "lm"})}})},
             {"n_layers", type("integer")},
             {"n_heads", type("integer")},
             {"seq_len", type("integer")},
             {"image_token_count", type("integer")},
             {"sep_index", type("integer")},
             {"generated_start", type("integer")},
             {"token_ids", obj({{"type", "array"}, {"items", type("integer")}})},
             {"weights", obj({{"type", "array"},
                              {"items", obj({{"type", "array"},
                                             {"items", obj({{"type", "array"},
                                                            {"items", obj({{"type", "array"}, {"items", type("number")}})}})}})}})}})}});
  const ordered_json case_request =
      obj({{"type", "object"},
           {"required", strs({"question"})},
           {"properties", obj({{"question", obj({{"type", "string"}, {"minLength", 1}})},
                               {"organ", organ_enum},
                               {"image_pgm_base64", type("string")},
                               {"image_path", type("string")},
                               {"features", obj({{"type", "array"}, {"items", obj({{"type", "array"}, {"items", type("number")}})}})}})}});
  const ordered_json infer_request =
      obj({{"type", "object"},
           {"properties", obj({{"temperature", obj({{"type", "number"}, {"minimum", 0}})},
                               {"seed", obj({{"type", "integer"}, {"minimum", 0}})},
                               {"max_new_tokens", obj({{"type", "integer"}, {"minimum", 1}})}})}});
  const ordered_json verdict_request =
      obj({{"type", "object"},
           {"required", strs({"verdict"})},
           {"properties", obj({{"verdict", obj({{"enum", strs({"correct", "incorrect", "abstain"})}})},
                               {"organ", organ_enum},
                               {"note", type("string")}})}});

  ordered_json endpoints = ordered_json::array();
  auto ep = [&](const char* method, const char* path, const char* request, const char* response) {
    endpoints.push_back(obj({{"method", method},
                             {"path", path},
                             {"request", request ? ordered_json(request) : ordered_json(nullptr)},
                             {"response", response}}));
  };
  ep("POST", "/cases", "case_request", "case");
  ep("GET", "/cases/{id}", nullptr, "case");
  ep("POST", "/cases/{id}/infer", "infer_request", "inference");
  ep("GET", "/cases/{id}/dumps/{dump_id}", nullptr, "attention_dump");
  ep("GET", "/cases/{id}/saliency", nullptr, "saliency");
  ep("POST", "/cases/{id}/verdict", "verdict_request", "verdict_entry");
  ep("GET", "/reports/organs", nullptr, "organ_report");
  ep("GET", "/schema", nullptr, "schema");

  ordered_json out;
  out["version"] = kSchemaVersion;
  out["endpoints"] = std::move(endpoints);
  out["schemas"] = obj({{"case_request", case_request},
                        {"case", case_schema},
                        {"infer_request", infer_request},
                        {"inference", inference_schema},
                        {"attention_dump", dump_schema},
                        {"saliency", saliency_schema},
                        {"verdict_request", verdict_request},
                        {"verdict_entry", verdict_schema},
                        {"organ_report", report_schema},
                        {"error", error_schema}});
  return out;
}

InspectorService::InspectorService(ServiceOptions options) : options_(std::move(options)) {
  if (!options_.checkpoint.empty()) model_ = toyvlm::load_checkpoint(options_.checkpoint);
  fs::create_directories(options_.data_dir / "cases");
  for (const auto& e : fs::directory_iterator(options_.data_dir / "cases")) {
    const fs::path file = e.path() / "case.json";
    if (!fs::exists(file)) continue;
    const json j = json::parse(text::read_file(file.string()));
    auto c = std::make_shared<Case>();
    c->id = j.at("id").get<std::string>();
    c->question = j.at("question").get<std::string>();
    if (!j.at("organ").is_null()) c->organ = corpus::parse_organ(j.at("organ").get<std::string>());
    c->created_at = j.at("created_at").get<std::string>();
    c->payload_sha256 = j.at("payload_sha256").get<std::string>();
    c->image_width = j.at("image_width").get<int>();
    c->image_height = j.at("image_height").get<int>();
    c->patches = matrix_from_rows(j.at("patches"));
    const fs::path inf = e.path() / "inference.json";
    if (fs::exists(inf)) {
      c->inference = ordered_json::parse(text::read_file(inf.string()));
      const auto dump_id = (*c->inference)["attention_dump_id"].get<std::string>();
      c->lm_stack = toyvlm::attention_from_json(
          json::parse(text::read_file((e.path() / "dumps" / (dump_id + ".json")).string())));
    }
    cases_[c->id] = std::move(c);
  }
}

InspectorService::~InspectorService() { stop(); }

std::shared_ptr<InspectorService::Case> InspectorService::find_case(const std::string& id) {
  std::lock_guard lock(cases_mu_);
  const auto it = cases_.find(id);
  return it == cases_.end() ? nullptr : it->second;
}

std::mutex& InspectorService::case_mutex(const std::string& id) {
  std::lock_guard lock(cases_mu_);
  auto& m = case_locks_[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

Response InspectorService::handle(const Request& req) {
  try {
    if (req.body.size() > options_.max_body_bytes) {
      return error(413, "payload_too_large",
                   "request body exceeds " + std::to_string(options_.max_body_bytes) + " bytes");
    }
    std::vector<std::string> parts;
    {
      std::string piece;
      std::istringstream in(req.path);
      while (std::getline(in, piece, '/')) {
        if (!piece.empty()) parts.push_back(piece);
      }
    }
    const auto& m = req.method;
    if (parts.size() == 1 && parts[0] == "schema" && m == "GET") return {200, schema_document()};
    if (parts.size() == 2 && parts[0] == "reports" && parts[1] == "organs" && m == "GET") {
      return organ_report_response();
    }
    if (!parts.empty() && parts[0] == "cases") {
      if (parts.size() == 1 && m == "POST") return create_case(req);
      if (parts.size() == 2 && m == "GET") return get_case(parts[1]);
      if (parts.size() == 3 && parts[2] == "infer" && m == "POST") return infer(parts[1], req);
      if (parts.size() == 3 && parts[2] == "saliency" && m == "GET") return get_saliency(parts[1], req);
      if (parts.size() == 3 && parts[2] == "verdict" && m == "POST") return post_verdict(parts[1], req);
      if (parts.size() == 4 && parts[2] == "dumps" && m == "GET") return get_dump(parts[1], parts[3]);
    }
    return error(404, "not_found", "no route for " + m + " " + req.path);
  } catch (const ConfigError& e) {
    if (e.code() == "index_out_of_range") return error(422, e.code(), e.what());
    return error(400, e.code(), e.what());
  } catch (const ShapeError& e) {
    return error(400, e.code(), e.what());
  } catch (const DataError& e) {
    return error(400, e.code(), e.what());
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

Response InspectorService::create_case(const Request& req) {
  const json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) return error(400, "bad_json", "body must be a JSON object");
  static const std::set<std::string> kKnown{"question", "organ", "image_pgm_base64", "image_path", "features"};
  for (const auto& [k, v] : body.items()) {
    if (!kKnown.count(k)) return error(400, "unknown_key", "unknown field '" + k + "'");
  }
  if (!body.contains("question") || !body["question"].is_string() || body["question"].get<std::string>().empty()) {
    return error(400, "missing_field", "question must be a non-empty string");
  }
  const int sources = static_cast<int>(body.contains("image_pgm_base64")) +
                      static_cast<int>(body.contains("image_path")) + static_cast<int>(body.contains("features"));
  if (sources != 1) {
    return error(400, "bad_payload", "exactly one of image_pgm_base64, image_path or features is required");
  }

  const toyvlm::VlmConfig cfg = model_ ? model_->model.config() : toyvlm::VlmConfig{};
  auto c = std::make_shared<Case>();
  c->question = body["question"].get<std::string>();
  if (body.contains("organ")) c->organ = corpus::parse_organ(body["organ"].get<std::string>());
  if (body.contains("features")) {
    c->patches = matrix_from_rows(body["features"]);
    if (c->patches.rows() != cfg.patch_count() || c->patches.cols() != cfg.patch_dim()) {
      return error(400, "patch_count_mismatch", "feature matrix does not match the checkpoint's patch grid",
                   obj({{"expected", obj({{"patches", cfg.patch_count()}, {"patch_dim", cfg.patch_dim()}})},
                        {"actual", obj({{"patches", c->patches.rows()}, {"patch_dim", c->patches.cols()}})}}));
    }
    c->image_width = cfg.image_width();
    c->image_height = cfg.image_height();
  } else {
    const GrayImage img = body.contains("image_path")
                              ? read_pgm(body["image_path"].get<std::string>())
                              : parse_pgm(base64_decode(body["image_pgm_base64"].get<std::string>()));
    c->image_width = img.width;
    c->image_height = img.height;
    if (model_) {
      c->patches = model_->model.patches_from_image(img);
    } else {
      c->patches = toyvlm::ToyVlm(cfg, toyvlm::Tokenizer(cfg.vocab_size), 0).patches_from_image(img);
    }
  }

  ordered_json canonical;
  canonical["question"] = c->question;
  canonical["organ"] = c->organ ? ordered_json(corpus::to_string(*c->organ)) : ordered_json(nullptr);
  canonical["patches"] = toyvlm::tensor_hash(c->patches);
  c->payload_sha256 = sha256_hex(canonical.dump());
  c->id = "c" + c->payload_sha256.substr(0, 15);

  bool existing = false;
  {
    std::lock_guard lock(cases_mu_);
    existing = cases_.count(c->id) > 0;
    if (!existing) store_case(c);
  }
  Response r = get_case(c->id);
  r.status = existing ? 200 : 201;
  return r;
}

void InspectorService::store_case(const std::shared_ptr<Case>& c) {
  c->created_at = now_utc();
  ordered_json stored;
  stored["id"] = c->id;
  stored["question"] = c->question;
  stored["organ"] = c->organ ? ordered_json(corpus::to_string(*c->organ)) : ordered_json(nullptr);
  stored["created_at"] = c->created_at;
  stored["payload_sha256"] = c->payload_sha256;
  stored["image_width"] = c->image_width;
  stored["image_height"] = c->image_height;
  stored["patches"] = matrix_rows(c->patches);
  text::write_file((options_.data_dir / "cases" / c->id / "case.json").string(), stored.dump() + "\n");
  cases_[c->id] = c;
}

Response InspectorService::get_case(const std::string& id) {
  const auto c = find_case(id);
  if (!c) return error(404, "unknown_case", "no case " + id);
  ordered_json j;
  j["id"] = c->id;
  j["question"] = c->question;
  j["organ"] = c->organ ? ordered_json(corpus::to_string(*c->organ)) : ordered_json(nullptr);
  j["created_at"] = c->created_at;
  j["payload_sha256"] = c->payload_sha256;
  j["patch_count"] = c->patches.rows();
  j["image_width"] = c->image_width;
  j["image_height"] = c->image_height;
  std::lock_guard lock(case_mutex(id));
  j["has_inference"] = c->inference.has_value();
  if (c->inference) j["inference"] = *c->inference;
  return {200, j};
}

Response InspectorService::infer(const std::string& id, const Request& req) {
  const auto c = find_case(id);
  if (!c) return error(404, "unknown_case", "no case " + id);
  if (!model_) return error(409, "no_checkpoint", "the service was started without a checkpoint");
  json body = req.body.empty() ? json::object() : json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) return error(400, "bad_json", "body must be a JSON object");
  toyvlm::GenerateOptions g;
  g.max_new_tokens = options_.default_max_new_tokens;
  try {
    for (const auto& [k, v] : body.items()) {
      if (k == "temperature") {
        g.temperature = v.get<double>();
      } else if (k == "seed") {
        g.seed = v.get<std::uint64_t>();
      } else if (k == "max_new_tokens") {
        g.max_new_tokens = v.get<int>();
      } else {
        return error(400, "unknown_key", "unknown sampling field '" + k + "'");
      }
    }
  } catch (const json::exception&) {
    return error(400, "bad_type", "sampling fields must be numbers");
  }
  if (g.temperature < 0.0) return error(400, "bad_value", "temperature must be non-negative");

  std::lock_guard lock(case_mutex(id));
  const auto& model = model_->model;
  corpus::QARecord rec;
  rec.kind = corpus::RecordKind::open;
  rec.question = c->question;
  const auto gen = model.generate(c->patches, toyvlm::prompt_for(rec), g);

  const std::string dump = toyvlm::to_json(gen.lm_stack).dump();
  const std::string dump_sha = sha256_hex(dump);
  const std::string dump_id = dump_sha.substr(0, 16);
  const fs::path case_dir = options_.data_dir / "cases" / id;
  text::write_file((case_dir / "dumps" / (dump_id + ".json")).string(), dump + "\n");

  ordered_json tokens = ordered_json::array();
  std::vector<int> prefix;
  std::size_t prev = 0;
  for (std::size_t k = 0; k < gen.tokens.size(); ++k) {
    prefix.push_back(gen.tokens[k]);
    const std::size_t end = model.tokenizer().decode(prefix).size();
    tokens.push_back(obj({{"index", k},
                          {"id", gen.tokens[k]},
                          {"text", model.tokenizer().token_text(gen.tokens[k])},
                          {"position", gen.lm_stack.generated_start + k},
                          {"span", {prev, end}}}));
    prev = end;
  }
  ordered_json j;
  j["case_id"] = id;
  j["answer"] = gen.text;
  j["tokens"] = std::move(tokens);
  j["response_length"] = gen.tokens.size();
  j["attention_dump_id"] = dump_id;
  j["dump_sha256"] = dump_sha;
  j["checkpoint_hash"] = model_->content_hash;
  j["sampling"] = obj({{"temperature", g.temperature}, {"seed", g.seed}, {"max_new_tokens", g.max_new_tokens}});
  j["stopped_on_eos"] = gen.stopped_on_eos;
  text::write_file((case_dir / "inference.json").string(), j.dump() + "\n");
  c->inference = j;
  c->lm_stack = gen.lm_stack;
  return {200, j};
}

Response InspectorService::get_dump(const std::string& id, const std::string& dump_id) {
  if (!find_case(id)) return error(404, "unknown_case", "no case " + id);
  for (char ch : dump_id) {
    if (!std::isxdigit(static_cast<unsigned char>(ch))) return error(404, "unknown_dump", "no dump " + dump_id);
  }
  const fs::path p = options_.data_dir / "cases" / id / "dumps" / (dump_id + ".json");
  if (!fs::exists(p)) return error(404, "unknown_dump", "no dump " + dump_id);
  return {200, ordered_json::parse(text::read_file(p.string()))};
}

Response InspectorService::get_saliency(const std::string& id, const Request& req) {
  const auto c = find_case(id);
  if (!c) return error(404, "unknown_case", "no case " + id);
  std::optional<toyvlm::AttentionStack> stack;
  std::string dump_id;
  {
    std::lock_guard lock(case_mutex(id));
    if (!c->lm_stack) return error(409, "no_inference", "run inference on case " + id + " first");
    stack = c->lm_stack;
    dump_id = (*c->inference)["attention_dump_id"].get<std::string>();
  }
  if (const auto it = req.query.find("dump"); it != req.query.end() && it->second != dump_id) {
    const Response d = get_dump(id, it->second);
    if (d.status != 200) return d;
    stack = toyvlm::attention_from_json(json::parse(d.body.dump()));
    dump_id = it->second;
  }
  static const std::set<std::string> kKnown{"direction", "index", "method", "layer", "head", "head_fusion", "dump"};
  for (const auto& [k, v] : req.query) {
    if (!kKnown.count(k)) return error(400, "unknown_key", "unknown query parameter '" + k + "'");
  }
  saliency::SaliencyQuery q;
  auto get = [&](const char* key, const char* fallback) {
    const auto it = req.query.find(key);
    return it == req.query.end() ? std::string(fallback) : it->second;
  };
  q.direction = saliency::parse_direction(get("direction", "token_to_image"));
  q.method = saliency::parse_method(get("method", "raw"));
  q.head_fusion = saliency::parse_head_fusion(get("head_fusion", "mean"));
  q.index = parse_index(req.query, "index").value_or(0);
  q.layer = parse_index(req.query, "layer");
  q.head = parse_index(req.query, "head");
  const auto map = saliency::compute(*stack, q);

  ordered_json j;
  j["case_id"] = id;
  j["attention_dump_id"] = dump_id;
  j["checkpoint_hash"] = model_ ? model_->content_hash : "";
  j["map"] = saliency::to_json(map);
  if (q.direction == saliency::Direction::token_to_image) {
    const auto& cfg = model_ ? model_->model.config() : toyvlm::VlmConfig{};
    j["grid"] = saliency::to_json(saliency::render_grid(map, static_cast<std::size_t>(cfg.grid_rows),
                                                        static_cast<std::size_t>(cfg.grid_cols), c->image_width,
                                                        c->image_height));
  } else if (model_) {
    ordered_json toks = ordered_json::array();
    for (const auto pos : map.positions) toks.push_back(model_->model.tokenizer().token_text(stack->token_ids[pos]));
    j["tokens"] = std::move(toks);
  }
  return {200, j};
}

Response InspectorService::post_verdict(const std::string& id, const Request& req) {
  const auto c = find_case(id);
  if (!c) return error(404, "unknown_case", "no case " + id);
  const json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) return error(400, "bad_json", "body must be a JSON object");
  for (const auto& [k, v] : body.items()) {
    if (k != "verdict" && k != "organ" && k != "note") return error(400, "unknown_key", "unknown field '" + k + "'");
  }
  if (!body.contains("verdict") || !body["verdict"].is_string()) {
    return error(400, "missing_field", "verdict must be one of correct, incorrect, abstain");
  }
  evalkit::Outcome outcome;
  try {
    outcome = evalkit::parse_outcome(body["verdict"].get<std::string>());
  } catch (const Error& e) {
    return error(400, "bad_enum", e.what());
  }
  std::optional<corpus::Organ> organ = c->organ;
  if (body.contains("organ")) {
    if (!body["organ"].is_string()) return error(400, "bad_type", "organ must be a string");
    try {
      organ = corpus::parse_organ(body["organ"].get<std::string>());
    } catch (const Error& e) {
      return error(400, "bad_enum", e.what());
    }
  }
  if (!organ) return error(400, "missing_field", "case " + id + " has no organ tag; supply one");
  if (body.contains("note") && !body["note"].is_string()) return error(400, "bad_type", "note must be a string");

  std::lock_guard lock(log_mu_);
  const fs::path log = options_.data_dir / "verdicts.jsonl";
  std::size_t seq = 0;
  if (fs::exists(log)) {
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) seq += line.empty() ? 0 : 1;
  }
  ordered_json e;
  e["seq"] = seq;
  e["case_id"] = id;
  e["verdict"] = evalkit::to_string(outcome);
  e["organ"] = corpus::to_string(*organ);
  e["note"] = body.value("note", "");
  e["timestamp"] = now_utc();
  std::ofstream out(log, std::ios::app | std::ios::binary);
  out << e.dump() << "\n";
  out.flush();
  if (!out) throw DataError("write_failed", "cannot append to " + log.string());
  return {201, e};
}

Response InspectorService::organ_report_response() {
  std::map<std::string, evalkit::OrganVerdict> latest;
  std::size_t entries = 0;
  {
    std::lock_guard lock(log_mu_);
    const fs::path log = options_.data_dir / "verdicts.jsonl";
    if (fs::exists(log)) {
      std::ifstream in(log);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json e = json::parse(line);
        ++entries;
        // A later verdict on the same case supersedes the earlier one.
        latest[e.at("case_id").get<std::string>()] = {e.at("case_id").get<std::string>(),
                                                      evalkit::parse_outcome(e.at("verdict").get<std::string>()),
                                                      corpus::parse_organ(e.at("organ").get<std::string>())};
      }
    }
  }
  std::vector<evalkit::OrganVerdict> verdicts;
  for (auto& [id, v] : latest) verdicts.push_back(v);
  auto j = evalkit::organ_report(verdicts).to_json();
  j["log_entries"] = entries;
  return {200, j};
}

namespace {

void install_routes(httplib::Server& srv, InspectorService& service, std::size_t max_body) {
  srv.set_payload_max_length(max_body);
  auto bridge = [&service](const httplib::Request& hreq, httplib::Response& hres) {
    Request r;
    r.method = hreq.method;
    r.path = hreq.path;
    for (const auto& [k, v] : hreq.params) r.query[k] = v;
    r.body = hreq.body;
    const Response out = service.handle(r);
    hres.status = out.status;
    hres.set_content(out.body.dump(), "application/json");
  };
  srv.Get(R"(/.*)", bridge);
  srv.Post(R"(/.*)", bridge);
}

}  // namespace

bool InspectorService::listen(const std::string& host, int port) {
  if (!impl_) impl_ = std::make_unique<Impl>();
  install_routes(impl_->server, *this, options_.max_body_bytes);
  return impl_->server.listen(host, port);
}

int InspectorService::start_background(const std::string& host) {
  if (!impl_) impl_ = std::make_unique<Impl>();
  auto& srv = impl_->server;
  install_routes(srv, *this, options_.max_body_bytes);
  const int port = srv.bind_to_any_port(host);
  if (port < 0) throw Error("bind_failed", "cannot bind " + host);
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port;
}

void InspectorService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace radvqa::inspector
