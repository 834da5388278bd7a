#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "radvqa/toyvlm/checkpoint.hpp"

namespace radvqa::inspector {

inline constexpr const char* kSchemaVersion = "1";

struct ServiceOptions {
  std::string checkpoint;  // empty: inference answers 409
  std::filesystem::path data_dir;
  std::size_t max_body_bytes = 1 << 20;
  int default_max_new_tokens = 16;
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  nlohmann::ordered_json body;
};

/// JSON-schema documents for every request and response body.
nlohmann::ordered_json schema_document();

/// Case store, inference, saliency and verdict logging behind a transport
/// neutral handle(). Cases live under data_dir/cases/<id>/, verdicts in
/// data_dir/verdicts.jsonl (append-only). Inference on one case is
/// serialized; different cases and all reads run concurrently.
class InspectorService {
 public:
  explicit InspectorService(ServiceOptions options);
  ~InspectorService();
  InspectorService(const InspectorService&) = delete;
  InspectorService& operator=(const InspectorService&) = delete;

  Response handle(const Request& req);

  /// Binds and serves until stop(). Returns false when the bind fails.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

  bool has_model() const { return model_.has_value(); }

 private:
  struct Case;
  struct Impl;

  Response create_case(const Request& req);
  Response infer(const std::string& id, const Request& req);
  Response get_saliency(const std::string& id, const Request& req);
  Response get_dump(const std::string& id, const std::string& dump_id);
  Response get_case(const std::string& id);
  Response post_verdict(const std::string& id, const Request& req);
  Response organ_report_response();

  std::shared_ptr<Case> find_case(const std::string& id);
  /// Persists a new case; the caller holds cases_mu_.
  void store_case(const std::shared_ptr<Case>& c);
  std::mutex& case_mutex(const std::string& id);

  ServiceOptions options_;
  std::optional<toyvlm::LoadedCheckpoint> model_;
  std::mutex cases_mu_;
  std::map<std::string, std::shared_ptr<Case>> cases_;
  std::map<std::string, std::unique_ptr<std::mutex>> case_locks_;
  std::mutex log_mu_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace radvqa::inspector
