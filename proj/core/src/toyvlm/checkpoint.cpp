#include "radvqa/toyvlm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "radvqa/common/error.hpp"
#include "radvqa/common/hash.hpp"
#include "radvqa/common/text.hpp"

namespace radvqa::toyvlm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'V', 'Q', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string row_major_bytes(const Matrix& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return std::string(reinterpret_cast<const char*>(rm.data()), static_cast<std::size_t>(rm.size()) * sizeof(double));
}

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint_corrupt", "truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::base: return "base";
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  if (s == "base") return Stage::base;
  if (s == "stage1") return Stage::stage1;
  if (s == "stage2") return Stage::stage2;
  throw DataError("bad_enum", "unknown stage '" + std::string(s) + "'");
}

std::string tensor_hash(const Matrix& m) {
  Sha256 h;
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  h.update(dims, sizeof dims);
  h.update(row_major_bytes(m));
  return h.hex_digest();
}

std::map<std::string, std::string> tensor_hashes(const ToyVlm& model) {
  std::map<std::string, std::string> out;
  for (const auto& [name, p] : model.params()) out[name] = tensor_hash(p.value);
  return out;
}

std::string content_hash(const ToyVlm& model) {
  Sha256 h;
  h.update(to_json(model.config()).dump());
  h.update(model.tokenizer().to_json().dump());
  h.update(model.lora() ? to_json(*model.lora()).dump() : std::string("null"));
  for (const auto& [name, hash] : tensor_hashes(model)) h.update(name + "=" + hash + "\n");
  return h.hex_digest();
}

void save_checkpoint(const std::string& path, const ToyVlm& model, Stage stage, const nlohmann::ordered_json& trainer) {
  nlohmann::ordered_json meta;
  meta["format"] = "radvqa-checkpoint";
  meta["stage"] = to_string(stage);
  meta["config"] = to_json(model.config());
  meta["tokenizer"] = model.tokenizer().to_json();
  meta["lora"] = model.lora() ? to_json(*model.lora()) : nlohmann::ordered_json(nullptr);
  meta["trainer"] = trainer;
  meta["content_hash"] = content_hash(model);
  auto& tensors = meta["tensors"] = nlohmann::ordered_json::array();
  std::string data;
  for (const auto& [name, p] : model.params()) {
    tensors.push_back({{"name", name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"trainable", p.trainable},
                       {"sha256", tensor_hash(p.value)}});
    data += row_major_bytes(p.value);
  }
  const auto json = meta.dump();
  std::string out(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(json.size()));
  out += json;
  out += data;
  text::write_file(path, out);
}

namespace {

nlohmann::ordered_json parse_header(const std::string& bytes, std::size_t& pos) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("checkpoint_corrupt", "not a radvqa checkpoint");
  }
  pos = sizeof kMagic;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw DataError("checkpoint_version", "unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw DataError("checkpoint_corrupt", "truncated checkpoint metadata");
  try {
    auto meta = nlohmann::ordered_json::parse(bytes.substr(pos, len));
    pos += len;
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint_corrupt", e.what());
  }
}

}  // namespace

nlohmann::ordered_json read_checkpoint_metadata(const std::string& path) {
  std::size_t pos = 0;
  return parse_header(text::read_file(path), pos);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto bytes = text::read_file(path);
  std::size_t pos = 0;
  const auto meta = parse_header(bytes, pos);
  try {
    const auto config = vlm_config_from_json(meta.at("config"));
    auto tokenizer = Tokenizer::from_json(meta.at("tokenizer"));
    std::optional<LoraSpec> lora;
    if (!meta.at("lora").is_null()) lora = lora_spec_from_json(meta.at("lora"));
    ParamMap params;
    for (const auto& t : meta.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      const auto n = static_cast<std::size_t>(rows * cols);
      if (pos + n * sizeof(double) > bytes.size()) throw DataError("checkpoint_corrupt", "truncated tensor data");
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
      std::memcpy(rm.data(), bytes.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      Matrix m = rm;
      if (tensor_hash(m) != t.at("sha256").get<std::string>()) {
        throw DataError("checkpoint_corrupt", "hash mismatch for tensor '" + name + "'");
      }
      params.emplace(name, Parameter(name, std::move(m), t.value("trainable", true)));
    }
    if (pos != bytes.size()) throw DataError("checkpoint_corrupt", "trailing bytes after tensor data");
    LoadedCheckpoint out{ToyVlm(config, std::move(tokenizer), std::move(params), lora),
                         parse_stage(meta.at("stage").get<std::string>()), meta.at("trainer"),
                         meta.at("content_hash").get<std::string>()};
    if (content_hash(out.model) != out.content_hash) {
      throw DataError("checkpoint_corrupt", "content hash mismatch");
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint_corrupt", e.what());
  }
}

}  // namespace radvqa::toyvlm
