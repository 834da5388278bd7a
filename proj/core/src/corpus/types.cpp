#include "radvqa/corpus/types.hpp"

#include <array>
#include <utility>

#include "radvqa/common/error.hpp"

namespace radvqa::corpus {
namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table, const char* what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  throw DataError("bad_enum", std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view name_of(E e, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [value, name] : table) {
    if (value == e) return name;
  }
  return "?";
}

constexpr std::array<std::pair<Modality, std::string_view>, 5> kModality{{
    {Modality::xray, "xray"},
    {Modality::ct, "ct"},
    {Modality::mri, "mri"},
    {Modality::ultrasound, "ultrasound"},
    {Modality::other, "other"},
}};
constexpr std::array<std::pair<Organ, std::string_view>, 5> kOrgan{{
    {Organ::chest, "chest"},
    {Organ::gastrointestinal, "gastrointestinal"},
    {Organ::musculoskeletal, "musculoskeletal"},
    {Organ::brain_neuro, "brain_neuro"},
    {Organ::other, "other"},
}};
constexpr std::array<std::pair<RecordKind, std::string_view>, 4> kKind{{
    {RecordKind::caption, "caption"},
    {RecordKind::open, "open"},
    {RecordKind::short_answer, "short"},
    {RecordKind::mcq, "mcq"},
}};
constexpr std::array<std::pair<Source, std::string_view>, 3> kSource{{
    {Source::native, "native"},
    {Source::synthetic_case, "synthetic_case"},
    {Source::synthetic_literature, "synthetic_literature"},
}};
constexpr std::array<std::pair<QualityTier, std::string_view>, 2> kTier{{
    {QualityTier::base, "base"},
    {QualityTier::enrichment, "enrichment"},
}};

}  // namespace

std::string_view to_string(Modality m) { return name_of(m, kModality); }
std::string_view to_string(Organ o) { return name_of(o, kOrgan); }
std::string_view to_string(RecordKind k) { return name_of(k, kKind); }
std::string_view to_string(Source s) { return name_of(s, kSource); }
std::string_view to_string(QualityTier q) { return name_of(q, kTier); }

Modality parse_modality(std::string_view s) { return parse_enum(s, kModality, "modality"); }
Organ parse_organ(std::string_view s) { return parse_enum(s, kOrgan, "organ"); }
RecordKind parse_kind(std::string_view s) { return parse_enum(s, kKind, "kind"); }
Source parse_source(std::string_view s) { return parse_enum(s, kSource, "source"); }
QualityTier parse_quality_tier(std::string_view s) { return parse_enum(s, kTier, "quality_tier"); }

bool is_url(std::string_view path) { return path.find("://") != std::string_view::npos; }

std::string default_image_id(std::string_view path) {
  if (is_url(path)) {
    const auto slash = path.find_last_of('/');
    path = slash == std::string_view::npos ? path : path.substr(slash + 1);
    const auto dot = path.find('.');
    return std::string(dot == std::string_view::npos ? path : path.substr(0, dot));
  }
  return std::filesystem::path(path).stem().string();
}

std::string DatasetManifest::resolve_image(const QARecord& r) const {
  if (is_url(r.image.path)) return r.image.path;
  const std::filesystem::path p(r.image.path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (base_dir / p).lexically_normal().string();
}

}  // namespace radvqa::corpus
