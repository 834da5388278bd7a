#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace radvqa::corpus {

enum class Modality { xray, ct, mri, ultrasound, other };
enum class Organ { chest, gastrointestinal, musculoskeletal, brain_neuro, other };
enum class RecordKind { caption, open, short_answer, mcq };
enum class Source { native, synthetic_case, synthetic_literature };
enum class QualityTier { base, enrichment };

std::string_view to_string(Modality m);
std::string_view to_string(Organ o);
std::string_view to_string(RecordKind k);
std::string_view to_string(Source s);
std::string_view to_string(QualityTier q);

// Parsers throw radvqa::DataError with code "bad_enum" on unknown names.
Modality parse_modality(std::string_view s);
Organ parse_organ(std::string_view s);
RecordKind parse_kind(std::string_view s);
Source parse_source(std::string_view s);
QualityTier parse_quality_tier(std::string_view s);

/// Organ classes in report order (the four reported classes, then `other`).
inline constexpr Organ kAllOrgans[] = {Organ::chest, Organ::gastrointestinal, Organ::musculoskeletal,
                                       Organ::brain_neuro, Organ::other};
inline constexpr Modality kAllModalities[] = {Modality::xray, Modality::ct, Modality::mri, Modality::ultrasound,
                                              Modality::other};

struct ImageRef {
  std::string id;
  std::string path;  // relative to the manifest's base_dir, absolute, or a URL
  int width = 0;
  int height = 0;
  Modality modality = Modality::other;
  Organ organ = Organ::other;

  bool operator==(const ImageRef&) const = default;
};

/// Default image id when the serialized record omits one: the file stem.
std::string default_image_id(std::string_view path);
bool is_url(std::string_view path);

struct QARecord {
  std::string id;
  ImageRef image;
  RecordKind kind = RecordKind::open;
  std::string question;
  std::string answer;
  std::optional<std::vector<std::string>> options;
  Source source = Source::native;
  QualityTier quality_tier = QualityTier::base;

  bool operator==(const QARecord&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::vector<QARecord> records;
  /// Append-only audit log: adapters, filters, mix specs.
  std::vector<std::string> provenance;
  /// Directory relative image paths resolve against. Not serialized.
  std::filesystem::path base_dir;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  /// Resolved filesystem path (or URL) for a record's image.
  std::string resolve_image(const QARecord& r) const;
};

}  // namespace radvqa::corpus
