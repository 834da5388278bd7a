#include "radvqa/corpus/split.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "radvqa/common/error.hpp"
#include "radvqa/common/random.hpp"

namespace radvqa::corpus {
namespace {

// Largest-remainder apportionment of n items over the three ratios.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& r) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * r[i];
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) sizes[order[k % 3]] += 1;
  return sizes;
}

}  // namespace

SplitResult split(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  if (std::any_of(r.begin(), r.end(), [](double x) { return !(x > 0.0); })) {
    throw ConfigError("bad_ratios", "split ratios must all be positive");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw ConfigError("bad_ratios", "split ratios must sum to 1");
  }
  if (manifest.empty()) throw DataError("empty_manifest", "cannot split an empty manifest");

  const std::size_t n = manifest.size();
  Rng rng(seed);

  std::map<Organ, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) strata[manifest.records[i].image.organ].push_back(i);
  const bool stratified =
      std::all_of(strata.begin(), strata.end(), [](const auto& kv) { return kv.second.size() >= 3; });

  // Order records so that every stratum is spread evenly along the sequence;
  // cutting the sequence into contiguous blocks then yields proportional
  // shares per organ while keeping the global sizes exact.
  struct Keyed {
    double position;
    std::uint64_t tiebreak;
    std::size_t index;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(n);
  if (stratified) {
    for (auto& [organ, idx] : strata) {
      rng.shuffle(idx);
      const double m = static_cast<double>(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        keyed.push_back({(static_cast<double>(k) + rng.uniform()) / m, rng.next_u64(), idx[k]});
      }
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t k = 0; k < n; ++k) keyed.push_back({static_cast<double>(k), 0, idx[k]});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    if (a.position != b.position) return a.position < b.position;
    if (a.tiebreak != b.tiebreak) return a.tiebreak < b.tiebreak;
    return a.index < b.index;
  });

  const auto sizes = apportion(n, r);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t k = 0; k < sizes[p]; ++k) parts[p].push_back(keyed[cursor++].index);
    std::sort(parts[p].begin(), parts[p].end());
  }

  std::ostringstream spec;
  spec << "split seed=" << seed << " ratios=" << r[0] << "/" << r[1] << "/" << r[2]
       << " stratified=" << (stratified ? "organ" : "none");

  static constexpr const char* kNames[] = {"train", "val", "test"};
  SplitResult out;
  out.stratified = stratified;
  DatasetManifest* targets[] = {&out.train, &out.val, &out.test};
  for (std::size_t p = 0; p < 3; ++p) {
    DatasetManifest& t = *targets[p];
    t.name = manifest.name + "-" + kNames[p];
    t.base_dir = manifest.base_dir;
    t.provenance = manifest.provenance;
    t.provenance.push_back(spec.str() + " part=" + kNames[p] + " size=" + std::to_string(parts[p].size()));
    for (std::size_t i : parts[p]) t.records.push_back(manifest.records[i]);
  }
  return out;
}

}  // namespace radvqa::corpus
