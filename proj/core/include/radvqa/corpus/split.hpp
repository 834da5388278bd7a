#pragma once

#include <cstdint>

#include "radvqa/corpus/types.hpp"

namespace radvqa::corpus {

struct SplitRatios {
  double train = 0.0;
  double val = 0.0;
  double test = 0.0;
};

struct SplitResult {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
  bool stratified = false;
};

/// Deterministic exact partition. Sizes use largest-remainder rounding so
/// they always sum to the input size. Stratifies by organ when every organ
/// class present has at least three records.
SplitResult split(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed);

}  // namespace radvqa::corpus
