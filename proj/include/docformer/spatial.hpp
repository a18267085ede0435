#pragma once

#include <array>
#include <vector>

#include "docformer/document.hpp"

namespace docformer {

inline constexpr std::size_t kRelativeFeatures = 5;  // corners 1..4 and centroid

// Binned layout features of one token. rel_*_raw hold the pixel deltas to the
// next word (corner k of next box minus corner k of this box) before binning.
struct SpatialRecord {
  int x1 = 0, y1 = 0, x3 = 0, y3 = 0;
  int w = 0, h = 0;
  std::array<int, kRelativeFeatures> rel_x{};
  std::array<int, kRelativeFeatures> rel_y{};
  std::array<double, kRelativeFeatures> rel_x_raw{};
  std::array<double, kRelativeFeatures> rel_y_raw{};
  int abs_pos = 0;

  bool operator==(const SpatialRecord&) const = default;
};

// floor(coord / extent * (num_bins - 1)), clamped to [0, num_bins - 1].
int bin_absolute(double coord, double extent, int num_bins);

// Largest representable delta magnitude in bins; also the bin that encodes 0.
int relative_zero_bin(int num_bins);

// floor(delta / extent * zero_bin) + zero_bin, clamped to [0, num_bins - 1].
int bin_relative(double delta, double extent, int num_bins);

// One record per word. The last word's relative deltas are all zero.
std::vector<SpatialRecord> normalize_and_bin(const Document& doc, int num_bins);

// Record covering the whole page, used for [CLS].
SpatialRecord page_record(int width, int height, int num_bins);

// Record used for [PAD] positions.
SpatialRecord pad_record(int num_bins);

}  // namespace docformer
