#include "docformer/spatial.hpp"

#include <algorithm>
#include <cmath>

#include "docformer/error.hpp"

namespace docformer {
namespace {

void check_bins(int num_bins) {
  if (num_bins < 2) throw ConfigError("num_bins must be at least 2, got " + std::to_string(num_bins));
}

// Corner k in {0..3} plus centroid (k = 4).
double corner(const WordBox& w, std::size_t k, bool x_axis) {
  const std::size_t off = x_axis ? 0 : 1;
  if (k < 4) return w.box[2 * k + off];
  double s = 0.0;
  for (std::size_t c = 0; c < 4; ++c) s += w.box[2 * c + off];
  return s / 4.0;
}

}  // namespace

int bin_absolute(double coord, double extent, int num_bins) {
  check_bins(num_bins);
  const double v = std::floor(coord / extent * (num_bins - 1));
  return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(num_bins - 1)));
}

int relative_zero_bin(int num_bins) {
  check_bins(num_bins);
  return (num_bins - 1) / 2;
}

int bin_relative(double delta, double extent, int num_bins) {
  const int zero = relative_zero_bin(num_bins);
  const double v = std::floor(delta / extent * zero) + zero;
  return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(num_bins - 1)));
}

std::vector<SpatialRecord> normalize_and_bin(const Document& doc, int num_bins) {
  check_bins(num_bins);
  if (doc.words.empty()) throw DataError("normalize_and_bin: document " + doc.id + " has no words");
  const double W = doc.width, H = doc.height;
  std::vector<SpatialRecord> out(doc.words.size());
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    const WordBox& w = doc.words[i];
    SpatialRecord& r = out[i];
    r.x1 = bin_absolute(w.x1(), W, num_bins);
    r.y1 = bin_absolute(w.y1(), H, num_bins);
    r.x3 = bin_absolute(w.x3(), W, num_bins);
    r.y3 = bin_absolute(w.y3(), H, num_bins);
    r.w = bin_absolute(w.x3() - w.x1(), W, num_bins);
    r.h = bin_absolute(w.y3() - w.y1(), H, num_bins);
    r.abs_pos = static_cast<int>(i);
    if (i + 1 < doc.words.size()) {
      const WordBox& next = doc.words[i + 1];
      for (std::size_t k = 0; k < kRelativeFeatures; ++k) {
        r.rel_x_raw[k] = corner(next, k, true) - corner(w, k, true);
        r.rel_y_raw[k] = corner(next, k, false) - corner(w, k, false);
      }
    }
    for (std::size_t k = 0; k < kRelativeFeatures; ++k) {
      r.rel_x[k] = bin_relative(r.rel_x_raw[k], W, num_bins);
      r.rel_y[k] = bin_relative(r.rel_y_raw[k], H, num_bins);
    }
  }
  return out;
}

SpatialRecord page_record(int width, int height, int num_bins) {
  SpatialRecord r;
  r.x1 = r.y1 = 0;
  r.x3 = bin_absolute(width, width, num_bins);
  r.y3 = bin_absolute(height, height, num_bins);
  r.w = r.x3;
  r.h = r.y3;
  r.rel_x.fill(relative_zero_bin(num_bins));
  r.rel_y.fill(relative_zero_bin(num_bins));
  return r;
}

SpatialRecord pad_record(int num_bins) {
  SpatialRecord r;
  r.rel_x.fill(relative_zero_bin(num_bins));
  r.rel_y.fill(relative_zero_bin(num_bins));
  return r;
}

}  // namespace docformer
