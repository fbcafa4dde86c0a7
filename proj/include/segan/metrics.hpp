#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "segan/volume.hpp"

namespace segan {

/// 1 where prob >= t, else 0.
std::vector<std::uint8_t> threshold(std::span<const float> probs, float t);

/// Binarizes an f32 probability volume into a u8 label volume (meta kept).
Volume threshold(const Volume& probs, float t);

/// |P|, |T| and |P ∩ T| of two binary masks.
struct Counts {
  std::uint64_t p = 0;
  std::uint64_t t = 0;
  std::uint64_t pt = 0;

  Counts& operator+=(const Counts& o) {
    p += o.p;
    t += o.t;
    pt += o.pt;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

Counts count(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

// Empty-set conventions: a ratio with an empty denominator is 1 when the other
// set is also empty and 0 otherwise.
double dice(const Counts& c);
double precision(const Counts& c);
double sensitivity(const Counts& c);

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
double precision(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
double sensitivity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

struct ClassMetrics {
  double dice = 0;
  double precision = 0;
  double sensitivity = 0;
  Counts counts;
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;

  static MetricsReport from_counts(const std::vector<Counts>& per_class);

  double mean_dice() const;
  double mean_precision() const;
  double mean_sensitivity() const;

  /// Header `class,dice,precision,sensitivity,p,t,pt`, one row per class.
  void write_csv(std::ostream& out) const;
  void print_table(std::ostream& out) const;
};

/// Per-class counts of a binary (K, H, W, D) prediction against the truth.
std::vector<Counts> count_classes(const Volume& pred, const Volume& truth);

/// Restacks per-slice (K, H, W, 1) probability maps, thresholds them and scores
/// every class over the whole volume.
MetricsReport evaluate_volume(const std::vector<Volume>& pred_slices, const Volume& truth, float t);

}  // namespace segan
