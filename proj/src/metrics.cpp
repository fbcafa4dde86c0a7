#include "segan/metrics.hpp"

#include <cstdio>
#include <ostream>

namespace segan {

std::vector<std::uint8_t> threshold(std::span<const float> probs, float t) {
  if (!(t > 0.0f && t < 1.0f)) throw DataError("threshold must lie in (0, 1)");
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= t ? 1 : 0;
  return out;
}

Volume threshold(const Volume& probs, float t) {
  Volume out{probs.dims, threshold(probs.f32(), t), probs.meta};
  return out;
}

Counts count(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("mask sizes differ: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    c.p += p;
    c.t += t;
    c.pt += p && t;
  }
  return c;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, std::uint64_t other) {
  if (den == 0) return other == 0 ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double dice(const Counts& c) {
  if (c.p + c.t == 0) return 1.0;
  return 2.0 * static_cast<double>(c.pt) / static_cast<double>(c.p + c.t);
}
double precision(const Counts& c) { return ratio(c.pt, c.p, c.t); }
double sensitivity(const Counts& c) { return ratio(c.pt, c.t, c.p); }

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  return dice(count(pred, truth));
}
double precision(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  return precision(count(pred, truth));
}
double sensitivity(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  return sensitivity(count(pred, truth));
}

MetricsReport MetricsReport::from_counts(const std::vector<Counts>& per_class) {
  MetricsReport r;
  for (const Counts& c : per_class) r.classes.push_back({dice(c), precision(c), sensitivity(c), c});
  return r;
}

namespace {

template <typename F>
double mean_over(const std::vector<ClassMetrics>& classes, F field) {
  if (classes.empty()) return 0.0;
  double sum = 0;
  for (const auto& c : classes) sum += field(c);
  return sum / static_cast<double>(classes.size());
}

}  // namespace

double MetricsReport::mean_dice() const {
  return mean_over(classes, [](const ClassMetrics& c) { return c.dice; });
}
double MetricsReport::mean_precision() const {
  return mean_over(classes, [](const ClassMetrics& c) { return c.precision; });
}
double MetricsReport::mean_sensitivity() const {
  return mean_over(classes, [](const ClassMetrics& c) { return c.sensitivity; });
}

void MetricsReport::write_csv(std::ostream& out) const {
  out << "class,dice,precision,sensitivity,p,t,pt\n";
  char line[160];
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const ClassMetrics& c = classes[k];
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%llu,%llu,%llu\n", k, c.dice, c.precision,
                  c.sensitivity, static_cast<unsigned long long>(c.counts.p),
                  static_cast<unsigned long long>(c.counts.t),
                  static_cast<unsigned long long>(c.counts.pt));
    out << line;
  }
}

void MetricsReport::print_table(std::ostream& out) const {
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s %8s %10s %12s\n", "class", "dice", "precision",
                "sensitivity");
  out << line;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::snprintf(line, sizeof(line), "%-6zu %8.4f %10.4f %12.4f\n", k, classes[k].dice,
                  classes[k].precision, classes[k].sensitivity);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-6s %8.4f %10.4f %12.4f\n", "mean", mean_dice(),
                mean_precision(), mean_sensitivity());
  out << line;
}

std::vector<Counts> count_classes(const Volume& pred, const Volume& truth) {
  if (pred.dims != truth.dims) throw ShapeError("prediction and truth volumes differ in shape");
  const std::size_t per_class = pred.voxel_count() / pred.channels();
  std::vector<Counts> out;
  for (std::size_t k = 0; k < pred.channels(); ++k) {
    out.push_back(count(pred.u8().subspan(k * per_class, per_class),
                        truth.u8().subspan(k * per_class, per_class)));
  }
  return out;
}

MetricsReport evaluate_volume(const std::vector<Volume>& pred_slices, const Volume& truth, float t) {
  if (pred_slices.size() != truth.depth()) {
    throw ShapeError("evaluate_volume: " + std::to_string(pred_slices.size()) +
                     " slices for a volume of depth " + std::to_string(truth.depth()));
  }
  const Volume pred = threshold(restack(pred_slices), t);
  return MetricsReport::from_counts(count_classes(pred, truth));
}

}  // namespace segan
