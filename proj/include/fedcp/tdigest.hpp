#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fedcp/common.hpp"

namespace fedcp {

/// Merging t-digest over f64 samples. Centroid sizes are governed by the
/// asin-based k1 scale function, which spends resolution on the tails —
/// exactly where conformal quantiles live. Sketches from different clients
/// merge losslessly in weight, approximately in rank (<= ~1e-3 at delta=100
/// for the sample counts we see).
class TDigest {
 public:
  struct Centroid {
    double mean = 0.0;
    double weight = 0.0;
  };

  explicit TDigest(double compression = 100.0) : delta_(compression) {
    if (compression < 10.0) throw ConfigError("tdigest: compression too small");
    buffer_.reserve(kBufferCap);
  }

  void insert(double x, double w = 1.0) {
    if (!std::isfinite(x) || !(w > 0.0)) throw ScoreError("tdigest: bad sample");
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
    buffer_.push_back({x, w});
    if (buffer_.size() >= kBufferCap) flush();
  }

  void merge(const TDigest& other) {
    min_ = std::min(min_, other.min_);
    max_ = std::max(max_, other.max_);
    for (const auto& c : other.centroids_) buffer_.push_back(c);
    for (const auto& c : other.buffer_) buffer_.push_back(c);
    flush();
  }

  double total_weight() const { return total_ + buffered_weight(); }

  std::size_t centroid_count() const { return centroids_.size(); }

  /// Quantile at level q in [0, 1] by linear interpolation between centroid
  /// centers, pinned to the observed min/max at the extremes.
  double quantile(double q) {
    flush();
    if (centroids_.empty()) throw ScoreError("tdigest: quantile of empty sketch");
    if (q <= 0.0) return min_;
    if (q >= 1.0) return max_;
    const double t = q * total_;
    if (centroids_.size() == 1) return centroids_[0].mean;

    double cum = 0.0;  // weight strictly before the current centroid
    for (std::size_t i = 0; i < centroids_.size(); ++i) {
      const double w = centroids_[i].weight;
      const double center = cum + w / 2.0;
      if (t < center) {
        if (i == 0) {  // below the first centroid's center: lerp from min
          double lo_c = centroids_[0].weight / 2.0;
          return min_ + (centroids_[0].mean - min_) * (t / lo_c);
        }
        double prev_center = cum - centroids_[i - 1].weight / 2.0;
        double frac = (t - prev_center) / (center - prev_center);
        return centroids_[i - 1].mean + frac * (centroids_[i].mean - centroids_[i - 1].mean);
      }
      cum += w;
    }
    // above the last centroid's center: lerp toward max
    const Centroid& last = centroids_.back();
    double last_center = total_ - last.weight / 2.0;
    double frac = (t - last_center) / (total_ - last_center);
    return last.mean + frac * (max_ - last.mean);
  }

  /// Process any buffered points; afterwards centroid means are sorted and
  /// the sketch is safe to copy/merge/query.
  void flush() {
    if (buffer_.empty()) return;
    for (const auto& c : centroids_) buffer_.push_back(c);
    centroids_.clear();
    std::sort(buffer_.begin(), buffer_.end(), [](const Centroid& a, const Centroid& b) {
      return a.mean < b.mean || (a.mean == b.mean && a.weight < b.weight);
    });
    double W = 0.0;
    for (const auto& c : buffer_) W += c.weight;
    total_ = W;

    Centroid cur = buffer_[0];
    double added = 0.0;  // weight fully merged into previous centroids
    double qlim = k_inv(k(0.0) + 1.0);
    for (std::size_t i = 1; i < buffer_.size(); ++i) {
      const Centroid& next = buffer_[i];
      double q_after = (added + cur.weight + next.weight) / W;
      if (q_after <= qlim) {
        // pool into the running centroid (weighted mean keeps order)
        double wsum = cur.weight + next.weight;
        cur.mean = (cur.mean * cur.weight + next.mean * next.weight) / wsum;
        cur.weight = wsum;
      } else {
        added += cur.weight;
        centroids_.push_back(cur);
        qlim = k_inv(k(added / W) + 1.0);
        cur = next;
      }
    }
    centroids_.push_back(cur);
    buffer_.clear();
  }

 private:
  static constexpr std::size_t kBufferCap = 512;

  double k(double q) const { return delta_ / (2.0 * kPi) * std::asin(2.0 * q - 1.0); }
  double k_inv(double kk) const {
    double s = std::sin(2.0 * kPi * kk / delta_);
    return std::clamp((s + 1.0) / 2.0, 0.0, 1.0);
  }

  double buffered_weight() const {
    double w = 0.0;
    for (const auto& c : buffer_) w += c.weight;
    return w;
  }

  static constexpr double kPi = 3.14159265358979323846;

  double delta_;
  double total_ = 0.0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
  std::vector<Centroid> centroids_;
  std::vector<Centroid> buffer_;
};

}  // namespace fedcp
