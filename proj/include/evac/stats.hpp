#pragma once
// Smoothing and running statistics shared by the trainer and evaluation.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace evac {

/// y_0 = x_0, y_t = s * y_{t-1} + (1 - s) * x_t.
inline std::vector<double> ema(std::span<const double> series, double smoothing) {
  if (series.empty()) throw std::invalid_argument("ema: empty series");
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw std::invalid_argument("ema: smoothing must lie in [0, 1)");
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t)
    out[t] = smoothing * out[t - 1] + (1.0 - smoothing) * series[t];
  return out;
}

/// Incremental form of ema(); value() is NaN until the first sample.
class EmaTracker {
 public:
  explicit EmaTracker(double smoothing) : smoothing_(smoothing) {}

  void add(double x) {
    value_ = seen_ ? smoothing_ * value_ + (1.0 - smoothing_) * x : x;
    seen_ = true;
  }

  bool empty() const { return !seen_; }
  double value() const { return seen_ ? value_ : std::nan(""); }

 private:
  double smoothing_;
  double value_ = 0.0;
  bool seen_ = false;
};

/// Scalar running mean/variance with the same merge rule as ObsNormalizer.
struct RunningMoments {
  double count = 1e-4;
  double mean = 0.0;
  double var = 1.0;

  void update(double x) {
    const double total = count + 1.0;
    const double delta = x - mean;
    mean += delta / total;
    var = (var * count + delta * delta * count / total) / total;
    count = total;
  }
};

}  // namespace evac
