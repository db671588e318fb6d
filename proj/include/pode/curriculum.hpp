#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pode/data.hpp"

namespace pode {

/// Stage schedule: stages 1..k-1 train on data low-passed at cutoffs[s-1]
/// (cycles per sample span); stage k trains on the raw data.
struct CurriculumPlan {
  int k = 3;
  std::vector<double> cutoffs;
  std::vector<int> epochs_per_stage{100, 100, 100};
  /// Fraction of a stage's epochs spent ramping the new group's alpha.
  double blend_fraction = 0.3;

  int total_epochs() const {
    int n = 0;
    for (int e : epochs_per_stage) n += e;
    return n;
  }

  void validate() const {
    if (k < 1) throw std::invalid_argument("curriculum: k must be >= 1");
    if (cutoffs.size() != static_cast<std::size_t>(k - 1))
      throw std::invalid_argument("curriculum: need k-1 cutoffs, got " + std::to_string(cutoffs.size()));
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      if (!(cutoffs[i] > 0.0)) throw std::invalid_argument("curriculum: cutoffs must be positive");
      if (i && !(cutoffs[i] > cutoffs[i - 1])) throw std::invalid_argument("curriculum: cutoffs must be strictly ascending");
    }
    if (epochs_per_stage.size() != static_cast<std::size_t>(k))
      throw std::invalid_argument("curriculum: need k epoch counts, got " + std::to_string(epochs_per_stage.size()));
    for (int e : epochs_per_stage)
      if (e < 1) throw std::invalid_argument("curriculum: epoch counts must be >= 1");
    if (!(blend_fraction > 0.0 && blend_fraction < 1.0))
      throw std::invalid_argument("curriculum: blend_fraction must lie in (0, 1)");
  }
};

/// Cutoffs for the synthetic family: the first sits below the slowest
/// seasonal band, the second below the fast band, both derived from the
/// generator's ranges.
inline std::vector<double> synthetic_cutoffs(const SyntheticRanges& r) {
  return {SyntheticRanges::cycles(r.t1_lo) / 3.0, 0.6 * SyntheticRanges::cycles(r.t2_lo)};
}

inline CurriculumPlan default_synthetic_plan(const SyntheticRanges& r = {}) {
  CurriculumPlan p;
  p.k = 3;
  p.cutoffs = synthetic_cutoffs(r);
  return p;
}

/// Daily traffic: below one cycle per day, then below four.
inline CurriculumPlan default_pems_plan() {
  CurriculumPlan p;
  p.k = 3;
  p.cutoffs = {1.0, 4.0};
  return p;
}

/// Nearest odd integer, ties upward.
inline std::size_t round_to_odd(double x) {
  if (!(x > 0.0)) return 1;
  const auto lo = static_cast<std::size_t>(std::floor(x));
  const std::size_t odd_lo = lo % 2 == 1 ? lo : (lo == 0 ? 1 : lo - 1);
  const std::size_t odd_hi = odd_lo + 2;
  return x - static_cast<double>(odd_lo) < static_cast<double>(odd_hi) - x ? odd_lo : odd_hi;
}

/// Moving-average window for a cutoff given in cycles per series span.
/// Its first spectral null sits at twice the cutoff.
inline std::size_t lowpass_window(std::size_t length, double cutoff) {
  return round_to_odd(static_cast<double>(length) / (2.0 * cutoff));
}

namespace detail {

// Centered moving average with point-symmetric reflection at the edges
// (x[-i] -> 2 x[0] - x[i]), which passes straight lines unchanged. Each
// output is formed as x[i] + mean(x[j] - x[i]) so a constant stays bit-exact.
inline std::vector<double> moving_average(std::span<const double> x, std::size_t window) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  auto at = [&](std::ptrdiff_t i) {
    if (i < 0) return 2.0 * x[0] - x[static_cast<std::size_t>(-i)];
    if (i >= n) return 2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(2 * (n - 1) - i)];
    return x[static_cast<std::size_t>(i)];
  };
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double centre = x[static_cast<std::size_t>(i)];
    double acc = 0.0;
    for (std::ptrdiff_t j = i - half; j <= i + half; ++j) acc += at(j) - centre;
    out[static_cast<std::size_t>(i)] = centre + acc / static_cast<double>(window);
  }
  return out;
}

inline double interpolate(std::span<const double> xs, std::span<const double> ys, double x) {
  auto it = std::lower_bound(xs.begin(), xs.end(), x);
  if (it == xs.end()) return ys.back();
  const auto i = static_cast<std::size_t>(it - xs.begin());
  if (*it == x || i == 0) return ys[i];
  const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

}  // namespace detail

/// Zero-phase low-pass on a regular grid: a centered moving average applied
/// twice (triangular kernel, response sinc^2). Window length is
/// lowpass_window(len, cutoff).
inline std::vector<double> lowpass(std::span<const double> values, double cutoff) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("lowpass: series too short");
  if (!(cutoff > 0.0 && cutoff < static_cast<double>(n) / 2.0))
    throw std::invalid_argument("lowpass: cutoff must lie in (0, Nyquist)");
  const std::size_t window = lowpass_window(n, cutoff);
  if (window > n)
    throw std::invalid_argument("lowpass: window " + std::to_string(window) + " longer than series of " +
                                std::to_string(n));
  std::vector<double> once = detail::moving_average(values, window);
  return detail::moving_average(once, window);
}

/// Amplitude response of lowpass() at `freq` cycles per span.
inline double lowpass_response(std::size_t length, double cutoff, double freq) {
  const auto window = static_cast<double>(lowpass_window(length, cutoff));
  const double w = std::numbers::pi * freq / static_cast<double>(length);
  if (w == 0.0) return 1.0;
  const double single = std::sin(window * w) / (window * std::sin(w));
  return single * single;
}

/// Energy in DFT bins above `cutoff` cycles per span (bin j of an n-point
/// grid sits at j (n-1)/n cycles per span). The least-squares line is removed
/// first; a bare trend otherwise leaks into every bin.
inline double high_band_energy(std::span<const double> values, double cutoff) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double xm = 0.5 * static_cast<double>(n - 1);
  double ym = 0.0;
  for (double v : values) ym += v;
  ym /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (values[i] - ym);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = values[i] - ym - slope * (static_cast<double>(i) - xm);
  double energy = 0.0;
  for (std::size_t j = 1; j <= n / 2; ++j) {
    const double freq = static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(n);
    if (!(freq > cutoff)) continue;
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>((j * i) % n) / static_cast<double>(n);
      re += r[i] * std::cos(a);
      im -= r[i] * std::sin(a);
    }
    energy += re * re + im * im;
  }
  return energy;
}

/// Dataset for curriculum stage s (1-based).
///
/// For s < k each sample's dense grid is low-passed at cutoffs[s-1] and
/// re-read at the sample's own times; the sample's deviation from its raw
/// grid (observation noise) is carried over. Times, splits and roles are
/// untouched. Stage k returns the input unchanged.
inline Dataset stage_dataset(const Dataset& d, int s, const CurriculumPlan& plan) {
  plan.validate();
  if (s < 1 || s > plan.k)
    throw std::invalid_argument("stage_dataset: stage " + std::to_string(s) + " outside [1, " +
                                std::to_string(plan.k) + "]");
  if (s == plan.k) return d;
  const double cutoff = plan.cutoffs[static_cast<std::size_t>(s - 1)];
  Dataset out = d;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    TimeSeriesSample& smp = out.samples[i];
    if (!smp.has_grid()) throw DataError("stage_dataset: sample " + std::to_string(i) + " has no dense grid");
    std::vector<double> filtered = lowpass(smp.grid_values, cutoff);
    for (std::size_t j = 0; j < smp.times.size(); ++j) {
      const double t = smp.times[j];
      const double residual = smp.values[j] - detail::interpolate(smp.grid_times, smp.grid_values, t);
      smp.values[j] = detail::interpolate(smp.grid_times, filtered, t) + residual;
    }
    smp.grid_values = std::move(filtered);
  }
  return out;
}

/// Blend weight of the group added at stage s, at epoch e of that stage:
/// a linear ramp over blend_fraction of the stage, then 1.
inline double alpha_at(const CurriculumPlan& plan, int s, int e) {
  if (s < 2 || s > plan.k) throw std::invalid_argument("alpha_at: stage must be in [2, k]");
  const int epochs = plan.epochs_per_stage.at(static_cast<std::size_t>(s - 1));
  if (e < 0 || e >= epochs) throw std::invalid_argument("alpha_at: epoch outside the stage");
  const double ramp = plan.blend_fraction * static_cast<double>(epochs);
  const double a = static_cast<double>(e) / ramp;
  // blend_fraction * epochs is rarely exact in binary; land the endpoint on 1
  return a >= 1.0 - 1e-12 ? 1.0 : a;
}

}  // namespace pode
