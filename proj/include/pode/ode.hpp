#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pode/autodiff.hpp"

namespace pode {

/// dz/dt = f(z, t) for a latent batch z of shape [batch, d].
using DynamicsFn = std::function<Var(const Var& z, double t)>;
/// Time-invariant dynamics; required when rows carry different clocks.
using AutonomousFn = std::function<Var(const Var& z)>;

struct SolveSpec {
  double max_step = 0.05;
};

class IntegrationDiverged : public std::runtime_error {
 public:
  explicit IntegrationDiverged(double t)
      : std::runtime_error("integration diverged near t=" + std::to_string(t)), t_(t) {}
  double time() const noexcept { return t_; }

 private:
  double t_;
};

/// Number of equal sub-steps for an interval: ceil(dt / max_step), with a
/// relative slack so exact multiples are not rounded up by division error.
inline std::size_t substep_count(double dt, double max_step) {
  if (dt <= 0.0) return 0;
  const double ratio = dt / max_step;
  const double n = std::ceil(ratio * (1.0 - 1e-12));
  return n < 1.0 ? 1 : static_cast<std::size_t>(n);
}

namespace detail {

inline void require_finite(const Var& z, double t) {
  for (double v : z.value().data())
    if (!std::isfinite(v)) throw IntegrationDiverged(t);
}

inline void check_spec(const SolveSpec& spec) {
  if (!(spec.max_step > 0.0)) throw std::invalid_argument("SolveSpec.max_step must be positive");
}

}  // namespace detail

/// Classical RK4 step, every stage recorded on the tape.
inline Var rk4_step(const DynamicsFn& f, const Var& z, double t, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: step must be positive");
  const std::size_t rows = z.value().rows();
  const std::vector<double> half(rows, 0.5 * h);
  const std::vector<double> full(rows, h);
  Var k1 = f(z, t);
  Var k2 = f(axpy_rows(z, k1, half), t + 0.5 * h);
  Var k3 = f(axpy_rows(z, k2, half), t + 0.5 * h);
  Var k4 = f(axpy_rows(z, k3, full), t + h);
  Var out = rk4_combine(z, k1, k2, k3, k4, full);
  detail::require_finite(out, t + h);
  return out;
}

/// Latent state at each query time, starting from z0 at t0.
///
/// Each gap between consecutive targets is split into substep_count(gap)
/// equal RK4 steps, so no step exceeds spec.max_step and the state lands
/// exactly on every query time.
inline std::vector<Var> integrate_path(const DynamicsFn& f, const Var& z0, double t0,
                                       std::span<const double> query_times,
                                       const SolveSpec& spec = {}) {
  detail::check_spec(spec);
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    const double prev = i == 0 ? t0 : query_times[i - 1];
    if (i == 0 ? query_times[0] < t0 : !(query_times[i] > prev))
      throw std::invalid_argument("integrate_path: query times must be strictly increasing and start at or after t0");
  }
  std::vector<Var> out;
  out.reserve(query_times.size());
  Var z = z0;
  double t = t0;
  for (double target : query_times) {
    const double dt = target - t;
    const std::size_t n = substep_count(dt, spec.max_step);
    const double h = n ? dt / static_cast<double>(n) : 0.0;
    for (std::size_t s = 0; s < n; ++s) z = rk4_step(f, z, t + static_cast<double>(s) * h, h);
    t = target;
    out.push_back(z);
  }
  return out;
}

/// Batched variant where row r follows its own clock: starts at t0[r] and
/// visits query_times[r][0..q). Each gap uses the largest sub-step count
/// over rows, with every row splitting its own gap evenly; a single row
/// reproduces integrate_path bit for bit.
inline std::vector<Var> integrate_paths(const AutonomousFn& f, const Var& z0,
                                        std::span<const double> t0,
                                        std::span<const std::vector<double>> query_times,
                                        const SolveSpec& spec = {}) {
  detail::check_spec(spec);
  const std::size_t rows = z0.value().rows();
  if (t0.size() != rows || query_times.size() != rows)
    throw std::invalid_argument("integrate_paths: one start time and query list per row required");
  const std::size_t q = rows ? query_times[0].size() : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (query_times[r].size() != q)
      throw std::invalid_argument("integrate_paths: rows must share the query count");
    for (std::size_t i = 0; i < q; ++i) {
      const double prev = i == 0 ? t0[r] : query_times[r][i - 1];
      if (i == 0 ? query_times[r][0] < prev : !(query_times[r][i] > prev))
        throw std::invalid_argument("integrate_paths: query times must be strictly increasing and start at or after t0");
    }
  }

  std::vector<Var> out;
  out.reserve(q);
  Var z = z0;
  std::vector<double> t(t0.begin(), t0.end());
  std::vector<double> h(rows), half(rows);
  for (std::size_t i = 0; i < q; ++i) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows; ++r)
      n = std::max(n, substep_count(query_times[r][i] - t[r], spec.max_step));
    for (std::size_t r = 0; r < rows; ++r) {
      h[r] = n ? (query_times[r][i] - t[r]) / static_cast<double>(n) : 0.0;
      half[r] = 0.5 * h[r];
    }
    for (std::size_t s = 0; s < n; ++s) {
      Var k1 = f(z);
      Var k2 = f(axpy_rows(z, k1, half));
      Var k3 = f(axpy_rows(z, k2, half));
      Var k4 = f(axpy_rows(z, k3, h));
      z = rk4_combine(z, k1, k2, k3, k4, h);
      detail::require_finite(z, t[0] + static_cast<double>(s + 1) * h[0]);
    }
    for (std::size_t r = 0; r < rows; ++r) t[r] = query_times[r][i];
    out.push_back(z);
  }
  return out;
}

}  // namespace pode
