#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pode {

class BaselineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- Static: repeat the value seen p steps earlier ----

struct StaticModel {
  std::size_t p = 1;
};

inline std::vector<double> static_predict(const StaticModel& m, std::span<const double> history,
                                          std::size_t horizon) {
  if (m.p < 1) throw std::invalid_argument("static_predict: lag must be >= 1");
  if (history.size() < m.p) throw BaselineError("static_predict: history shorter than lag");
  std::vector<double> series(history.begin(), history.end());
  const std::size_t len = series.size();
  for (std::size_t i = 0; i < horizon; ++i) series.push_back(series[len + i - m.p]);
  return {series.begin() + static_cast<std::ptrdiff_t>(len), series.end()};
}

// ---- Historical average over complete past seasons ----

struct HistoricalAverage {
  std::size_t period = 1;
  /// Weight of the season j back is decay^(j-1).
  double decay = 0.9;
};

/// Forecast at phase f is the decay-weighted mean of the values at phase f
/// in every complete season preceding the forecast origin.
inline std::vector<double> ha_predict(const HistoricalAverage& m, std::span<const double> history,
                                      std::size_t horizon) {
  if (m.period < 1) throw std::invalid_argument("ha_predict: period must be >= 1");
  if (!(m.decay > 0.0 && m.decay <= 1.0)) throw std::invalid_argument("ha_predict: decay must lie in (0, 1]");
  if (history.size() < m.period) throw BaselineError("ha_predict: history shorter than one season");
  const std::size_t len = history.size();
  const std::size_t seasons = len / m.period;
  std::vector<double> out(horizon);
  for (std::size_t i = 0; i < horizon; ++i) {
    const std::size_t phase = i % m.period;
    double num = 0.0, den = 0.0, w = 1.0;
    for (std::size_t j = 1; j <= seasons; ++j) {
      num += w * history[len + phase - j * m.period];
      den += w;
      w *= m.decay;
    }
    out[i] = num / den;
  }
  return out;
}

// ---- ARIMA(p, d, q) by Hannan-Rissanen ----

struct ArimaOrder {
  int p = 0;
  int d = 0;
  int q = 0;
  friend bool operator==(const ArimaOrder&, const ArimaOrder&) = default;
};

struct ArimaModel {
  ArimaOrder order;
  std::vector<double> phi;
  std::vector<double> theta;
  /// Constant term; only estimated when d == 0.
  double intercept = 0.0;
  double sigma2 = 0.0;
  double aic = std::numeric_limits<double>::infinity();
  bool fitted = false;
  /// Differenced series and its in-sample innovations.
  std::vector<double> diffed;
  std::vector<double> residuals;
  /// Last value of each differencing level 0..d-1, used to integrate back.
  std::vector<double> level_tails;
};

namespace detail {

// Least squares via normal equations with partially pivoted elimination.
inline std::vector<double> least_squares(const std::vector<std::vector<double>>& rows,
                                         const std::vector<double>& y) {
  const std::size_t k = rows.empty() ? 0 : rows[0].size();
  std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) a[i][j] += rows[r][i] * rows[r][j];
      a[i][k] += rows[r][i] * y[r];
    }
  double scale = 0.0;
  for (std::size_t i = 0; i < k; ++i) scale = std::max(scale, std::abs(a[i][i]));
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < k; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (!(std::abs(a[piv][c]) > 1e-12 * std::max(scale, 1e-300)))
      throw BaselineError("arima_fit: singular normal equations");
    std::swap(a[c], a[piv]);
    for (std::size_t r = c + 1; r < k; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= k; ++j) a[r][j] -= f * a[c][j];
    }
  }
  std::vector<double> x(k);
  for (std::size_t i = k; i-- > 0;) {
    double s = a[i][k];
    for (std::size_t j = i + 1; j < k; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

inline std::vector<double> difference(std::span<const double> x) {
  std::vector<double> out;
  for (std::size_t i = 1; i < x.size(); ++i) out.push_back(x[i] - x[i - 1]);
  return out;
}

}  // namespace detail

/// Differences d times, then estimates AR and MA coefficients in two
/// regressions: a long autoregression supplies innovation estimates, which
/// then serve as the MA regressors next to the AR lags.
inline ArimaModel arima_fit(std::span<const double> series, ArimaOrder order) {
  if (order.p < 0 || order.q < 0 || order.d < 0 || order.d > 2)
    throw std::invalid_argument("arima_fit: orders must satisfy p, q >= 0 and d in {0, 1, 2}");
  const auto p = static_cast<std::size_t>(order.p);
  const auto q = static_cast<std::size_t>(order.q);
  const auto d = static_cast<std::size_t>(order.d);
  if (series.size() <= 10 * (p + q + d))
    throw BaselineError("arima_fit: series of " + std::to_string(series.size()) + " too short for order");
  if (series.size() < d + 2) throw BaselineError("arima_fit: series too short");

  ArimaModel m;
  m.order = order;
  std::vector<double> level(series.begin(), series.end());
  for (std::size_t i = 0; i < d; ++i) {
    m.level_tails.push_back(level.back());
    level = detail::difference(level);
  }
  m.diffed = level;
  const std::vector<double>& x = m.diffed;
  const std::size_t n = x.size();
  const bool with_mean = d == 0;

  // innovations from a long autoregression
  std::vector<double> innov(n, 0.0);
  std::size_t start = p;
  if (q > 0) {
    const auto by_log = static_cast<std::size_t>(std::lround(10.0 * std::log10(static_cast<double>(n))));
    const std::size_t long_order = std::max(p + q, std::min(by_log, n / 4));
    if (long_order == 0 || n <= 2 * long_order + 1) throw BaselineError("arima_fit: series too short for MA terms");
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (std::size_t t = long_order; t < n; ++t) {
      std::vector<double> r;
      for (std::size_t l = 1; l <= long_order; ++l) r.push_back(x[t - l]);
      if (with_mean) r.push_back(1.0);
      rows.push_back(std::move(r));
      y.push_back(x[t]);
    }
    const std::vector<double> b = detail::least_squares(rows, y);
    for (std::size_t t = long_order; t < n; ++t) {
      double fit = with_mean ? b.back() : 0.0;
      for (std::size_t l = 1; l <= long_order; ++l) fit += b[l - 1] * x[t - l];
      innov[t] = x[t] - fit;
    }
    start = std::max(p, long_order + q);
  }

  const std::size_t k = p + q + (with_mean ? 1 : 0);
  if (k > 0) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (std::size_t t = start; t < n; ++t) {
      std::vector<double> r;
      for (std::size_t l = 1; l <= p; ++l) r.push_back(x[t - l]);
      for (std::size_t l = 1; l <= q; ++l) r.push_back(innov[t - l]);
      if (with_mean) r.push_back(1.0);
      rows.push_back(std::move(r));
      y.push_back(x[t]);
    }
    if (rows.size() <= k) throw BaselineError("arima_fit: not enough rows for regression");
    const std::vector<double> b = detail::least_squares(rows, y);
    m.phi.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(p));
    m.theta.assign(b.begin() + static_cast<std::ptrdiff_t>(p), b.begin() + static_cast<std::ptrdiff_t>(p + q));
    if (with_mean) m.intercept = b.back();
  }

  // in-sample one-step innovations under the fitted model (zero start-up)
  m.residuals.assign(n, 0.0);
  double ss = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < n; ++t) {
    double fit = m.intercept;
    for (std::size_t l = 1; l <= p && l <= t; ++l) fit += m.phi[l - 1] * x[t - l];
    for (std::size_t l = 1; l <= q && l <= t; ++l) fit += m.theta[l - 1] * m.residuals[t - l];
    m.residuals[t] = x[t] - fit;
    if (t >= start) {
      ss += m.residuals[t] * m.residuals[t];
      ++used;
    }
  }
  if (used == 0) throw BaselineError("arima_fit: no usable residuals");
  m.sigma2 = ss / static_cast<double>(used);
  const double n_params = static_cast<double>(k + 1);
  m.aic = static_cast<double>(used) * std::log(std::max(m.sigma2, 1e-300)) + 2.0 * n_params;
  m.fitted = true;
  return m;
}

inline std::vector<double> arima_predict(const ArimaModel& m, std::size_t horizon) {
  if (!m.fitted) throw std::logic_error("arima_predict: model not fitted");
  const auto p = static_cast<std::size_t>(m.order.p);
  const auto q = static_cast<std::size_t>(m.order.q);
  std::vector<double> x = m.diffed;
  std::vector<double> e = m.residuals;
  const std::size_t n = x.size();
  for (std::size_t h = 0; h < horizon; ++h) {
    const std::size_t t = n + h;
    double v = m.intercept;
    for (std::size_t l = 1; l <= p && l <= t; ++l) v += m.phi[l - 1] * x[t - l];
    for (std::size_t l = 1; l <= q && l <= t; ++l) v += m.theta[l - 1] * e[t - l];
    x.push_back(v);
    e.push_back(0.0);
  }
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(n), x.end());
  // integrate back through each differencing level
  for (std::size_t lvl = m.level_tails.size(); lvl-- > 0;) {
    double prev = m.level_tails[lvl];
    for (double& v : out) {
      v += prev;
      prev = v;
    }
  }
  for (double v : out)
    if (!std::isfinite(v)) throw BaselineError("arima_predict: non-finite forecast");
  return out;
}

/// Minimum-AIC fit over p, q in {0, 1, 2} and d in {0, 1}; orders whose fit
/// fails are skipped.
inline ArimaModel arima_auto(std::span<const double> series) {
  std::optional<ArimaModel> best;
  for (int d = 0; d <= 1; ++d)
    for (int p = 0; p <= 2; ++p)
      for (int q = 0; q <= 2; ++q) {
        try {
          ArimaModel m = arima_fit(series, {p, d, q});
          if (!best || m.aic < best->aic) best = std::move(m);
        } catch (const BaselineError&) {
        }
      }
  if (!best) throw BaselineError("arima_auto: no order could be fitted");
  return *best;
}

/// Period of the strongest DFT peak of a linearly detrended series, in
/// samples. Falls back to the series length when no peak exists.
inline std::size_t dominant_period(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return n;
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<double>(i);
    st += t;
    sy += x[i];
    stt += t * t;
    sty += t * x[i];
  }
  const auto nn = static_cast<double>(n);
  const double slope = (nn * sty - st * sy) / (nn * stt - st * st);
  const double icept = (sy - slope * st) / nn;
  std::size_t best_j = 0;
  double best_mag = -1.0;
  for (std::size_t j = 1; j <= n / 2; ++j) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = x[i] - (icept + slope * static_cast<double>(i));
      const double a = 2.0 * std::numbers::pi * static_cast<double>((j * i) % n) / nn;
      re += r * std::cos(a);
      im -= r * std::sin(a);
    }
    const double mag = re * re + im * im;
    if (mag > best_mag) {
      best_mag = mag;
      best_j = j;
    }
  }
  if (best_j == 0) return n;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(nn / static_cast<double>(best_j))));
}

}  // namespace pode
