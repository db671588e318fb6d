#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pode/model.hpp"
#include "pode/random.hpp"

namespace pode {

enum class Role { train, test };

inline const char* role_name(Role r) { return r == Role::train ? "train" : "test"; }

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One example: irregular observations split into an observed prefix and a
/// forecast suffix, optionally backed by the regular series it was drawn
/// from.
struct TimeSeriesSample {
  std::vector<double> times;
  std::vector<double> values;
  std::size_t split = 0;
  std::vector<double> grid_times;
  std::vector<double> grid_values;
  nlohmann::json meta = nlohmann::json::object();
  Role role = Role::train;

  std::size_t size() const { return times.size(); }
  bool has_grid() const { return !grid_times.empty(); }

  SeriesView view() const { return SeriesView{times, values, split}; }

  std::span<const double> forecast_times() const {
    return std::span<const double>(times).subspan(split);
  }
  std::span<const double> forecast_values() const {
    return std::span<const double>(values).subspan(split);
  }

  ForecastRequest forecast_request() const {
    ForecastRequest r;
    r.obs_times.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(split));
    r.obs_values.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(split));
    r.query_times.assign(times.begin() + static_cast<std::ptrdiff_t>(split), times.end());
    return r;
  }

  /// Throws DataError on any broken invariant.
  void validate() const {
    const std::size_t n = times.size();
    if (values.size() != n) throw DataError("sample: times and values differ in length");
    if (n < 2) throw DataError("sample: fewer than two points");
    if (split == 0 || split >= n)
      throw DataError("sample: split index " + std::to_string(split) + " outside (0, " +
                      std::to_string(n) + ")");
    for (std::size_t i = 1; i < n; ++i)
      if (!(times[i] > times[i - 1])) throw DataError("sample: times not strictly increasing at " + std::to_string(i));
    for (double v : values)
      if (!std::isfinite(v)) throw DataError("sample: non-finite value");
    if (grid_times.size() != grid_values.size()) throw DataError("sample: grid times and values differ in length");
    if (!grid_times.empty()) {
      if (grid_times.size() < 2) throw DataError("sample: grid has fewer than two points");
      const double step = (grid_times.back() - grid_times.front()) / static_cast<double>(grid_times.size() - 1);
      for (std::size_t i = 1; i < grid_times.size(); ++i) {
        const double d = grid_times[i] - grid_times[i - 1];
        if (!(d > 0.0) || std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step)))
          throw DataError("sample: dense grid is not regular");
      }
    }
  }
};

/// y -> (y - shift) / scale
struct Normalizer {
  double shift = 0.0;
  double scale = 1.0;

  double apply(double y) const { return (y - shift) / scale; }
  double invert(double y) const { return y * scale + shift; }

  std::vector<double> denormalize(std::span<const double> ys) const {
    std::vector<double> out(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) out[i] = invert(ys[i]);
    return out;
  }
};

struct Dataset {
  std::vector<TimeSeriesSample> samples;
  Normalizer normalizer;

  std::vector<const TimeSeriesSample*> with_role(Role r) const {
    std::vector<const TimeSeriesSample*> out;
    for (const auto& s : samples)
      if (s.role == r) out.push_back(&s);
    return out;
  }
  std::size_t count(Role r) const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                  [r](const auto& s) { return s.role == r; }));
  }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      try {
        samples[i].validate();
      } catch (const DataError& e) {
        throw DataError("sample " + std::to_string(i) + ": " + e.what());
      }
    }
  }
};

/// Number of training samples under an 80/20 split.
inline std::size_t train_count(std::size_t n) {
  return static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n) + 0.5));
}

// ---- synthetic family exp(c x) + sin(t1 x) + sin(t2 x) on x in [0, 2] ----

struct SyntheticParams {
  double c = 0.5;
  double t1 = 2.0 * std::numbers::pi * 2.0;
  double t2 = 2.0 * std::numbers::pi * 8.0;
  double noise_sd = 0.05;
  std::size_t n_grid = 400;
  std::size_t n_points = 200;
  std::size_t split = 100;
};

inline double synthetic_curve(double c, double t1, double t2, double x) {
  return std::exp(c * x) + std::sin(t1 * x) + std::sin(t2 * x);
}

/// k distinct indices from [0, n), sorted ascending.
inline std::vector<std::size_t> sorted_draw(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline TimeSeriesSample gen_synthetic(const SyntheticParams& p, std::uint64_t seed) {
  if (p.n_points < 2) throw std::invalid_argument("gen_synthetic: need at least two points");
  if (p.n_grid < 2 * p.n_points) throw std::invalid_argument("gen_synthetic: n_grid must be >= 2 * n_points");
  if (!(p.t1 < p.t2)) throw std::invalid_argument("gen_synthetic: requires t1 < t2");
  if (!(p.noise_sd >= 0.0)) throw std::invalid_argument("gen_synthetic: noise_sd must be >= 0");
  if (p.split == 0 || p.split >= p.n_points) throw std::invalid_argument("gen_synthetic: split outside (0, n_points)");
  if (!std::isfinite(p.c) || !std::isfinite(p.t1) || !std::isfinite(p.t2))
    throw std::invalid_argument("gen_synthetic: non-finite curve parameter");

  Rng rng(seed);
  TimeSeriesSample s;
  s.grid_times.resize(p.n_grid);
  s.grid_values.resize(p.n_grid);
  for (std::size_t i = 0; i < p.n_grid; ++i) {
    const double x = 2.0 * static_cast<double>(i) / static_cast<double>(p.n_grid - 1);
    s.grid_times[i] = x;
    s.grid_values[i] = synthetic_curve(p.c, p.t1, p.t2, x);
  }
  for (std::size_t idx : sorted_draw(p.n_grid, p.n_points, rng)) {
    s.times.push_back(s.grid_times[idx]);
    s.values.push_back(s.grid_values[idx] + p.noise_sd * rng.normal());
  }
  s.split = p.split;
  s.meta = {{"c", p.c}, {"t1", p.t1}, {"t2", p.t2}, {"noise_sd", p.noise_sd}, {"seed", seed}};
  return s;
}

struct SyntheticRanges {
  double c_lo = 0.2, c_hi = 0.8;
  double t1_lo = 2.0 * std::numbers::pi * 1.0, t1_hi = 2.0 * std::numbers::pi * 3.0;
  double t2_lo = 2.0 * std::numbers::pi * 6.0, t2_hi = 2.0 * std::numbers::pi * 12.0;
  double noise_sd = 0.05;
  std::size_t n_grid = 400;
  std::size_t n_points = 200;
  std::size_t split = 100;

  /// Cycles per [0, 2] span for an angular rate t.
  static double cycles(double t) { return t / std::numbers::pi; }
};

/// n curves with parameters drawn uniformly from the ranges; the first 80%
/// are tagged train.
inline Dataset gen_synthetic_suite(std::size_t n, const SyntheticRanges& r, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_synthetic_suite: n must be positive");
  if (!(r.c_lo <= r.c_hi && r.t1_lo <= r.t1_hi && r.t2_lo <= r.t2_hi))
    throw std::invalid_argument("gen_synthetic_suite: empty parameter range");
  Rng rng(seed);
  Dataset d;
  const std::size_t n_train = train_count(n);
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticParams p;
    p.c = rng.uniform(r.c_lo, r.c_hi);
    p.t1 = rng.uniform(r.t1_lo, r.t1_hi);
    p.t2 = rng.uniform(r.t2_lo, r.t2_hi);
    p.noise_sd = r.noise_sd;
    p.n_grid = r.n_grid;
    p.n_points = r.n_points;
    p.split = r.split;
    TimeSeriesSample s = gen_synthetic(p, rng.next());
    s.role = i < n_train ? Role::train : Role::test;
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---- PeMS-style CSV ingestion ----

inline constexpr std::size_t kReadingsPerDay = 288;

struct PemsOptions {
  std::string sensor_id;
  /// Inclusive YYYY-MM-DD bounds; empty means unbounded.
  std::string from_date;
  std::string to_date;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline bool parse_int(std::string_view s, int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

// "YYYY-MM-DDTHH:MM[:SS][...]" or with a space separator -> (date, slot)
inline bool parse_timestamp(std::string_view ts, std::string& date, int& slot) {
  if (ts.size() < 16 || ts[4] != '-' || ts[7] != '-' || (ts[10] != 'T' && ts[10] != ' ') || ts[13] != ':')
    return false;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!parse_int(ts.substr(0, 4), y) || !parse_int(ts.substr(5, 2), mo) || !parse_int(ts.substr(8, 2), d) ||
      !parse_int(ts.substr(11, 2), h) || !parse_int(ts.substr(14, 2), mi))
    return false;
  if (ts.size() >= 19 && ts[16] == ':' && !parse_int(ts.substr(17, 2), sec)) return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec != 0 || mi % 5 != 0)
    return false;
  date = std::string(ts.substr(0, 10));
  slot = (h * 60 + mi) / 5;
  return true;
}

}  // namespace detail

/// Daily samples for one sensor from a `timestamp,sensor_id,flow` CSV.
///
/// Rows may come in any order. A day is kept only when all 288 five-minute
/// readings are present and finite; each kept day becomes a sample on a
/// regular [0, 2] clock split at 144. Days are split 80/20 chronologically.
inline Dataset ingest_pems(const std::filesystem::path& csv, const PemsOptions& opt) {
  std::ifstream is(csv);
  if (!is) throw DataError("cannot open " + csv.string());
  std::map<std::string, std::vector<std::optional<double>>> days;
  // empty sensor_id: the file must hold exactly one sensor
  std::string sensor = opt.sensor_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = sv.find(',', start);
      cols.push_back(detail::trim(sv.substr(start, comma == std::string_view::npos ? sv.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (line_no == 1 && !cols.empty() && cols[0] == "timestamp") continue;
    if (cols.size() != 3) throw DataError(csv.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    std::string date;
    int slot = 0;
    if (!detail::parse_timestamp(cols[0], date, slot))
      throw DataError(csv.string() + ":" + std::to_string(line_no) + ": bad timestamp '" + std::string(cols[0]) + "'");
    if (sensor.empty()) {
      sensor = std::string(cols[1]);
    } else if (cols[1] != sensor) {
      if (opt.sensor_id.empty())
        throw DataError(csv.string() + ":" + std::to_string(line_no) + ": several sensors in file; choose one");
      continue;
    }
    if (!opt.from_date.empty() && date < opt.from_date) continue;
    if (!opt.to_date.empty() && date > opt.to_date) continue;
    double flow = 0.0;
    const std::string flow_text(cols[2]);
    if (flow_text.empty()) {
      flow = std::nan("");
    } else {
      char* end = nullptr;
      flow = std::strtod(flow_text.c_str(), &end);
      if (end != flow_text.c_str() + flow_text.size())
        throw DataError(csv.string() + ":" + std::to_string(line_no) + ": bad flow '" + flow_text + "'");
    }
    auto& day = days[date];
    day.resize(kReadingsPerDay);
    auto& cell = day[static_cast<std::size_t>(slot)];
    if (cell.has_value())
      throw DataError(csv.string() + ":" + std::to_string(line_no) + ": duplicate reading for " + date);
    cell = flow;
  }

  Dataset d;
  for (const auto& [date, readings] : days) {
    const bool complete = std::all_of(readings.begin(), readings.end(),
                                      [](const auto& v) { return v.has_value() && std::isfinite(*v); });
    if (!complete) continue;
    TimeSeriesSample s;
    for (std::size_t i = 0; i < kReadingsPerDay; ++i) {
      const double t = 2.0 * static_cast<double>(i) / static_cast<double>(kReadingsPerDay - 1);
      s.times.push_back(t);
      s.values.push_back(*readings[i]);
    }
    s.split = kReadingsPerDay / 2;
    s.grid_times = s.times;
    s.grid_values = s.values;
    s.meta = {{"sensor_id", sensor}, {"date", date}};
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty())
    throw DataError("no complete days for sensor '" + sensor + "' in " + csv.string());
  const std::size_t n_train = train_count(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) d.samples[i].role = i < n_train ? Role::train : Role::test;
  return d;
}

/// Random subset of n_keep points, split in proportion to the observed and
/// forecast halves of the input.
inline TimeSeriesSample irregular_subsample(const TimeSeriesSample& s, std::size_t n_keep, std::uint64_t seed) {
  const std::size_t n = s.size();
  if (n_keep < 2) throw std::invalid_argument("irregular_subsample: n_keep must be >= 2");
  if (n_keep > n) throw std::invalid_argument("irregular_subsample: n_keep exceeds sample length");
  if (n_keep == n) return s;
  const std::size_t n_obs = s.split;
  std::size_t keep_obs = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_keep) * static_cast<double>(n_obs) / static_cast<double>(n)));
  keep_obs = std::clamp<std::size_t>(keep_obs, 1, std::min(n_obs, n_keep - 1));
  std::size_t keep_fc = n_keep - keep_obs;
  if (keep_fc > n - n_obs) {
    keep_fc = n - n_obs;
    keep_obs = n_keep - keep_fc;
  }
  Rng rng(seed);
  std::vector<std::size_t> idx = sorted_draw(n_obs, keep_obs, rng);
  for (std::size_t i : sorted_draw(n - n_obs, keep_fc, rng)) idx.push_back(n_obs + i);
  TimeSeriesSample out = s;
  out.times.clear();
  out.values.clear();
  for (std::size_t i : idx) {
    out.times.push_back(s.times[i]);
    out.values.push_back(s.values[i]);
  }
  out.split = keep_obs;
  return out;
}

/// Fits shift/scale on every value of the train split and applies them
/// to every sample (values and dense grid).
inline Dataset normalize(const Dataset& in) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : in.samples)
    if (s.role == Role::train)
      for (double v : s.values) {
        sum += v;
        ++n;
      }
  if (n == 0) throw DataError("normalize: no training values");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& s : in.samples)
    if (s.role == Role::train)
      for (double v : s.values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd >= 1e-12)) throw DataError("normalize: degenerate scale (sd < 1e-12)");
  Dataset out = in;
  out.normalizer = Normalizer{mean, sd};
  for (auto& s : out.samples) {
    for (double& v : s.values) v = out.normalizer.apply(v);
    for (double& v : s.grid_values) v = out.normalizer.apply(v);
  }
  return out;
}

// ---- JSON-lines dataset files ----

inline nlohmann::json sample_to_json(const TimeSeriesSample& s) {
  nlohmann::json j;
  j["times"] = s.times;
  j["values"] = s.values;
  j["split"] = s.split;
  if (s.has_grid()) {
    j["grid_times"] = s.grid_times;
    j["grid_values"] = s.grid_values;
  }
  j["meta"] = s.meta;
  j["role"] = role_name(s.role);
  return j;
}

inline TimeSeriesSample sample_from_json(const nlohmann::json& j) {
  TimeSeriesSample s;
  s.times = j.at("times").get<std::vector<double>>();
  s.values = j.at("values").get<std::vector<double>>();
  s.split = j.at("split").get<std::size_t>();
  if (j.contains("grid_times")) {
    s.grid_times = j.at("grid_times").get<std::vector<double>>();
    s.grid_values = j.at("grid_values").get<std::vector<double>>();
  }
  if (j.contains("meta")) s.meta = j.at("meta");
  const std::string role = j.at("role").get<std::string>();
  if (role == "train") {
    s.role = Role::train;
  } else if (role == "test") {
    s.role = Role::test;
  } else {
    throw DataError("unknown role '" + role + "'");
  }
  return s;
}

/// Writes via a temporary file and rename.
inline void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + tmp.string());
    for (const auto& s : d.samples) os << sample_to_json(s).dump() << '\n';
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset " + path.string());
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      d.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  d.validate();
  return d;
}

}  // namespace pode
