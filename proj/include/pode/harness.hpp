#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pode/baselines.hpp"
#include "pode/curriculum.hpp"
#include "pode/data.hpp"
#include "pode/model.hpp"
#include "pode/optim.hpp"
#include "pode/random.hpp"

#ifndef PODE_VERSION
#define PODE_VERSION "dev"
#endif

namespace pode {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int stage, int epoch, const std::string& what)
      : std::runtime_error("training diverged at stage " + std::to_string(stage) + ", epoch " +
                           std::to_string(epoch) + ": " + what),
        stage_(stage),
        epoch_(epoch) {}
  int stage() const noexcept { return stage_; }
  int epoch() const noexcept { return epoch_; }

 private:
  int stage_;
  int epoch_;
};

enum class Mode { node, pode, static_lag, historical_average, arima };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::node: return "node";
    case Mode::pode: return "pode";
    case Mode::static_lag: return "static";
    case Mode::historical_average: return "ha";
    case Mode::arima: return "arima";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "node") return Mode::node;
  if (s == "pode") return Mode::pode;
  if (s == "static") return Mode::static_lag;
  if (s == "ha") return Mode::historical_average;
  if (s == "arima") return Mode::arima;
  throw ConfigError("unknown mode '" + s + "' (expected node, pode, static, ha or arima)");
}

/// Settings for the classical baselines. A zero lag or period means
/// "estimate per sample" (dominant DFT period of the history).
struct BaselineOptions {
  std::size_t static_lag = 0;
  std::size_t period = 0;
  double decay = 0.9;
  /// Preceding samples (in dataset order) prepended to each history.
  std::size_t context_samples = 0;
};

/// Everything a run depends on. Serialized as flat `key = value` lines.
struct RunConfig {
  Mode mode = Mode::pode;
  std::string dataset;
  std::string output_dir = "run";
  CurriculumPlan plan;
  double learning_rate = 1e-2;
  double lr_decay = 0.995;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  ModelConfig model;
  BaselineOptions baseline;

  int total_epochs() const { return plan.total_epochs(); }

  void validate() const {
    plan.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (model.max_stage != plan.k) throw ConfigError("model stage count must equal curriculum k");
    if (!(baseline.decay > 0.0 && baseline.decay <= 1.0)) throw ConfigError("ha_decay must lie in (0, 1]");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string_view t = trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are errors.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "mode") {
    c.mode = parse_mode(v);
  } else if (key == "dataset") {
    c.dataset = v;
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "k") {
    c.plan.k = static_cast<int>(detail::to_int(key, v));
    c.model.max_stage = c.plan.k;
  } else if (key == "cutoffs") {
    c.plan.cutoffs.clear();
    for (const auto& s : detail::split_list(v)) c.plan.cutoffs.push_back(detail::to_double(key, s));
  } else if (key == "epochs_per_stage") {
    c.plan.epochs_per_stage.clear();
    for (const auto& s : detail::split_list(v))
      c.plan.epochs_per_stage.push_back(static_cast<int>(detail::to_int(key, s)));
  } else if (key == "blend_fraction") {
    c.plan.blend_fraction = detail::to_double(key, v);
  } else if (key == "learning_rate") {
    c.learning_rate = detail::to_double(key, v);
  } else if (key == "lr_decay") {
    c.lr_decay = detail::to_double(key, v);
  } else if (key == "batch_size") {
    c.batch_size = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "seed") {
    c.seed = static_cast<std::uint64_t>(detail::to_int(key, v));
  } else if (key == "d_latent") {
    c.model.d_latent = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "encoder_width") {
    c.model.encoder_width = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "hidden_width") {
    c.model.hidden_width = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "init_scale") {
    c.model.init_scale = detail::to_double(key, v);
  } else if (key == "max_step") {
    c.model.max_step = detail::to_double(key, v);
  } else if (key == "static_lag") {
    c.baseline.static_lag = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "ha_period") {
    c.baseline.period = static_cast<std::size_t>(detail::to_int(key, v));
  } else if (key == "ha_decay") {
    c.baseline.decay = detail::to_double(key, v);
  } else if (key == "context_samples") {
    c.baseline.context_samples = static_cast<std::size_t>(detail::to_int(key, v));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(c, std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
  }
}

/// Applies a `key=value` override.
inline void apply_override(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
  set_config_value(c, std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig c;
  apply_config_text(c, ss.str());
  return c;
}

/// PODE_SEED, when set, replaces the configured seed.
inline void apply_seed_env(RunConfig& c) {
  if (const char* s = std::getenv("PODE_SEED"); s && *s) c.seed = static_cast<std::uint64_t>(detail::to_int("PODE_SEED", s));
}

inline std::map<std::string, std::string> config_entries(const RunConfig& c) {
  return {
      {"mode", mode_name(c.mode)},
      {"dataset", c.dataset},
      {"output_dir", c.output_dir},
      {"k", std::to_string(c.plan.k)},
      {"cutoffs", detail::join(c.plan.cutoffs)},
      {"epochs_per_stage", detail::join(c.plan.epochs_per_stage)},
      {"blend_fraction", detail::fmt_double(c.plan.blend_fraction)},
      {"learning_rate", detail::fmt_double(c.learning_rate)},
      {"lr_decay", detail::fmt_double(c.lr_decay)},
      {"batch_size", std::to_string(c.batch_size)},
      {"seed", std::to_string(c.seed)},
      {"d_latent", std::to_string(c.model.d_latent)},
      {"encoder_width", std::to_string(c.model.encoder_width)},
      {"hidden_width", std::to_string(c.model.hidden_width)},
      {"init_scale", detail::fmt_double(c.model.init_scale)},
      {"max_step", detail::fmt_double(c.model.max_step)},
      {"static_lag", std::to_string(c.baseline.static_lag)},
      {"ha_period", std::to_string(c.baseline.period)},
      {"ha_decay", detail::fmt_double(c.baseline.decay)},
      {"context_samples", std::to_string(c.baseline.context_samples)},
  };
}

inline std::string config_text(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

/// Kind-specific defaults: curriculum cutoffs when none are configured, and
/// the baseline season for daily traffic series.
inline void fill_dataset_defaults(RunConfig& c, const Dataset& d) {
  const bool traffic = !d.samples.empty() && d.samples[0].meta.contains("sensor_id");
  if (c.plan.cutoffs.empty() && c.plan.k >= 2) {
    const CurriculumPlan def = traffic ? default_pems_plan() : default_synthetic_plan();
    if (c.plan.k == def.k) {
      c.plan.cutoffs = def.cutoffs;
    } else {
      // geometric spacing between the default extremes
      const double lo = def.cutoffs.front(), hi = def.cutoffs.back();
      for (int i = 0; i < c.plan.k - 1; ++i)
        c.plan.cutoffs.push_back(c.plan.k == 2 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (c.plan.k - 2)));
    }
  }
  if (traffic) {
    if (c.baseline.period == 0) c.baseline.period = kReadingsPerDay;
    if (c.baseline.static_lag == 0) c.baseline.static_lag = kReadingsPerDay;
    if (c.baseline.context_samples == 0) c.baseline.context_samples = 7;
  }
}

// ---- checkpoints with their normalizer ----

struct Checkpoint {
  LatentOdeModel model;
  Normalizer normalizer;
};

inline void save_checkpoint(const std::filesystem::path& path, LatentOdeModel& m, const Normalizer& n) {
  nlohmann::json j = m.to_json();
  j["normalizer"] = {{"shift", n.shift}, {"scale", n.scale}};
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const nlohmann::json j = nlohmann::json::parse(is);
  Normalizer n;
  if (j.contains("normalizer")) {
    n.shift = j["normalizer"].at("shift").get<double>();
    n.scale = j["normalizer"].at("scale").get<double>();
  }
  return Checkpoint{LatentOdeModel::from_json(j), n};
}

// ---- evaluation ----

struct EvalResult {
  double mse = 0.0;
  std::vector<double> per_sample;
};

/// Anything that maps a sample to forecasts (raw units) at its forecast times.
using Forecaster = std::function<std::vector<std::vector<double>>(std::span<const TimeSeriesSample* const>)>;

/// Forecast-half MSE in raw units over the given samples.
inline EvalResult evaluate_forecaster(const Forecaster& f, std::span<const TimeSeriesSample* const> samples,
                                      std::size_t batch_size) {
  EvalResult r;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    auto chunk = samples.subspan(start, end - start);
    const auto preds = f(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto truth = chunk[i]->forecast_values();
      if (preds.at(i).size() != truth.size()) throw std::logic_error("forecaster returned wrong length");
      double s = 0.0;
      for (std::size_t k = 0; k < truth.size(); ++k) {
        const double d = preds[i][k] - truth[k];
        s += d * d;
      }
      total += s;
      count += truth.size();
      r.per_sample.push_back(s / static_cast<double>(truth.size()));
    }
  }
  r.mse = count ? total / static_cast<double>(count) : 0.0;
  return r;
}

/// Wraps a model: inputs normalized, outputs denormalized. Batches with
/// unequal shapes are forecast one sample at a time.
inline Forecaster model_forecaster(LatentOdeModel& m, const Normalizer& norm) {
  return [&m, norm](std::span<const TimeSeriesSample* const> chunk) {
    auto request = [&](const TimeSeriesSample* s) {
      ForecastRequest r = s->forecast_request();
      for (double& v : r.obs_values) v = norm.apply(v);
      return r;
    };
    bool uniform = true;
    for (const auto* s : chunk)
      uniform = uniform && s->split == chunk[0]->split && s->size() == chunk[0]->size();
    std::vector<std::vector<double>> out;
    auto run = [&](std::span<const TimeSeriesSample* const> part) {
      std::vector<ForecastRequest> reqs;
      for (const auto* s : part) reqs.push_back(request(s));
      for (auto& row : m.forecast(reqs)) {
        for (double& v : row) v = norm.invert(v);
        out.push_back(std::move(row));
      }
    };
    if (uniform) {
      run(chunk);
    } else {
      for (std::size_t i = 0; i < chunk.size(); ++i) run(chunk.subspan(i, 1));
    }
    return out;
  };
}

// ---- classical baselines on a regular clock ----

namespace detail {

inline double regular_step(const TimeSeriesSample& s) {
  if (s.has_grid())
    return (s.grid_times.back() - s.grid_times.front()) / static_cast<double>(s.grid_times.size() - 1);
  return (s.times[s.split - 1] - s.times[0]) / static_cast<double>(std::max<std::size_t>(1, s.split - 1));
}

}  // namespace detail

/// Forecasts for one sample from a classical model. The observed prefix is
/// linearly interpolated onto a regular clock ending at the last observation
/// (optionally preceded by earlier samples), the model forecasts on that
/// clock, and the result is interpolated at the sample's forecast times.
inline std::vector<double> baseline_forecast(Mode mode, const BaselineOptions& opt, const TimeSeriesSample& s,
                                             std::span<const TimeSeriesSample> context = {}) {
  const double step = detail::regular_step(s);
  const double t_last = s.times[s.split - 1];
  std::span<const double> obs_t(s.times.data(), s.split);
  std::span<const double> obs_v(s.values.data(), s.split);
  std::vector<double> hist;
  for (const TimeSeriesSample& c : context) hist.insert(hist.end(), c.values.begin(), c.values.end());
  const auto back = static_cast<std::size_t>(std::floor((t_last - s.times[0]) / step + 1e-9));
  for (std::size_t j = back + 1; j-- > 0;)
    hist.push_back(detail::interpolate(obs_t, obs_v, t_last - static_cast<double>(j) * step));
  const double t_end = s.times.back();
  const auto horizon = static_cast<std::size_t>(std::ceil((t_end - t_last) / step - 1e-9));

  std::vector<double> fc;
  switch (mode) {
    case Mode::static_lag: {
      const std::size_t lag = opt.static_lag ? opt.static_lag : dominant_period(hist);
      fc = static_predict(StaticModel{lag}, hist, horizon);
      break;
    }
    case Mode::historical_average: {
      const std::size_t period = opt.period ? opt.period : dominant_period(hist);
      fc = ha_predict(HistoricalAverage{period, opt.decay}, hist, horizon);
      break;
    }
    case Mode::arima:
      fc = arima_predict(arima_auto(hist), horizon);
      break;
    default:
      throw std::invalid_argument("baseline_forecast: not a classical mode");
  }
  std::vector<double> ts{t_last};
  std::vector<double> vs{hist.back()};
  for (std::size_t h = 0; h < horizon; ++h) {
    ts.push_back(t_last + static_cast<double>(h + 1) * step);
    vs.push_back(fc[h]);
  }
  std::vector<double> out;
  for (double t : s.forecast_times()) out.push_back(detail::interpolate(ts, vs, t));
  return out;
}

inline EvalResult evaluate_baseline(Mode mode, const BaselineOptions& opt, const Dataset& d, Role role) {
  std::vector<const TimeSeriesSample*> picked;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    if (d.samples[i].role == role) {
      picked.push_back(&d.samples[i]);
      index.push_back(i);
    }
  std::map<const TimeSeriesSample*, std::size_t> where;
  for (std::size_t k = 0; k < picked.size(); ++k) where[picked[k]] = index[k];
  Forecaster f = [&](std::span<const TimeSeriesSample* const> chunk) {
    std::vector<std::vector<double>> out;
    for (const auto* s : chunk) {
      const std::size_t i = where.at(s);
      const std::size_t first = i >= opt.context_samples ? i - opt.context_samples : 0;
      out.push_back(baseline_forecast(mode, opt, *s, std::span<const TimeSeriesSample>(d.samples).subspan(first, i - first)));
    }
    return out;
  };
  return evaluate_forecaster(f, picked, 50);
}

// ---- training ----

struct StageCurve {
  int stage = 1;
  std::vector<double> loss;
  std::vector<double> alpha;
};

struct TrainResult {
  LatentOdeModel model;
  Normalizer normalizer;
  std::vector<StageCurve> curves;
  std::size_t updates = 0;
  double seconds = 0.0;
};

/// Called after every epoch with (stage, epoch within stage, mean loss).
using EpochCallback = std::function<void(int, int, double)>;

namespace detail {

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch)));
  return out;
}

}  // namespace detail

/// Trains a NODE or PODE model on the train split.
///
/// PODE: stage s trains on stage_dataset(s); from stage 2 on, one group is
/// added to every stack and its alpha follows alpha_at per epoch. NODE: the
/// full k-group model with every alpha at 1, trained on raw data for the
/// same total number of epochs. Both update every parameter on every step
/// with Adam at learning_rate * lr_decay^epoch. `checkpoint_dir`, when not
/// empty, receives stage_<s>.json at every stage boundary.
inline TrainResult train(RunConfig cfg, const Dataset& raw, const std::filesystem::path& checkpoint_dir = {},
                         const EpochCallback& on_epoch = {}) {
  if (cfg.mode != Mode::node && cfg.mode != Mode::pode) throw ConfigError("train: mode must be node or pode");
  fill_dataset_defaults(cfg, raw);
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();

  const Dataset data = normalize(raw);
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  TrainResult result{LatentOdeModel(mc), data.normalizer, {}, 0, 0.0};
  LatentOdeModel& model = result.model;
  const int k = cfg.plan.k;

  Adam opt;
  Rng shuffle = Rng::derived(cfg.seed, 0x5eed);
  int global_epoch = 0;

  auto run_stage = [&](int stage_label, const Dataset& stage_data, int epochs, bool ramp) {
    std::vector<const TimeSeriesSample*> train_set = stage_data.with_role(Role::train);
    if (train_set.empty()) throw DataError("train: no training samples");
    StageCurve curve;
    curve.stage = stage_label;
    for (int e = 0; e < epochs; ++e) {
      double a = 1.0;
      if (ramp) {
        a = alpha_at(cfg.plan, stage_label, e);
        model.set_alpha(static_cast<std::size_t>(stage_label - 1), a);
      }
      const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(global_epoch));
      double loss_sum = 0.0;
      const auto batches = detail::make_batches(train_set.size(), cfg.batch_size, shuffle);
      for (const auto& b : batches) {
        std::vector<SeriesView> views;
        for (std::size_t i : b) views.push_back(train_set[i]->view());
        Tape tape;
        Var l = model.loss(tape, views);
        const double lv = l.value().item();
        if (!std::isfinite(lv)) throw TrainingDiverged(stage_label, e, "non-finite loss");
        tape.backward(l);
        auto params = model.parameters();
        opt.step(params, lr);
        loss_sum += lv;
        ++result.updates;
      }
      const double mean_loss = loss_sum / static_cast<double>(batches.size());
      curve.loss.push_back(mean_loss);
      curve.alpha.push_back(a);
      if (on_epoch) on_epoch(stage_label, e, mean_loss);
      ++global_epoch;
    }
    result.curves.push_back(std::move(curve));
    if (!checkpoint_dir.empty())
      save_checkpoint(checkpoint_dir / ("stage_" + std::to_string(stage_label) + ".json"), model, data.normalizer);
  };

  try {
    if (cfg.mode == Mode::pode) {
      for (int s = 1; s <= k; ++s) {
        if (s > 1) model.grow_stage();
        const Dataset stage_data = stage_dataset(data, s, cfg.plan);
        run_stage(s, stage_data, cfg.plan.epochs_per_stage[static_cast<std::size_t>(s - 1)], s > 1);
      }
    } else {
      while (model.stage() < k) {
        model.grow_stage();
        model.set_alpha(static_cast<std::size_t>(model.stage() - 1), 1.0);
      }
      run_stage(k, data, cfg.total_epochs(), false);
    }
  } catch (const IntegrationDiverged& e) {
    throw TrainingDiverged(result.curves.empty() ? 1 : result.curves.back().stage + 1, -1, e.what());
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---- reports ----

inline nlohmann::json build_stamp() {
  return {{"version", PODE_VERSION}, {"compiler", __VERSION__}};
}

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  // output_dir is where the report lands, not an input to the run
  for (const auto& [k, v] : config_entries(c))
    if (k != "output_dir") j[k] = v;
  return j;
}

/// Deterministic report: no timestamps or durations (those go to the
/// timing sidecar), so identical runs give identical bytes.
inline nlohmann::json metrics_report(const RunConfig& c, const EvalResult& train, const EvalResult& test,
                                     const std::vector<StageCurve>& curves, std::size_t updates,
                                     std::size_t parameter_count) {
  nlohmann::json j;
  j["config"] = config_json(c);
  j["mode"] = mode_name(c.mode);
  j["mse"] = {{"train", train.mse}, {"test", test.mse}};
  j["per_sample_test_mse"] = test.per_sample;
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& cv : curves) cs.push_back({{"stage", cv.stage}, {"loss", cv.loss}, {"alpha", cv.alpha}});
  j["curves"] = cs;
  j["parameter_updates"] = updates;
  j["parameter_count"] = parameter_count;
  j["build"] = build_stamp();
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

struct RunOutcome {
  nlohmann::json report;
  EvalResult test;
};

/// Full pipeline for one config: train (or fit baselines), evaluate both
/// splits, and write report.json, timing.json, config.txt and model.json
/// into cfg.output_dir.
inline RunOutcome run(RunConfig cfg, const EpochCallback& on_epoch = {}) {
  const Dataset raw = read_dataset(cfg.dataset);
  fill_dataset_defaults(cfg, raw);
  cfg.validate();
  const std::filesystem::path out = cfg.output_dir;
  std::filesystem::create_directories(out);
  const auto started = std::chrono::steady_clock::now();

  RunOutcome o;
  if (cfg.mode == Mode::node || cfg.mode == Mode::pode) {
    TrainResult tr = train(cfg, raw, out, on_epoch);
    Forecaster f = model_forecaster(tr.model, tr.normalizer);
    auto train_set = raw.with_role(Role::train);
    auto test_set = raw.with_role(Role::test);
    const EvalResult train_eval = evaluate_forecaster(f, train_set, cfg.batch_size);
    o.test = evaluate_forecaster(f, test_set, cfg.batch_size);
    save_checkpoint(out / "model.json", tr.model, tr.normalizer);
    o.report = metrics_report(cfg, train_eval, o.test, tr.curves, tr.updates, tr.model.parameter_count());
  } else {
    const EvalResult train_eval = evaluate_baseline(cfg.mode, cfg.baseline, raw, Role::train);
    o.test = evaluate_baseline(cfg.mode, cfg.baseline, raw, Role::test);
    o.report = metrics_report(cfg, train_eval, o.test, {}, 0, 0);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_json(out / "report.json", o.report);
  write_json(out / "timing.json", {{"wall_clock_seconds", secs}});
  {
    std::ofstream os(out / "config.txt");
    os << config_text(cfg);
  }
  return o;
}

/// Report for an existing checkpoint on a dataset's test split.
inline nlohmann::json evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                                          std::string* warning = nullptr) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset raw = read_dataset(dataset);
  if (warning && ck.model.stage() != ck.model.config().max_stage)
    *warning = "checkpoint is at stage " + std::to_string(ck.model.stage()) + " of " +
               std::to_string(ck.model.config().max_stage) + "; headline numbers need the final stage";
  Forecaster f = model_forecaster(ck.model, ck.normalizer);
  auto train_set = raw.with_role(Role::train);
  auto test_set = raw.with_role(Role::test);
  const EvalResult tr = evaluate_forecaster(f, train_set, 50);
  const EvalResult te = evaluate_forecaster(f, test_set, 50);
  nlohmann::json j;
  j["checkpoint"] = checkpoint.string();
  j["dataset"] = dataset.string();
  j["stage"] = ck.model.stage();
  j["mse"] = {{"train", tr.mse}, {"test", te.mse}};
  j["per_sample_test_mse"] = te.per_sample;
  j["build"] = build_stamp();
  return j;
}

}  // namespace pode
