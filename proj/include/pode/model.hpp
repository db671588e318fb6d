#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pode/autodiff.hpp"
#include "pode/nets.hpp"
#include "pode/ode.hpp"
#include "pode/random.hpp"

namespace pode {

struct ModelConfig {
  std::size_t d_latent = 16;
  std::size_t encoder_width = 64;
  std::size_t hidden_width = 32;
  int max_stage = 3;
  /// Bound for weights of groups added after the first.
  double init_scale = 0.1;
  double max_step = 0.05;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One series as the model sees it: observed prefix [0, split), target
/// suffix [split, n).
struct SeriesView {
  std::span<const double> times;
  std::span<const double> values;
  std::size_t split = 0;
};

struct ForecastRequest {
  std::vector<double> obs_times;
  std::vector<double> obs_values;
  std::vector<double> query_times;
};

class StageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// GRU encoder -> latent ODE -> feed-forward decoder, grown one layer group
/// per stack at each curriculum stage.
class LatentOdeModel {
 public:
  explicit LatentOdeModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.max_stage < 1) throw std::invalid_argument("max_stage must be >= 1");
    if (cfg.d_latent == 0 || cfg.encoder_width == 0 || cfg.hidden_width == 0)
      throw std::invalid_argument("model widths must be positive");
    Rng rng = Rng::derived(cfg.seed, 0);
    encoder_ = ProgressiveStack<GruLayer>(
        "encoder", GruLayer("encoder.g0", 2, cfg.encoder_width, 0.0, rng), cfg.encoder_width);
    z0_proj_ = DenseLayer("z0_proj", cfg.encoder_width, cfg.d_latent, Activation::identity, 0.0, rng);
    dyn_in_ = DenseLayer("dynamics.in", cfg.d_latent, cfg.hidden_width, Activation::tanh, 0.0, rng);
    dynamics_ = ProgressiveStack<DenseLayer>(
        "dynamics",
        DenseLayer("dynamics.g0", cfg.hidden_width, cfg.hidden_width, Activation::tanh, 0.0, rng),
        cfg.hidden_width);
    dyn_out_ = DenseLayer("dynamics.out", cfg.hidden_width, cfg.d_latent, Activation::identity, 0.0, rng);
    decoder_ = ProgressiveStack<DenseLayer>(
        "decoder",
        DenseLayer("decoder.g0", cfg.d_latent, cfg.hidden_width, Activation::tanh, 0.0, rng),
        cfg.hidden_width);
    head_ = DenseLayer("decoder.head", cfg.hidden_width, 1, Activation::identity, 0.0, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int stage() const { return stage_; }
  SolveSpec solve_spec() const { return SolveSpec{cfg_.max_step}; }

  /// Adds one group to the encoder, dynamics and decoder stacks at alpha 0.
  ///
  /// New weights come from a stream keyed by (seed, stage), so a model grown
  /// to stage k holds the same initial weights however the growth was paced.
  void grow_stage() {
    if (stage_ >= cfg_.max_stage)
      throw StageError("grow_stage: model already at final stage " + std::to_string(cfg_.max_stage));
    ++stage_;
    Rng rng = Rng::derived(cfg_.seed, static_cast<std::uint64_t>(stage_));
    encoder_.add_group(cfg_.init_scale, rng, stage_);
    dynamics_.add_group(cfg_.init_scale, rng, stage_);
    decoder_.add_group(cfg_.init_scale, rng, stage_);
  }

  /// Sets the blend weight of group `index` in all three stacks.
  void set_alpha(std::size_t index, double a) {
    encoder_.set_alpha(index, a);
    dynamics_.set_alpha(index, a);
    decoder_.set_alpha(index, a);
  }

  ProgressiveStack<GruLayer>& encoder() { return encoder_; }
  ProgressiveStack<DenseLayer>& dynamics_stack() { return dynamics_; }
  ProgressiveStack<DenseLayer>& decoder() { return decoder_; }
  DenseLayer& z0_proj() { return z0_proj_; }
  DenseLayer& dynamics_in() { return dyn_in_; }
  DenseLayer& dynamics_out() { return dyn_out_; }
  DenseLayer& head() { return head_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto append = [&](std::vector<Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    append(encoder_.parameters());
    append(z0_proj_.parameters());
    append(dyn_in_.parameters());
    append(dynamics_.parameters());
    append(dyn_out_.parameters());
    append(decoder_.parameters());
    append(head_.parameters());
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->size();
    return n;
  }

  /// dz/dt for a latent batch [rows, d_latent]; time-invariant.
  Var dynamics(const Var& z) {
    return dyn_out_.forward(dynamics_.forward(dyn_in_.forward(z)));
  }

  /// Maps latents [rows, d_latent] to outputs [rows, 1].
  Var decode(const Var& z) { return head_.forward(decoder_.forward(z)); }

  /// Encodes the observed prefix of each row into z0 [rows, d_latent],
  /// anchored at the row's last observed time. The GRU reads (value, dt)
  /// pairs forward in time with dt of the first observation set to 0.
  /// Rows must share the observation count.
  Var encode(Tape& tape, std::span<const SeriesView> rows) {
    if (rows.empty()) throw std::invalid_argument("encode: empty batch");
    const std::size_t n_obs = rows[0].split;
    if (n_obs == 0) throw std::invalid_argument("encode: at least one observation required");
    for (const SeriesView& r : rows)
      if (r.split != n_obs) throw std::invalid_argument("encode: rows must share the observation count");
    const std::size_t batch = rows.size();
    std::vector<Var> inputs;
    inputs.reserve(n_obs);
    for (std::size_t i = 0; i < n_obs; ++i) {
      Tensor x(Shape{batch, 2});
      for (std::size_t b = 0; b < batch; ++b) {
        x.at(b, 0) = rows[b].values[i];
        x.at(b, 1) = i == 0 ? 0.0 : rows[b].times[i] - rows[b].times[i - 1];
      }
      inputs.push_back(tape.constant(std::move(x)));
    }
    std::vector<Var> hidden = encoder_.forward(inputs, batch);
    return z0_proj_.forward(hidden.back());
  }

  /// Predictions for each row at its query times; [rows][queries].
  std::vector<std::vector<double>> forecast(std::span<const ForecastRequest> requests) {
    if (requests.empty()) return {};
    std::vector<SeriesView> views;
    std::vector<double> t0;
    std::vector<std::vector<double>> queries;
    for (const ForecastRequest& r : requests) {
      if (r.obs_times.size() != r.obs_values.size())
        throw std::invalid_argument("forecast: observed times and values differ in length");
      views.push_back(SeriesView{r.obs_times, r.obs_values, r.obs_times.size()});
      t0.push_back(r.obs_times.empty() ? 0.0 : r.obs_times.back());
      queries.push_back(r.query_times);
    }
    Tape tape;
    Var z0 = encode(tape, views);
    const std::size_t q = queries[0].size();
    std::vector<std::vector<double>> out(requests.size(), std::vector<double>(q));
    if (q == 0) return out;
    std::vector<Var> latents = integrate_paths([this](const Var& z) { return dynamics(z); }, z0, t0,
                                               queries, solve_spec());
    Var y = decode(concat_rows(latents));
    const std::size_t rows = requests.size();
    for (std::size_t k = 0; k < q; ++k)
      for (std::size_t b = 0; b < rows; ++b) out[b][k] = y.value()[k * rows + b];
    return out;
  }

  /// Training objective: mean squared error over the reconstructed observed
  /// points after the first and every forecast point, one mean over all of
  /// them. Reconstruction runs the dynamics backward from the anchor.
  /// Rows must share length and split.
  Var loss(Tape& tape, std::span<const SeriesView> rows) {
    if (rows.empty()) throw std::invalid_argument("loss: empty batch");
    const std::size_t n = rows[0].times.size();
    const std::size_t split = rows[0].split;
    for (const SeriesView& r : rows) {
      if (r.times.size() != n || r.values.size() != n || r.split != split)
        throw std::invalid_argument("loss: rows must share length and split");
    }
    if (split == 0 || split >= n) throw std::invalid_argument("loss: split must lie inside the series");
    const std::size_t batch = rows.size();
    Var z0 = encode(tape, rows);
    std::vector<Var> latents;
    std::vector<double> targets;

    std::vector<double> anchor(batch);
    for (std::size_t b = 0; b < batch; ++b) anchor[b] = rows[b].times[split - 1];

    // reconstruction of indices split-1 .. 1, walking back from the anchor
    if (split >= 2) {
      std::vector<std::vector<double>> back(batch);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = split - 1; i >= 1; --i) back[b].push_back(anchor[b] - rows[b].times[i]);
      std::vector<double> zero(batch, 0.0);
      auto reversed = [this](const Var& z) { return scale(dynamics(z), -1.0); };
      std::vector<Var> recon = integrate_paths(reversed, z0, zero, back, solve_spec());
      for (std::size_t k = 0; k < recon.size(); ++k) {
        latents.push_back(recon[k]);
        for (std::size_t b = 0; b < batch; ++b) targets.push_back(rows[b].values[split - 1 - k]);
      }
    }

    std::vector<std::vector<double>> fwd(batch);
    for (std::size_t b = 0; b < batch; ++b)
      fwd[b].assign(rows[b].times.begin() + static_cast<std::ptrdiff_t>(split), rows[b].times.end());
    std::vector<Var> ahead = integrate_paths([this](const Var& z) { return dynamics(z); }, z0, anchor,
                                             fwd, solve_spec());
    for (std::size_t k = 0; k < ahead.size(); ++k) {
      latents.push_back(ahead[k]);
      for (std::size_t b = 0; b < batch; ++b) targets.push_back(rows[b].values[split + k]);
    }

    Var pred = decode(concat_rows(latents));
    const std::size_t n_targets = targets.size();
    Var truth = tape.constant(Tensor(Shape{n_targets, 1}, std::move(targets)));
    return mean(square(pred - truth));
  }

  // ---- checkpoint container ----

  nlohmann::json to_json() {
    nlohmann::json j;
    j["format"] = "pode-checkpoint";
    j["version"] = 1;
    j["config"] = {{"d_latent", cfg_.d_latent},         {"encoder_width", cfg_.encoder_width},
                   {"hidden_width", cfg_.hidden_width}, {"max_stage", cfg_.max_stage},
                   {"init_scale", cfg_.init_scale},     {"max_step", cfg_.max_step},
                   {"seed", cfg_.seed}};
    j["stage"] = stage_;
    j["alphas"] = {{"encoder", encoder_.alphas()},
                   {"dynamics", dynamics_.alphas()},
                   {"decoder", decoder_.alphas()}};
    nlohmann::json params = nlohmann::json::object();
    for (Parameter* p : parameters()) {
      params[p->name] = {{"shape", p->value.shape()},
                         {"stage_of_birth", p->stage_of_birth},
                         {"data", p->value.vec()}};
    }
    j["parameters"] = std::move(params);
    return j;
  }

  static LatentOdeModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pode-checkpoint" || j.value("version", 0) != 1)
      throw std::runtime_error("not a version-1 pode checkpoint");
    const auto& c = j.at("config");
    ModelConfig cfg;
    cfg.d_latent = c.at("d_latent").get<std::size_t>();
    cfg.encoder_width = c.at("encoder_width").get<std::size_t>();
    cfg.hidden_width = c.at("hidden_width").get<std::size_t>();
    cfg.max_stage = c.at("max_stage").get<int>();
    cfg.init_scale = c.at("init_scale").get<double>();
    cfg.max_step = c.at("max_step").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    LatentOdeModel m(cfg);
    const int stage = j.at("stage").get<int>();
    while (m.stage() < stage) m.grow_stage();
    const auto enc = j.at("alphas").at("encoder").get<std::vector<double>>();
    const auto dyn = j.at("alphas").at("dynamics").get<std::vector<double>>();
    const auto dec = j.at("alphas").at("decoder").get<std::vector<double>>();
    for (std::size_t i = 1; i < enc.size(); ++i) {
      m.encoder_.set_alpha(i, enc[i]);
      m.dynamics_.set_alpha(i, dyn.at(i));
      m.decoder_.set_alpha(i, dec.at(i));
    }
    const auto& params = j.at("parameters");
    for (Parameter* p : m.parameters()) {
      const auto& e = params.at(p->name);
      Tensor v(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
      if (!v.same_shape(p->value))
        throw std::runtime_error("checkpoint parameter " + p->name + " has shape " +
                                 shape_str(v.shape()) + ", expected " + shape_str(p->value.shape()));
      p->value = std::move(v);
      p->stage_of_birth = e.at("stage_of_birth").get<int>();
    }
    return m;
  }

  void save(const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw std::runtime_error("cannot write " + tmp.string());
      os << to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static LatentOdeModel load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    return from_json(nlohmann::json::parse(is));
  }

 private:
  ModelConfig cfg_;
  int stage_ = 1;
  ProgressiveStack<GruLayer> encoder_;
  DenseLayer z0_proj_;
  DenseLayer dyn_in_;
  ProgressiveStack<DenseLayer> dynamics_;
  DenseLayer dyn_out_;
  ProgressiveStack<DenseLayer> decoder_;
  DenseLayer head_;
};

/// Mean squared error between forecasts and truth over all points.
inline double forecast_mse(const std::vector<std::vector<double>>& pred,
                           const std::vector<std::vector<double>>& truth) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < pred.size(); ++r)
    for (std::size_t k = 0; k < pred[r].size(); ++k) {
      const double d = pred[r][k] - truth.at(r).at(k);
      s += d * d;
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace pode
