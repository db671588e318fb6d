#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pode/autodiff.hpp"
#include "pode/random.hpp"

namespace pode {

namespace detail {

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

/// act(x W + b), W: [in, out], b: [out].
class DenseLayer {
 public:
  DenseLayer() = default;

  /// Weights and biases ~ Uniform(-init_scale, init_scale). A non-positive
  /// init_scale selects 1/sqrt(in).
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, Activation act,
             double init_scale, Rng& rng, int stage = 1)
      : act_(act) {
    const double bound = init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = Parameter(name + ".w", detail::uniform_tensor({in, out}, bound, rng), stage);
    bias_ = Parameter(name + ".b", detail::uniform_tensor({out}, bound, rng), stage);
  }

  std::size_t in() const { return weight_.value.shape()[0]; }
  std::size_t out() const { return weight_.value.shape()[1]; }
  Activation activation() const { return act_; }

  Var forward(const Var& x) {
    Tape& t = *x.tape();
    return linear(x, t.param(weight_), t.param(bias_), act_);
  }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

 private:
  Parameter weight_;
  Parameter bias_;
  Activation act_ = Activation::identity;
};

inline Var dense_forward(DenseLayer& layer, const Var& x) { return layer.forward(x); }

/// Gated recurrent unit with gates packed [reset | update | candidate].
class GruLayer {
 public:
  GruLayer() = default;

  GruLayer(const std::string& name, std::size_t in, std::size_t hidden, double init_scale,
           Rng& rng, int stage = 1) {
    const double bound =
        init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(hidden));
    w_x_ = Parameter(name + ".w_x", detail::uniform_tensor({in, 3 * hidden}, bound, rng), stage);
    w_h_ = Parameter(name + ".w_h", detail::uniform_tensor({hidden, 3 * hidden}, bound, rng), stage);
    b_x_ = Parameter(name + ".b_x", detail::uniform_tensor({3 * hidden}, bound, rng), stage);
    b_h_ = Parameter(name + ".b_h", detail::uniform_tensor({3 * hidden}, bound, rng), stage);
  }

  std::size_t in() const { return w_x_.value.shape()[0]; }
  std::size_t hidden() const { return w_h_.value.shape()[0]; }

  Var step(const Var& x, const Var& h) {
    Tape& t = *x.tape();
    return gru_cell(x, h, t.param(w_x_), t.param(w_h_), t.param(b_x_), t.param(b_h_));
  }

  /// Hidden state after each input, in input order.
  std::vector<Var> forward(std::span<const Var> inputs, const Var& h0) {
    std::vector<Var> out;
    out.reserve(inputs.size());
    Var h = h0;
    for (const Var& x : inputs) {
      h = step(x, h);
      out.push_back(h);
    }
    return out;
  }

  std::vector<Parameter*> parameters() { return {&w_x_, &w_h_, &b_x_, &b_h_}; }

 private:
  Parameter w_x_, w_h_, b_x_, b_h_;
};

inline std::vector<Var> gru_forward(GruLayer& layer, std::span<const Var> inputs, const Var& h0) {
  return layer.forward(inputs, h0);
}

/// Ordered layer groups with per-group blend weights.
///
/// Group 0 maps the stack input to width H and is never blended. Every later
/// group maps H -> H and enters as h <- (1 - a) h + a g(h). With a = 0 the
/// group is skipped outright, so growth leaves outputs bit-identical.
template <class Layer>
class ProgressiveStack {
  static constexpr bool recurrent = std::is_same_v<Layer, GruLayer>;

 public:
  ProgressiveStack() = default;

  ProgressiveStack(std::string name, Layer first, std::size_t width,
                   Activation act = Activation::tanh)
      : name_(std::move(name)), width_(width), act_(act) {
    groups_.push_back(std::move(first));
    alphas_.push_back(1.0);
  }

  std::size_t size() const { return groups_.size(); }
  std::size_t width() const { return width_; }
  const std::string& name() const { return name_; }
  Layer& group(std::size_t i) { return groups_.at(i); }
  double alpha(std::size_t i) const { return alphas_.at(i); }
  const std::vector<double>& alphas() const { return alphas_; }

  std::string group_name(std::size_t i) const { return name_ + ".g" + std::to_string(i); }

  /// Appends an H -> H group at alpha 0 with weights ~ Uniform(-s, s).
  void add_group(double init_scale, Rng& rng, int stage) {
    const std::string n = group_name(groups_.size());
    if constexpr (recurrent) {
      groups_.emplace_back(n, width_, width_, init_scale, rng, stage);
    } else {
      groups_.emplace_back(n, width_, width_, act_, init_scale, rng, stage);
    }
    alphas_.push_back(0.0);
  }

  void set_alpha(std::size_t index, double a) {
    if (index == 0 || index >= groups_.size())
      throw std::out_of_range(name_ + ": blend index " + std::to_string(index) + " out of range");
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument(name_ + ": alpha " + std::to_string(a) + " outside [0, 1]");
    alphas_[index] = a;
  }

  Var forward(const Var& x)
    requires(!recurrent)
  {
    Var h = groups_[0].forward(x);
    for (std::size_t i = 1; i < groups_.size(); ++i) {
      const double a = alphas_[i];
      if (a == 0.0) continue;
      Var g = groups_[i].forward(h);
      h = a == 1.0 ? g : blend(h, g, a);
    }
    return h;
  }

  /// Blending applies per time step to the hidden-state sequence.
  std::vector<Var> forward(std::span<const Var> inputs, std::size_t batch)
    requires recurrent
  {
    if (inputs.empty()) return {};
    Tape& t = *inputs[0].tape();
    Var h0 = t.constant(Tensor(Shape{batch, width_}, 0.0));
    std::vector<Var> seq = groups_[0].forward(inputs, h0);
    for (std::size_t i = 1; i < groups_.size(); ++i) {
      const double a = alphas_[i];
      if (a == 0.0) continue;
      std::vector<Var> g = groups_[i].forward(seq, h0);
      for (std::size_t k = 0; k < seq.size(); ++k) seq[k] = a == 1.0 ? g[k] : blend(seq[k], g[k], a);
    }
    return seq;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (Layer& l : groups_)
      for (Parameter* p : l.parameters()) out.push_back(p);
    return out;
  }

 private:
  std::string name_;
  std::size_t width_ = 0;
  Activation act_ = Activation::tanh;
  std::vector<Layer> groups_;
  std::vector<double> alphas_;
};

template <class Layer>
auto stack_forward(ProgressiveStack<Layer>& stack, const Var& x) {
  return stack.forward(x);
}

}  // namespace pode
