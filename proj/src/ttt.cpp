// SPDX-License-Identifier: Apache-2.0
#include "ttc/ttt.hpp"

#include <cmath>

#include "ttc/error.hpp"

namespace ttc {

InnerVariant parse_inner_variant(const std::string& name) {
  if (name == "linear") return InnerVariant::linear;
  if (name == "one_layer_gate" || name == "gate") return InnerVariant::one_layer_gate;
  if (name == "two_layer" || name == "two_layer_mlp" || name == "2layer") return InnerVariant::two_layer;
  if (name == "three_layer" || name == "three_layer_mlp" || name == "3layer") return InnerVariant::three_layer;
  if (name == "swiglu") return InnerVariant::swiglu;
  throw ConfigError("unknown inner variant '" + name + "'");
}

std::string to_string(InnerVariant variant) {
  switch (variant) {
    case InnerVariant::linear: return "linear";
    case InnerVariant::one_layer_gate: return "one_layer_gate";
    case InnerVariant::two_layer: return "two_layer";
    case InnerVariant::three_layer: return "three_layer";
    case InnerVariant::swiglu: return "swiglu";
  }
  return "?";
}

std::vector<std::string> inner_weight_names(InnerVariant variant) {
  switch (variant) {
    case InnerVariant::linear: return {"w"};
    case InnerVariant::one_layer_gate: return {"wg", "w1"};
    case InnerVariant::two_layer: return {"w1", "w2"};
    case InnerVariant::three_layer: return {"w1", "wm", "w2"};
    case InnerVariant::swiglu: return {"wg", "wu", "wd"};
  }
  return {};
}

namespace {

std::vector<Shape> weight_shapes(InnerVariant variant, std::size_t d, std::size_t h) {
  switch (variant) {
    case InnerVariant::linear: return {{d, d}};
    case InnerVariant::one_layer_gate: return {{d, h}, {d, h}};
    case InnerVariant::two_layer: return {{d, h}, {h, d}};
    case InnerVariant::three_layer: return {{d, h}, {h, h}, {h, d}};
    case InnerVariant::swiglu: return {{d, h}, {d, h}, {h, d}};
  }
  return {};
}

}  // namespace

std::size_t inner_param_count(InnerVariant variant, std::size_t dim, std::size_t hidden) {
  std::size_t n = 0;
  for (const auto& s : weight_shapes(variant, dim, hidden)) n += shape_numel(s);
  return n;
}

InnerModel InnerModel::random(InnerVariant variant, std::size_t dim, Rng& rng, double stddev,
                              std::size_t hidden, ActivationKind act) {
  if (dim == 0) throw ConfigError("inner model dimension must be positive");
  if (hidden == 0) hidden = dim;
  if (variant == InnerVariant::one_layer_gate && hidden != dim) {
    throw ConfigError("one_layer_gate requires hidden == dim");
  }
  InnerModel m;
  m.variant = variant;
  m.act = act;
  for (auto& s : weight_shapes(variant, dim, hidden)) m.weights.push_back(Tensor::randn(s, rng, stddev));
  return m;
}

InnerModel InnerModel::from_weights(InnerVariant variant, std::vector<Tensor> weights,
                                    ActivationKind act) {
  InnerModel m{variant, act, std::move(weights)};
  m.validate();
  return m;
}

std::size_t InnerModel::dim() const {
  if (weights.empty()) throw DimensionError("inner model has no weights");
  return weights.front().rows();
}

std::size_t InnerModel::hidden() const {
  if (weights.empty()) throw DimensionError("inner model has no weights");
  return weights.front().cols();
}

void InnerModel::validate() const {
  const auto expected = inner_weight_names(variant).size();
  if (weights.size() != expected) {
    throw DimensionError(to_string(variant) + " inner model expects " + std::to_string(expected) +
                         " weights, got " + std::to_string(weights.size()));
  }
  for (const auto& w : weights) {
    if (!w.defined() || w.rank() != 2) throw DimensionError("inner weights must be matrices");
  }
  const auto want = weight_shapes(variant, dim(), hidden());
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (weights[i].shape() != want[i]) {
      throw DimensionError(to_string(variant) + " weight '" + inner_weight_names(variant)[i] +
                           "' has shape " + shape_string(weights[i].shape()) + ", expected " +
                           shape_string(want[i]));
    }
  }
  if (variant == InnerVariant::one_layer_gate && dim() != hidden()) {
    throw DimensionError("one_layer_gate requires hidden == dim");
  }
}

InnerLoss parse_inner_loss(const std::string& name) {
  if (name == "l2") return InnerLoss::l2;
  if (name == "inner_product" || name == "ip") return InnerLoss::inner_product;
  throw ConfigError("unknown inner loss '" + name + "'");
}

std::string to_string(InnerLoss loss) { return loss == InnerLoss::l2 ? "l2" : "inner_product"; }

KeyScale parse_key_scale(const std::string& name) {
  if (name == "none") return KeyScale::none;
  if (name == "inv_sqrt_d") return KeyScale::inv_sqrt_d;
  throw ConfigError("unknown key scale '" + name + "'");
}

std::string to_string(KeyScale scale) { return scale == KeyScale::none ? "none" : "inv_sqrt_d"; }

void TTTConfig::validate() const {
  if (inner_steps < 1) throw ConfigError("inner_steps must be at least 1");
  if (!std::isfinite(inner_lr) || inner_lr < 0.0) {
    throw ConfigError("inner_lr must be finite and non-negative");
  }
}

Tensor inner_forward(InnerVariant variant, ActivationKind act, const std::vector<Tensor>& w,
                     const Tensor& x) {
  if (!x.defined() || x.rank() != 2) throw DimensionError("inner_forward: input must be [N x d]");
  if (w.empty() || x.cols() != w.front().rows()) {
    throw DimensionError("inner_forward: input width " + std::to_string(x.cols()) +
                         " does not match inner model");
  }
  switch (variant) {
    case InnerVariant::linear: return matmul(x, w[0]);
    case InnerVariant::one_layer_gate: return mul(activation(matmul(x, w[0]), act), matmul(x, w[1]));
    case InnerVariant::two_layer: return matmul(activation(matmul(x, w[0]), act), w[1]);
    case InnerVariant::three_layer:
      return matmul(activation(matmul(activation(matmul(x, w[0]), act), w[1]), act), w[2]);
    case InnerVariant::swiglu:
      return matmul(mul(activation(matmul(x, w[0]), act), matmul(x, w[1])), w[2]);
  }
  throw ConfigError("unsupported inner variant");
}

Tensor inner_forward(const InnerModel& m, const Tensor& x) {
  m.validate();
  return inner_forward(m.variant, m.act, m.weights, x);
}

namespace {

Tensor loss_of(const Tensor& y, const Tensor& values, InnerLoss kind) {
  if (y.shape() != values.shape()) {
    throw DimensionError("inner loss: prediction " + shape_string(y.shape()) + " vs values " +
                         shape_string(values.shape()));
  }
  if (kind == InnerLoss::l2) {
    const Tensor r = sub(y, values);
    return sum(mul(r, r));
  }
  return neg(sum(mul(values, y)));
}

}  // namespace

Tensor inner_loss(const InnerModel& m, const Tensor& keys, const Tensor& values, InnerLoss kind) {
  return loss_of(inner_forward(m, keys), values, kind);
}

FastWeights fast_weight_update(const InnerModel& m, const Tensor& keys, const Tensor& values,
                               const TTTConfig& cfg) {
  m.validate();
  cfg.validate();
  if (!keys.defined() || !values.defined() || keys.shape() != values.shape()) {
    throw DimensionError("fast_weight_update: keys and values must share one shape");
  }
  Tensor k = keys;
  if (cfg.key_scale == KeyScale::inv_sqrt_d) k = scale(k, 1.0 / std::sqrt(static_cast<double>(k.cols())));

  std::optional<Tape> outer;
  for (const auto* t : {&keys, &values}) {
    if (!outer) outer = Tape::of(*t);
  }
  for (const auto& w : m.weights) {
    if (!outer) outer = Tape::of(w);
  }
  const bool nested = outer.has_value();
  Tape local;
  Tape& tape = nested ? *outer : local;

  FastWeights fw;
  for (const auto& w : m.weights) fw.deltas.push_back(Tensor::zeros(w.shape()));
  if (cfg.inner_lr == 0.0) return fw;

  for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
    std::vector<Tensor> current;
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      Tensor c = step == 0 ? m.weights[i] : sub(m.weights[i], fw.deltas[i]);
      if (!c.requires_grad() || !Tape::of(c)) c = tape.variable(c);
      current.push_back(c);
    }
    const Tensor loss = loss_of(inner_forward(m.variant, m.act, current, k), values, cfg.loss);
    const auto grads = tape.grad(loss, current, nested);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].all_finite()) {
        throw DivergenceError("fast_weight_update: non-finite inner gradient", step);
      }
      fw.deltas[i] = add(fw.deltas[i], scale(grads[i], cfg.inner_lr));
    }
  }
  return fw;
}

Tensor ttt_forward(const InnerModel& m, const AttentionInputs& in, const TTTConfig& cfg) {
  in.validate();
  if (in.head_dim() != m.dim()) {
    throw DimensionError("ttt_forward: head dim " + std::to_string(in.head_dim()) +
                         " does not match inner model dim " + std::to_string(m.dim()));
  }
  const FastWeights fw = fast_weight_update(m, in.k, in.v, cfg);
  std::vector<Tensor> updated;
  for (std::size_t i = 0; i < m.weights.size(); ++i) updated.push_back(sub(m.weights[i], fw.deltas[i]));
  return inner_forward(m.variant, m.act, updated, in.q);
}

TwoLayerGrads two_layer_analytic_grad(const InnerModel& m, const Tensor& keys, const Tensor& values,
                                      InnerLoss kind) {
  m.validate();
  if (m.variant != InnerVariant::two_layer) throw ConfigError("analytic gradient needs two_layer");
  const Tensor k = keys.detach();
  const Tensor v = values.detach();
  const Tensor w1 = m.weights[0].detach();
  const Tensor w2 = m.weights[1].detach();
  const Tensor z = matmul(k, w1);
  const Tensor a = activation(z, m.act);
  const Tensor dy = kind == InnerLoss::l2 ? scale(sub(matmul(a, w2), v), 2.0) : neg(v);
  const Tensor dz = mul(matmul(dy, transpose(w2)), activation(z, m.act, 1));
  return {matmul(transpose(k), dz), matmul(transpose(a), dy)};
}

}  // namespace ttc
