// SPDX-License-Identifier: Apache-2.0
#include "ttc/repr_align.hpp"

#include <cmath>

#include "ttc/error.hpp"

namespace ttc {

KeyStats key_shift_ratio(const Tensor& keys, double eps) {
  if (!keys.defined() || keys.rank() != 2) throw DimensionError("key_shift_ratio: keys must be [N x d]");
  const std::size_t n = keys.rows(), d = keys.cols();
  std::vector<double> mean(d, 0.0);
  double norm_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double x = keys(i, c);
      mean[c] += x;
      sq += x * x;
    }
    norm_sum += std::sqrt(sq);
  }
  double mean_sq = 0.0;
  for (auto& m : mean) {
    m /= static_cast<double>(n);
    mean_sq += m * m;
  }
  const double denom = norm_sum / static_cast<double>(n);
  KeyStats s;
  s.mean_key = Tensor::from({1, d}, mean);
  s.shift_ratio = denom < eps ? 0.0 : std::sqrt(mean_sq) / denom;
  return s;
}

KeyNorm parse_key_norm(const std::string& name) {
  if (name == "none") return KeyNorm::none;
  if (name == "instance" || name == "in") return KeyNorm::instance;
  if (name == "instance_no_mean") return KeyNorm::instance_no_mean;
  if (name == "instance_no_std") return KeyNorm::instance_no_std;
  if (name == "layernorm" || name == "ln") return KeyNorm::layernorm;
  if (name == "rmsnorm" || name == "rms") return KeyNorm::rmsnorm;
  throw ConfigError("unknown key normalization '" + name + "'");
}

std::string to_string(KeyNorm norm) {
  switch (norm) {
    case KeyNorm::none: return "none";
    case KeyNorm::instance: return "instance";
    case KeyNorm::instance_no_mean: return "instance_no_mean";
    case KeyNorm::instance_no_std: return "instance_no_std";
    case KeyNorm::layernorm: return "layernorm";
    case KeyNorm::rmsnorm: return "rmsnorm";
  }
  return "?";
}

namespace {

void require_keys(const Tensor& keys, const char* op) {
  if (!keys.defined() || keys.rank() != 2) throw DimensionError(std::string(op) + ": keys must be [N x d]");
}

// Column statistics over tokens, as [N x d] broadcasts.
Tensor column_mean(const Tensor& x) {
  return broadcast_rows(scale(sum_rows(x), 1.0 / static_cast<double>(x.rows())), x.rows());
}

Tensor column_inv_std(const Tensor& centered, double eps) {
  const Tensor var = scale(sum_rows(mul(centered, centered)), 1.0 / static_cast<double>(centered.rows()));
  return broadcast_rows(pow(add_scalar(var, eps), -0.5), centered.rows());
}

}  // namespace

Tensor instance_norm_keys(const Tensor& keys, double eps) {
  require_keys(keys, "instance_norm_keys");
  const Tensor centered = sub(keys, column_mean(keys));
  return mul(centered, column_inv_std(centered, eps));
}

Tensor token_norm(const Tensor& keys, KeyNorm kind, double eps) {
  require_keys(keys, "token_norm");
  const std::size_t d = keys.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  if (kind == KeyNorm::layernorm) {
    const Tensor centered = sub(keys, broadcast_cols(scale(sum_cols(keys), inv_d), d));
    const Tensor var = scale(sum_cols(mul(centered, centered)), inv_d);
    return mul(centered, broadcast_cols(pow(add_scalar(var, eps), -0.5), d));
  }
  if (kind == KeyNorm::rmsnorm) {
    const Tensor ms = scale(sum_cols(mul(keys, keys)), inv_d);
    return mul(keys, broadcast_cols(pow(add_scalar(ms, eps), -0.5), d));
  }
  throw ConfigError("token_norm supports layernorm and rmsnorm, got " + to_string(kind));
}

Tensor normalize_keys(const Tensor& keys, KeyNorm kind, double eps) {
  switch (kind) {
    case KeyNorm::none: return keys;
    case KeyNorm::instance: return instance_norm_keys(keys, eps);
    case KeyNorm::instance_no_mean: {
      require_keys(keys, "normalize_keys");
      const Tensor centered = sub(keys, column_mean(keys));
      return mul(keys, column_inv_std(centered, eps));
    }
    case KeyNorm::instance_no_std:
      require_keys(keys, "normalize_keys");
      return sub(keys, column_mean(keys));
    case KeyNorm::layernorm:
    case KeyNorm::rmsnorm: return token_norm(keys, kind, eps);
  }
  throw ConfigError("unsupported key normalization");
}

GradientExpansion shifted_gradient_expansion(const InnerModel& m, const Tensor& k, const Tensor& v,
                                             const Tensor& delta) {
  m.validate();
  if (m.variant != InnerVariant::two_layer) {
    throw ConfigError("shifted_gradient_expansion needs a two_layer inner model");
  }
  const std::size_t d = m.dim();
  for (const auto* t : {&k, &v, &delta}) {
    if (!t->defined() || t->shape() != Shape{1, d}) {
      throw DimensionError("shifted_gradient_expansion: k, v, delta must be [1 x d]");
    }
  }
  const Tensor w1 = m.weights[0].detach();
  const Tensor w2 = m.weights[1].detach();
  const Tensor a = matmul(v.detach(), transpose(w2));
  const Tensor z = matmul(k.detach(), w1);
  const Tensor kd = add(k.detach(), delta.detach());
  const Tensor dw = matmul(delta.detach(), w1);
  const Tensor s1 = activation(z, m.act, 1);
  const Tensor s2 = mul(activation(z, m.act, 2), dw);

  GradientExpansion g;
  g.exact_shifted = neg(matmul(transpose(kd), mul(a, activation(matmul(kd, w1), m.act, 1))));
  g.order0 = neg(matmul(transpose(k.detach()), mul(a, s1)));
  g.order1a = neg(matmul(transpose(delta.detach()), mul(a, s1)));
  g.order1b = neg(matmul(transpose(k.detach()), mul(a, s2)));
  g.order2 = neg(matmul(transpose(delta.detach()), mul(a, s2)));
  const Tensor approx = add(add(g.order0, g.order1a), add(g.order1b, g.order2));
  g.truncation_residual = frobenius_norm(sub(g.exact_shifted, approx));
  return g;
}

}  // namespace ttc
