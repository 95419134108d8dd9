// SPDX-License-Identifier: Apache-2.0
#include "ttc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"
#include "ttc/attention.hpp"
#include "ttc/error.hpp"
#include "ttc/locality.hpp"
#include "ttc/repr_align.hpp"
#include "ttc/ttt.hpp"

namespace ttc {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

class Suite {
 public:
  Suite(std::string name, std::vector<Check>& out) : name_(std::move(name)), out_(out) {}

  void at_most(const std::string& check, double measured, double bound, std::string detail = "") {
    out_.push_back({name_, check, measured <= bound, measured, "<= " + fmt(bound), std::move(detail)});
  }
  void at_least(const std::string& check, double measured, double bound, std::string detail = "") {
    out_.push_back({name_, check, measured >= bound, measured, ">= " + fmt(bound), std::move(detail)});
  }

 private:
  std::string name_;
  std::vector<Check>& out_;
};

Tensor positive(const Shape& s, Rng& rng) {
  std::vector<double> d(shape_numel(s));
  for (auto& v : d) v = rng.uniform(0.5, 2.0);
  return Tensor::from(s, std::move(d));
}

Tensor shift_rows(const Tensor& k, const Tensor& delta) {
  return add(k, broadcast_rows(delta, k.rows()));
}

Tensor unit_row(std::size_t d, Rng& rng) {
  Tensor r = Tensor::randn({1, d}, rng);
  return scale(r, 1.0 / frobenius_norm(r));
}

AttentionInputs random_inputs(std::size_t n, std::size_t d, Rng& rng, std::optional<TokenGrid> grid = {}) {
  return AttentionInputs::make(Tensor::randn({n, d}, rng), Tensor::randn({n, d}, rng),
                               Tensor::randn({n, d}, rng), grid);
}

InnerModel zero_linear(std::size_t d) {
  return InnerModel::from_weights(InnerVariant::linear, {Tensor::zeros({d, d})});
}

constexpr std::size_t kDraws = 50;

void shift_suite(Suite& s, Rng& rng) {
  double worst = 0.0, worst_mlp = 0.0, worst_in = 0.0;
  std::size_t lin_fired = 0, ttt_fired = 0;
  const TTTConfig cfg;
  for (std::size_t t = 0; t < kDraws; ++t) {
    const auto in = random_inputs(6, 4, rng);
    const Tensor delta = scale(Tensor::randn({1, 4}, rng), 3.0);
    AttentionInputs shifted = in;
    shifted.k = shift_rows(in.k, delta);
    worst = std::max(worst, max_abs_diff(softmax_attention(in), softmax_attention(shifted)));
    worst_mlp = std::max(worst_mlp, max_abs_diff(dynamic_mlp_view(in), softmax_attention(in)));

    AttentionInputs unit = in;
    unit.k = shift_rows(in.k, unit_row(4, rng));
    if (max_abs_diff(linear_attention(in), linear_attention(unit)) > 1e-6) ++lin_fired;
    const InnerModel m = InnerModel::random(InnerVariant::two_layer, 4, rng);
    if (max_abs_diff(ttt_forward(m, in, cfg), ttt_forward(m, unit, cfg)) > 1e-6) ++ttt_fired;

    AttentionInputs a = in, b = in;
    a.k = instance_norm_keys(in.k);
    b.k = instance_norm_keys(shifted.k);
    worst_in = std::max(worst_in, max_abs_diff(ttt_forward(m, a, cfg), ttt_forward(m, b, cfg)));
  }
  s.at_most("softmax_key_shift_invariance", worst, 1e-10, "max |diff| over 50 draws");
  s.at_most("dynamic_mlp_identity", worst_mlp, 1e-12, "max |diff| over 50 draws");
  s.at_least("linear_attention_not_invariant", static_cast<double>(lin_fired), 45, "draws with diff > 1e-6 of 50");
  s.at_least("ttt_not_invariant", static_cast<double>(ttt_fired), 45, "draws with diff > 1e-6 of 50");
  s.at_most("ttt_instance_norm_restores_invariance", worst_in, 1e-10, "max |diff| over 50 draws");
}

void degeneracy_suite(Suite& s, Rng& rng) {
  double worst = 0.0, worst_lin = 0.0;
  TTTConfig cfg;
  cfg.loss = InnerLoss::inner_product;
  cfg.inner_lr = 1.0;
  cfg.inner_steps = 1;
  for (std::size_t t = 0; t < 20; ++t) {
    const auto in = random_inputs(5, 3, rng);
    const Tensor expect = matmul(in.q, matmul(transpose(in.k), in.v));
    worst = std::max(worst, max_abs_diff(ttt_forward(zero_linear(3), in, cfg), expect));

    const Tensor v2 = Tensor::randn({5, 3}, rng);
    const double alpha = rng.normal(), beta = rng.normal();
    AttentionInputs mixed = in, second = in;
    mixed.v = add(scale(in.v, alpha), scale(v2, beta));
    second.v = v2;
    const Tensor lhs = ttt_forward(zero_linear(3), mixed, cfg);
    const Tensor rhs = add(scale(ttt_forward(zero_linear(3), in, cfg), alpha),
                           scale(ttt_forward(zero_linear(3), second, cfg), beta));
    worst_lin = std::max(worst_lin, max_abs_diff(lhs, rhs));
  }
  s.at_most("linear_inner_equals_unnormalized_linear_attention", worst, 1e-10, "max |diff| over 20 instances");
  s.at_most("superposition_in_values", worst_lin, 1e-10, "max |diff| over 20 instances");
}

void gradients_suite(Suite& s, Rng& rng) {
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (std::size_t t = 0; t < 20; ++t) {
    for (const auto& c : gradient_cases(rng)) {
      if (!worst.count(c.name)) order.push_back(c.name);
      worst[c.name] = std::max(worst[c.name], gradient_check(c, rng));
    }
  }
  for (const auto& name : order) s.at_most("tape_vs_fd." + name, worst[name], 1e-5, "worst relative error over 20 instances");

  for (InnerLoss loss : {InnerLoss::inner_product, InnerLoss::l2}) {
    double w = 0.0;
    for (std::size_t t = 0; t < 20; ++t) {
      const InnerModel m = InnerModel::random(InnerVariant::two_layer, 4, rng, 0.5);
      const Tensor k = Tensor::randn({6, 4}, rng), v = Tensor::randn({6, 4}, rng);
      Tape tape;
      const Tensor w1 = tape.variable(m.weights[0]), w2 = tape.variable(m.weights[1]);
      const auto g = tape.grad(
          inner_loss(InnerModel{m.variant, m.act, {w1, w2}}, k, v, loss), {w1, w2});
      const auto a = two_layer_analytic_grad(m, k, v, loss);
      w = std::max({w, relative_error(g[0], a.w1), relative_error(g[1], a.w2)});
    }
    s.at_most("analytic_two_layer_" + to_string(loss), w, 1e-8, "relative error vs tape over 20 instances");
  }

  double lo = 1e300, hi = 0.0, order0 = 0.0;
  for (std::size_t t = 0; t < 20; ++t) {
    const InnerModel m = InnerModel::random(InnerVariant::two_layer, 4, rng, 0.5);
    const Tensor k = Tensor::randn({1, 4}, rng), v = Tensor::randn({1, 4}, rng);
    const Tensor delta = scale(unit_row(4, rng), 1e-2);
    const auto full = shifted_gradient_expansion(m, k, v, delta);
    const auto half = shifted_gradient_expansion(m, k, v, scale(delta, 0.5));
    const double ratio = half.truncation_residual / full.truncation_residual;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    order0 = std::max(order0, relative_error(full.order0,
                                             two_layer_analytic_grad(m, k, v, InnerLoss::inner_product).w1));
  }
  s.at_most("expansion_order0_is_unshifted_gradient", order0, 1e-12);
  s.at_least("expansion_residual_ratio_min", lo, 0.18, "residual(delta/2)/residual(delta), |delta| = 1e-2");
  s.at_most("expansion_residual_ratio_max", hi, 0.35, "residual(delta/2)/residual(delta), |delta| = 1e-2");
}

Tensor fd_implicit_scores(const AttentionLayer& layer, const AttentionInputs& in, double h) {
  const std::size_t n = in.tokens(), d = in.head_dim();
  std::vector<double> scores(n * n, 0.0);
  const auto base = in.v.to_vector();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < d; ++c) {
      auto vp = base, vm = base;
      vp[j * d + c] += h;
      vm[j * d + c] -= h;
      AttentionInputs a = in, b = in;
      a.v = Tensor::from(in.v.shape(), vp);
      b.v = Tensor::from(in.v.shape(), vm);
      const Tensor oa = layer(a), ob = layer(b);
      for (std::size_t i = 0; i < n; ++i) scores[i * n + j] += (oa(i, c) - ob(i, c)) / (2.0 * h * static_cast<double>(d));
    }
  }
  return Tensor::from({n, n}, std::move(scores));
}

double worst_row_sum_error(const Tensor& s) {
  double w = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) r += s(i, j);
    w = std::max(w, std::abs(r - 1.0));
  }
  return w;
}

void implicit_suite(Suite& s, Rng& rng) {
  const TokenGrid grid{3, 3};
  const auto in = random_inputs(9, 3, rng, grid);
  const auto sm = implicit_attention([](const AttentionInputs& x) { return softmax_attention(x); }, in);
  s.at_most("softmax_equals_explicit_weights", max_abs_diff(sm.scores, softmax_weights(in)), 1e-8);
  s.at_most("softmax_rows_sum_to_one", worst_row_sum_error(sm.scores), 1e-8);

  const auto lin = implicit_attention([](const AttentionInputs& x) { return linear_attention(x); }, in);
  s.at_most("linear_rows_sum_to_one", worst_row_sum_error(lin.scores), 1e-8);

  const auto nat = implicit_attention([](const AttentionInputs& x) { return neighborhood_attention(x, 3); }, in);
  s.at_most("nat_rows_sum_to_one", worst_row_sum_error(nat.scores), 1e-8);
  const double idx = locality_index(nat.scores, grid, 3);
  s.at_most("nat_locality_index_is_one", std::abs(idx - 1.0), 0.0);

  const auto toy = random_inputs(3, 2, rng);
  const InnerModel m = InnerModel::random(InnerVariant::two_layer, 2, rng, 0.5);
  const TTTConfig cfg;
  const AttentionLayer ttt = [&](const AttentionInputs& x) { return ttt_forward(m, x, cfg); };
  const auto tape_scores = implicit_attention(ttt, toy).scores;
  s.at_most("ttt_matches_fd_jacobian", relative_error(tape_scores, fd_implicit_scores(ttt, toy, 1e-5)), 1e-4,
            "3-token toy, relative Frobenius error");
}

void norm_suite(Suite& s, Rng& rng) {
  double worst_shift = 0.0, worst_mean = 0.0, worst_var = 0.0;
  std::size_t no_mean = 0, ln = 0, rms = 0;
  for (std::size_t t = 0; t < kDraws; ++t) {
    const Tensor k = Tensor::randn({8, 4}, rng);
    const Tensor ks = shift_rows(k, scale(Tensor::randn({1, 4}, rng), 3.0));
    const Tensor n = instance_norm_keys(k);
    worst_shift = std::max(worst_shift, max_abs_diff(n, instance_norm_keys(ks)));
    for (std::size_t c = 0; c < 4; ++c) {
      double mu = 0.0, var = 0.0, raw_mu = 0.0, raw_var = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        mu += n(i, c) / 8.0;
        raw_mu += k(i, c) / 8.0;
      }
      for (std::size_t i = 0; i < 8; ++i) {
        var += (n(i, c) - mu) * (n(i, c) - mu) / 8.0;
        raw_var += (k(i, c) - raw_mu) * (k(i, c) - raw_mu) / 8.0;
      }
      worst_mean = std::max(worst_mean, std::abs(mu));
      // Exact target with the eps term: raw_var / (raw_var + eps).
      worst_var = std::max(worst_var, std::abs(var - raw_var / (raw_var + kNormEps)));
    }
    const Tensor unit = shift_rows(k, unit_row(4, rng));
    if (max_abs_diff(normalize_keys(k, KeyNorm::instance_no_mean), normalize_keys(unit, KeyNorm::instance_no_mean)) > 1e-6) ++no_mean;
    if (max_abs_diff(token_norm(k, KeyNorm::layernorm), token_norm(unit, KeyNorm::layernorm)) > 1e-6) ++ln;
    if (max_abs_diff(token_norm(k, KeyNorm::rmsnorm), token_norm(unit, KeyNorm::rmsnorm)) > 1e-6) ++rms;
  }
  s.at_most("instance_norm_cancels_shift", worst_shift, 1e-12);
  s.at_most("instance_norm_zero_mean", worst_mean, 1e-12);
  s.at_most("instance_norm_unit_variance", worst_var, 1e-12);
  s.at_least("no_mean_variant_not_invariant", static_cast<double>(no_mean), 45, "draws of 50");
  s.at_least("layernorm_not_invariant", static_cast<double>(ln), 45, "draws of 50");
  s.at_least("rmsnorm_not_invariant", static_cast<double>(rms), 45, "draws of 50");

  double scale_err = 0.0;
  for (std::size_t t = 0; t < 20; ++t) {
    const Tensor k = Tensor::randn({10, 4}, rng);
    const double alpha = rng.uniform(0.1, 10.0);
    scale_err = std::max(scale_err, std::abs(key_shift_ratio(k).shift_ratio - key_shift_ratio(scale(k, alpha)).shift_ratio));
  }
  s.at_most("shift_ratio_scale_invariant", scale_err, 1e-12);

  double mean_ratio = 0.0;
  for (std::size_t t = 0; t < 100; ++t) mean_ratio += key_shift_ratio(Tensor::randn({196, 64}, rng)).shift_ratio / 100.0;
  const double target = 1.0 / std::sqrt(196.0);
  s.at_most("gaussian_keys_shift_ratio", std::abs(mean_ratio - target) / target, 0.2,
            "relative deviation of mean ratio " + fmt(mean_ratio) + " from 1/sqrt(196)");
}

}  // namespace

std::vector<GradCase> gradient_cases(Rng& rng) {
  using V = std::vector<Tensor>;
  std::vector<GradCase> c;
  auto rn = [&](Shape s) { return Tensor::randn(std::move(s), rng); };
  auto add_case = [&](std::string name, V in, std::function<Tensor(const V&)> fn) {
    c.push_back({std::move(name), std::move(in), std::move(fn)});
  };
  add_case("matmul", {rn({3, 4}), rn({4, 2})}, [](const V& x) { return matmul(x[0], x[1]); });
  add_case("transpose", {rn({3, 4})}, [](const V& x) { return transpose(x[0]); });
  add_case("add", {rn({3, 2}), rn({3, 2})}, [](const V& x) { return add(x[0], x[1]); });
  add_case("sub", {rn({3, 2}), rn({3, 2})}, [](const V& x) { return sub(x[0], x[1]); });
  add_case("mul", {rn({3, 2}), rn({3, 2})}, [](const V& x) { return mul(x[0], x[1]); });
  add_case("div", {rn({3, 2}), positive({3, 2}, rng)}, [](const V& x) { return div(x[0], x[1]); });
  add_case("neg", {rn({2, 3})}, [](const V& x) { return neg(x[0]); });
  add_case("scale", {rn({2, 3})}, [](const V& x) { return scale(x[0], 1.7); });
  add_case("add_scalar", {rn({2, 3})}, [](const V& x) { return add_scalar(x[0], -0.3); });
  add_case("pow", {positive({2, 3}, rng)}, [](const V& x) { return pow(x[0], 2.5); });
  add_case("sum", {rn({3, 3})}, [](const V& x) { return sum(x[0]); });
  add_case("mean", {rn({3, 3})}, [](const V& x) { return mean(x[0]); });
  add_case("expand", {rn({1})}, [](const V& x) { return expand(x[0], {3, 2}); });
  add_case("sum_rows", {rn({4, 3})}, [](const V& x) { return sum_rows(x[0]); });
  add_case("broadcast_rows", {rn({1, 3})}, [](const V& x) { return broadcast_rows(x[0], 4); });
  add_case("sum_cols", {rn({4, 3})}, [](const V& x) { return sum_cols(x[0]); });
  add_case("broadcast_cols", {rn({4, 1})}, [](const V& x) { return broadcast_cols(x[0], 3); });
  add_case("reshape", {rn({2, 6})}, [](const V& x) { return reshape(x[0], {3, 4}); });
  add_case("slice_cols", {rn({3, 5})}, [](const V& x) { return slice_cols(x[0], 1, 3); });
  add_case("pad_cols", {rn({3, 2})}, [](const V& x) { return pad_cols(x[0], 1, 5); });
  add_case("concat_cols", {rn({3, 2}), rn({3, 3})}, [](const V& x) { return concat_cols({x[0], x[1]}); });
  add_case("select", {rn({3, 4})}, [](const V& x) { return select(x[0], 2, 1); });
  for (ActivationKind k : {ActivationKind::silu, ActivationKind::gelu, ActivationKind::elu_plus_one}) {
    for (int order = 0; order <= 2; ++order) {
      add_case("activation." + to_string(k) + ".d" + std::to_string(order), {rn({3, 4})},
               [k, order](const V& x) { return activation(x[0], k, order); });
    }
  }
  add_case("softmax_rows", {rn({3, 4})}, [](const V& x) { return softmax_rows(x[0], 0.7); });
  {
    auto mask = std::make_shared<std::vector<std::uint8_t>>(12);
    for (std::size_t i = 0; i < 12; ++i) (*mask)[i] = (i % 4 == i / 4) || rng.uniform() < 0.5;
    add_case("softmax_rows_masked", {rn({3, 4})}, [mask](const V& x) { return softmax_rows(x[0], 1.3, mask); });
  }
  add_case("depthwise_conv2d", {rn({4, 4, 2}), rn({3, 3, 2})}, [](const V& x) { return depthwise_conv2d(x[0], x[1]); });
  add_case("flip_kernel", {rn({3, 3, 2})}, [](const V& x) { return flip_kernel(x[0]); });
  add_case("dwconv_weight_grad", {rn({4, 3, 2}), rn({4, 3, 2})},
           [](const V& x) { return dwconv_weight_grad(x[0], x[1], 3); });
  add_case("softmax_attention", {rn({4, 3}), rn({4, 3}), rn({4, 3})},
           [](const V& x) { return softmax_attention(AttentionInputs::make(x[0], x[1], x[2])); });
  add_case("linear_attention", {rn({4, 3}), rn({4, 3}), rn({4, 3})},
           [](const V& x) { return linear_attention(AttentionInputs::make(x[0], x[1], x[2])); });
  add_case("linear_attention_projqk", {rn({4, 3}), rn({4, 3}), rn({4, 3}), rn({3, 3}), rn({3, 3})},
           [](const V& x) {
             return linear_attention(AttentionInputs::make(x[0], x[1], x[2]), ActivationKind::elu_plus_one,
                                     ProjQK{x[3], x[4]});
           });
  add_case("neighborhood_attention", {rn({6, 2}), rn({6, 2}), rn({6, 2})}, [](const V& x) {
    return neighborhood_attention(AttentionInputs::make(x[0], x[1], x[2], TokenGrid{2, 3}), 1 + 2);
  });
  add_case("instance_norm_keys", {rn({5, 3})}, [](const V& x) { return instance_norm_keys(x[0]); });
  add_case("layernorm", {rn({5, 3})}, [](const V& x) { return token_norm(x[0], KeyNorm::layernorm); });
  add_case("rmsnorm", {rn({5, 3})}, [](const V& x) { return token_norm(x[0], KeyNorm::rmsnorm); });
  add_case("residual_dwc", {rn({6, 2}), rn({3, 3, 2})},
           [](const V& x) { return residual_dwc(x[0], TokenGrid{2, 3}, x[1]); });
  for (InnerVariant var : {InnerVariant::linear, InnerVariant::one_layer_gate, InnerVariant::two_layer,
                           InnerVariant::three_layer, InnerVariant::swiglu}) {
    Rng wr(rng.next());
    const InnerModel m = InnerModel::random(var, 3, wr, 0.5);
    V in = {rn({4, 3}), rn({4, 3}), rn({4, 3})};
    in.insert(in.end(), m.weights.begin(), m.weights.end());
    add_case("ttt_forward." + to_string(var), in, [var](const V& x) {
      const InnerModel im{var, ActivationKind::silu, V(x.begin() + 3, x.end())};
      TTTConfig cfg;
      cfg.inner_lr = 0.3;
      cfg.inner_steps = 2;
      return ttt_forward(im, AttentionInputs::make(x[0], x[1], x[2]), cfg);
    });
  }
  return c;
}

double gradient_check(const GradCase& c, Rng& rng, double h) {
  const Tensor probe = c.fn(c.inputs);
  const Tensor r = Tensor::randn(probe.shape(), rng);
  Tape tape;
  std::vector<Tensor> vars;
  for (const auto& x : c.inputs) vars.push_back(tape.variable(x));
  const auto grads = tape.grad(sum(mul(c.fn(vars), r)), vars);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& x) {
          auto in = c.inputs;
          in[i] = x;
          return sum(mul(c.fn(in), r)).item();
        },
        c.inputs[i], h);
    const double denom = std::max({frobenius_norm(fd), frobenius_norm(grads[i]), 1e-8});
    worst = std::max(worst, frobenius_norm(sub(grads[i], fd)) / denom);
  }
  return worst;
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["passed"] = passed();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"suite", c.suite},
                           {"name", c.name},
                           {"passed", c.passed},
                           {"measured", c.measured},
                           {"bound", c.bound},
                           {"detail", c.detail}});
  }
  return j.dump(2) + "\n";
}

std::string VerifyReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.suite << '.' << c.name << "  measured=" << fmt(c.measured)
       << "  bound " << c.bound;
    if (!c.detail.empty()) os << "  (" << c.detail << ')';
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> verify_suites() { return {"shift", "degeneracy", "gradients", "implicit", "norm"}; }

VerifyReport run_verify(const std::string& suite, std::uint64_t seed) {
  const auto all = verify_suites();
  if (suite != "all" && std::find(all.begin(), all.end(), suite) == all.end()) {
    throw ConfigError("unknown verify suite '" + suite + "'");
  }
  VerifyReport report;
  report.seed = seed;
  std::uint64_t offset = 0;
  for (const auto& name : all) {
    ++offset;
    if (suite != "all" && suite != name) continue;
    // Each suite has its own stream so results do not depend on which others ran.
    Rng rng(seed * 1000003ULL + offset);
    Suite s(name, report.checks);
    if (name == "shift") shift_suite(s, rng);
    if (name == "degeneracy") degeneracy_suite(s, rng);
    if (name == "gradients") gradients_suite(s, rng);
    if (name == "implicit") implicit_suite(s, rng);
    if (name == "norm") norm_suite(s, rng);
  }
  return report;
}

}  // namespace ttc
