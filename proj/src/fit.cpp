// SPDX-License-Identifier: Apache-2.0
#include "ttc/fit.hpp"

#include <cmath>
#include <limits>

#include "ttc/error.hpp"

namespace ttc {

Protocol parse_protocol(const std::string& name) {
  if (name == "freeze") return Protocol::freeze;
  if (name == "ft") return Protocol::ft;
  throw ConfigError("unknown protocol '" + name + "' (freeze, ft)");
}

std::string to_string(Protocol p) { return p == Protocol::freeze ? "freeze" : "ft"; }

namespace {

AttentionBlockParams make_teacher(const FitOptions& o, Rng& rng) {
  const std::size_t d = o.dim;
  AttentionBlockParams t = AttentionBlockParams::random(d, o.heads, 4, true, rng, 0.02, DType::f64);
  for (const char* n : {"attn.q.weight", "attn.k.weight", "attn.v.weight"}) {
    t.params.set(n, Tensor::randn({d, d}, rng, o.teacher_qkv_std));
  }
  t.params.set("attn.o.weight", Tensor::randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  t.params.set("mlp.fc1.weight", Tensor::randn({d, 4 * d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  t.params.set("mlp.fc2.weight",
               Tensor::randn({4 * d, d}, rng, 1.0 / std::sqrt(static_cast<double>(4 * d))));
  return t;
}

// Key bias whose per-head slice has norm shift * (mean key norm of that head).
Tensor shifted_key_bias(const AttentionBlockParams& t, const FitOptions& o, std::size_t tokens, Rng& rng) {
  const std::size_t d = o.dim, dh = d / o.heads;
  const Tensor x0 = Tensor::randn({tokens, d}, rng);
  const Tensor keys = matmul(token_norm(x0, KeyNorm::layernorm), t.params.at("attn.k.weight"));
  std::vector<double> bias(d, 0.0);
  for (std::size_t h = 0; h < o.heads; ++h) {
    double mean_norm = 0.0;
    for (std::size_t i = 0; i < tokens; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < dh; ++c) sq += keys(i, h * dh + c) * keys(i, h * dh + c);
      mean_norm += std::sqrt(sq);
    }
    mean_norm /= static_cast<double>(tokens);
    std::vector<double> dir(dh);
    double norm = 0.0;
    for (auto& e : dir) {
      e = rng.normal();
      norm += e * e;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dh; ++c) bias[h * dh + c] = dir[c] / norm * o.key_shift * mean_norm;
  }
  return Tensor::from({1, d}, std::move(bias));
}

double mse_of(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

}  // namespace

FitResult teacher_fit(const FitOptions& o) {
  if (o.dim == 0 || o.heads == 0 || o.dim % o.heads != 0) {
    throw ConfigError("teacher fit: dim must be a positive multiple of heads");
  }
  if (o.grid_side == 0 || o.batch == 0 || o.eval_sequences == 0) {
    throw ConfigError("teacher fit: grid, batch and eval sizes must be positive");
  }
  if (!(o.lr >= 0.0) || !(o.lr_multiplier > 0.0)) throw ConfigError("teacher fit: bad learning rate");

  const ArchSpec arch = ArchSpec::parse(o.student);
  const TokenGrid grid{o.grid_side, o.grid_side};
  const std::size_t n = grid.tokens();
  TTTConfig ttt;
  ttt.inner_lr = o.inner_lr ? *o.inner_lr : 1.0 / static_cast<double>(n);
  ttt.validate();

  Rng teacher_rng(o.teacher_seed);
  AttentionBlockParams teacher = make_teacher(o, teacher_rng);
  Rng data_rng(o.data_seed);
  if (o.key_shift > 0.0) teacher.params.set("attn.k.bias", shifted_key_bias(teacher, o, n, data_rng));
  const ArchSpec teacher_arch{};

  const TTTBlockParams student = convert_block(teacher, arch, ttt, data_rng.next());
  ParamSet params = student.all();
  const LrGroups lrs = lr_groups(params, o.lr, o.lr_multiplier);

  std::vector<Tensor> eval_x, eval_y;
  for (std::size_t i = 0; i < o.eval_sequences; ++i) {
    eval_x.push_back(Tensor::randn({n, o.dim}, data_rng));
    eval_y.push_back(block_forward(teacher.params, teacher_arch, ttt, o.heads, eval_x.back(), grid));
  }
  const auto evaluate = [&](const ParamSet& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < eval_x.size(); ++i) {
      total += mse_of(block_forward(p, arch, ttt, o.heads, eval_x[i], grid), eval_y[i]);
    }
    return total / static_cast<double>(eval_x.size());
  };

  FitResult r;
  r.arch = arch.label();
  r.protocol = o.protocol;
  r.seed = o.data_seed;
  r.steps = o.steps;
  const auto diverge = [&r]() {
    r.diverged = true;
    r.mse = std::numeric_limits<double>::infinity();
    return r;
  };

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    if (o.protocol == Protocol::ft || params.items()[i].group == ParamGroup::added) trainable.push_back(i);
  }

  try {
    r.initial_mse = evaluate(params);
    if (!std::isfinite(r.initial_mse)) return diverge();
    for (std::size_t step = 0; step < o.steps && !trainable.empty(); ++step) {
      Tape tape;
      ParamSet live;
      std::vector<Tensor> vars;
      std::size_t next = 0;
      for (std::size_t i = 0; i < params.items().size(); ++i) {
        const auto& t = params.items()[i];
        if (next < trainable.size() && trainable[next] == i) {
          vars.push_back(tape.variable(t.value));
          live.add(t.name, vars.back(), t.group);
          ++next;
        } else {
          live.add(t.name, t.value, t.group);
        }
      }
      Tensor loss;
      for (std::size_t b = 0; b < o.batch; ++b) {
        const Tensor x = Tensor::randn({n, o.dim}, data_rng);
        const Tensor y = block_forward(teacher.params, teacher_arch, ttt, o.heads, x, grid);
        const Tensor ys = block_forward(live, arch, ttt, o.heads, x, grid);
        const Tensor diff = sub(ys, y);
        const Tensor l = mean(mul(diff, diff));
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = scale(loss, 1.0 / static_cast<double>(o.batch));
      if (!loss.all_finite()) return diverge();
      const auto grads = tape.grad(loss, vars);
      for (std::size_t j = 0; j < trainable.size(); ++j) {
        if (!grads[j].all_finite()) return diverge();
        const auto& [name, lr] = lrs.per_tensor[trainable[j]];
        params.set(name, sub(params.at(name), scale(grads[j], lr)));
      }
    }
    r.mse = evaluate(params);
    if (!std::isfinite(r.mse)) return diverge();
  } catch (const DivergenceError&) {
    return diverge();
  } catch (const DegenerateNormalizerError&) {
    return diverge();
  }
  return r;
}

}  // namespace ttc
