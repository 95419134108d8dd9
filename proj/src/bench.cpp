// SPDX-License-Identifier: Apache-2.0
#include "ttc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "ttc/error.hpp"
#include "ttc/kernels.hpp"
#include "ttc/rng.hpp"

namespace ttc {

double fit_exponent(const std::vector<std::pair<std::size_t, double>>& samples,
                    std::size_t min_tokens) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (const auto& [tokens, t] : samples) {
    if (tokens < min_tokens || !(t > 0.0)) continue;
    const double x = std::log(static_cast<double>(tokens));
    const double y = std::log(t);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw ConfigError("exponent fit needs at least two sizes at or above the fit minimum");
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

std::optional<std::size_t> find_crossover(const ScalingSeries& quadratic, const ScalingSeries& linear) {
  std::vector<std::pair<std::size_t, bool>> faster;
  for (const auto& [n, tq] : quadratic.samples) {
    for (const auto& [m, tl] : linear.samples) {
      if (m == n) faster.emplace_back(n, tl < tq);
    }
  }
  std::sort(faster.begin(), faster.end());
  std::optional<std::size_t> from;
  bool slower_seen = false;
  for (const auto& [n, f] : faster) {
    if (!f) {
      slower_seen = true;
      from.reset();
    } else if (!from) {
      from = n;
    }
  }
  if (!slower_seen) return std::nullopt;
  return from;
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
struct Problem {
  std::vector<T> q, k, v, w1, w2, out;
  kernels::Workspace<T> ws;
};

template <typename T>
Problem<T> make_problem(std::size_t n, std::size_t d, Rng& rng) {
  Problem<T> p;
  auto fill = [&](std::vector<T>& x, std::size_t count, double stddev) {
    x.resize(count);
    for (auto& e : x) e = static_cast<T>(rng.normal(0.0, stddev));
  };
  fill(p.q, n * d, 1.0);
  fill(p.k, n * d, 1.0);
  fill(p.v, n * d, 1.0);
  fill(p.w1, d * d, 0.02);
  fill(p.w2, d * d, 0.02);
  p.out.resize(n * d);
  return p;
}

template <typename T>
std::function<void()> make_call(const std::string& arch, Problem<T>& p, std::size_t n, std::size_t d) {
  if (arch == "softmax") {
    return [&p, n, d] { kernels::softmax_attention(n, d, p.q.data(), p.k.data(), p.v.data(), p.out.data(), p.ws); };
  }
  if (arch == "linear") {
    return [&p, n, d] { kernels::linear_attention(n, d, p.q.data(), p.k.data(), p.v.data(), p.out.data(), p.ws); };
  }
  if (arch == "ttt") {
    return [&p, n, d] {
      kernels::ttt_two_layer(n, d, p.q.data(), p.k.data(), p.v.data(), p.w1.data(), p.w2.data(),
                             static_cast<T>(1.0), p.out.data(), p.ws);
    };
  }
  throw ConfigError("unknown scaling arch '" + arch + "' (softmax, linear, ttt)");
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
double measure(const std::string& arch, std::size_t n, const ScalingOptions& o, Rng& rng,
               std::vector<std::string>& warnings) {
  Problem<T> p = make_problem<T>(n, o.head_dim, rng);
  auto call = make_call<T>(arch, p, n, o.head_dim);
  for (std::size_t i = 0; i < o.warmup; ++i) call();

  auto t0 = Clock::now();
  call();
  const double single = seconds_since(t0);
  std::size_t batch = 1;
  if (single < o.min_call_seconds) {
    batch = static_cast<std::size_t>(std::ceil(o.min_call_seconds / std::max(single, 1e-9)));
    warnings.push_back(arch + " N=" + std::to_string(n) + ": call below timer threshold, batching " +
                       std::to_string(batch) + " calls per sample");
  }
  std::vector<double> times;
  for (std::size_t r = 0; r < o.repeats; ++r) {
    t0 = Clock::now();
    for (std::size_t b = 0; b < batch; ++b) call();
    times.push_back(seconds_since(t0) / static_cast<double>(batch));
  }
  std::sort(times.begin(), times.end());
  const std::size_t mid = times.size() / 2;
  return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

}  // namespace

ScalingResult scaling_bench(const std::vector<std::string>& archs, const ScalingOptions& o) {
  if (o.repeats < 1) throw ConfigError("scaling bench needs at least one repeat");
  if (o.tokens.empty() || o.head_dim == 0) throw ConfigError("scaling bench needs sizes and a head dim");
  ScalingResult result;
  for (const auto& arch : archs) {
    ScalingSeries s;
    s.arch = arch;
    Rng rng(o.seed);
    for (std::size_t n : o.tokens) {
      const double t = o.precision == DType::f32 ? measure<float>(arch, n, o, rng, result.warnings)
                                                 : measure<double>(arch, n, o, rng, result.warnings);
      s.samples.emplace_back(n, t);
    }
    s.exponent = fit_exponent(s.samples, o.fit_min_tokens);
    result.series.push_back(std::move(s));
  }
  const ScalingSeries* sm = nullptr;
  const ScalingSeries* tt = nullptr;
  for (const auto& s : result.series) {
    if (s.arch == "softmax") sm = &s;
    if (s.arch == "ttt") tt = &s;
  }
  if (sm && tt) result.crossover = find_crossover(*sm, *tt);
  return result;
}

}  // namespace ttc
