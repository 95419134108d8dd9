// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttc/tensor.hpp"

namespace ttc {

struct ScalingOptions {
  std::vector<std::size_t> tokens = {64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384};
  std::size_t head_dim = 64;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  DType precision = DType::f32;
  /// Smallest N included in the exponent fit.
  std::size_t fit_min_tokens = 256;
  /// Calls shorter than this are batched until the batch reaches it.
  double min_call_seconds = 1e-4;
  std::uint64_t seed = 0;
};

struct ScalingSeries {
  std::string arch;
  std::vector<std::pair<std::size_t, double>> samples;  // (N, median seconds per call)
  double exponent = 0.0;
};

struct ScalingResult {
  std::vector<ScalingSeries> series;
  /// First N from which the linear-cost arch stays faster than softmax,
  /// provided it was slower at some smaller N.
  std::optional<std::size_t> crossover;
  std::vector<std::string> warnings;
};

/// Least-squares slope of log t against log N over samples with N >= min_tokens.
double fit_exponent(const std::vector<std::pair<std::size_t, double>>& samples,
                    std::size_t min_tokens);

std::optional<std::size_t> find_crossover(const ScalingSeries& quadratic,
                                          const ScalingSeries& linear);

/// archs: any of "softmax", "linear", "ttt". Single-threaded.
ScalingResult scaling_bench(const std::vector<std::string>& archs, const ScalingOptions& opts);

}  // namespace ttc
