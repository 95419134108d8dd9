// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale distillation: a converted student block is trained by plain
// gradient descent to reproduce a fixed random softmax teacher block.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "ttc/model.hpp"

namespace ttc {

enum class Protocol { freeze, ft };

Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol p);

struct FitOptions {
  std::string student = "ttt_two_layer";
  Protocol protocol = Protocol::freeze;
  std::size_t steps = 2000;
  double lr = 0.01;
  double lr_multiplier = 20.0;
  std::uint64_t teacher_seed = 0;
  std::uint64_t data_seed = 0;

  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t grid_side = 8;
  std::size_t batch = 2;
  std::size_t eval_sequences = 8;
  double teacher_qkv_std = 0.3;
  /// Constant key offset per head, as a multiple of the mean key norm.
  double key_shift = 0.0;
  /// Inner step size; defaults to 1/N.
  std::optional<double> inner_lr;
};

struct FitResult {
  std::string arch;
  Protocol protocol = Protocol::freeze;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double initial_mse = 0.0;
  /// Held-out teacher-output MSE; +inf when diverged.
  double mse = 0.0;
  bool diverged = false;
};

/// Never throws on divergence; a non-finite loss or gradient is reported in
/// the result.
FitResult teacher_fit(const FitOptions& opts);

}  // namespace ttc
