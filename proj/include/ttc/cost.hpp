// SPDX-License-Identifier: Apache-2.0
//
// Closed-form cost model. One multiply-accumulate counts as one FLOP.
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ttc/model.hpp"

namespace ttc {

struct CostReport {
  std::string arch;
  std::size_t resolution = 0;
  std::size_t tokens = 0;
  double flops = 0.0;
  std::size_t params = 0;
  std::vector<std::pair<std::size_t, double>> wall_samples;
  double fitted_exponent = 0.0;
};

/// MACs per token per (D * d_h) for the fast-weight update plus query pass.
double ttt_mac_units(InnerVariant variant);

/// Token mixing only: everything between the Q/K/V projections and the
/// output projection, including locality terms.
double mixer_flops(const ModelConfig& cfg, const ArchSpec& arch, std::size_t tokens);
double block_flops(const ModelConfig& cfg, const ArchSpec& arch, std::size_t tokens);

/// Whole network at `resolution` (0 = cfg.image_size).
CostReport flops_model(const ModelConfig& cfg, const ArchSpec& arch, std::size_t resolution = 0);

}  // namespace ttc
