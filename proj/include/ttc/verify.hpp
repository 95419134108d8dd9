// SPDX-License-Identifier: Apache-2.0
//
// Property suites runnable from the command line. Each check records the
// measured quantity next to the bound it was held to.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ttc/tensor.hpp"

namespace ttc {

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  std::string bound;  // e.g. "<= 1e-10", ">= 45"
  std::string detail;
};

struct VerifyReport {
  std::uint64_t seed = 0;
  std::vector<Check> checks;
  bool passed() const;
  std::string to_json() const;
  std::string to_text() const;
};

/// suite: all, shift, degeneracy, gradients, implicit, norm.
VerifyReport run_verify(const std::string& suite, std::uint64_t seed);
std::vector<std::string> verify_suites();

/// One randomized instance of a differentiable op for gradient checking.
struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
};

std::vector<GradCase> gradient_cases(Rng& rng);

/// Worst relative error over inputs between tape and central differences of
/// sum(fn(inputs) * R) for a fixed random R.
double gradient_check(const GradCase& c, Rng& rng, double h = 1e-5);

}  // namespace ttc
