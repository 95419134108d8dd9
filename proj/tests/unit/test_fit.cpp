// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ttc/error.hpp"
#include "ttc/fit.hpp"

using namespace ttc;

namespace {

FitOptions tiny(const std::string& student) {
  FitOptions o;
  o.student = student;
  o.dim = 8;
  o.heads = 2;
  o.grid_side = 3;
  o.batch = 1;
  o.eval_sequences = 2;
  o.steps = 30;
  o.teacher_seed = 4;
  o.data_seed = 4;
  return o;
}

}  // namespace

TEST(TeacherFit, SoftmaxStudentReproducesTeacher) {
  const FitResult r = teacher_fit(tiny("softmax"));
  EXPECT_EQ(r.initial_mse, 0.0);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_FALSE(r.diverged);
}

TEST(TeacherFit, TttStudentImprovesUnderBothProtocols) {
  for (Protocol p : {Protocol::freeze, Protocol::ft}) {
    FitOptions o = tiny("ttt_two_layer");
    o.protocol = p;
    const FitResult r = teacher_fit(o);
    EXPECT_FALSE(r.diverged);
    EXPECT_GT(r.initial_mse, 0.0);
    EXPECT_LT(r.mse, r.initial_mse) << to_string(p);
  }
}

TEST(TeacherFit, Deterministic) {
  const FitOptions o = tiny("ttt_swiglu+dwc");
  EXPECT_EQ(teacher_fit(o).mse, teacher_fit(o).mse);
  FitOptions other = o;
  other.data_seed = 5;
  EXPECT_NE(teacher_fit(other).mse, teacher_fit(o).mse);
}

TEST(TeacherFit, DivergenceIsReportedNotThrown) {
  FitOptions o = tiny("ttt_two_layer");
  o.lr = 1e6;
  FitResult r;
  EXPECT_NO_THROW(r = teacher_fit(o));
  EXPECT_TRUE(r.diverged);
  EXPECT_TRUE(std::isinf(r.mse));
}

TEST(TeacherFit, ZeroStepsLeavesInitialError) {
  FitOptions o = tiny("linear_projqk");
  o.steps = 0;
  const FitResult r = teacher_fit(o);
  EXPECT_EQ(r.mse, r.initial_mse);
}

TEST(TeacherFit, ConfigErrors) {
  FitOptions o = tiny("ttt_two_layer");
  o.heads = 3;
  EXPECT_THROW(teacher_fit(o), ConfigError);
  o = tiny("ttt_two_layer");
  o.lr_multiplier = 0.0;
  EXPECT_THROW(teacher_fit(o), ConfigError);
  o = tiny("transformer");
  EXPECT_THROW(teacher_fit(o), ConfigError);
  EXPECT_THROW(parse_protocol("thaw"), ConfigError);
  EXPECT_EQ(parse_protocol("ft"), Protocol::ft);
}

TEST(TeacherFit, FineTuningNoWorseThanFreezeInMedian) {
  for (const std::string student : {"ttt_two_layer", "linear_projqk"}) {
    std::vector<double> freeze, ft;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      FitOptions o = tiny(student);
      o.teacher_seed = o.data_seed = seed;
      freeze.push_back(teacher_fit(o).mse);
      o.protocol = Protocol::ft;
      ft.push_back(teacher_fit(o).mse);
    }
    std::sort(freeze.begin(), freeze.end());
    std::sort(ft.begin(), ft.end());
    EXPECT_LE(ft[2], freeze[2]) << student;
  }
}
