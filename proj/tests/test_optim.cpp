#include <cmath>

#include "doctest.h"
#include "icgm/optim.hpp"

using namespace icgm;

namespace {

std::vector<NamedTensor> single_param(double value, double grad) {
  Tensor p = Tensor::from_values(1, 1, {value}, true);
  p.grad_mut()[0] = grad;
  return {{"w", p}};
}

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto params = single_param(0.7, 0.0);
  AdamState state;
  adam_step(params, state);
  CHECK(std::abs(params[0].second.values()[0] - 0.7) < 1e-12);
  CHECK(state.step_count == 1);
}

TEST_CASE("first step with unit gradient moves by about the learning rate") {
  auto params = single_param(1.0, 1.0);
  AdamState state;
  state.config.learning_rate = 1e-3;
  adam_step(params, state);
  const double delta = 1.0 - params[0].second.values()[0];
  CHECK(std::abs(delta - 1e-3) < 1e-6);
}

TEST_CASE("second moment follows the definitional recursion") {
  const double g = 0.5;
  auto params = single_param(0.0, g);
  AdamState state;
  adam_step(params, state);
  params[0].second.grad_mut()[0] = g;  // constant gradient
  adam_step(params, state);
  const double b2 = state.config.beta2;
  double v = 0.0;
  v = b2 * v + (1 - b2) * g * g;
  v = b2 * v + (1 - b2) * g * g;
  CHECK(state.second_moment["w"][0] == doctest::Approx(v).epsilon(1e-12));
  CHECK(state.step_count == 2);
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  auto params = single_param(1.0, std::nan(""));
  AdamState state;
  try {
    adam_step(params, state);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK(params[0].second.values()[0] == 1.0);
  CHECK(state.step_count == 0);
}

TEST_CASE("missing gradient is an error") {
  Tensor p = Tensor::from_values(1, 1, {1.0}, true);
  std::vector<NamedTensor> params{{"w", p}};
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, state), NumericError);
}
