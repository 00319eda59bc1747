#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "hsr/adam.hpp"
#include "hsr/tensor.hpp"

using namespace hsr;

namespace {

struct Fixture {
  Tensor<double> w = Tensor<double>::full({1}, 1.0);
  std::vector<NamedTensor<double>> params{{"w", &w}};
};

}  // namespace

TEST_CASE("adam: zero gradients leave parameters untouched") {
  Fixture f;
  AdamState<double> state(AdamConfig<double>{}, f.params);
  const std::vector<Tensor<double>> grads{Tensor<double>::zeros({1})};
  for (int i = 0; i < 5; ++i) adam_step<double>(f.params, grads, state);
  CHECK(f.w.scalar() == 1.0);
  CHECK(state.step_count() == 5);
}

TEST_CASE("adam: first unit-gradient step moves by almost exactly lr") {
  Fixture f;
  AdamConfig<double> cfg;
  cfg.lr = 1e-3;
  AdamState<double> state(cfg, f.params);
  const std::vector<Tensor<double>> grads{Tensor<double>::full({1}, 1.0)};
  adam_step<double>(f.params, grads, state);
  // bias correction makes m_hat = v_hat = 1, so the update is lr/(1+eps)
  CHECK(f.w.scalar() == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
}

TEST_CASE("adam: ten steps on f(w) = w^2 shrink |w| monotonically") {
  Fixture f;
  AdamConfig<double> cfg;
  cfg.lr = 0.1;
  AdamState<double> state(cfg, f.params);
  std::vector<Tensor<double>> grads{Tensor<double>::zeros({1})};
  double prev = std::abs(f.w.scalar());
  for (int i = 0; i < 10; ++i) {
    grads[0](0, 0) = 2.0 * f.w.scalar();
    adam_step<double>(f.params, grads, state);
    const double cur = std::abs(f.w.scalar());
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adam: matches a hand-stepped scalar simulation") {
  Fixture f;
  f.w(0, 0) = 0.7;
  AdamConfig<double> cfg;
  AdamState<double> state(cfg, f.params);
  std::vector<Tensor<double>> grads{Tensor<double>::zeros({1})};

  double w = 0.7, m = 0.0, v = 0.0;
  const double gs[] = {0.3, -1.2, 0.05};
  for (int t = 1; t <= 3; ++t) {
    const double g = gs[t - 1];
    grads[0](0, 0) = g;
    adam_step<double>(f.params, grads, state);

    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, t));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, t));
    w -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    CHECK(f.w.scalar() == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("adam: moment buffers mirror parameter shapes") {
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({4});
  std::vector<NamedTensor<double>> params{{"a", &a}, {"b", &b}};
  AdamState<double> state(AdamConfig<double>{}, params);
  CHECK(state.first_moment(0).shape() == a.shape());
  CHECK(state.second_moment(1).shape() == b.shape());
}

TEST_CASE("adam: count, shape, and finiteness violations name the parameter") {
  Fixture f;
  AdamState<double> state(AdamConfig<double>{}, f.params);

  const std::vector<Tensor<double>> none;
  CHECK_THROWS_AS(adam_step<double>(f.params, none, state), ContractError);

  const std::vector<Tensor<double>> wrong{Tensor<double>::zeros({2})};
  CHECK_THROWS_AS(adam_step<double>(f.params, wrong, state), DimensionError);

  const std::vector<Tensor<double>> bad{
      Tensor<double>::full({1}, std::numeric_limits<double>::quiet_NaN())};
  try {
    adam_step<double>(f.params, bad, state);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
  CHECK(f.w.scalar() == 1.0);  // nothing applied
}

TEST_CASE("adam: learning rate must be positive") {
  Fixture f;
  AdamConfig<double> cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(AdamState<double>(cfg, f.params), ContractError);
}
