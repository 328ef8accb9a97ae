#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "connectome/adam.hpp"
#include "connectome/rng.hpp"
#include "connectome/tensor.hpp"

using namespace connectome;

namespace {

// Scalar reference written independently of Adam::update: textbook Adam with
// bias correction, one value at a time.
struct ScalarAdamRef {
  double m = 0.0;
  double v = 0.0;
  int t = 0;
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return x - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto p = make_tensor(2, 3, {1, 2, 3, 4, 5, 6}, true);
  const auto before = p->data();
  Adam opt({p});
  p->grad();  // all zeros
  opt.step();
  opt.step();
  CHECK(p->data() == before);
  CHECK(opt.step_count() == 2);
}

TEST_CASE("first step moves by ~lr against the gradient sign") {
  auto p = make_tensor(1, 4, {0.0, 0.0, 0.0, 0.0}, true);
  Adam opt({p});
  p->grad() = {2.5, -0.3, 10.0, -1e-3};
  opt.step();
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = std::vector<double>{2.5, -0.3, 10.0, -1e-3}[i];
    const double update = p->data()[i];
    CHECK(update * g < 0.0);  // opposite sign
    CHECK(std::fabs(update) == doctest::Approx(1e-3).epsilon(1e-4));
  }
}

TEST_CASE("three steps with unit gradients match the scalar reference") {
  auto p = make_tensor(1, 1, {0.5}, true);
  Adam opt({p});
  ScalarAdamRef ref;
  double x = 0.5;
  for (int step = 0; step < 3; ++step) {
    x = ref.step(x, 1.0);
    p->grad() = {1.0};
    opt.step();
    CHECK(p->data()[0] == doctest::Approx(x).epsilon(1e-15));
  }
}

TEST_CASE("random gradient trajectory matches the scalar reference") {
  SeededRng rng(314);
  auto p = make_tensor(1, 1, {-0.25}, true);
  Adam opt({p});
  ScalarAdamRef ref;
  double x = -0.25;
  for (int step = 0; step < 50; ++step) {
    const double g = rng.gaussian();
    x = ref.step(x, g);
    p->grad() = {g};
    opt.step();
    CHECK(p->data()[0] == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("loss scaling leaves the first-step sign pattern invariant") {
  SeededRng rng(9);
  std::vector<double> grads(6);
  for (double& g : grads) g = rng.gaussian();

  auto run = [&](double c) {
    auto p = make_tensor(2, 3, true);
    Adam opt({p});
    auto scaled = grads;
    for (double& g : scaled) g *= c;
    p->grad() = scaled;
    opt.step();
    std::vector<int> signs;
    for (double v : p->data()) signs.push_back(v > 0 ? 1 : (v < 0 ? -1 : 0));
    return signs;
  };

  const auto base = run(1.0);
  for (double c : {0.01, 0.5, 3.0, 100.0}) {
    CHECK(run(c) == base);
  }
}

TEST_CASE("shape mismatch is rejected") {
  std::vector<double> param(4, 0.0), grad(3, 0.0), m(4, 0.0), v(4, 0.0);
  CHECK_THROWS_AS(Adam::update(param, grad, m, v, 1, {}),
                  std::invalid_argument);
}
