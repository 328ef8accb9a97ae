#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "connectome/gradcheck.hpp"
#include "connectome/rng.hpp"
#include "connectome/tensor.hpp"

using namespace connectome;

namespace {

TensorPtr random_tensor(std::size_t r, std::size_t c, SeededRng& rng,
                        bool requires_grad = false) {
  auto t = make_tensor(r, c, requires_grad);
  for (double& v : t->data()) v = rng.gaussian();
  return t;
}

}  // namespace

TEST_CASE("matmul identity") {
  SeededRng rng(1);
  auto m = random_tensor(3, 3, rng);
  auto eye = make_tensor(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = ops::matmul(eye, m);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(out->data()[i] == doctest::Approx(m->data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("matmul hand arithmetic") {
  auto a = make_tensor(2, 2, {1, 2, 3, 4});
  auto b = make_tensor(2, 1, {0, 1});
  auto out = ops::matmul(a, b);
  CHECK(out->data()[0] == 2.0);
  CHECK(out->data()[1] == 4.0);
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = make_tensor(2, 3);
  auto b = make_tensor(2, 3);
  CHECK_THROWS_WITH_AS(ops::matmul(a, b),
                       doctest::Contains("2x3"), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum(a*b) w.r.t. a is ones x b^T") {
  SeededRng rng(42);
  auto a = random_tensor(5, 4, rng, true);
  auto b = random_tensor(4, 3, rng);
  auto loss = ops::sum(ops::matmul(a, b));
  loss->backward();

  // Independent oracle: ones(5,3) x b^T.
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 3; ++k) expect += b->at(j, k);
      CHECK(a->grad()[i * 4 + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  // And the finite-difference oracle at step 1e-6.
  a->zero_grad();
  auto f = [&](const std::vector<TensorPtr>& params) {
    return ops::sum(ops::matmul(params[0], b));
  };
  CHECK(gradcheck(f, {a}, 1e-6) < 1e-7);
}

TEST_CASE("backward: sum gives all-ones gradient") {
  auto w = make_tensor(2, 2, {3, -1, 2, 7}, true);
  auto loss = ops::sum(w);
  loss->backward();
  for (double g : w->grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sum of squares gives 2W") {
  auto w = make_tensor(2, 2, {3, -1, 2, 7}, true);
  auto loss = ops::sum(ops::mul(w, w));
  loss->backward();
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(w->grad()[i] == doctest::Approx(2.0 * w->data()[i]));
  }
}

TEST_CASE("backward requires a scalar loss") {
  auto w = make_tensor(2, 2, true);
  auto y = ops::scale(w, 2.0);
  CHECK_THROWS_AS(y->backward(), std::logic_error);
}

TEST_CASE("no tape leakage between consecutive losses") {
  auto w = make_tensor(2, 2, {1, 2, 3, 4}, true);
  auto loss1 = ops::sum(w);
  loss1->backward();
  const auto g1 = w->grad();
  w->zero_grad();
  auto loss2 = ops::sum(ops::mul(w, w));
  loss2->backward();
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(w->grad()[i] == doctest::Approx(2.0 * w->data()[i]));
    CHECK(g1[i] == 1.0);
  }
}

TEST_CASE("composite propagation loss matches finite differences") {
  // A hand-built graph-convolution-shaped composite:
  // loss = sum(relu(S (H W + b))) on a 4-node line graph.
  SeededRng rng(7);
  auto S = make_tensor(4, 4, {0.5, 0.408, 0.0,   0.0,
                              0.408, 0.333, 0.333, 0.0,
                              0.0,   0.333, 0.333, 0.408,
                              0.0,   0.0,   0.408, 0.5});
  auto H = random_tensor(4, 3, rng);
  auto W = random_tensor(3, 2, rng, true);
  auto b = random_tensor(1, 2, rng, true);
  auto f = [&](const std::vector<TensorPtr>& p) {
    return ops::sum(ops::relu(
        ops::matmul(S, ops::add(ops::matmul(H, p[0]), p[1]))));
  };
  CHECK(gradcheck(f, {W, b}, 1e-5) < 1e-4);
}

TEST_CASE("elementwise primitives match finite differences") {
  SeededRng rng(3);
  auto x = random_tensor(3, 4, rng, true);
  SUBCASE("relu") {
    auto f = [](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::relu(p[0]));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("leaky_relu") {
    auto f = [](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::leaky_relu(p[0], 0.2));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("elu") {
    auto f = [](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::elu(p[0]));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("sigmoid") {
    auto f = [](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::mul(ops::sigmoid(p[0]), ops::sigmoid(p[0])));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("softmax_rows") {
    auto f = [](const std::vector<TensorPtr>& p) {
      auto s = ops::softmax_rows(p[0]);
      return ops::sum(ops::mul(s, s));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("log_softmax_rows") {
    auto pick = make_tensor(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    auto f = [&](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::mul(ops::log_softmax_rows(p[0]), pick));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("mean and mean_rows and transpose and scale") {
    auto f = [](const std::vector<TensorPtr>& p) {
      auto y = ops::mean_rows(ops::scale(ops::transpose(p[0]), 1.5));
      return ops::add(ops::mean(p[0]), ops::sum(ops::mul(y, y)));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
  SUBCASE("concat and gather") {
    auto f = [](const std::vector<TensorPtr>& p) {
      auto c = ops::concat_cols(p[0], ops::relu(p[0]));
      auto g = ops::gather_rows(c, {2, 0, 2});
      return ops::sum(ops::mul(g, g));
    };
    CHECK(gradcheck(f, {x}) < 1e-6);
  }
}

TEST_CASE("masked softmax rows are stochastic over the mask") {
  SeededRng rng(9);
  auto x = random_tensor(4, 4, rng, true);
  std::vector<std::uint8_t> mask = {1, 1, 0, 1,
                                    0, 1, 1, 0,
                                    1, 0, 1, 1,
                                    0, 0, 0, 1};
  auto s = ops::masked_softmax_rows(x, mask);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      sum += s->at(r, c);
      if (!mask[r * 4 + c]) CHECK(s->at(r, c) == 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto f = [&](const std::vector<TensorPtr>& p) {
    auto sm = ops::masked_softmax_rows(p[0], mask);
    return ops::sum(ops::mul(sm, sm));
  };
  CHECK(gradcheck(f, {x}) < 1e-6);
}

TEST_CASE("log rejects non-positive input") {
  auto x = make_tensor(1, 2, {1.0, 0.0});
  CHECK_THROWS_AS(ops::log(x), std::domain_error);
}

TEST_CASE("edge_scatter scatters symmetrically and differentiates") {
  auto v = make_tensor(2, 1, {0.3, 0.9}, true);
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 2}};
  auto m = ops::edge_scatter(v, edges, 3, 1.0, 0.0);
  CHECK(m->at(0, 1) == 0.3);
  CHECK(m->at(1, 0) == 0.3);
  CHECK(m->at(1, 2) == 0.9);
  CHECK(m->at(0, 0) == 1.0);
  CHECK(m->at(0, 2) == 0.0);
  auto f = [&](const std::vector<TensorPtr>& p) {
    auto mm = ops::edge_scatter(p[0], edges, 3, 1.0, 0.0);
    return ops::sum(ops::mul(mm, mm));
  };
  CHECK(gradcheck(f, {v}) < 1e-6);
}

TEST_CASE("batchnorm train and eval modes differentiate") {
  SeededRng rng(21);
  auto x = random_tensor(6, 3, rng, true);
  auto gamma = make_tensor(1, 3, {1.2, 0.8, 1.0}, true);
  auto beta = make_tensor(1, 3, {0.1, -0.2, 0.0}, true);

  SUBCASE("train mode") {
    // The loss mixes channels with a fixed random matrix; a plain sum of
    // squares is constant in x after normalization and checks nothing.
    auto mix = random_tensor(6, 3, rng);
    auto f = [&](const std::vector<TensorPtr>& p) {
      std::vector<double> rm(3, 0.0), rv(3, 1.0);  // fresh per call
      auto y = ops::batchnorm(p[0], p[1], p[2], rm, rv, /*train=*/true);
      auto z = ops::mul(y, mix);
      return ops::sum(ops::mul(z, z));
    };
    CHECK(gradcheck(f, {x, gamma, beta}) < 1e-4);
  }
  SUBCASE("eval mode uses frozen statistics") {
    std::vector<double> rm = {0.3, -0.1, 0.2};
    std::vector<double> rv = {1.5, 0.7, 1.1};
    auto f = [&](const std::vector<TensorPtr>& p) {
      auto rm_copy = rm;
      auto rv_copy = rv;
      auto y = ops::batchnorm(p[0], p[1], p[2], rm_copy, rv_copy,
                              /*train=*/false);
      return ops::sum(ops::mul(y, y));
    };
    CHECK(gradcheck(f, {x, gamma, beta}) < 1e-5);
    // Eval mode must not touch the running statistics.
    std::vector<double> rm_copy = rm, rv_copy = rv;
    auto y = ops::batchnorm(x, gamma, beta, rm_copy, rv_copy, false);
    CHECK(rm_copy == rm);
    CHECK(rv_copy == rv);
  }
  SUBCASE("train mode normalizes to zero mean unit variance") {
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    auto ones = make_tensor(1, 3, {1, 1, 1});
    auto zeros_t = make_tensor(1, 3);
    auto y = ops::batchnorm(x, ones, zeros_t, rm, rv, true);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 6; ++r) mean += y->at(r, c);
      CHECK(mean / 6.0 == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradcheck: trivial, composite, and planted-fault cases") {
  SeededRng rng(13);

  SUBCASE("f = sum(W) has near-zero error") {
    auto w = random_tensor(3, 3, rng, true);
    auto f = [](const std::vector<TensorPtr>& p) { return ops::sum(p[0]); };
    CHECK(gradcheck(f, {w}) < 1e-8);
  }

  SUBCASE("two-layer propagation with cross-entropy stays under 1e-4") {
    // 4-node graph: propagation matrix, two weight layers, mean-pool,
    // 2-logit cross-entropy against class 1.
    auto S = make_tensor(4, 4, {0.5,  0.408, 0.0,   0.0,
                                0.408, 0.333, 0.333, 0.0,
                                0.0,   0.333, 0.333, 0.408,
                                0.0,   0.0,   0.408, 0.5});
    auto H = random_tensor(4, 4, rng);
    auto W1 = random_tensor(4, 5, rng, true);
    auto b1 = random_tensor(1, 5, rng, true);
    auto W2 = random_tensor(5, 2, rng, true);
    auto b2 = random_tensor(1, 2, rng, true);
    auto onehot = make_tensor(1, 2, {0.0, 1.0});
    auto f = [&](const std::vector<TensorPtr>& p) {
      auto h1 = ops::relu(
          ops::add(ops::matmul(ops::matmul(S, H), p[0]), p[1]));
      auto h2 = ops::add(ops::matmul(ops::matmul(S, h1), p[2]), p[3]);
      auto logits = ops::mean_rows(h2);
      return ops::scale(
          ops::sum(ops::mul(ops::log_softmax_rows(logits), onehot)), -1.0);
    };
    CHECK(gradcheck(f, {W1, b1, W2, b2}, 1e-5) < 1e-4);
  }

  SUBCASE("a corrupted gradient is detected") {
    auto w = random_tensor(2, 2, rng, true);
    auto f = [](const std::vector<TensorPtr>& p) {
      return ops::sum(ops::mul(p[0], p[0]));
    };
    auto loss = f({w});
    loss->backward();
    auto corrupted = w->grad();
    for (double& g : corrupted) g += 0.1;
    CHECK(gradcheck_against(f, {w}, {corrupted}) > 1e-2);
  }
}
