#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "connectome/rng.hpp"
#include "connectome/trainer.hpp"

using namespace connectome;

namespace {

// Tiny separable cohort: class-1 graphs carry a strong (0,1) correlation,
// class-0 graphs a strong (2,3) one.
std::vector<ConnectomeGraph> separable_graphs(std::size_t n, SeededRng& rng) {
  std::vector<ConnectomeGraph> out;
  const std::size_t R = 6;
  for (std::size_t s = 0; s < n; ++s) {
    const int label = static_cast<int>(s % 2);
    ConnectomeGraph g;
    g.subject_id = "S" + std::to_string(s);
    g.site_id = "SITE";
    g.label = label;
    g.node_count = R;
    g.node_features.assign(R * R, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      g.node_features[i * R + i] = 1.0;
      for (std::size_t j = i + 1; j < R; ++j) {
        double v = rng.gaussian(0.0, 0.05);
        if (label == 1 && i == 0 && j == 1) v = 0.85 + rng.gaussian(0.0, 0.03);
        if (label == 0 && i == 2 && j == 3) v = 0.85 + rng.gaussian(0.0, 0.03);
        v = std::clamp(v, -1.0, 1.0);
        g.node_features[i * R + j] = v;
        g.node_features[j * R + i] = v;
      }
    }
    CorrelationMatrix c;
    c.regions = R;
    c.values = g.node_features;
    auto t = proportional_threshold(c, 0.3);
    t.subject_id = g.subject_id;
    t.site_id = g.site_id;
    t.label = g.label;
    out.push_back(std::move(t));
  }
  return out;
}

TrainConfig quick_cfg(std::size_t epochs, double lr = 1e-2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.batch_size = 4;
  cfg.copies = 0;
  return cfg;
}

}  // namespace

TEST_CASE("training overfits a separable set to 100% within 200 epochs") {
  SeededRng rng(1);
  auto graphs = separable_graphs(8, rng);
  auto model =
      Model::build(ModelConfig::preset(Architecture::kGcnBaseline, 6, 11), rng);
  auto train_rng = rng.child("job");
  auto result = train(model, graphs, graphs, quick_cfg(200), train_rng);
  double best = 0.0;
  std::size_t at = 0;
  for (const auto& h : result.history) {
    if (h.val_acc > best) {
      best = h.val_acc;
      at = h.epoch;
    }
  }
  CHECK(best == 1.0);
  CHECK(at <= 200);
  CHECK(result.meta.best_val_accuracy == 1.0);
}

TEST_CASE("lr = 0 leaves parameters untouched and history flat") {
  SeededRng rng(2);
  auto graphs = separable_graphs(6, rng);
  // The dropout-free configuration keeps the train loss itself
  // deterministic; with dropout only the parameters and val curve freeze.
  auto model =
      Model::build(ModelConfig::preset(Architecture::kGcnOptimised, 6, 3), rng);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.parameters()) before.push_back(p->data());

  auto train_rng = rng.child("job");
  auto result = train(model, graphs, graphs, quick_cfg(5, 0.0), train_rng);

  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->data() == before[i]);
  }
  for (const auto& h : result.history) {
    CHECK(h.val_acc == result.history.front().val_acc);
    CHECK(h.train_loss == doctest::Approx(result.history.front().train_loss)
                              .epsilon(1e-12));
  }
}

TEST_CASE("same config and seed reproduce the history bit-for-bit") {
  SeededRng data_rng(3);
  auto graphs = separable_graphs(10, data_rng);

  auto run = [&]() {
    SeededRng rng(77);
    auto model =
        Model::build(ModelConfig::preset(Architecture::kGat, 6, 77), rng);
    auto job = rng.child("job");
    return train(model, graphs, graphs, quick_cfg(10), job);
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].train_acc == r2.history[i].train_acc);
    CHECK(r1.history[i].val_acc == r2.history[i].val_acc);
  }
  const auto p1 = r1.best_model.named_parameters();
  const auto p2 = r2.best_model.named_parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].second->data() == p2[i].second->data());
  }
}

TEST_CASE("empty train set and unlabeled graphs are rejected") {
  SeededRng rng(4);
  auto model =
      Model::build(ModelConfig::preset(Architecture::kGcnBaseline, 6, 1), rng);
  auto job = rng.child("job");
  std::vector<ConnectomeGraph> empty;
  CHECK_THROWS_AS(train(model, empty, empty, quick_cfg(1), job),
                  std::invalid_argument);

  auto graphs = separable_graphs(4, rng);
  graphs[1].label.reset();
  CHECK_THROWS_AS(train(model, graphs, graphs, quick_cfg(1), job),
                  std::invalid_argument);
}

TEST_CASE("best-checkpoint contract: recomputed val accuracy matches history") {
  SeededRng rng(5);
  auto graphs = separable_graphs(10, rng);
  std::vector<ConnectomeGraph> val(graphs.begin() + 6, graphs.end());
  std::vector<ConnectomeGraph> tr(graphs.begin(), graphs.begin() + 6);
  auto model =
      Model::build(ModelConfig::preset(Architecture::kGcnBaseline, 6, 5), rng);
  auto job = rng.child("job");
  auto result = train(model, tr, val, quick_cfg(30), job);

  double max_val = 0.0;
  for (const auto& h : result.history) max_val = std::max(max_val, h.val_acc);
  const auto report = evaluate(result.best_model, val);
  CHECK(report.accuracy == max_val);
  CHECK(result.meta.best_val_accuracy == max_val);
}

TEST_CASE("evaluate: perfect, inverted and hand-enumerated cases") {
  SeededRng rng(6);
  auto graphs = separable_graphs(6, rng);

  SUBCASE("all correct") {
    Predictor perfect = [](const ConnectomeGraph& g) {
      return *g.label == 1 ? std::array<double, 2>{0.1, 0.9}
                           : std::array<double, 2>{0.9, 0.1};
    };
    const auto r = evaluate(perfect, graphs);
    CHECK(r.accuracy == 1.0);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.auc == 1.0);
  }
  SUBCASE("all inverted") {
    Predictor inverted = [](const ConnectomeGraph& g) {
      return *g.label == 0 ? std::array<double, 2>{0.1, 0.9}
                           : std::array<double, 2>{0.9, 0.1};
    };
    const auto r = evaluate(inverted, graphs);
    CHECK(r.accuracy == 0.0);
    CHECK(r.tp == 0);
    CHECK(r.tn == 0);
  }
  SUBCASE("hand-enumerated six subjects") {
    // labels: 0,1,0,1,0,1. Predictions: 1,1,0,0,0,1 ->
    // tp=2 (S1,S5), fn=1 (S3), fp=1 (S0), tn=2 (S2,S4).
    const std::vector<int> pred = {1, 1, 0, 0, 0, 1};
    std::size_t idx = 0;
    Predictor scripted = [&](const ConnectomeGraph&) {
      const int p = pred[idx++];
      return p == 1 ? std::array<double, 2>{0.2, 0.8}
                    : std::array<double, 2>{0.8, 0.2};
    };
    const auto r = evaluate(scripted, graphs);
    CHECK(r.tp == 2);
    CHECK(r.fn == 1);
    CHECK(r.fp == 1);
    CHECK(r.tn == 2);
    CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
    CHECK(r.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.n == 6);
  }
}

TEST_CASE("evaluate refuses augmented graphs") {
  SeededRng rng(7);
  auto graphs = separable_graphs(4, rng);
  graphs[2].augmented = true;
  Predictor p = [](const ConnectomeGraph&) {
    return std::array<double, 2>{0.5, 0.5};
  };
  CHECK_THROWS_WITH_AS(evaluate(p, graphs), doctest::Contains("augmented"),
                       std::invalid_argument);
}

TEST_CASE("auc: ordered, tied, and brute-force-matched") {
  SUBCASE("perfectly ordered") {
    CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  }
  SUBCASE("all ties give one half") {
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  }
  SUBCASE("single class rejected") {
    CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  }
  SUBCASE("matches pairwise brute force exactly, ties included") {
    SeededRng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.below(49);
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      bool has0 = false, has1 = false;
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse grid forces plenty of exact ties.
        scores[i] = static_cast<double>(rng.below(8)) / 8.0;
        labels[i] = static_cast<int>(rng.below(2));
        (labels[i] == 0 ? has0 : has1) = true;
      }
      if (!has0 || !has1) continue;

      double num = 0.0;
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < n; ++j) {
          if (labels[j] != 0) continue;
          ++pairs;
          if (scores[i] > scores[j]) {
            num += 1.0;
          } else if (scores[i] == scores[j]) {
            num += 0.5;
          }
        }
      }
      CHECK(auc(scores, labels) == num / static_cast<double>(pairs));
    }
  }
}

TEST_CASE("soft_vote arithmetic and invariants") {
  SUBCASE("hand case") {
    const auto v = soft_vote({{0.9, 0.1}, {0.7, 0.3}});
    CHECK(v[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(v[1] == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("identical members vote like any member") {
    const auto v = soft_vote({{0.4, 0.6}, {0.4, 0.6}, {0.4, 0.6}});
    CHECK(v[0] == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("mean matches independent accumulation, order invariant") {
    SeededRng rng(9);
    std::vector<std::array<double, 2>> probs;
    for (int i = 0; i < 5; ++i) {
      const double p = rng.uniform();
      probs.push_back({p, 1.0 - p});
    }
    double s0 = 0.0, s1 = 0.0;
    for (const auto& p : probs) {
      s0 += p[0];
      s1 += p[1];
    }
    const auto v = soft_vote(probs);
    CHECK(std::fabs(v[0] - s0 / 5.0) < 1e-15);
    CHECK(std::fabs(v[1] - s1 / 5.0) < 1e-15);
    CHECK(v[0] + v[1] == doctest::Approx(1.0).epsilon(1e-12));

    auto shuffled = probs;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto v2 = soft_vote(shuffled);
    const int arg1 = v[1] > v[0] ? 1 : 0;
    const int arg2 = v2[1] > v2[0] ? 1 : 0;
    CHECK(arg1 == arg2);
  }
}

TEST_CASE("train_ensemble: member seeds, determinism, parallel equivalence") {
  SeededRng data_rng(10);
  auto graphs = separable_graphs(8, data_rng);
  const auto cfg = quick_cfg(6);
  const auto model_cfg = ModelConfig::preset(Architecture::kGcnBaseline, 6, 0);

  SUBCASE("single member equals a direct train run") {
    auto ens = train_ensemble(model_cfg, graphs, graphs, cfg, 1, 2024);
    SeededRng base(2024);
    auto member_rng = base.child("member", 0);
    ModelConfig mc = model_cfg;
    mc.seed = member_rng.seed();
    auto model = Model::build(mc, member_rng);
    auto direct = train(model, graphs, graphs, cfg, member_rng);
    const auto a = ens.ensemble.members[0].named_parameters();
    const auto b = direct.best_model.named_parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].second->data() == b[i].second->data());
    }
    auto g = graphs.front();
    CHECK(ens.ensemble.predict_proba(g) ==
          direct.best_model.predict_proba(g));
  }

  SUBCASE("same base seed twice gives identical members") {
    auto e1 = train_ensemble(model_cfg, graphs, graphs, cfg, 3, 5);
    auto e2 = train_ensemble(model_cfg, graphs, graphs, cfg, 3, 5);
    for (std::size_t m = 0; m < 3; ++m) {
      const auto a = e1.ensemble.members[m].named_parameters();
      const auto b = e2.ensemble.members[m].named_parameters();
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].second->data() == b[i].second->data());
      }
    }
  }

  SUBCASE("member seeds differ, initial parameters differ") {
    SeededRng base(5);
    auto r0 = base.child("member", 0);
    auto r1 = base.child("member", 1);
    CHECK(r0.seed() != r1.seed());
    auto m0 = Model::build(model_cfg, r0);
    auto m1 = Model::build(model_cfg, r1);
    CHECK(m0.gcn_layers[0].weight->data() != m1.gcn_layers[0].weight->data());
  }

  SUBCASE("results do not depend on jobs") {
    auto serial = train_ensemble(model_cfg, graphs, graphs, cfg, 3, 9, 1);
    auto parallel = train_ensemble(model_cfg, graphs, graphs, cfg, 3, 9, 3);
    for (std::size_t m = 0; m < 3; ++m) {
      const auto a = serial.ensemble.members[m].named_parameters();
      const auto b = parallel.ensemble.members[m].named_parameters();
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].second->data() == b[i].second->data());
      }
    }
  }
}

TEST_CASE("metrics JSON shape") {
  MetricsReport r;
  r.accuracy = 0.9;
  r.precision = 0.8;
  r.recall = 0.85;
  r.auc = 0.95;
  r.tn = 10;
  r.fp = 2;
  r.fn = 1;
  r.tp = 7;
  r.n = 20;
  const auto j = r.to_json();
  CHECK(j.find("\"accuracy\"") != std::string::npos);
  CHECK(j.find("\"confusion\"") != std::string::npos);
  CHECK(j.find("\"tn\": 10") != std::string::npos);
}
