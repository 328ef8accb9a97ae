#include "connectome.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "connectome/dataset.hpp"
#include "connectome/explain.hpp"
#include "connectome/pipeline.hpp"
#include "connectome/trainer.hpp"
#include "connectome/util.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

struct cnx_cohort {
  std::vector<connectome::ConnectomeGraph> graphs;
};

struct cnx_model {
  connectome::EnsembleModel ensemble;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Maps exception types onto status codes; invalid_argument marks caller
// errors, runtime_error I/O and parse problems, domain_error numerics.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return CNX_E_INVALID;
  } catch (const std::domain_error& e) {
    set_error(e.what());
    return CNX_E_NUMERIC;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    set_error(what);
    if (what.find("malformed") != std::string::npos ||
        what.find("duplicate") != std::string::npos ||
        what.find("unknown") != std::string::npos ||
        what.find("empty manifest") != std::string::npos) {
      return CNX_E_PARSE;
    }
    if (what.find("cannot open") != std::string::npos ||
        what.find("write failed") != std::string::npos ||
        what.find("rename failed") != std::string::npos) {
      return CNX_E_IO;
    }
    return CNX_E_INTERNAL;
  } catch (...) {
    set_error("unknown error");
    return CNX_E_INTERNAL;
  }
}

json parse_options(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return json::object();
  try {
    json j = json::parse(text);
    if (!j.is_object()) {
      throw std::invalid_argument(std::string(what) +
                                  ": options must be a JSON object");
    }
    return j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string(what) + ": malformed JSON: " +
                                e.what());
  }
}

std::vector<connectome::ConnectomeGraph> subset_graphs(
    const std::vector<connectome::ConnectomeGraph>& graphs,
    const char* split_path, const char* subset) {
  if (split_path == nullptr || *split_path == '\0') {
    return graphs;
  }
  const auto split = connectome::load_split(split_path);
  const auto which = connectome::split_from_name(
      subset == nullptr || *subset == '\0' ? "test" : subset);
  std::vector<connectome::ConnectomeGraph> out;
  for (const auto& g : graphs) {
    auto it = split.by_subject.find(g.subject_id);
    if (it != split.by_subject.end() && it->second == which) {
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace

extern "C" {

const char* cnx_version(void) { return "1.0.0"; }

const char* cnx_last_error(void) { return g_last_error.c_str(); }

void cnx_string_free(char* s) { delete[] s; }

int cnx_synth(const char* spec_json, const char* out_dir) {
  return guarded([&]() {
    if (out_dir == nullptr || *out_dir == '\0') {
      throw std::invalid_argument("cnx_synth: out_dir is required");
    }
    const json j = parse_options(spec_json, "cnx_synth");
    connectome::SyntheticSpec spec;
    spec.n_subjects = j.value("n_subjects", spec.n_subjects);
    spec.n_rois = j.value("n_rois", spec.n_rois);
    spec.n_sites = j.value("n_sites", spec.n_sites);
    spec.timepoints = j.value("timepoints", spec.timepoints);
    spec.effect_size = j.value("effect_size", spec.effect_size);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("planted_edges")) {
      for (const auto& e : j.at("planted_edges")) {
        spec.planted_edges.emplace_back(e.at(0).get<std::size_t>(),
                                        e.at(1).get<std::size_t>());
      }
    }
    connectome::generate_synthetic(spec, out_dir);
    return CNX_OK;
  });
}

int cnx_build_graphs(const char* manifest_path, const char* options_json,
                     const char* out_graphs_path, char** summary_json) {
  return guarded([&]() {
    if (manifest_path == nullptr || out_graphs_path == nullptr) {
      throw std::invalid_argument("cnx_build_graphs: paths are required");
    }
    const json opts = parse_options(options_json, "cnx_build_graphs");
    const double density = opts.value("density", 0.20);
    const std::size_t jobs = opts.value("jobs", std::size_t{1});

    const auto records = connectome::load_manifest(manifest_path);
    auto result = connectome::build_graphs(records, density, jobs);
    connectome::save_graphs(result.graphs, out_graphs_path);
    if (summary_json != nullptr) {
      *summary_json =
          dup_string(connectome::build_summary_json(result, density));
    }
    if (!result.failures.empty()) {
      set_error(std::to_string(result.failures.size()) +
                " subject(s) failed during graph construction");
      return CNX_E_PARTIAL;
    }
    return CNX_OK;
  });
}

int cnx_split(const char* manifest_path, const char* options_json,
              const char* out_split_path) {
  return guarded([&]() {
    if (manifest_path == nullptr || out_split_path == nullptr) {
      throw std::invalid_argument("cnx_split: paths are required");
    }
    const json opts = parse_options(options_json, "cnx_split");
    std::array<double, 3> fractions{0.70, 0.15, 0.15};
    if (opts.contains("fractions")) {
      const auto& f = opts.at("fractions");
      if (!f.is_array() || f.size() != 3) {
        throw std::invalid_argument(
            "cnx_split: fractions must be [train, val, test]");
      }
      for (std::size_t i = 0; i < 3; ++i) fractions[i] = f[i].get<double>();
    }
    connectome::SeededRng rng(opts.value("seed", std::uint64_t{0}));
    const auto records = connectome::load_manifest(manifest_path);
    const auto split = connectome::stratified_split(records, fractions, rng);
    connectome::write_split(split, out_split_path);
    return CNX_OK;
  });
}

int cnx_cohort_open(const char* graphs_path, cnx_cohort** out) {
  return guarded([&]() {
    if (graphs_path == nullptr || out == nullptr) {
      throw std::invalid_argument("cnx_cohort_open: bad arguments");
    }
    auto cohort = std::make_unique<cnx_cohort>();
    cohort->graphs = connectome::load_graphs(graphs_path);
    *out = cohort.release();
    return CNX_OK;
  });
}

int cnx_cohort_size(const cnx_cohort* cohort, int32_t* out) {
  return guarded([&]() {
    if (cohort == nullptr || out == nullptr) {
      throw std::invalid_argument("cnx_cohort_size: bad arguments");
    }
    *out = static_cast<int32_t>(cohort->graphs.size());
    return CNX_OK;
  });
}

void cnx_cohort_close(cnx_cohort* cohort) { delete cohort; }

int cnx_train(const char* graphs_path, const char* split_path,
              const char* config_json, const char* out_dir,
              char** summary_json) {
  return guarded([&]() {
    if (graphs_path == nullptr || split_path == nullptr || out_dir == nullptr) {
      throw std::invalid_argument("cnx_train: paths are required");
    }
    const json cfg = parse_options(config_json, "cnx_train");
    const auto graphs = connectome::load_graphs(graphs_path);
    const auto split = connectome::load_split(split_path);

    std::vector<connectome::ConnectomeGraph> train_pool, val_pool;
    for (const auto& g : graphs) {
      auto it = split.by_subject.find(g.subject_id);
      if (it == split.by_subject.end()) continue;
      if (it->second == connectome::Split::kTrain) train_pool.push_back(g);
      if (it->second == connectome::Split::kVal) val_pool.push_back(g);
    }

    connectome::TrainConfig train_cfg;
    train_cfg.epochs = cfg.value("epochs", train_cfg.epochs);
    train_cfg.lr = cfg.value("lr", train_cfg.lr);
    train_cfg.batch_size = cfg.value("batch_size", train_cfg.batch_size);
    train_cfg.density = cfg.value("density", train_cfg.density);
    train_cfg.sigma = cfg.value("sigma", train_cfg.sigma);
    train_cfg.copies = cfg.value("copies", train_cfg.copies);
    train_cfg.seed = cfg.value("seed", std::uint64_t{0});
    train_cfg.validate();

    const auto members = cfg.value("members", std::size_t{1});
    const auto jobs = cfg.value("jobs", std::size_t{1});
    if (members < 1) {
      throw std::invalid_argument("cnx_train: members must be >= 1");
    }

    // Augmented copies join the pool from per-subject child streams.
    connectome::SeededRng master(train_cfg.seed);
    if (train_cfg.copies > 0) {
      std::vector<connectome::ConnectomeGraph> extra;
      for (const auto& g : train_pool) {
        auto stream = master.child("augment/" + g.subject_id);
        auto copies = connectome::augment_gaussian(
            g, stream, train_cfg.sigma, train_cfg.copies, train_cfg.density);
        for (auto& c : copies) extra.push_back(std::move(c));
      }
      for (auto& a : extra) train_pool.push_back(std::move(a));
    }

    const std::size_t input_dim =
        graphs.empty() ? 0 : graphs.front().node_count;
    auto model_cfg = connectome::ModelConfig::preset(
        connectome::architecture_from_name(cfg.value("arch", "gat")),
        input_dim, train_cfg.seed);
    if (model_cfg.architecture == connectome::Architecture::kGat) {
      model_cfg.dropedge = cfg.value("dropedge", model_cfg.dropedge);
    }

    auto result = connectome::train_ensemble(model_cfg, train_pool, val_pool,
                                             train_cfg, members,
                                             train_cfg.seed, jobs);

    fs::create_directories(out_dir);
    json summary;
    summary["members"] = json::array();
    for (std::size_t i = 0; i < result.ensemble.members.size(); ++i) {
      const std::string ckpt =
          (fs::path(out_dir) / ("member" + std::to_string(i) + ".ckpt"))
              .string();
      connectome::save_checkpoint(result.ensemble.members[i], result.metas[i],
                                  ckpt);
      connectome::write_history_csv(
          result.histories[i],
          (fs::path(out_dir) / ("history_member" + std::to_string(i) + ".csv"))
              .string());
      summary["members"].push_back(
          {{"checkpoint", ckpt},
           {"best_epoch", result.metas[i].best_epoch},
           {"best_val_accuracy", result.metas[i].best_val_accuracy}});
    }
    summary["train_pool"] = train_pool.size();
    if (summary_json != nullptr) {
      *summary_json = dup_string(summary.dump(2) + "\n");
    }
    return CNX_OK;
  });
}

int cnx_model_open(const char* const* checkpoint_paths, int32_t count,
                   cnx_model** out) {
  return guarded([&]() {
    if (checkpoint_paths == nullptr || count < 1 || out == nullptr) {
      throw std::invalid_argument(
          "cnx_model_open: need at least one checkpoint path");
    }
    auto model = std::make_unique<cnx_model>();
    for (int32_t i = 0; i < count; ++i) {
      if (checkpoint_paths[i] == nullptr) {
        throw std::invalid_argument("cnx_model_open: null checkpoint path");
      }
      model->ensemble.members.push_back(
          connectome::load_checkpoint(checkpoint_paths[i]));
    }
    const auto& first = model->ensemble.members.front().config();
    for (const auto& m : model->ensemble.members) {
      if (m.config().architecture != first.architecture ||
          m.config().input_dim != first.input_dim) {
        throw std::invalid_argument(
            "cnx_model_open: ensemble members must share architecture and "
            "input dimension");
      }
    }
    *out = model.release();
    return CNX_OK;
  });
}

void cnx_model_close(cnx_model* model) { delete model; }

int cnx_evaluate(cnx_model* model, cnx_cohort* cohort,
                 const char* split_path_or_null, const char* subset_or_null,
                 char** metrics_json) {
  return guarded([&]() {
    if (model == nullptr || cohort == nullptr || metrics_json == nullptr) {
      throw std::invalid_argument("cnx_evaluate: bad arguments");
    }
    const auto graphs =
        subset_graphs(cohort->graphs, split_path_or_null, subset_or_null);
    const auto report =
        connectome::evaluate(model->ensemble.predictor(), graphs);
    *metrics_json = dup_string(report.to_json());
    return CNX_OK;
  });
}

int cnx_explain(cnx_model* model, cnx_cohort* cohort,
                const char* options_json, const char* out_dir,
                char** summary_json) {
  return guarded([&]() {
    if (model == nullptr || cohort == nullptr || out_dir == nullptr) {
      throw std::invalid_argument("cnx_explain: bad arguments");
    }
    const json opts = parse_options(options_json, "cnx_explain");
    connectome::ExplainConfig ex_cfg;
    ex_cfg.steps = opts.value("steps", ex_cfg.steps);
    ex_cfg.lr = opts.value("lr", ex_cfg.lr);
    ex_cfg.lambda_size = opts.value("lambda_size", ex_cfg.lambda_size);
    ex_cfg.lambda_entropy =
        opts.value("lambda_entropy", ex_cfg.lambda_entropy);

    std::string split_path = opts.value("split_path", std::string{});
    std::string subset = opts.value("subset", std::string{});
    const auto graphs = subset_graphs(
        cohort->graphs, split_path.empty() ? nullptr : split_path.c_str(),
        subset.empty() ? nullptr : subset.c_str());
    if (graphs.empty()) {
      throw std::invalid_argument("cnx_explain: no graphs selected");
    }

    fs::create_directories(out_dir);
    connectome::SeededRng rng(opts.value("seed", std::uint64_t{0}));
    auto ex_rng = rng.child("explain");
    std::vector<connectome::SaliencyReport> reports;
    for (const auto& g : graphs) {
      reports.push_back(connectome::saliency(model->ensemble, g));
      const auto mask =
          connectome::gnn_explain(model->ensemble, g, ex_cfg, ex_rng);
      connectome::write_edge_mask_csv(
          mask, (fs::path(out_dir) / ("edge_mask_" + g.subject_id + ".csv"))
                    .string());
    }
    const auto cohort_report = connectome::cohort_saliency(reports);
    connectome::write_saliency_json(
        cohort_report, {}, (fs::path(out_dir) / "saliency.json").string());
    connectome::write_saliency_csv(
        cohort_report, {}, (fs::path(out_dir) / "saliency.csv").string());
    if (summary_json != nullptr) {
      json summary;
      summary["subjects"] = graphs.size();
      summary["out_dir"] = out_dir;
      *summary_json = dup_string(summary.dump(2) + "\n");
    }
    return CNX_OK;
  });
}

int cnx_pipeline(const char* config_json, const char* out_dir,
                 char** metrics_json) {
  return guarded([&]() {
    if (config_json == nullptr || out_dir == nullptr) {
      throw std::invalid_argument("cnx_pipeline: bad arguments");
    }
    auto cfg = connectome::RunConfig::from_json(config_json);
    cfg.out_dir = out_dir;
    const auto result = connectome::run_pipeline(cfg);
    if (metrics_json != nullptr) {
      json j;
      j["val"] = json::parse(result.val_metrics.to_json());
      j["test"] = json::parse(result.test_metrics.to_json());
      j["split"] = {{"train", result.split_counts[0]},
                    {"val", result.split_counts[1]},
                    {"test", result.split_counts[2]}};
      j["train_pool"] = result.train_pool_size;
      *metrics_json = dup_string(j.dump(2) + "\n");
    }
    return CNX_OK;
  });
}

int cnx_report(const char* run_dir, const char* out_dir) {
  return guarded([&]() {
    if (run_dir == nullptr || out_dir == nullptr) {
      throw std::invalid_argument("cnx_report: bad arguments");
    }
    connectome::write_report_tables(run_dir, out_dir);
    return CNX_OK;
  });
}

}  // extern "C"
