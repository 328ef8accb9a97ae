#include "connectome/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "connectome/explain.hpp"
#include "connectome/util.hpp"

namespace connectome {

using nlohmann::json;
namespace fs = std::filesystem;

void save_graphs(const std::vector<ConnectomeGraph>& graphs,
                 const std::string& path) {
  std::string body;
  for (const auto& g : graphs) {
    if (g.augmented) {
      throw std::invalid_argument(
          "save_graphs: augmented copies are not persisted");
    }
    json row;
    row["subject_id"] = g.subject_id;
    row["site_id"] = g.site_id;
    if (g.label.has_value()) {
      row["label"] = *g.label;
    } else {
      row["label"] = nullptr;
    }
    row["node_count"] = g.node_count;
    json edges = json::array();
    for (const auto& e : g.edges) {
      edges.push_back({e.i, e.j, e.weight});
    }
    row["edges"] = std::move(edges);
    row["features"] = g.node_features;
    body += row.dump();
    body += '\n';
  }
  write_file_atomic(path, body);
}

std::vector<ConnectomeGraph> load_graphs(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open graph store: " + path);
  }
  std::vector<ConnectomeGraph> graphs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed graph row: " + e.what());
    }
    ConnectomeGraph g;
    g.subject_id = row.at("subject_id").get<std::string>();
    g.site_id = row.at("site_id").get<std::string>();
    if (!row.at("label").is_null()) {
      g.label = row.at("label").get<int>();
    }
    g.node_count = row.at("node_count").get<std::size_t>();
    for (const auto& e : row.at("edges")) {
      g.edges.push_back({e.at(0).get<std::size_t>(),
                         e.at(1).get<std::size_t>(), e.at(2).get<double>()});
    }
    g.node_features = row.at("features").get<std::vector<double>>();
    if (g.node_features.size() != g.node_count * g.node_count) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": feature length mismatch");
    }
    graphs.push_back(std::move(g));
  }
  return graphs;
}

BuildResult build_graphs(const std::vector<SubjectRecord>& records,
                         double density, std::size_t jobs) {
  BuildResult result;
  result.graphs.resize(records.size());
  std::vector<std::optional<BuildFailure>> failures(records.size());
  std::vector<std::vector<std::string>> warnings(records.size());

  auto build_one = [&](std::size_t i) {
    const auto& rec = records[i];
    try {
      const auto ts = read_timeseries_csv(rec.timeseries_path, rec.subject_id);
      auto corr = pearson(ts);
      auto g = proportional_threshold(corr, density);
      g.subject_id = rec.subject_id;
      g.site_id = rec.site_id;
      g.label = rec.label;
      for (auto& w : corr.warnings) {
        warnings[i].push_back(rec.subject_id + ": " + w);
      }
      result.graphs[i] = std::move(g);
    } catch (const std::exception& e) {
      failures[i] = BuildFailure{rec.subject_id, e.what()};
    }
  };

  jobs = std::max<std::size_t>(1, jobs);
  if (jobs == 1 || records.size() < 2) {
    for (std::size_t i = 0; i < records.size(); ++i) build_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(jobs, records.size());
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < records.size();
             i = next.fetch_add(1)) {
          build_one(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Drop failed slots, preserving manifest order.
  std::vector<ConnectomeGraph> ok;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (failures[i].has_value()) {
      result.failures.push_back(*failures[i]);
    } else {
      ok.push_back(std::move(result.graphs[i]));
    }
    for (auto& w : warnings[i]) result.warnings.push_back(std::move(w));
  }
  result.graphs = std::move(ok);
  return result;
}

std::string build_summary_json(const BuildResult& result, double density) {
  json j;
  j["density"] = density;
  j["subjects"] = result.graphs.size();
  std::size_t lo = 0, hi = 0;
  double mean = 0.0;
  if (!result.graphs.empty()) {
    lo = hi = result.graphs.front().edges.size();
    for (const auto& g : result.graphs) {
      lo = std::min(lo, g.edges.size());
      hi = std::max(hi, g.edges.size());
      mean += static_cast<double>(g.edges.size());
    }
    mean /= static_cast<double>(result.graphs.size());
  }
  j["edge_count"] = {{"min", lo}, {"max", hi}, {"mean", mean}};
  json fails = json::array();
  for (const auto& f : result.failures) {
    fails.push_back({{"subject_id", f.subject_id}, {"error", f.error}});
  }
  j["failures"] = std::move(fails);
  if (!result.warnings.empty()) j["warnings"] = result.warnings;
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  if (manifest.empty()) {
    throw std::invalid_argument("config: manifest path is required");
  }
  if (out_dir.empty()) {
    throw std::invalid_argument("config: output directory is required");
  }
  if (!(density > 0.0) || density > 1.0) {
    throw std::invalid_argument("config: density must be in (0, 1]");
  }
  if (sigma < 0.0) {
    throw std::invalid_argument("config: sigma must be >= 0");
  }
  if (epochs < 1) {
    throw std::invalid_argument("config: epochs must be >= 1");
  }
  if (lr <= 0.0) {
    throw std::invalid_argument("config: lr must be > 0");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("config: batch-size must be >= 1");
  }
  if (members < 1) {
    throw std::invalid_argument("config: members must be >= 1");
  }
  if (dropedge < 0.0 || dropedge >= 1.0) {
    throw std::invalid_argument("config: dropedge must be in [0, 1)");
  }
  if (jobs < 1) {
    throw std::invalid_argument("config: jobs must be >= 1");
  }
  architecture_from_name(arch);  // throws on unknown names
}

std::string RunConfig::to_json() const {
  json j;
  j["manifest"] = manifest;
  j["out_dir"] = out_dir;
  j["density"] = density;
  j["sigma"] = sigma;
  j["copies"] = copies;
  j["arch"] = arch;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["members"] = members;
  j["dropedge"] = dropedge;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["explain"] = run_explain;
  j["explain_steps"] = explain_steps;
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") +
                                e.what());
  }
  RunConfig cfg;
  cfg.manifest = j.value("manifest", cfg.manifest);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.density = j.value("density", cfg.density);
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.copies = j.value("copies", cfg.copies);
  cfg.arch = j.value("arch", cfg.arch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.members = j.value("members", cfg.members);
  cfg.dropedge = j.value("dropedge", cfg.dropedge);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.run_explain = j.value("explain", cfg.run_explain);
  cfg.explain_steps = j.value("explain_steps", cfg.explain_steps);
  return cfg;
}

namespace {

std::vector<ConnectomeGraph> select_split(
    const std::vector<ConnectomeGraph>& graphs, const SplitAssignment& split,
    Split which) {
  std::vector<ConnectomeGraph> out;
  for (const auto& g : graphs) {
    auto it = split.by_subject.find(g.subject_id);
    if (it == split.by_subject.end()) {
      throw std::runtime_error("subject '" + g.subject_id +
                               "' missing from split assignment");
    }
    if (it->second == which) out.push_back(g);
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  write_file_atomic((fs::path(cfg.out_dir) / "effective_config.json").string(),
                    cfg.to_json());

  SeededRng master(cfg.seed);

  // Stage: graphs.
  const auto records = load_manifest(cfg.manifest);
  auto build = build_graphs(records, cfg.density, cfg.jobs);
  if (!build.failures.empty()) {
    std::string msg = "graph stage: " +
                      std::to_string(build.failures.size()) +
                      " subject(s) failed:";
    for (const auto& f : build.failures) {
      msg += " [" + f.subject_id + ": " + f.error + "]";
    }
    throw std::runtime_error(msg);
  }
  save_graphs(build.graphs,
              (fs::path(cfg.out_dir) / "graphs.jsonl").string());

  // Stage: split.
  auto split_rng = master.child("split");
  const auto split =
      stratified_split(records, {0.70, 0.15, 0.15}, split_rng);
  write_split(split, (fs::path(cfg.out_dir) / "split.json").string());

  auto train_graphs = select_split(build.graphs, split, Split::kTrain);
  const auto val_graphs = select_split(build.graphs, split, Split::kVal);
  const auto test_graphs = select_split(build.graphs, split, Split::kTest);

  PipelineResult result;
  result.split_counts = {train_graphs.size(), val_graphs.size(),
                         test_graphs.size()};

  // Stage: augmentation, training pool only.
  if (cfg.copies > 0 && cfg.sigma >= 0.0) {
    std::vector<ConnectomeGraph> augmented;
    for (const auto& g : train_graphs) {
      auto stream = master.child("augment/" + g.subject_id);
      auto copies = augment_gaussian(g, stream, cfg.sigma, cfg.copies,
                                     cfg.density);
      for (auto& c : copies) augmented.push_back(std::move(c));
    }
    for (auto& a : augmented) train_graphs.push_back(std::move(a));
  }
  result.train_pool_size = train_graphs.size();

  // Stage: training.
  const Architecture arch = architecture_from_name(cfg.arch);
  const std::size_t input_dim =
      build.graphs.empty() ? 0 : build.graphs.front().node_count;
  ModelConfig model_cfg = ModelConfig::preset(arch, input_dim, cfg.seed);
  model_cfg.dropedge = arch == Architecture::kGat ? cfg.dropedge : 0.0;

  TrainConfig train_cfg;
  train_cfg.epochs = cfg.epochs;
  train_cfg.lr = cfg.lr;
  train_cfg.batch_size = cfg.batch_size;
  train_cfg.density = cfg.density;
  train_cfg.sigma = cfg.sigma;
  train_cfg.copies = cfg.copies;
  train_cfg.seed = cfg.seed;

  auto ens = train_ensemble(model_cfg, train_graphs, val_graphs, train_cfg,
                            cfg.members, cfg.seed, cfg.jobs);

  const fs::path ckpt_dir = fs::path(cfg.out_dir) / "checkpoints";
  fs::create_directories(ckpt_dir);
  for (std::size_t i = 0; i < ens.ensemble.members.size(); ++i) {
    save_checkpoint(ens.ensemble.members[i], ens.metas[i],
                    (ckpt_dir / ("member" + std::to_string(i) + ".ckpt"))
                        .string());
    write_history_csv(ens.histories[i],
                      (fs::path(cfg.out_dir) /
                       ("history_member" + std::to_string(i) + ".csv"))
                          .string());
  }

  // Stage: evaluation.
  auto predictor = ens.ensemble.predictor();
  result.val_metrics = evaluate(predictor, val_graphs);
  result.test_metrics = evaluate(predictor, test_graphs);
  write_file_atomic((fs::path(cfg.out_dir) / "metrics_val.json").string(),
                    result.val_metrics.to_json());
  write_file_atomic((fs::path(cfg.out_dir) / "metrics_test.json").string(),
                    result.test_metrics.to_json());

  // Stage: explanations (optional).
  if (cfg.run_explain) {
    const fs::path explain_dir = fs::path(cfg.out_dir) / "explain";
    fs::create_directories(explain_dir);
    ExplainConfig ex_cfg;
    ex_cfg.steps = cfg.explain_steps;
    auto ex_rng = master.child("explain");
    std::vector<SaliencyReport> reports;
    for (const auto& g : test_graphs) {
      reports.push_back(saliency(ens.ensemble, g));
      auto mask = gnn_explain(ens.ensemble, g, ex_cfg, ex_rng);
      write_edge_mask_csv(
          mask, (explain_dir / ("edge_mask_" + g.subject_id + ".csv"))
                    .string());
    }
    const auto cohort = cohort_saliency(reports);
    write_saliency_json(cohort, {},
                        (explain_dir / "saliency.json").string());
    write_saliency_csv(cohort, {},
                       (explain_dir / "saliency.csv").string());
  }
  return result;
}

void write_report_tables(const std::string& run_dir,
                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  char buf[64];

  // Table analogue: one row per metrics artifact.
  std::string table = "configuration,accuracy,precision,recall,auc,n\n";
  std::vector<fs::path> metric_files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".json") {
      metric_files.push_back(entry.path());
    }
  }
  std::sort(metric_files.begin(), metric_files.end());
  if (metric_files.empty()) {
    throw std::runtime_error("report: no metrics_*.json artifacts in " +
                             run_dir);
  }
  std::string arch = "unknown";
  const fs::path cfg_path = fs::path(run_dir) / "effective_config.json";
  if (fs::exists(cfg_path)) {
    arch = RunConfig::from_json(read_file(cfg_path.string())).arch;
  }
  for (const auto& p : metric_files) {
    const auto j = json::parse(read_file(p.string()));
    std::string label = p.stem().string().substr(std::string("metrics_").size());
    table += arch + "/" + label;
    for (const char* key : {"accuracy", "precision", "recall", "auc"}) {
      std::snprintf(buf, sizeof(buf), ",%.4f", j.at(key).get<double>());
      table += buf;
    }
    table += "," + std::to_string(j.at("n").get<std::size_t>()) + "\n";
  }
  write_file_atomic((fs::path(out_dir) / "performance_table.csv").string(),
                    table);

  // Top regions analogue from the cohort saliency report, if present.
  const fs::path saliency_path = fs::path(run_dir) / "explain" / "saliency.json";
  if (fs::exists(saliency_path)) {
    const auto j = json::parse(read_file(saliency_path.string()));
    std::string top = "rank,roi_index,roi_label,percentage\n";
    std::size_t rank = 0;
    for (const auto& row : j.at("regions")) {
      if (++rank > 10) break;
      std::snprintf(buf, sizeof(buf), "%.4f",
                    row.at("percentage").get<double>());
      top += std::to_string(rank) + "," +
             std::to_string(row.at("roi_index").get<std::size_t>()) + "," +
             row.value("roi_label", std::string{}) + "," + buf + "\n";
    }
    write_file_atomic((fs::path(out_dir) / "top_regions.csv").string(), top);
  }

  // Training-curve table across members.
  std::string curves = "member,epoch,train_loss,train_acc,val_acc\n";
  bool any_history = false;
  for (std::size_t m = 0;; ++m) {
    const fs::path h =
        fs::path(run_dir) / ("history_member" + std::to_string(m) + ".csv");
    if (!fs::exists(h)) break;
    any_history = true;
    std::ifstream in(h);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty()) {
        curves += std::to_string(m) + "," + line + "\n";
      }
    }
  }
  if (any_history) {
    write_file_atomic((fs::path(out_dir) / "training_curves.csv").string(),
                      curves);
  }
}

}  // namespace connectome
