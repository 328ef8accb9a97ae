#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "connectome/dataset.hpp"
#include "connectome/graph.hpp"
#include "connectome/models.hpp"
#include "connectome/trainer.hpp"

namespace connectome {

// Graph store: one JSON object per line, one line per subject.
void save_graphs(const std::vector<ConnectomeGraph>& graphs,
                 const std::string& path);
std::vector<ConnectomeGraph> load_graphs(const std::string& path);

struct BuildFailure {
  std::string subject_id;
  std::string error;
};

struct BuildResult {
  std::vector<ConnectomeGraph> graphs;
  std::vector<BuildFailure> failures;
  std::vector<std::string> warnings;
};

// Builds one thresholded graph per manifest subject. Per-subject failures
// are collected, not fatal; callers decide whether a partial build is an
// error. jobs > 1 parallelizes across subjects.
BuildResult build_graphs(const std::vector<SubjectRecord>& records,
                         double density, std::size_t jobs = 1);

std::string build_summary_json(const BuildResult& result, double density);

// Everything one end-to-end run needs; flag defaults follow the CLI.
struct RunConfig {
  std::string manifest;
  std::string out_dir;
  double density = 0.20;
  double sigma = 0.05;
  std::size_t copies = 5;
  std::string arch = "gat";
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t members = 5;
  double dropedge = 0.2;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool run_explain = false;
  std::size_t explain_steps = 200;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

struct PipelineResult {
  MetricsReport val_metrics;
  MetricsReport test_metrics;
  std::array<std::size_t, 3> split_counts{};
  std::size_t train_pool_size = 0;  // originals + augmented copies
};

// split -> augment(train only) -> train/train-ensemble -> evaluate(val, test)
// -> optional explain. Writes effective_config.json, graphs.jsonl,
// split.json, checkpoints, history CSVs, metrics JSONs and explanation
// reports under cfg.out_dir.
PipelineResult run_pipeline(const RunConfig& cfg);

// Collects run artifacts into plot-ready tables (performance_table.csv,
// top_regions.csv, training_curves.csv) under out_dir.
void write_report_tables(const std::string& run_dir,
                         const std::string& out_dir);

}  // namespace connectome
