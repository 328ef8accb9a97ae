// Command-line front end. Links the C API only (connectome.h); all
// computation happens behind the shared library boundary.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "connectome.h"

namespace {

using nlohmann::json;

int fail(int status) {
  std::cerr << "error: " << cnx_last_error() << "\n";
  return status == CNX_OK ? 1 : status;
}

void print_and_free(char* s) {
  if (s != nullptr) {
    std::cout << s;
    cnx_string_free(s);
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CLI::ValidationError("--config", "cannot open config file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Seed resolution: --seed flag > config file > CONNECTOME_SEED env > 0.
std::uint64_t env_seed() {
  const char* env = std::getenv("CONNECTOME_SEED");
  if (env == nullptr || *env == '\0') return 0;
  return std::strtoull(env, nullptr, 10);
}

struct CommonOpts {
  std::string manifest;
  std::string out;
  std::string config_file;
  double density = 0.20;
  double sigma = 0.05;
  std::size_t copies = 5;
  std::size_t epochs = 100;
  double lr = 0.001;
  std::size_t batch_size = 16;
  std::string arch = "gat";
  std::size_t members = 5;
  double dropedge = 0.2;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Flag > config file > default.
json effective_config(const CLI::App* cmd, const CommonOpts& o) {
  json cfg = json::object();
  if (!o.config_file.empty()) {
    cfg = json::parse(read_text_file(o.config_file));
  }
  auto set_if = [&](const char* flag, const char* key, const json& value) {
    if (cmd->count(flag) > 0 || !cfg.contains(key)) cfg[key] = value;
  };
  set_if("--manifest", "manifest", o.manifest);
  set_if("--density", "density", o.density);
  set_if("--sigma", "sigma", o.sigma);
  set_if("--copies", "copies", o.copies);
  set_if("--epochs", "epochs", o.epochs);
  set_if("--lr", "lr", o.lr);
  set_if("--batch-size", "batch_size", o.batch_size);
  set_if("--arch", "arch", o.arch);
  set_if("--members", "members", o.members);
  set_if("--dropedge", "dropedge", o.dropedge);
  set_if("--jobs", "jobs", o.jobs);
  if (cmd->count("--seed") > 0) {
    cfg["seed"] = o.seed;
  } else if (!cfg.contains("seed")) {
    cfg["seed"] = env_seed();
  }
  return cfg;
}

void add_train_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--epochs", o.epochs, "Training epochs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--arch", o.arch,
                  "Architecture: gcn-baseline|gcn-optimised|gat")
      ->check(CLI::IsMember({"gcn-baseline", "gcn-optimised", "gat"}))
      ->capture_default_str();
  cmd->add_option("--members", o.members, "Ensemble size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--dropedge", o.dropedge, "DropEdge rate (GAT training)")
      ->capture_default_str();
  cmd->add_option("--sigma", o.sigma, "Augmentation noise std")
      ->capture_default_str();
  cmd->add_option("--copies", o.copies, "Augmented copies per train subject")
      ->capture_default_str();
  cmd->add_option("--density", o.density, "Proportional threshold density")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional-connectivity graph learning pipeline"};
  app.require_subcommand(1);

  CommonOpts o;
  o.seed = env_seed();

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  std::size_t synth_subjects = 200, synth_rois = 39, synth_sites = 17,
              synth_timepoints = 120;
  double synth_effect = 0.6;
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--subjects", synth_subjects, "Cohort size")
      ->capture_default_str();
  synth->add_option("--rois", synth_rois, "Regions per subject")
      ->capture_default_str();
  synth->add_option("--sites", synth_sites, "Acquisition sites")
      ->capture_default_str();
  synth->add_option("--timepoints", synth_timepoints, "Timepoints per series")
      ->capture_default_str();
  synth->add_option("--effect", synth_effect, "Planted effect size")
      ->capture_default_str();
  synth->add_option("--seed", o.seed, "Generator seed");

  // build-graphs -------------------------------------------------------------
  auto* build = app.add_subcommand(
      "build-graphs", "Time series -> thresholded connectivity graphs");
  build->add_option("--manifest", o.manifest, "Manifest (JSON lines)")
      ->required();
  build->add_option("--out", o.out, "Output graph store (.jsonl)")->required();
  build->add_option("--density", o.density, "Proportional threshold density")
      ->capture_default_str();
  build->add_option("--jobs", o.jobs, "Parallel subjects")
      ->capture_default_str();

  // split --------------------------------------------------------------------
  auto* split = app.add_subcommand(
      "split", "Site-stratified 70/15/15 train/val/test split");
  split->add_option("--manifest", o.manifest, "Manifest (JSON lines)")
      ->required();
  split->add_option("--out", o.out, "Output split JSON")->required();
  split->add_option("--seed", o.seed, "Shuffle seed");

  // train / train-ensemble ----------------------------------------------------
  auto* train = app.add_subcommand("train", "Train a single model");
  auto* train_ens =
      app.add_subcommand("train-ensemble", "Train a soft-vote ensemble");
  std::string graphs_path, split_path;
  for (auto* cmd : {train, train_ens}) {
    cmd->add_option("--graphs", graphs_path, "Graph store (.jsonl)")
        ->required();
    cmd->add_option("--split", split_path, "Split JSON")->required();
    cmd->add_option("--out", o.out, "Output directory")->required();
    cmd->add_option("--config", o.config_file, "Config file (JSON)");
    cmd->add_option("--seed", o.seed, "Training seed");
    cmd->add_option("--jobs", o.jobs, "Parallel ensemble members");
    add_train_flags(cmd, o);
  }

  // evaluate -------------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Metrics on labeled graphs");
  std::vector<std::string> ckpts;
  std::string subset = "test";
  evaluate->add_option("--graphs", graphs_path, "Graph store (.jsonl)")
      ->required();
  evaluate->add_option("--checkpoint", ckpts,
                       "Checkpoint file(s); several form an ensemble")
      ->required();
  evaluate->add_option("--split", split_path,
                       "Split JSON (evaluate a subset only)");
  evaluate->add_option("--subset", subset, "train|val|test")
      ->capture_default_str();
  evaluate->add_option("--out", o.out, "Write metrics JSON here (else stdout)");

  // explain ---------------------------------------------------------------------
  auto* explain = app.add_subcommand(
      "explain", "Saliency and edge-mask explanations");
  std::size_t explain_steps = 200;
  explain->add_option("--graphs", graphs_path, "Graph store (.jsonl)")
      ->required();
  explain->add_option("--checkpoint", ckpts,
                      "Checkpoint file(s); several form an ensemble")
      ->required();
  explain->add_option("--split", split_path, "Split JSON");
  explain->add_option("--subset", subset, "train|val|test")
      ->capture_default_str();
  explain->add_option("--out", o.out, "Output directory")->required();
  explain->add_option("--steps", explain_steps, "Mask optimization steps")
      ->capture_default_str();
  explain->add_option("--seed", o.seed, "Mask init seed");

  // pipeline ----------------------------------------------------------------------
  auto* pipeline =
      app.add_subcommand("pipeline", "Full run: graphs, split, train, "
                                     "evaluate, optional explain");
  bool do_explain = false;
  pipeline->add_option("--manifest", o.manifest, "Manifest (JSON lines)");
  pipeline->add_option("--out", o.out, "Run output directory")->required();
  pipeline->add_option("--config", o.config_file, "Config file (JSON)");
  pipeline->add_option("--seed", o.seed, "Master seed");
  pipeline->add_option("--jobs", o.jobs, "Parallel workers");
  pipeline->add_flag("--explain", do_explain, "Also produce explanations");
  add_train_flags(pipeline, o);

  // report -------------------------------------------------------------------------
  auto* report =
      app.add_subcommand("report", "Plot-ready tables from run artifacts");
  std::string run_dir;
  report->add_option("--run", run_dir, "Pipeline output directory")
      ->required();
  report->add_option("--out", o.out, "Table output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    json spec;
    spec["n_subjects"] = synth_subjects;
    spec["n_rois"] = synth_rois;
    spec["n_sites"] = synth_sites;
    spec["timepoints"] = synth_timepoints;
    spec["effect_size"] = synth_effect;
    spec["seed"] = synth->count("--seed") > 0 ? o.seed : env_seed();
    const int rc = cnx_synth(spec.dump().c_str(), o.out.c_str());
    if (rc != CNX_OK) return fail(rc);
    std::cout << "cohort written to " << o.out << "\n";
    return 0;
  }

  if (build->parsed()) {
    json opts;
    opts["density"] = o.density;
    opts["jobs"] = o.jobs;
    char* summary = nullptr;
    const int rc = cnx_build_graphs(o.manifest.c_str(), opts.dump().c_str(),
                                    o.out.c_str(), &summary);
    print_and_free(summary);
    if (rc != CNX_OK) return fail(rc);
    return 0;
  }

  if (split->parsed()) {
    json opts;
    opts["seed"] = split->count("--seed") > 0 ? o.seed : env_seed();
    const int rc =
        cnx_split(o.manifest.c_str(), opts.dump().c_str(), o.out.c_str());
    if (rc != CNX_OK) return fail(rc);
    std::cout << "split written to " << o.out << "\n";
    return 0;
  }

  if (train->parsed() || train_ens->parsed()) {
    const CLI::App* cmd = train->parsed() ? train : train_ens;
    json cfg = effective_config(cmd, o);
    if (train->parsed() && cmd->count("--members") == 0) {
      cfg["members"] = 1;  // `train` is the single-model command
    }
    char* summary = nullptr;
    const int rc = cnx_train(graphs_path.c_str(), split_path.c_str(),
                             cfg.dump().c_str(), o.out.c_str(), &summary);
    print_and_free(summary);
    if (rc != CNX_OK) return fail(rc);
    return 0;
  }

  if (evaluate->parsed()) {
    std::vector<const char*> paths;
    for (const auto& c : ckpts) paths.push_back(c.c_str());
    cnx_model* model = nullptr;
    int rc = cnx_model_open(paths.data(), static_cast<int32_t>(paths.size()),
                            &model);
    if (rc != CNX_OK) return fail(rc);
    cnx_cohort* cohort = nullptr;
    rc = cnx_cohort_open(graphs_path.c_str(), &cohort);
    if (rc != CNX_OK) {
      cnx_model_close(model);
      return fail(rc);
    }
    char* metrics = nullptr;
    rc = cnx_evaluate(model, cohort,
                      split_path.empty() ? nullptr : split_path.c_str(),
                      subset.c_str(), &metrics);
    cnx_cohort_close(cohort);
    cnx_model_close(model);
    if (rc != CNX_OK) return fail(rc);
    if (!o.out.empty()) {
      std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
      out << metrics;
    } else {
      std::cout << metrics;
    }
    cnx_string_free(metrics);
    return 0;
  }

  if (explain->parsed()) {
    std::vector<const char*> paths;
    for (const auto& c : ckpts) paths.push_back(c.c_str());
    cnx_model* model = nullptr;
    int rc = cnx_model_open(paths.data(), static_cast<int32_t>(paths.size()),
                            &model);
    if (rc != CNX_OK) return fail(rc);
    cnx_cohort* cohort = nullptr;
    rc = cnx_cohort_open(graphs_path.c_str(), &cohort);
    if (rc != CNX_OK) {
      cnx_model_close(model);
      return fail(rc);
    }
    json opts;
    opts["steps"] = explain_steps;
    opts["seed"] = explain->count("--seed") > 0 ? o.seed : env_seed();
    if (!split_path.empty()) {
      opts["split_path"] = split_path;
      opts["subset"] = subset;
    }
    char* summary = nullptr;
    rc = cnx_explain(model, cohort, opts.dump().c_str(), o.out.c_str(),
                     &summary);
    print_and_free(summary);
    cnx_cohort_close(cohort);
    cnx_model_close(model);
    if (rc != CNX_OK) return fail(rc);
    return 0;
  }

  if (pipeline->parsed()) {
    json cfg = effective_config(pipeline, o);
    cfg["explain"] = do_explain || (cfg.contains("explain") &&
                                    cfg["explain"].get<bool>());
    if (!cfg.contains("manifest") || cfg["manifest"].get<std::string>().empty()) {
      std::cerr << "error: pipeline needs --manifest (or a config file "
                   "providing it)\n";
      return 1;
    }
    char* metrics = nullptr;
    const int rc = cnx_pipeline(cfg.dump().c_str(), o.out.c_str(), &metrics);
    print_and_free(metrics);
    if (rc != CNX_OK) return fail(rc);
    return 0;
  }

  if (report->parsed()) {
    const int rc = cnx_report(run_dir.c_str(), o.out.c_str());
    if (rc != CNX_OK) return fail(rc);
    std::cout << "tables written to " << o.out << "\n";
    return 0;
  }

  return 0;
}
