#include "connectome/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "connectome/graph.hpp"
#include "connectome/util.hpp"

namespace connectome {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split name: " + name);
}

std::vector<std::string> SplitAssignment::subjects_in(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, sp] : by_subject) {
    if (sp == s) out.push_back(id);
  }
  return out;
}

std::array<std::size_t, 3> SplitAssignment::counts() const {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& [id, sp] : by_subject) c[static_cast<std::size_t>(sp)]++;
  return c;
}

std::vector<SubjectRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open manifest: " + path);
  }
  const auto manifest_dir = std::filesystem::path(path).parent_path();
  std::vector<SubjectRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed manifest row: " + e.what());
    }
    for (const char* key : {"subject_id", "label", "site_id", "timeseries_path"}) {
      if (!row.contains(key)) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": missing key '" + key + "'");
      }
    }
    SubjectRecord rec;
    rec.subject_id = row.at("subject_id").get<std::string>();
    const auto label = row.at("label").get<std::string>();
    if (label == "ASD") {
      rec.label = 1;
    } else if (label == "TD") {
      rec.label = 0;
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unknown label '" + label +
                               "' (expected ASD or TD)");
    }
    rec.site_id = row.at("site_id").get<std::string>();
    rec.timeseries_path = row.at("timeseries_path").get<std::string>();
    // Relative series paths are resolved against the manifest's directory,
    // so a cohort directory can be moved as a unit.
    if (std::filesystem::path(rec.timeseries_path).is_relative()) {
      rec.timeseries_path = (manifest_dir / rec.timeseries_path).string();
    }
    if (!seen.insert(rec.subject_id).second) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": duplicate subject_id '" + rec.subject_id + "'");
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) {
    throw std::runtime_error(path + ": empty manifest");
  }
  return records;
}

void write_manifest(const std::vector<SubjectRecord>& records,
                    const std::string& path) {
  std::string body;
  for (const auto& r : records) {
    json row;
    row["subject_id"] = r.subject_id;
    row["label"] = r.label == 1 ? "ASD" : "TD";
    row["site_id"] = r.site_id;
    row["timeseries_path"] = r.timeseries_path;
    body += row.dump();
    body += '\n';
  }
  write_file_atomic(path, body);
}

namespace {

// Largest-remainder rounding of total * fractions, ties by lower index.
std::vector<std::size_t> largest_remainder(std::size_t total,
                                           const std::vector<double>& fractions) {
  const std::size_t K = fractions.size();
  std::vector<std::size_t> out(K);
  std::vector<double> frac(K);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double target = static_cast<double>(total) * fractions[k];
    out[k] = static_cast<std::size_t>(std::floor(target + 1e-12));
    frac[k] = target - static_cast<double>(out[k]);
    assigned += out[k];
  }
  std::vector<std::size_t> order(K);
  for (std::size_t k = 0; k < K; ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return frac[a] > frac[b];
  });
  for (std::size_t i = 0; assigned < total; ++i) {
    out[order[i % K]] += 1;
    ++assigned;
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> controlled_round(
    const std::vector<std::vector<double>>& targets,
    const std::vector<std::size_t>& row_sums,
    const std::vector<std::size_t>& col_sums) {
  const std::size_t R = targets.size();
  const std::size_t K = col_sums.size();
  std::vector<std::vector<std::size_t>> x(R, std::vector<std::size_t>(K, 0));
  std::vector<std::vector<std::size_t>> lo(R, std::vector<std::size_t>(K, 0));
  std::vector<std::vector<std::size_t>> hi(R, std::vector<std::size_t>(K, 0));

  // Start from per-row largest remainder; entries land on floor or ceil of
  // their target, so row sums are already exact.
  for (std::size_t r = 0; r < R; ++r) {
    if (targets[r].size() != K) {
      throw std::invalid_argument("controlled_round: ragged target matrix");
    }
    double row_target = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      lo[r][k] = static_cast<std::size_t>(std::floor(targets[r][k] + 1e-12));
      hi[r][k] = static_cast<std::size_t>(std::ceil(targets[r][k] - 1e-12));
      row_target += targets[r][k];
    }
    if (std::llround(row_target) != static_cast<long long>(row_sums[r])) {
      throw std::invalid_argument("controlled_round: row targets do not sum "
                                  "to the row total");
    }
    std::vector<double> frac(K);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      x[r][k] = lo[r][k];
      frac[k] = targets[r][k] - static_cast<double>(lo[r][k]);
      assigned += x[r][k];
    }
    std::vector<std::size_t> order(K);
    for (std::size_t k = 0; k < K; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < row_sums[r]; ++i) {
      const std::size_t k = order[i % K];
      if (x[r][k] < hi[r][k]) {
        x[r][k] += 1;
        ++assigned;
      } else if (i >= K) {
        // All preferred cells saturated; widen to any cell below ceil.
        bool moved = false;
        for (std::size_t kk = 0; kk < K && !moved; ++kk) {
          if (x[r][kk] < hi[r][kk]) {
            x[r][kk] += 1;
            ++assigned;
            moved = true;
          }
        }
        if (!moved) {
          throw std::logic_error("controlled_round: row capacity exhausted");
        }
      }
    }
  }

  // Repair column sums by moving units within rows, keeping every entry in
  // [floor, ceil]. Each augmentation is a shortest chain of row moves found
  // by BFS over columns; existence is the classic two-way controlled
  // rounding guarantee.
  auto col_total = [&](std::size_t k) {
    std::size_t s = 0;
    for (std::size_t r = 0; r < R; ++r) s += x[r][k];
    return s;
  };
  for (std::size_t guard = 0; guard < 4 * (R + 1) * (K + 1) * (K + 1); ++guard) {
    std::size_t over = K, under = K;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t t = col_total(k);
      if (t > col_sums[k] && over == K) over = k;
      if (t < col_sums[k] && under == K) under = k;
    }
    if (over == K && under == K) return x;
    if (over == K || under == K) {
      throw std::logic_error("controlled_round: inconsistent column totals");
    }
    // BFS from `over` to `under`; an edge a->b is a row that can give up a
    // unit in a and absorb one in b.
    std::vector<std::size_t> via_row(K, R), prev_col(K, K);
    std::vector<bool> seen(K, false);
    std::deque<std::size_t> queue{over};
    seen[over] = true;
    while (!queue.empty() && !seen[under]) {
      const std::size_t a = queue.front();
      queue.pop_front();
      for (std::size_t b = 0; b < K; ++b) {
        if (seen[b]) continue;
        for (std::size_t r = 0; r < R; ++r) {
          if (x[r][a] > lo[r][a] && x[r][b] < hi[r][b]) {
            seen[b] = true;
            via_row[b] = r;
            prev_col[b] = a;
            queue.push_back(b);
            break;
          }
        }
      }
    }
    if (!seen[under]) {
      throw std::logic_error("controlled_round: no feasible repair chain");
    }
    for (std::size_t b = under; b != over; b = prev_col[b]) {
      const std::size_t a = prev_col[b];
      const std::size_t r = via_row[b];
      x[r][a] -= 1;
      x[r][b] += 1;
    }
  }
  throw std::logic_error("controlled_round: repair did not converge");
}

SplitAssignment stratified_split(const std::vector<SubjectRecord>& records,
                                 const std::array<double, 3>& fractions,
                                 SeededRng& rng) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) {
      throw std::invalid_argument("stratified_split: negative fraction");
    }
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("stratified_split: fractions must sum to 1");
  }
  if (records.empty()) {
    throw std::invalid_argument("stratified_split: no records");
  }
  for (const auto& r : records) {
    if (r.site_id.empty()) {
      throw std::invalid_argument("stratified_split: subject '" +
                                  r.subject_id + "' has no site_id");
    }
  }
  const std::vector<double> f(fractions.begin(), fractions.end());

  // site -> label -> subject ids, sites and subjects in sorted order so the
  // assignment depends only on (records, fractions, seed).
  std::map<std::string, std::map<int, std::vector<std::string>>> sites;
  for (const auto& r : records) {
    sites[r.site_id][r.label].push_back(r.subject_id);
  }
  for (auto& [site, groups] : sites) {
    for (auto& [label, ids] : groups) std::sort(ids.begin(), ids.end());
  }

  const std::size_t n_total = records.size();
  const auto global = largest_remainder(n_total, f);

  // Stage 1: site x split table with exact global column sums.
  std::vector<std::string> site_names;
  std::vector<std::size_t> site_sizes;
  std::vector<std::vector<double>> site_targets;
  for (const auto& [site, groups] : sites) {
    std::size_t n = 0;
    for (const auto& [label, ids] : groups) n += ids.size();
    site_names.push_back(site);
    site_sizes.push_back(n);
    site_targets.push_back({n * f[0], n * f[1], n * f[2]});
  }
  const auto site_alloc = controlled_round(site_targets, site_sizes,
                                           {global[0], global[1], global[2]});

  // Stage 2: per site, label x split table constrained to the site's counts.
  SplitAssignment out;
  for (std::size_t s = 0; s < site_names.size(); ++s) {
    const auto& groups = sites[site_names[s]];
    const double n_site = static_cast<double>(site_sizes[s]);
    std::vector<int> labels;
    std::vector<std::size_t> group_sizes;
    std::vector<std::vector<double>> group_targets;
    for (const auto& [label, ids] : groups) {
      labels.push_back(label);
      group_sizes.push_back(ids.size());
      std::vector<double> t(3);
      for (std::size_t k = 0; k < 3; ++k) {
        t[k] = static_cast<double>(site_alloc[s][k]) *
               (static_cast<double>(ids.size()) / n_site);
      }
      group_targets.push_back(std::move(t));
    }
    const auto group_alloc =
        controlled_round(group_targets, group_sizes, site_alloc[s]);

    for (std::size_t g = 0; g < labels.size(); ++g) {
      auto ids = groups.at(labels[g]);
      auto stream = rng.child("split/" + site_names[s] + "/" +
                              std::to_string(labels[g]));
      // Fisher-Yates with draws from the child stream.
      for (std::size_t i = ids.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(stream.below(i));
        std::swap(ids[i - 1], ids[j]);
      }
      std::size_t pos = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < group_alloc[g][k]; ++c) {
          out.by_subject[ids[pos++]] = static_cast<Split>(k);
        }
      }
    }
  }
  return out;
}

void write_split(const SplitAssignment& split, const std::string& path) {
  json j = json::object();
  for (const auto& [id, sp] : split.by_subject) {
    j[id] = split_name(sp);
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

SplitAssignment load_split(const std::string& path) {
  const auto j = json::parse(read_file(path));
  SplitAssignment out;
  for (const auto& [id, name] : j.items()) {
    out.by_subject[id] = split_from_name(name.get<std::string>());
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (n_subjects < 2) {
    throw std::invalid_argument("synthetic spec: need at least 2 subjects");
  }
  if (n_sites == 0 || n_sites > n_subjects) {
    throw std::invalid_argument("synthetic spec: invalid site count");
  }
  if (timepoints < 2) {
    throw std::invalid_argument("synthetic spec: need at least 2 timepoints");
  }
  if (effect_size < 0.0 || effect_size > 1.0) {
    throw std::invalid_argument("synthetic spec: effect_size must be in [0,1]");
  }
  const auto edges = resolved_planted_edges();
  std::set<std::pair<std::size_t, std::size_t>> uniq;
  for (auto [i, j] : edges) {
    if (i >= n_rois || j >= n_rois || i == j) {
      throw std::invalid_argument("synthetic spec: planted edge out of range");
    }
    if (!uniq.insert({std::min(i, j), std::max(i, j)}).second) {
      throw std::invalid_argument("synthetic spec: duplicate planted edge");
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>>
SyntheticSpec::resolved_planted_edges() const {
  if (!planted_edges.empty()) return planted_edges;
  // Two-leaf stars: a higher hub degree dilutes the hub's variance and
  // shrinks the planted correlations.
  if (n_rois >= 12) {
    return {{kHubA, 3}, {kHubA, 4}, {kHubB, 10}, {kHubB, 11}};
  }
  if (n_rois >= 6) {
    return {{0, 2}, {0, 3}, {1, 4}, {1, 5}};
  }
  throw std::invalid_argument(
      "synthetic spec: default planted layout needs at least 6 ROIs");
}

SyntheticCohort generate_synthetic(const SyntheticSpec& spec,
                                   const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "timeseries");

  const auto planted = spec.resolved_planted_edges();
  SeededRng master(spec.seed);

  // Background coupling keeps planted pairs visible in both classes; the
  // ASD class gets the extra loading. Subject-level jitter creates genuine
  // class overlap so classifiers cannot saturate.
  constexpr double kBaseLoad = 0.55;
  constexpr double kLoadJitter = 0.18;

  std::vector<double> site_offset(spec.n_sites);
  for (std::size_t s = 0; s < spec.n_sites; ++s) {
    auto stream = master.child("synth/site", s);
    site_offset[s] = stream.gaussian(0.0, 0.5);
  }

  SyntheticCohort cohort;
  cohort.planted_edges = planted;

  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "S%04zu", i + 1);
    const std::string sid = idbuf;
    const int label = static_cast<int>(i % 2);
    const std::size_t site = (i / 2) % spec.n_sites;
    char sitebuf[32];
    std::snprintf(sitebuf, sizeof(sitebuf), "SITE%02zu", site + 1);

    auto stream = master.child("synth/subj/" + sid);
    double load = kBaseLoad + (label == 1 ? spec.effect_size : 0.0) +
                  stream.gaussian(0.0, kLoadJitter);
    load = std::max(0.0, load);

    TimeSeriesMatrix ts;
    ts.subject_id = sid;
    ts.timepoints = spec.timepoints;
    ts.regions = spec.n_rois;
    ts.data.assign(spec.timepoints * spec.n_rois, 0.0);

    for (std::size_t t = 0; t < spec.timepoints; ++t) {
      for (std::size_t r = 0; r < spec.n_rois; ++r) {
        ts.at(t, r) = site_offset[site] + stream.gaussian();
      }
      for (const auto& [a, b] : planted) {
        const double u = stream.gaussian();
        ts.at(t, a) += load * u;
        ts.at(t, b) += load * u;
      }
    }

    const std::string rel_path = "timeseries/" + sid + ".csv";
    write_timeseries_csv(ts, (fs::path(out_dir) / rel_path).string());

    SubjectRecord rec;
    rec.subject_id = sid;
    rec.label = label;
    rec.site_id = sitebuf;
    rec.timeseries_path = rel_path;
    cohort.records.push_back(std::move(rec));
  }

  // The manifest keeps series paths relative to itself; the returned records
  // carry resolved paths for immediate use.
  write_manifest(cohort.records,
                 (fs::path(out_dir) / "manifest.jsonl").string());
  for (auto& rec : cohort.records) {
    rec.timeseries_path = (fs::path(out_dir) / rec.timeseries_path).string();
  }

  json planted_json = json::array();
  for (auto [a, b] : planted) {
    planted_json.push_back({a, b});
  }
  write_file_atomic((fs::path(out_dir) / "planted_edges.json").string(),
                    planted_json.dump(2) + "\n");
  return cohort;
}

}  // namespace connectome
