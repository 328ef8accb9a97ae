#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "connectome/dataset.hpp"
#include "connectome/graph.hpp"
#include "connectome/util.hpp"

using namespace connectome;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<SubjectRecord> synthetic_records(std::size_t n,
                                             std::size_t n_sites) {
  std::vector<SubjectRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord r;
    r.subject_id = "S" + std::to_string(i);
    r.label = static_cast<int>(i % 2);
    r.site_id = "SITE" + std::to_string((i / 2) % n_sites);
    r.timeseries_path = "unused.csv";
    records.push_back(std::move(r));
  }
  return records;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("manifest: 400 rows with balanced labels") {
  const auto dir = temp_dir("cnx_manifest");
  const auto path = dir / "manifest.jsonl";
  write_manifest(synthetic_records(400, 17), path.string());
  const auto records = load_manifest(path.string());
  REQUIRE(records.size() == 400);
  std::size_t asd = 0;
  for (const auto& r : records) asd += static_cast<std::size_t>(r.label);
  CHECK(asd == 200);
  fs::remove_all(dir);
}

TEST_CASE("manifest: empty file is an error") {
  const auto dir = temp_dir("cnx_manifest_empty");
  const auto path = dir / "manifest.jsonl";
  write_lines(path, {});
  CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                       doctest::Contains("empty manifest"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("manifest: duplicate id names its line") {
  const auto dir = temp_dir("cnx_manifest_dup");
  const auto path = dir / "manifest.jsonl";
  std::vector<std::string> lines;
  for (int i = 0; i < 6; ++i) {
    lines.push_back(R"({"subject_id":"S)" + std::to_string(i) +
                    R"(","label":"ASD","site_id":"A","timeseries_path":"x"})");
  }
  lines.push_back(
      R"({"subject_id":"S3","label":"TD","site_id":"A","timeseries_path":"x"})");
  write_lines(path, lines);
  CHECK_THROWS_WITH_AS(load_manifest(path.string()), doctest::Contains(":7"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("manifest: unknown label and malformed rows name their lines") {
  const auto dir = temp_dir("cnx_manifest_bad");
  const auto path = dir / "manifest.jsonl";
  SUBCASE("unknown label") {
    write_lines(path,
                {R"({"subject_id":"a","label":"ADHD","site_id":"A","timeseries_path":"x"})"});
    CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                         doctest::Contains("unknown label"),
                         std::runtime_error);
  }
  SUBCASE("malformed json") {
    write_lines(path, {"{not json"});
    CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                         doctest::Contains(":1"), std::runtime_error);
  }
  SUBCASE("missing key") {
    write_lines(path, {R"({"subject_id":"a","label":"ASD"})"});
    CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                         doctest::Contains("missing key"),
                         std::runtime_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("controlled_round: entries stay within floor/ceil, sums exact") {
  SeededRng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t R = 1 + rng.below(8);
    const std::size_t K = 2 + rng.below(3);
    // Random row totals and a random split of each row's mass into K parts.
    std::vector<std::size_t> row_sums(R);
    std::vector<std::vector<double>> targets(R, std::vector<double>(K));
    std::vector<double> col_mass(K, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      row_sums[r] = 1 + rng.below(30);
      std::vector<double> w(K);
      double total = 0.0;
      for (double& v : w) {
        v = rng.uniform() + 1e-3;
        total += v;
      }
      for (std::size_t k = 0; k < K; ++k) {
        targets[r][k] = row_sums[r] * w[k] / total;
        col_mass[k] += targets[r][k];
      }
    }
    // Column goals: largest-remainder of the fractional column masses.
    std::vector<std::size_t> col_sums(K);
    std::size_t assigned = 0, total = 0;
    for (std::size_t r = 0; r < R; ++r) total += row_sums[r];
    std::vector<double> frac(K);
    for (std::size_t k = 0; k < K; ++k) {
      col_sums[k] = static_cast<std::size_t>(std::floor(col_mass[k] + 1e-9));
      frac[k] = col_mass[k] - static_cast<double>(col_sums[k]);
      assigned += col_sums[k];
    }
    while (assigned < total) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k) {
        if (frac[k] > frac[best]) best = k;
      }
      col_sums[best]++;
      frac[best] = -1.0;
      ++assigned;
    }

    const auto x = controlled_round(targets, row_sums, col_sums);
    for (std::size_t k = 0; k < K; ++k) {
      std::size_t got = 0;
      for (std::size_t r = 0; r < R; ++r) got += x[r][k];
      CHECK(got == col_sums[k]);
    }
    for (std::size_t r = 0; r < R; ++r) {
      std::size_t got = 0;
      for (std::size_t k = 0; k < K; ++k) {
        got += x[r][k];
        CHECK(static_cast<double>(x[r][k]) >= std::floor(targets[r][k] + 1e-9) - 0.5);
        CHECK(static_cast<double>(x[r][k]) <= std::ceil(targets[r][k] - 1e-9) + 0.5);
      }
      CHECK(got == row_sums[r]);
    }
  }
}

TEST_CASE("split: 400 subjects over 17 sites give exactly 280/60/60") {
  const auto records = synthetic_records(400, 17);
  SeededRng rng(42);
  const auto split = stratified_split(records, {0.70, 0.15, 0.15}, rng);
  const auto counts = split.counts();
  CHECK(counts[0] == 280);
  CHECK(counts[1] == 60);
  CHECK(counts[2] == 60);

  // Per-site deviation at most one subject per split.
  std::map<std::string, std::array<std::size_t, 4>> per_site;  // n, tr, va, te
  for (const auto& r : records) {
    auto& row = per_site[r.site_id];
    row[0]++;
    row[1 + static_cast<std::size_t>(split.by_subject.at(r.subject_id))]++;
  }
  CHECK(per_site.size() == 17);
  const double fr[3] = {0.70, 0.15, 0.15};
  for (const auto& [site, row] : per_site) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double target = fr[k] * static_cast<double>(row[0]);
      CHECK(std::fabs(static_cast<double>(row[1 + k]) - target) <= 1.0 + 1e-9);
    }
  }

  // Disjoint and exhaustive by construction of the map; check coverage.
  CHECK(split.by_subject.size() == 400);
}

TEST_CASE("split: label stratification within sites") {
  const auto records = synthetic_records(400, 17);
  SeededRng rng(1);
  const auto split = stratified_split(records, {0.70, 0.15, 0.15}, rng);
  // Labels are balanced per site in this cohort, so the train split at each
  // site must stay within one subject of balance.
  std::map<std::string, std::map<int, int>> train_labels;
  for (const auto& r : records) {
    if (split.by_subject.at(r.subject_id) == Split::kTrain) {
      train_labels[r.site_id][r.label]++;
    }
  }
  for (const auto& [site, counts] : train_labels) {
    int asd = 0, td = 0;
    if (auto it = counts.find(1); it != counts.end()) asd = it->second;
    if (auto it = counts.find(0); it != counts.end()) td = it->second;
    CHECK(std::abs(asd - td) <= 1);
  }
}

TEST_CASE("split: single site of 10 subjects gives 7 train, total 10") {
  const auto records = synthetic_records(10, 1);
  SeededRng rng(3);
  const auto split = stratified_split(records, {0.70, 0.15, 0.15}, rng);
  const auto counts = split.counts();
  CHECK(counts[0] == 7);
  CHECK(counts[0] + counts[1] + counts[2] == 10);
  CHECK(counts[1] >= 1);
  CHECK(counts[1] <= 2);
  CHECK(counts[2] >= 1);
  CHECK(counts[2] <= 2);
}

TEST_CASE("split: deterministic given the seed") {
  const auto records = synthetic_records(123, 7);
  SeededRng a(99), b(99), c(100);
  const auto s1 = stratified_split(records, {0.70, 0.15, 0.15}, a);
  const auto s2 = stratified_split(records, {0.70, 0.15, 0.15}, b);
  const auto s3 = stratified_split(records, {0.70, 0.15, 0.15}, c);
  CHECK(s1.by_subject == s2.by_subject);
  CHECK(s1.by_subject != s3.by_subject);
}

TEST_CASE("split: negative fraction rejected") {
  const auto records = synthetic_records(10, 2);
  SeededRng rng(1);
  CHECK_THROWS_AS(stratified_split(records, {1.2, -0.1, -0.1}, rng),
                  std::invalid_argument);
}

TEST_CASE("split: JSON round trip") {
  const auto dir = temp_dir("cnx_split_io");
  const auto records = synthetic_records(40, 3);
  SeededRng rng(7);
  const auto split = stratified_split(records, {0.70, 0.15, 0.15}, rng);
  const auto path = (dir / "split.json").string();
  write_split(split, path);
  const auto back = load_split(path);
  CHECK(back.by_subject == split.by_subject);
  fs::remove_all(dir);
}

TEST_CASE("synthetic: site count and determinism") {
  const auto dir1 = temp_dir("cnx_synth_a");
  const auto dir2 = temp_dir("cnx_synth_b");
  SyntheticSpec spec;
  spec.n_subjects = 68;
  spec.n_rois = 14;
  spec.n_sites = 17;
  spec.timepoints = 40;
  spec.seed = 4242;

  const auto cohort1 = generate_synthetic(spec, dir1.string());
  const auto cohort2 = generate_synthetic(spec, dir2.string());

  std::set<std::string> sites;
  for (const auto& r : cohort1.records) sites.insert(r.site_id);
  CHECK(sites.size() == 17);

  // Byte-identical regeneration.
  CHECK(read_file((dir1 / "manifest.jsonl").string()) ==
        read_file((dir2 / "manifest.jsonl").string()));
  for (const auto& r : cohort1.records) {
    const auto rel = fs::path(r.timeseries_path).filename();
    CHECK(read_file((dir1 / "timeseries" / rel).string()) ==
          read_file((dir2 / "timeseries" / rel).string()));
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

namespace {

// Mean |r| over planted pairs for each class, across the whole cohort.
std::pair<double, double> planted_gap(const SyntheticCohort& cohort) {
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (const auto& rec : cohort.records) {
    const auto ts = read_timeseries_csv(rec.timeseries_path, rec.subject_id);
    const auto c = pearson(ts);
    for (const auto& [i, j] : cohort.planted_edges) {
      sum[rec.label] += std::fabs(c.at(i, j));
      count[rec.label]++;
    }
  }
  return {sum[0] / count[0], sum[1] / count[1]};
}

}  // namespace

TEST_CASE("synthetic: planted effect controls the class gap") {
  SyntheticSpec spec;
  spec.n_subjects = 200;
  spec.n_rois = 20;
  spec.n_sites = 5;
  spec.timepoints = 120;
  spec.seed = 77;

  SUBCASE("no effect, no gap") {
    const auto dir = temp_dir("cnx_synth_flat");
    spec.effect_size = 0.0;
    const auto cohort = generate_synthetic(spec, dir.string());
    const auto [td, asd] = planted_gap(cohort);
    CHECK(std::fabs(asd - td) < 0.05);
    fs::remove_all(dir);
  }
  SUBCASE("effect 0.6 separates classes by more than 0.2") {
    const auto dir = temp_dir("cnx_synth_effect");
    spec.effect_size = 0.6;
    const auto cohort = generate_synthetic(spec, dir.string());
    const auto [td, asd] = planted_gap(cohort);
    CHECK(asd - td > 0.2);
    fs::remove_all(dir);
  }
}

TEST_CASE("synthetic: invalid specs rejected") {
  SyntheticSpec spec;
  spec.n_rois = 4;  // too small for the default planted layout
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  SyntheticSpec spec2;
  spec2.effect_size = 1.5;
  CHECK_THROWS_AS(spec2.validate(), std::invalid_argument);
  SyntheticSpec spec3;
  spec3.planted_edges = {{0, 1}, {1, 0}};  // duplicate pair
  CHECK_THROWS_AS(spec3.validate(), std::invalid_argument);
}
