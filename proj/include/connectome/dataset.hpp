#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "connectome/rng.hpp"

namespace connectome {

struct SubjectRecord {
  std::string subject_id;
  int label = 0;  // ASD = 1, TD = 0
  std::string site_id;
  std::string timeseries_path;
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct SplitAssignment {
  std::map<std::string, Split> by_subject;

  std::vector<std::string> subjects_in(Split s) const;
  std::array<std::size_t, 3> counts() const;
};

// Manifest format: one JSON object per line with keys subject_id,
// label ("ASD" | "TD"), site_id, timeseries_path.
std::vector<SubjectRecord> load_manifest(const std::string& path);
void write_manifest(const std::vector<SubjectRecord>& records,
                    const std::string& path);

// Site-stratified split. Within each site the subjects are stratified by
// label when both labels are present. Per-site split sizes stay within one
// subject of site_size * fraction, and the global totals match the
// largest-remainder rounding of the full cohort exactly (280/60/60 for a
// 400-subject manifest at 70/15/15).
SplitAssignment stratified_split(const std::vector<SubjectRecord>& records,
                                 const std::array<double, 3>& fractions,
                                 SeededRng& rng);

void write_split(const SplitAssignment& split, const std::string& path);
SplitAssignment load_split(const std::string& path);

// Rounds a matrix of non-negative real targets to integers with fixed row
// sums and column sums; every entry stays within one of its target (floor or
// ceil). Exposed for the split logic and its tests.
std::vector<std::vector<std::size_t>> controlled_round(
    const std::vector<std::vector<double>>& targets,
    const std::vector<std::size_t>& row_sums,
    const std::vector<std::size_t>& col_sums);

// Synthetic cohort with planted connectivity effects, the desk-scale ground
// truth for the end-to-end and explainer tests.
struct SyntheticSpec {
  std::size_t n_subjects = 200;
  std::size_t n_rois = 39;
  std::size_t n_sites = 17;
  // Region pairs whose coupling is boosted for the ASD class. Empty means
  // the default: two hub regions, each coupled to three leaves.
  std::vector<std::pair<std::size_t, std::size_t>> planted_edges;
  double effect_size = 0.6;  // added latent loading for ASD
  std::size_t timepoints = 150;
  std::uint64_t seed = 42;

  std::vector<std::pair<std::size_t, std::size_t>> resolved_planted_edges() const;
  // The designated hub regions of the default star layout.
  static constexpr std::size_t kHubA = 2;
  static constexpr std::size_t kHubB = 9;

  void validate() const;
};

struct SyntheticCohort {
  std::vector<SubjectRecord> records;
  std::vector<std::pair<std::size_t, std::size_t>> planted_edges;
};

// Writes <out_dir>/manifest.jsonl, one time series CSV per subject under
// <out_dir>/timeseries/, and <out_dir>/planted_edges.json. Deterministic:
// identical specs give byte-identical files.
SyntheticCohort generate_synthetic(const SyntheticSpec& spec,
                                   const std::string& out_dir);

}  // namespace connectome
