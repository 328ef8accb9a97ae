#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "connectome/rng.hpp"

namespace connectome {

// One subject's ROI signals: T timepoints x R regions, column per region.
struct TimeSeriesMatrix {
  std::string subject_id;
  std::size_t timepoints = 0;
  std::size_t regions = 0;
  std::vector<double> data;  // row-major, T x R

  double at(std::size_t t, std::size_t r) const { return data[t * regions + r]; }
  double& at(std::size_t t, std::size_t r) { return data[t * regions + r]; }
};

// R x R Pearson matrix; symmetric, unit diagonal, entries in [-1, 1].
// Zero-variance regions correlate 0 with everything and are reported in
// warnings rather than failing the build.
struct CorrelationMatrix {
  std::size_t regions = 0;
  std::vector<double> values;  // row-major, R x R
  std::vector<std::string> warnings;

  double at(std::size_t i, std::size_t j) const { return values[i * regions + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * regions + j]; }
};

struct Edge {
  std::size_t i = 0;  // i < j always
  std::size_t j = 0;
  double weight = 0.0;  // signed Pearson r
};

// Thresholded functional-connectivity graph. node_features keeps the full
// unthresholded correlation rows (R x R), so the graph alone is enough to
// re-augment or rebuild at another density.
struct ConnectomeGraph {
  std::string subject_id;
  std::string site_id;
  std::optional<int> label;  // ASD = 1, TD = 0
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  std::vector<double> node_features;  // row-major, R x R
  bool augmented = false;

  double feature(std::size_t i, std::size_t j) const {
    return node_features[i * node_count + j];
  }
};

// Pearson correlation of every region pair. Requires timepoints >= 2.
CorrelationMatrix pearson(const TimeSeriesMatrix& ts);

// Keep the top ceil(density * R(R-1)/2) of all region pairs ranked by |r|
// descending, ties broken by ascending (i, j); edge weights keep the sign.
// 0 < density <= 1.
ConnectomeGraph proportional_threshold(const CorrelationMatrix& c,
                                       double density);

// Training-time augmentation: per copy, add N(0, sigma^2) noise to the upper
// triangle of the subject's correlation matrix, mirror, clamp to [-1, 1],
// restore the unit diagonal and re-threshold at the same density. Copies are
// tagged augmented; label and site pass through.
std::vector<ConnectomeGraph> augment_gaussian(const ConnectomeGraph& g,
                                              SeededRng& rng, double sigma,
                                              std::size_t copies,
                                              double density);

// Reconstruct the correlation matrix a graph was built from (its feature
// rows), e.g. to re-threshold.
CorrelationMatrix correlation_of(const ConnectomeGraph& g);

// Subject time series CSV: T rows x R numeric columns, no header.
TimeSeriesMatrix read_timeseries_csv(const std::string& path,
                                     const std::string& subject_id);

void write_timeseries_csv(const TimeSeriesMatrix& ts, const std::string& path);

// Number of edges proportional thresholding keeps for a given size/density.
std::size_t threshold_edge_count(std::size_t regions, double density);

}  // namespace connectome
