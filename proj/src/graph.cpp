#include "connectome/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "connectome/util.hpp"

namespace connectome {

CorrelationMatrix pearson(const TimeSeriesMatrix& ts) {
  const std::size_t T = ts.timepoints;
  const std::size_t R = ts.regions;
  if (T < 2) {
    throw std::invalid_argument("pearson: need at least 2 timepoints, got " +
                                std::to_string(T));
  }
  if (ts.data.size() != T * R) {
    throw std::invalid_argument("pearson: data length does not match T x R");
  }
  for (double v : ts.data) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("pearson: non-finite sample in time series");
    }
  }

  // Center columns, then r = <xc, yc> / (|xc| |yc|).
  std::vector<double> centered(T * R);
  std::vector<double> norms(R);
  std::vector<bool> flat(R, false);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += ts.at(t, r);
    mean /= static_cast<double>(T);
    double ss = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double d = ts.at(t, r) - mean;
      centered[t * R + r] = d;
      ss += d * d;
    }
    norms[r] = std::sqrt(ss);
    flat[r] = norms[r] == 0.0;
  }

  CorrelationMatrix c;
  c.regions = R;
  c.values.assign(R * R, 0.0);
  for (std::size_t i = 0; i < R; ++i) {
    c.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < R; ++j) {
      double r = 0.0;
      if (!flat[i] && !flat[j]) {
        double dot = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          dot += centered[t * R + i] * centered[t * R + j];
        }
        r = dot / (norms[i] * norms[j]);
        r = std::clamp(r, -1.0, 1.0);
      }
      c.at(i, j) = r;
      c.at(j, i) = r;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    if (flat[r]) {
      c.warnings.push_back("region " + std::to_string(r) +
                           " has zero variance; correlations set to 0");
    }
  }
  return c;
}

std::size_t threshold_edge_count(std::size_t regions, double density) {
  if (!(density > 0.0) || density > 1.0) {
    throw std::invalid_argument("density must be in (0, 1], got " +
                                std::to_string(density));
  }
  const std::size_t pairs = regions * (regions - 1) / 2;
  // ceil of a product that is frequently an exact integer; the epsilon keeps
  // 0.20 * 6670 from landing on 1334.0000000000002 and rounding to 1335.
  const auto k = static_cast<std::size_t>(
      std::ceil(density * static_cast<double>(pairs) - 1e-9));
  return std::min(std::max<std::size_t>(k, pairs > 0 ? 1 : 0), pairs);
}

ConnectomeGraph proportional_threshold(const CorrelationMatrix& c,
                                       double density) {
  const std::size_t R = c.regions;
  const std::size_t k = threshold_edge_count(R, density);

  std::vector<Edge> all;
  all.reserve(R * (R - 1) / 2);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = i + 1; j < R; ++j) {
      all.push_back({i, j, c.at(i, j)});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
    const double ma = std::fabs(a.weight);
    const double mb = std::fabs(b.weight);
    if (ma != mb) return ma > mb;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  all.resize(k);
  // Canonical edge order in the graph is ascending (i, j).
  std::sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  ConnectomeGraph g;
  g.node_count = R;
  g.edges = std::move(all);
  g.node_features = c.values;
  return g;
}

CorrelationMatrix correlation_of(const ConnectomeGraph& g) {
  CorrelationMatrix c;
  c.regions = g.node_count;
  c.values = g.node_features;
  return c;
}

std::vector<ConnectomeGraph> augment_gaussian(const ConnectomeGraph& g,
                                              SeededRng& rng, double sigma,
                                              std::size_t copies,
                                              double density) {
  if (sigma < 0.0) {
    throw std::invalid_argument("augment_gaussian: sigma must be >= 0");
  }
  std::vector<ConnectomeGraph> out;
  out.reserve(copies);
  const std::size_t R = g.node_count;
  for (std::size_t copy = 0; copy < copies; ++copy) {
    CorrelationMatrix noisy = correlation_of(g);
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = i + 1; j < R; ++j) {
        double v = noisy.at(i, j) + rng.gaussian(0.0, sigma);
        v = std::clamp(v, -1.0, 1.0);
        noisy.at(i, j) = v;
        noisy.at(j, i) = v;
      }
      noisy.at(i, i) = 1.0;
    }
    ConnectomeGraph a = proportional_threshold(noisy, density);
    a.subject_id = g.subject_id;
    a.site_id = g.site_id;
    a.label = g.label;
    a.augmented = true;
    out.push_back(std::move(a));
  }
  return out;
}

TimeSeriesMatrix read_timeseries_csv(const std::string& path,
                                     const std::string& subject_id) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open time series file: " + path);
  }
  TimeSeriesMatrix ts;
  ts.subject_id = subject_id;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": malformed number");
      }
      row.push_back(v);
      p = next;
      if (p < end) {
        if (*p != ',') {
          throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                   ": expected ',' separator");
        }
        ++p;
      }
    }
    if (ts.regions == 0) {
      ts.regions = row.size();
    } else if (row.size() != ts.regions) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(ts.regions) +
                               " columns, got " + std::to_string(row.size()));
    }
    ts.data.insert(ts.data.end(), row.begin(), row.end());
    ++ts.timepoints;
  }
  if (ts.timepoints < 2) {
    throw std::runtime_error(path + ": need at least 2 timepoints");
  }
  return ts;
}

void write_timeseries_csv(const TimeSeriesMatrix& ts, const std::string& path) {
  std::string body;
  body.reserve(ts.data.size() * 20);
  char buf[32];
  for (std::size_t t = 0; t < ts.timepoints; ++t) {
    for (std::size_t r = 0; r < ts.regions; ++r) {
      const auto n =
          std::snprintf(buf, sizeof(buf), "%.17g", ts.at(t, r));
      body.append(buf, static_cast<std::size_t>(n));
      body.push_back(r + 1 == ts.regions ? '\n' : ',');
    }
  }
  write_file_atomic(path, body);
}

}  // namespace connectome
