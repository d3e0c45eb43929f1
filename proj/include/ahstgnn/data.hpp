#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "ahstgnn/common.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

// Raw graph-signal series: S time slots, N nodes, F features, row-major
// [S,N,F]. q is the sampling frequency per day.
struct TrafficDataset {
  int64_t S = 0;
  int64_t N = 0;
  int64_t F = 1;
  int q = 0;
  int64_t start_epoch_s = 0;
  std::vector<double> series;     // [S,N,F]
  std::vector<double> coords;     // [N,2] meters, may be empty
  std::vector<double> distances;  // [N,N] meters, may be empty

  double& at(int64_t s, int64_t n, int64_t f) { return series[static_cast<size_t>((s * N + n) * F + f)]; }
  double at(int64_t s, int64_t n, int64_t f) const { return series[static_cast<size_t>((s * N + n) * F + f)]; }

  // Slot-of-week of series index 0, Monday 00:00 being 0.
  int64_t week_slot0() const {
    const int64_t slot_s = 86400 / q;
    const int64_t sec_of_day = ((start_epoch_s % 86400) + 86400) % 86400;
    return day_of_week(start_epoch_s) * q + sec_of_day / slot_s;
  }
};

// Thresholded Gaussian kernel adjacency over pairwise node distances.
struct DistanceGraph {
  int64_t n = 0;
  double sigma = 0.0;
  double kappa = 0.0;
  std::vector<double> a;  // [n,n], entries in [0,1], exact 0 beyond kappa

  double at(int64_t i, int64_t j) const { return a[static_cast<size_t>(i * n + j)]; }
};

struct Normalizer {
  std::vector<double> mean;  // per feature
  std::vector<double> std;   // per feature, clamped to 1 where variance is 0

  double apply1(double v, int64_t f) const { return (v - mean[static_cast<size_t>(f)]) / std[static_cast<size_t>(f)]; }
  double invert1(double v, int64_t f) const { return v * std[static_cast<size_t>(f)] + mean[static_cast<size_t>(f)]; }

  // In-place over a [*,N,F]-shaped flat array.
  void apply(std::vector<double>& flat, int64_t F) const {
    for (size_t i = 0; i < flat.size(); ++i) flat[i] = apply1(flat[i], static_cast<int64_t>(i % static_cast<size_t>(F)));
  }
  void invert(std::vector<double>& flat, int64_t F) const {
    for (size_t i = 0; i < flat.size(); ++i) flat[i] = invert1(flat[i], static_cast<int64_t>(i % static_cast<size_t>(F)));
  }
};

// One training window anchored at series index anchor_t: X_R covers
// [t-T+1, t], X_D sums the L_D daily slices, X_W the L_W weekly slices, and
// Y covers [t+1, t+M].
struct PeriodicSample {
  int64_t anchor_t = 0;
  std::vector<double> x_r;  // [T,N,F]
  std::vector<double> x_d;  // [T,N,F]
  std::vector<double> x_w;  // [T,N,F]
  std::vector<double> y;    // [M,N,F]
};

struct WindowSpec {
  int64_t T_R = 12;
  int64_t T_D = 12;
  int64_t T_W = 12;
  int64_t L_D = 1;
  int64_t L_W = 1;
  int64_t M = 12;
};

struct SplitWindows {
  std::vector<PeriodicSample> train, val, test;
};

// ---- CSV ingestion ----

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what, int64_t line_no) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) {
    throw IngestError("line " + std::to_string(line_no) + ": bad " + what + " value '" + s + "'");
  }
  return v;
}

// Reads the next non-empty, non-comment line; '#' lines carry metadata.
inline bool next_csv_line(std::istream& in, std::string& line, int64_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    return true;
  }
  return false;
}

}  // namespace detail

// Series CSV: header `timestamp,node_0,...,node_{N-1}`, one row per slot,
// contiguous in time at the 86400/q-second slot length. Coords CSV: header
// `node_id,x,y` in meters, every node exactly once. F is always 1 here.
inline TrafficDataset load_csv(const std::string& path_series, const std::string& path_coords, int q) {
  if (q <= 0 || 86400 % q != 0) {
    throw ConfigError("q must be a positive divisor of 86400, got " + std::to_string(q));
  }
  std::ifstream fs(path_series);
  if (!fs) throw IoError("cannot open series file '" + path_series + "'");

  std::string line;
  int64_t line_no = 0;
  if (!detail::next_csv_line(fs, line, line_no)) {
    throw IngestError("series file '" + path_series + "' is empty");
  }
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp") {
    throw IngestError("series header must be 'timestamp,node_0,...', got '" + line + "'");
  }
  const int64_t N = static_cast<int64_t>(header.size()) - 1;
  for (int64_t i = 0; i < N; ++i) {
    if (header[static_cast<size_t>(i + 1)] != "node_" + std::to_string(i)) {
      throw IngestError("series header column " + std::to_string(i + 1) + " should be node_" +
                        std::to_string(i));
    }
  }

  TrafficDataset ds;
  ds.N = N;
  ds.F = 1;
  ds.q = q;
  const int64_t slot_s = 86400 / q;
  int64_t expected_ts = 0;
  while (detail::next_csv_line(fs, line, line_no)) {
    auto cells = detail::split_csv_line(line);
    if (static_cast<int64_t>(cells.size()) != N + 1) {
      throw IngestError("line " + std::to_string(line_no) + ": expected " + std::to_string(N + 1) +
                        " columns, got " + std::to_string(cells.size()));
    }
    const int64_t ts = parse_iso8601(cells[0]);
    if (ds.S == 0) {
      ds.start_epoch_s = ts;
    } else if (ts != expected_ts) {
      if (ts == expected_ts - slot_s) {
        throw IngestError("line " + std::to_string(line_no) + ": duplicate timestamp " + cells[0]);
      }
      throw IngestError("line " + std::to_string(line_no) + ": timestamp gap, expected " +
                        format_iso8601(expected_ts) + " got " + cells[0]);
    }
    expected_ts = ts + slot_s;
    for (int64_t i = 0; i < N; ++i) {
      ds.series.push_back(detail::parse_double(cells[static_cast<size_t>(i + 1)], "series", line_no));
    }
    ++ds.S;
  }
  if (ds.S == 0) throw IngestError("series file '" + path_series + "' has no data rows");
  if (ds.N < 2) throw IngestError("need at least 2 nodes, got " + std::to_string(ds.N));

  std::ifstream fc(path_coords);
  if (!fc) throw IoError("cannot open coords file '" + path_coords + "'");
  line_no = 0;
  if (!detail::next_csv_line(fc, line, line_no)) {
    throw IngestError("coords file '" + path_coords + "' is empty");
  }
  {
    auto h = detail::split_csv_line(line);
    if (h.size() != 3 || h[0] != "node_id" || h[1] != "x" || h[2] != "y") {
      throw IngestError("coords header must be 'node_id,x,y', got '" + line + "'");
    }
  }
  ds.coords.assign(static_cast<size_t>(N * 2), 0.0);
  std::vector<bool> seen(static_cast<size_t>(N), false);
  while (detail::next_csv_line(fc, line, line_no)) {
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) {
      throw IngestError("coords line " + std::to_string(line_no) + ": expected 3 columns");
    }
    int64_t id = -1;
    auto [p, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
    if (ec != std::errc() || p != cells[0].data() + cells[0].size() || id < 0 || id >= N) {
      throw IngestError("coords line " + std::to_string(line_no) + ": bad node_id '" + cells[0] + "'");
    }
    if (seen[static_cast<size_t>(id)]) {
      throw IngestError("coords line " + std::to_string(line_no) + ": duplicate node_id " + cells[0]);
    }
    seen[static_cast<size_t>(id)] = true;
    ds.coords[static_cast<size_t>(id * 2)] = detail::parse_double(cells[1], "x", line_no);
    ds.coords[static_cast<size_t>(id * 2 + 1)] = detail::parse_double(cells[2], "y", line_no);
  }
  for (int64_t i = 0; i < N; ++i) {
    if (!seen[static_cast<size_t>(i)]) {
      throw IngestError("coords file is missing node_id " + std::to_string(i));
    }
  }
  return ds;
}

inline void write_series_csv(const std::string& path, const TrafficDataset& ds,
                             const std::string& comment = "") {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  if (!comment.empty()) f << "# " << comment << "\n";
  f << "timestamp";
  for (int64_t i = 0; i < ds.N; ++i) f << ",node_" << i;
  f << "\n";
  const int64_t slot_s = 86400 / ds.q;
  char buf[32];
  for (int64_t s = 0; s < ds.S; ++s) {
    f << format_iso8601(ds.start_epoch_s + s * slot_s);
    for (int64_t n = 0; n < ds.N; ++n) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.at(s, n, 0));
      f << ',' << buf;
    }
    f << "\n";
  }
}

inline void write_coords_csv(const std::string& path, const TrafficDataset& ds,
                             const std::string& comment = "") {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  if (!comment.empty()) f << "# " << comment << "\n";
  f << "node_id,x,y\n";
  char buf[32];
  for (int64_t i = 0; i < ds.N; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", ds.coords[static_cast<size_t>(i * 2)]);
    f << i << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", ds.coords[static_cast<size_t>(i * 2 + 1)]);
    f << ',' << buf << "\n";
  }
}

// ---- distance adjacency ----

// A[i][j] = exp(-d_ij^2 / sigma^2) when d_ij <= kappa, exactly 0 otherwise.
// d_ii = 0 so the diagonal is 1 and every node is its own neighbor.
inline DistanceGraph build_distance_adjacency(const std::vector<double>& pairwise_m, int64_t n,
                                              double sigma, double kappa) {
  if (sigma <= 0.0 || kappa <= 0.0) throw ContractError("sigma and kappa must be positive");
  if (static_cast<int64_t>(pairwise_m.size()) != n * n) {
    throw ShapeError("distance matrix size does not match node count " + std::to_string(n));
  }
  DistanceGraph g;
  g.n = n;
  g.sigma = sigma;
  g.kappa = kappa;
  g.a.assign(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const double d = pairwise_m[static_cast<size_t>(i * n + j)];
      if (d < 0.0) throw ContractError("negative distance at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      if (std::fabs(d - pairwise_m[static_cast<size_t>(j * n + i)]) > 1e-9 * std::max(1.0, d)) {
        throw ContractError("distance matrix is not symmetric at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
      }
      if (d <= kappa) {
        g.a[static_cast<size_t>(i * n + j)] = std::exp(-(d * d) / (sigma * sigma));
      }
    }
  }
  return g;
}

inline std::vector<double> pairwise_distances(const std::vector<double>& coords, int64_t n) {
  std::vector<double> d(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const double dx = coords[static_cast<size_t>(i * 2)] - coords[static_cast<size_t>(j * 2)];
      const double dy = coords[static_cast<size_t>(i * 2 + 1)] - coords[static_cast<size_t>(j * 2 + 1)];
      d[static_cast<size_t>(i * n + j)] = std::sqrt(dx * dx + dy * dy);
    }
  }
  return d;
}

inline DistanceGraph build_distance_adjacency(const TrafficDataset& ds, double sigma, double kappa) {
  if (!ds.distances.empty()) return build_distance_adjacency(ds.distances, ds.N, sigma, kappa);
  if (ds.coords.empty()) throw ContractError("dataset has neither coordinates nor distances");
  return build_distance_adjacency(pairwise_distances(ds.coords, ds.N), ds.N, sigma, kappa);
}

// 0/1 neighbor mask of the graph (edge iff A > 0), as a constant tensor.
inline Tensor neighbor_mask(const DistanceGraph& g) {
  std::vector<double> m(g.a.size(), 0.0);
  for (size_t i = 0; i < g.a.size(); ++i) m[i] = g.a[i] > 0.0 ? 1.0 : 0.0;
  return Tensor::from({g.n, g.n}, std::move(m));
}

// Row-normalized adjacency (rows sum to 1) as a constant tensor. The diagonal
// is 1 before normalization, so rows are never empty.
inline Tensor row_normalized_adjacency(const DistanceGraph& g) {
  std::vector<double> m(g.a.size(), 0.0);
  for (int64_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < g.n; ++j) s += g.a[static_cast<size_t>(i * g.n + j)];
    for (int64_t j = 0; j < g.n; ++j) {
      m[static_cast<size_t>(i * g.n + j)] = g.a[static_cast<size_t>(i * g.n + j)] / s;
    }
  }
  return Tensor::from({g.n, g.n}, std::move(m));
}

// ---- normalization ----

// Per-feature z-score fitted on the training region only. Zero-variance
// features get std clamped to 1 so degenerate series stay usable.
inline Normalizer fit_normalizer(const std::vector<double>& flat, int64_t F) {
  if (flat.empty()) throw ContractError("fit_normalizer on empty slice");
  Normalizer nm;
  nm.mean.assign(static_cast<size_t>(F), 0.0);
  nm.std.assign(static_cast<size_t>(F), 0.0);
  const int64_t rows = static_cast<int64_t>(flat.size()) / F;
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t f = 0; f < F; ++f) nm.mean[static_cast<size_t>(f)] += flat[static_cast<size_t>(i * F + f)];
  }
  for (int64_t f = 0; f < F; ++f) nm.mean[static_cast<size_t>(f)] /= static_cast<double>(rows);
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t f = 0; f < F; ++f) {
      const double d = flat[static_cast<size_t>(i * F + f)] - nm.mean[static_cast<size_t>(f)];
      nm.std[static_cast<size_t>(f)] += d * d;
    }
  }
  for (int64_t f = 0; f < F; ++f) {
    double s = std::sqrt(nm.std[static_cast<size_t>(f)] / static_cast<double>(rows));
    if (s <= 0.0) {
      std::cerr << "warning: feature " << f << " has zero variance, clamping std to 1\n";
      s = 1.0;
    }
    nm.std[static_cast<size_t>(f)] = s;
  }
  return nm;
}

// ---- periodic windows ----

// One sample per admissible anchor, in chronological order. Daily/weekly
// inputs are plain sums over their L_D / L_W slices.
inline std::vector<PeriodicSample> make_windows(const TrafficDataset& ds, const WindowSpec& w) {
  if (w.T_R != w.T_D || w.T_R != w.T_W) {
    throw ConfigError("T_R, T_D and T_W must be equal (got " + std::to_string(w.T_R) + "," +
                      std::to_string(w.T_D) + "," + std::to_string(w.T_W) + ")");
  }
  if (w.T_R < 1 || w.M < 1 || w.L_D < 1 || w.L_W < 1) throw ConfigError("window lengths must be >= 1");
  const int64_t q = ds.q;
  const int64_t S = ds.S;
  const int64_t NF = ds.N * ds.F;

  auto admissible = [&](int64_t t) {
    if (t - w.T_R + 1 < 0 || t + w.M > S - 1) return false;
    for (int64_t ld = 1; ld <= w.L_D; ++ld) {
      const int64_t lo = t - ld * q + 1;
      if (lo < 0 || lo + w.T_D - 1 > S - 1) return false;
    }
    for (int64_t lw = 1; lw <= w.L_W; ++lw) {
      const int64_t lo = t - 7 * lw * q + 1;
      if (lo < 0 || lo + w.T_W - 1 > S - 1) return false;
    }
    return true;
  };

  std::vector<PeriodicSample> out;
  for (int64_t t = 0; t < S; ++t) {
    if (!admissible(t)) continue;
    PeriodicSample ps;
    ps.anchor_t = t;
    ps.x_r.assign(static_cast<size_t>(w.T_R * NF), 0.0);
    ps.x_d.assign(static_cast<size_t>(w.T_D * NF), 0.0);
    ps.x_w.assign(static_cast<size_t>(w.T_W * NF), 0.0);
    ps.y.assign(static_cast<size_t>(w.M * NF), 0.0);
    for (int64_t i = 0; i < w.T_R; ++i) {
      const int64_t src = (t - w.T_R + 1 + i) * NF;
      for (int64_t j = 0; j < NF; ++j) ps.x_r[static_cast<size_t>(i * NF + j)] = ds.series[static_cast<size_t>(src + j)];
    }
    for (int64_t ld = 1; ld <= w.L_D; ++ld) {
      for (int64_t i = 0; i < w.T_D; ++i) {
        const int64_t src = (t - ld * q + 1 + i) * NF;
        for (int64_t j = 0; j < NF; ++j) ps.x_d[static_cast<size_t>(i * NF + j)] += ds.series[static_cast<size_t>(src + j)];
      }
    }
    for (int64_t lw = 1; lw <= w.L_W; ++lw) {
      for (int64_t i = 0; i < w.T_W; ++i) {
        const int64_t src = (t - 7 * lw * q + 1 + i) * NF;
        for (int64_t j = 0; j < NF; ++j) ps.x_w[static_cast<size_t>(i * NF + j)] += ds.series[static_cast<size_t>(src + j)];
      }
    }
    for (int64_t i = 0; i < w.M; ++i) {
      const int64_t src = (t + 1 + i) * NF;
      for (int64_t j = 0; j < NF; ++j) ps.y[static_cast<size_t>(i * NF + j)] = ds.series[static_cast<size_t>(src + j)];
    }
    out.push_back(std::move(ps));
  }
  if (out.empty()) {
    const int64_t t_min = std::max({w.T_R - 1, w.L_D * q - 1, 7 * w.L_W * q - 1});
    throw WindowError("series too short for the requested windows: need S >= " +
                      std::to_string(t_min + w.M + 1) + ", got " + std::to_string(S));
  }
  return out;
}

// Chronological contiguous split of the anchor sequence. The first two parts
// get floor shares; the last takes the remainder.
inline SplitWindows split_windows(std::vector<PeriodicSample> windows, double r_train, double r_val,
                                  double r_test) {
  if (r_train < 0 || r_val < 0 || r_test < 0 || r_train + r_val + r_test <= 0) {
    throw ConfigError("split ratios must be nonnegative with a positive sum");
  }
  const double total = r_train + r_val + r_test;
  const int64_t n = static_cast<int64_t>(windows.size());
  const int64_t n_train = static_cast<int64_t>(std::floor(n * r_train / total));
  const int64_t n_val = static_cast<int64_t>(std::floor(n * r_val / total));
  SplitWindows sw;
  sw.train.assign(windows.begin(), windows.begin() + n_train);
  sw.val.assign(windows.begin() + n_train, windows.begin() + n_train + n_val);
  sw.test.assign(windows.begin() + n_train + n_val, windows.end());
  return sw;
}

// ---- synthetic data ----

struct SyntheticSpec {
  int64_t n_nodes = 20;
  int64_t days = 30;
  int q = 96;
  uint64_t seed = 1;
  double heterogeneity = 0.5;  // in [0,1]: per-node phase/amplitude dispersion
  double noise_std = 2.0;      // observation noise; also scales the drift term
  double sigma = 3000.0;       // meters, Gaussian kernel width
  double kappa = 4000.0;       // meters, sparsity threshold
};

struct SyntheticData {
  TrafficDataset ds;
  DistanceGraph graph;
};

// Desk-scale stand-in for a cellular traffic dataset. Each node emits
//   base + daily bump * weekly factor + diffused AR drift + white noise,
// with two latent node classes (weekday-peaked and weekend-peaked) whose mix
// and dispersion grow with `heterogeneity`. The drift term is an AR(1)
// process diffused over the distance graph, so neighbors share short-term
// fluctuations that a slot-of-week average cannot explain. With
// noise_std = 0 the series is exactly week-periodic.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_nodes < 2) throw ContractError("need at least 2 nodes");
  if (spec.days < 8) throw ContractError("need at least 8 days of synthetic data");
  if (spec.heterogeneity < 0.0 || spec.heterogeneity > 1.0) {
    throw ContractError("heterogeneity must lie in [0,1]");
  }
  if (86400 % spec.q != 0) throw ConfigError("q must divide 86400");

  const int64_t N = spec.n_nodes;
  const int64_t q = spec.q;
  const int64_t S = spec.days * q;
  const double het = spec.heterogeneity;
  Rng rng(spec.seed);

  SyntheticData out;
  TrafficDataset& ds = out.ds;
  ds.N = N;
  ds.F = 1;
  ds.q = spec.q;
  ds.S = S;
  ds.start_epoch_s = days_from_civil(2021, 3, 1) * 86400;  // a Monday
  ds.coords.resize(static_cast<size_t>(N * 2));
  for (int64_t i = 0; i < N; ++i) {
    ds.coords[static_cast<size_t>(i * 2)] = rng.uniform(0.0, 10000.0);
    ds.coords[static_cast<size_t>(i * 2 + 1)] = rng.uniform(0.0, 10000.0);
  }
  out.graph = build_distance_adjacency(pairwise_distances(ds.coords, N), N, spec.sigma, spec.kappa);

  // Node personalities. Class draw comes first so the stream layout is
  // stable when heterogeneity changes.
  std::vector<double> base(static_cast<size_t>(N)), amp(static_cast<size_t>(N)), phase(static_cast<size_t>(N));
  std::vector<int> weekend_peaked(static_cast<size_t>(N), 0);
  for (int64_t i = 0; i < N; ++i) {
    const double class_draw = rng.uniform();
    weekend_peaked[static_cast<size_t>(i)] = class_draw < 0.5 * het ? 1 : 0;
    base[static_cast<size_t>(i)] = 100.0 + het * 30.0 * rng.normal();
    amp[static_cast<size_t>(i)] = 40.0 * (1.0 + het * 0.5 * rng.normal());
    phase[static_cast<size_t>(i)] = het * 0.3 * kTwoPi * rng.normal();
  }

  // Row-normalized adjacency for the diffusion term.
  std::vector<double> wrow(static_cast<size_t>(N * N), 0.0);
  for (int64_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < N; ++j) s += out.graph.at(i, j);
    for (int64_t j = 0; j < N; ++j) wrow[static_cast<size_t>(i * N + j)] = out.graph.at(i, j) / s;
  }

  // AR(1) latent drift per node, diffused over neighbors. phi is close to 1
  // so the drift is predictable from recent history over a 12-step horizon.
  const double phi = 0.98;
  const double drift_std = 5.0 * spec.noise_std;
  const double innov_std = drift_std * std::sqrt(1.0 - phi * phi);
  std::vector<double> v(static_cast<size_t>(N), 0.0);
  for (int64_t i = 0; i < N; ++i) v[static_cast<size_t>(i)] = drift_std * rng.normal();

  const double wd_factor[2] = {1.25, 0.7};  // weekday-peaked class: {weekday, weekend}
  const double we_factor[2] = {0.75, 1.4};  // weekend-peaked class

  ds.series.resize(static_cast<size_t>(S * N));
  std::vector<double> u(static_cast<size_t>(N), 0.0);
  for (int64_t s = 0; s < S; ++s) {
    for (int64_t i = 0; i < N; ++i) {
      v[static_cast<size_t>(i)] = phi * v[static_cast<size_t>(i)] + innov_std * rng.normal();
    }
    for (int64_t i = 0; i < N; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < N; ++j) acc += wrow[static_cast<size_t>(i * N + j)] * v[static_cast<size_t>(j)];
      u[static_cast<size_t>(i)] = acc;
    }
    const double theta = kTwoPi * static_cast<double>(s % q) / static_cast<double>(q);
    const int weekend = ((s / q) % 7) >= 5 ? 1 : 0;
    for (int64_t i = 0; i < N; ++i) {
      const double bump = 0.5 * (1.0 + std::sin(theta - 0.25 * kTwoPi + phase[static_cast<size_t>(i)]));
      const double wk = weekend_peaked[static_cast<size_t>(i)] ? we_factor[weekend] : wd_factor[weekend];
      ds.series[static_cast<size_t>(s * N + i)] = base[static_cast<size_t>(i)] +
                                                  amp[static_cast<size_t>(i)] * wk * bump +
                                                  u[static_cast<size_t>(i)] +
                                                  spec.noise_std * rng.normal();
    }
  }
  return out;
}

}  // namespace ahst
