#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ahstgnn/common.hpp"
#include "ahstgnn/data.hpp"
#include "ahstgnn/metrics.hpp"

namespace ahst {

// Historical Average: per-node, per-slot-of-week mean fitted on the training
// region of the raw (de-normalized) series. Slots that never occur in the
// training region fall back to the per-node global mean.
struct HaModel {
  int q = 0;
  int64_t N = 0, F = 1;
  int64_t slot0 = 0;  // slot-of-week of series index 0
  std::vector<double> table;  // [7q, N, F]

  int64_t slot_of(int64_t series_index) const { return (slot0 + series_index) % (7 * q); }

  double predict(int64_t target_index, int64_t node, int64_t feature) const {
    return table[static_cast<size_t>((slot_of(target_index) * N + node) * F + feature)];
  }
};

// `train_len` is the number of leading series rows visible to the baseline.
inline HaModel ha_fit(const TrafficDataset& ds, int64_t train_len) {
  if (train_len < 7 * ds.q) {
    throw ContractError("HA needs at least one full week of training data (7*q = " +
                        std::to_string(7 * ds.q) + " slots), got " + std::to_string(train_len));
  }
  if (train_len > ds.S) throw ContractError("train_len exceeds series length");
  HaModel m;
  m.q = ds.q;
  m.N = ds.N;
  m.F = ds.F;
  m.slot0 = ds.week_slot0();
  const int64_t slots = 7 * ds.q;
  const int64_t nf = ds.N * ds.F;
  m.table.assign(static_cast<size_t>(slots * nf), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(slots), 0);
  std::vector<double> global(static_cast<size_t>(nf), 0.0);
  for (int64_t s = 0; s < train_len; ++s) {
    const int64_t slot = m.slot_of(s);
    ++counts[static_cast<size_t>(slot)];
    for (int64_t j = 0; j < nf; ++j) {
      m.table[static_cast<size_t>(slot * nf + j)] += ds.series[static_cast<size_t>(s * nf + j)];
      global[static_cast<size_t>(j)] += ds.series[static_cast<size_t>(s * nf + j)];
    }
  }
  for (int64_t j = 0; j < nf; ++j) global[static_cast<size_t>(j)] /= static_cast<double>(train_len);
  for (int64_t slot = 0; slot < slots; ++slot) {
    if (counts[static_cast<size_t>(slot)] == 0) {
      for (int64_t j = 0; j < nf; ++j) m.table[static_cast<size_t>(slot * nf + j)] = global[static_cast<size_t>(j)];
    } else {
      const double n = static_cast<double>(counts[static_cast<size_t>(slot)]);
      for (int64_t j = 0; j < nf; ++j) m.table[static_cast<size_t>(slot * nf + j)] /= n;
    }
  }
  return m;
}

// Slot-of-week lookups for the M steps after the anchor; wraps across the
// week boundary.
inline std::vector<double> ha_predict(const HaModel& m, int64_t anchor, int64_t M) {
  std::vector<double> out(static_cast<size_t>(M * m.N * m.F));
  for (int64_t step = 0; step < M; ++step) {
    for (int64_t n = 0; n < m.N; ++n) {
      for (int64_t f = 0; f < m.F; ++f) {
        out[static_cast<size_t>((step * m.N + n) * m.F + f)] = m.predict(anchor + 1 + step, n, f);
      }
    }
  }
  return out;
}

// Repeats the anchor observation X_t for all M steps.
inline std::vector<double> persistence_predict(const TrafficDataset& ds, int64_t anchor, int64_t M) {
  const int64_t nf = ds.N * ds.F;
  std::vector<double> out(static_cast<size_t>(M * nf));
  for (int64_t step = 0; step < M; ++step) {
    for (int64_t j = 0; j < nf; ++j) {
      out[static_cast<size_t>(step * nf + j)] = ds.series[static_cast<size_t>(anchor * nf + j)];
    }
  }
  return out;
}

// Shared evaluation over raw-series anchors for any [M,N,F] predictor.
template <class PredictFn>
inline EvalReport evaluate_predictor(const TrafficDataset& ds, const std::vector<int64_t>& anchors,
                                     int64_t M, const std::string& tag, PredictFn&& predict) {
  if (anchors.empty()) throw ContractError("no anchors to evaluate");
  MetricAccumulator acc(M);
  const int64_t nf = ds.N * ds.F;
  for (int64_t anchor : anchors) {
    const std::vector<double> pred = predict(anchor);
    for (int64_t step = 0; step < M; ++step) {
      for (int64_t j = 0; j < nf; ++j) {
        acc.add(step, pred[static_cast<size_t>(step * nf + j)],
                ds.series[static_cast<size_t>((anchor + 1 + step) * nf + j)]);
      }
    }
  }
  return acc.finalize(tag);
}

inline EvalReport evaluate_ha(const TrafficDataset& ds, const HaModel& m,
                              const std::vector<int64_t>& anchors, int64_t M) {
  return evaluate_predictor(ds, anchors, M, "ha",
                            [&](int64_t anchor) { return ha_predict(m, anchor, M); });
}

inline EvalReport evaluate_persistence(const TrafficDataset& ds, const std::vector<int64_t>& anchors,
                                       int64_t M) {
  return evaluate_predictor(ds, anchors, M, "persistence",
                            [&](int64_t anchor) { return persistence_predict(ds, anchor, M); });
}

}  // namespace ahst
