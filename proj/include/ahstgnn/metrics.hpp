#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ahstgnn/common.hpp"

namespace ahst {

// MAE/RMSE in de-normalized units, overall and per prediction horizon.
struct EvalReport {
  std::string model_tag;
  std::string config_hash;
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<double> mae_h;   // [M]
  std::vector<double> rmse_h;  // [M]
};

class MetricAccumulator {
 public:
  explicit MetricAccumulator(int64_t horizons)
      : abs_(static_cast<size_t>(horizons), 0.0),
        sq_(static_cast<size_t>(horizons), 0.0),
        count_(static_cast<size_t>(horizons), 0) {}

  void add(int64_t horizon, double predicted, double actual) {
    const double e = predicted - actual;
    abs_[static_cast<size_t>(horizon)] += std::fabs(e);
    sq_[static_cast<size_t>(horizon)] += e * e;
    ++count_[static_cast<size_t>(horizon)];
  }

  EvalReport finalize(std::string model_tag, std::string config_hash = "") const {
    EvalReport r;
    r.model_tag = std::move(model_tag);
    r.config_hash = std::move(config_hash);
    double abs_total = 0.0, sq_total = 0.0;
    int64_t n_total = 0;
    for (size_t m = 0; m < abs_.size(); ++m) {
      if (count_[m] == 0) throw ContractError("no observations at horizon " + std::to_string(m + 1));
      r.mae_h.push_back(abs_[m] / static_cast<double>(count_[m]));
      r.rmse_h.push_back(std::sqrt(sq_[m] / static_cast<double>(count_[m])));
      abs_total += abs_[m];
      sq_total += sq_[m];
      n_total += count_[m];
    }
    r.mae = abs_total / static_cast<double>(n_total);
    r.rmse = std::sqrt(sq_total / static_cast<double>(n_total));
    return r;
  }

 private:
  std::vector<double> abs_, sq_;
  std::vector<int64_t> count_;
};

}  // namespace ahst
