#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ahstgnn/baseline.hpp"
#include "ahstgnn/checkpoint.hpp"
#include "ahstgnn/common.hpp"
#include "ahstgnn/data.hpp"
#include "ahstgnn/metrics.hpp"
#include "ahstgnn/model.hpp"

namespace ahst {

using nlohmann::json;

// ---- run configuration ----

struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";

  bool synthetic = false;
  SyntheticSpec synth;           // when synthetic
  std::string series_csv, coords_csv;  // when loading from files
  int q = 0;
  double sigma = 0.0, kappa = 0.0;

  WindowSpec windows;
  ModelConfig model;  // n_nodes filled after the dataset is resolved

  double split_train = 2.0, split_val = 1.0, split_test = 1.0;

  TrainOptions train_opt;

  bool has_predict_anchor = false;
  int64_t predict_anchor = 0;

  std::string config_hash;  // hex, over the canonical filled config
};

namespace detail {

inline void check_keys(const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key at " + path + "." + it.key());
  }
}

template <class T>
inline T get_or(const json& obj, const std::string& path, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value at " + path + "." + key);
  }
}

template <class T>
inline T require(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) throw ConfigError("missing required key " + path + "." + key);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value at " + path + "." + key);
  }
}

}  // namespace detail

// Parses and validates a run configuration. Unknown keys are rejected with
// the offending JSON path; the canonical (default-filled) document is hashed
// into config_hash.
inline RunConfig parse_run_config(const json& root) {
  using detail::check_keys;
  using detail::get_or;
  using detail::require;

  if (!root.is_object()) throw ConfigError("config root must be a JSON object at $");
  check_keys(root, "$",
             {"seed", "out_dir", "data", "windows", "model", "split", "train", "predict_anchor"});

  RunConfig rc;
  rc.seed = require<uint64_t>(root, "$", "seed");
  rc.out_dir = get_or<std::string>(root, "$", "out_dir", "out");

  if (!root.contains("data") || !root["data"].is_object()) {
    throw ConfigError("missing required key $.data");
  }
  const json& data = root["data"];
  if (data.contains("synthetic")) {
    check_keys(data, "$.data", {"synthetic"});
    const json& sy = data["synthetic"];
    check_keys(sy, "$.data.synthetic",
               {"n_nodes", "days", "q", "heterogeneity", "noise_std", "sigma", "kappa", "seed"});
    rc.synthetic = true;
    rc.synth.n_nodes = require<int64_t>(sy, "$.data.synthetic", "n_nodes");
    rc.synth.days = require<int64_t>(sy, "$.data.synthetic", "days");
    rc.synth.q = require<int>(sy, "$.data.synthetic", "q");
    rc.synth.heterogeneity = require<double>(sy, "$.data.synthetic", "heterogeneity");
    rc.synth.noise_std = get_or<double>(sy, "$.data.synthetic", "noise_std", 2.0);
    rc.synth.sigma = require<double>(sy, "$.data.synthetic", "sigma");
    rc.synth.kappa = require<double>(sy, "$.data.synthetic", "kappa");
    rc.synth.seed = get_or<uint64_t>(sy, "$.data.synthetic", "seed", rc.seed);
    rc.q = rc.synth.q;
    rc.sigma = rc.synth.sigma;
    rc.kappa = rc.synth.kappa;
  } else {
    check_keys(data, "$.data", {"series_csv", "coords_csv", "q", "sigma", "kappa"});
    rc.series_csv = require<std::string>(data, "$.data", "series_csv");
    rc.coords_csv = require<std::string>(data, "$.data", "coords_csv");
    rc.q = require<int>(data, "$.data", "q");
    rc.sigma = require<double>(data, "$.data", "sigma");
    rc.kappa = require<double>(data, "$.data", "kappa");
  }
  if (rc.sigma <= 0 || rc.kappa <= 0) throw ConfigError("bad value at $.data: sigma and kappa must be > 0");

  const json windows = root.contains("windows") ? root["windows"] : json::object();
  check_keys(windows, "$.windows", {"l_days", "l_weeks"});
  rc.windows.L_D = get_or<int64_t>(windows, "$.windows", "l_days", 1);
  rc.windows.L_W = get_or<int64_t>(windows, "$.windows", "l_weeks", 1);

  const json model = root.contains("model") ? root["model"] : json::object();
  check_keys(model, "$.model",
             {"n_blocks", "hidden", "embed", "heads", "kernel_size", "out_hidden", "input_len",
              "horizon", "ablation", "dgl_activation"});
  rc.model.n_blocks = get_or<int>(model, "$.model", "n_blocks", 4);
  rc.model.hidden = get_or<int>(model, "$.model", "hidden", 32);
  rc.model.embed = get_or<int>(model, "$.model", "embed", 10);
  rc.model.heads = get_or<int>(model, "$.model", "heads", 4);
  rc.model.kernel_size = get_or<int>(model, "$.model", "kernel_size", 2);
  rc.model.out_hidden = get_or<int>(model, "$.model", "out_hidden", 256);
  rc.model.input_len = get_or<int>(model, "$.model", "input_len", 12);
  rc.model.horizon = get_or<int>(model, "$.model", "horizon", 12);
  rc.model.ablation = ablation_from_name(get_or<std::string>(model, "$.model", "ablation", "full"));
  const std::string act = get_or<std::string>(model, "$.model", "dgl_activation", "sigmoid");
  if (act == "sigmoid") {
    rc.model.dgl_act = DglAct::sigmoid;
  } else if (act == "relu") {
    rc.model.dgl_act = DglAct::relu;
  } else {
    throw ConfigError("bad value at $.model.dgl_activation: '" + act + "'");
  }
  rc.model.seed = rc.seed;
  rc.windows.T_R = rc.windows.T_D = rc.windows.T_W = rc.model.input_len;
  rc.windows.M = rc.model.horizon;

  if (root.contains("split")) {
    const json& sp = root["split"];
    if (!sp.is_array() || sp.size() != 3) {
      throw ConfigError("bad value at $.split: expected [train,val,test]");
    }
    try {
      rc.split_train = sp[0].get<double>();
      rc.split_val = sp[1].get<double>();
      rc.split_test = sp[2].get<double>();
    } catch (const json::exception&) {
      throw ConfigError("bad value at $.split");
    }
    if (rc.split_train < 0 || rc.split_val < 0 || rc.split_test < 0 ||
        rc.split_train + rc.split_val + rc.split_test <= 0) {
      throw ConfigError("bad value at $.split: ratios must be nonnegative with positive sum");
    }
  }

  const json train = root.contains("train") ? root["train"] : json::object();
  check_keys(train, "$.train", {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "patience"});
  rc.train_opt.epochs = get_or<int>(train, "$.train", "epochs", 50);
  rc.train_opt.batch_size = get_or<int>(train, "$.train", "batch_size", 16);
  rc.train_opt.adam.lr = get_or<double>(train, "$.train", "lr", 1e-3);
  rc.train_opt.adam.beta1 = get_or<double>(train, "$.train", "beta1", 0.9);
  rc.train_opt.adam.beta2 = get_or<double>(train, "$.train", "beta2", 0.999);
  rc.train_opt.adam.eps = get_or<double>(train, "$.train", "eps", 1e-8);
  rc.train_opt.patience = get_or<int>(train, "$.train", "patience", 10);
  rc.train_opt.seed = rc.seed;
  if (rc.train_opt.epochs < 1 || rc.train_opt.batch_size < 1) {
    throw ConfigError("bad value at $.train: epochs and batch_size must be >= 1");
  }

  if (root.contains("predict_anchor")) {
    rc.has_predict_anchor = true;
    rc.predict_anchor = require<int64_t>(root, "$", "predict_anchor");
  }

  // Canonical filled document; nlohmann objects serialize with sorted keys.
  // out_dir is operational and deliberately left out of the hash.
  json canon;
  canon["seed"] = rc.seed;
  if (rc.synthetic) {
    canon["data"]["synthetic"] = {{"n_nodes", rc.synth.n_nodes}, {"days", rc.synth.days},
                                  {"q", rc.synth.q},             {"heterogeneity", rc.synth.heterogeneity},
                                  {"noise_std", rc.synth.noise_std}, {"sigma", rc.synth.sigma},
                                  {"kappa", rc.synth.kappa},     {"seed", rc.synth.seed}};
  } else {
    canon["data"] = {{"series_csv", rc.series_csv}, {"coords_csv", rc.coords_csv}, {"q", rc.q},
                     {"sigma", rc.sigma},           {"kappa", rc.kappa}};
  }
  canon["windows"] = {{"l_days", rc.windows.L_D}, {"l_weeks", rc.windows.L_W}};
  canon["model"] = {{"n_blocks", rc.model.n_blocks}, {"hidden", rc.model.hidden},
                    {"embed", rc.model.embed},       {"heads", rc.model.heads},
                    {"kernel_size", rc.model.kernel_size}, {"out_hidden", rc.model.out_hidden},
                    {"input_len", rc.model.input_len}, {"horizon", rc.model.horizon},
                    {"ablation", ablation_name(rc.model.ablation)},
                    {"dgl_activation", act}};
  canon["split"] = {rc.split_train, rc.split_val, rc.split_test};
  canon["train"] = {{"epochs", rc.train_opt.epochs}, {"batch_size", rc.train_opt.batch_size},
                    {"lr", rc.train_opt.adam.lr},    {"beta1", rc.train_opt.adam.beta1},
                    {"beta2", rc.train_opt.adam.beta2}, {"eps", rc.train_opt.adam.eps},
                    {"patience", rc.train_opt.patience}};
  if (rc.has_predict_anchor) canon["predict_anchor"] = rc.predict_anchor;
  rc.config_hash = to_hex(fnv1a64(canon.dump()));
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON at $: ") + e.what());
  }
  return parse_run_config(root);
}

// ---- dataset resolution and pipeline ----

struct Pipeline {
  TrafficDataset raw;
  DistanceGraph graph;
  std::vector<PeriodicSample> raw_windows;
  SplitWindows raw_split;
  Normalizer norm;
  SplitWindows norm_split;
  ModelConfig mcfg;
  GraphInputs ginputs;
  int64_t train_len = 0;  // leading raw series rows visible to training
};

inline std::pair<TrafficDataset, DistanceGraph> resolve_dataset(const RunConfig& rc) {
  if (rc.synthetic) {
    SyntheticData sd = generate_synthetic(rc.synth);
    return {std::move(sd.ds), std::move(sd.graph)};
  }
  TrafficDataset ds = load_csv(rc.series_csv, rc.coords_csv, rc.q);
  DistanceGraph g = build_distance_adjacency(ds, rc.sigma, rc.kappa);
  return {std::move(ds), std::move(g)};
}

// Windows are built twice: on the raw series (anchors, baseline targets) and
// on the z-scored series (model inputs). The normalizer is fitted on the
// training region only: rows up to the last train anchor's target.
inline Pipeline prepare_pipeline(const RunConfig& rc, const Normalizer* norm_override = nullptr) {
  Pipeline p;
  auto [ds, graph] = resolve_dataset(rc);
  p.raw = std::move(ds);
  p.graph = std::move(graph);
  p.mcfg = rc.model;
  p.mcfg.n_nodes = static_cast<int>(p.raw.N);
  p.mcfg.n_features = static_cast<int>(p.raw.F);
  p.mcfg.validate();

  p.raw_windows = make_windows(p.raw, rc.windows);
  p.raw_split = split_windows(p.raw_windows, rc.split_train, rc.split_val, rc.split_test);
  if (p.raw_split.train.empty()) {
    p.train_len = 0;
  } else {
    p.train_len = p.raw_split.train.back().anchor_t + rc.windows.M + 1;
  }

  if (norm_override) {
    p.norm = *norm_override;
  } else {
    if (p.raw_split.train.empty()) throw ConfigError("training split is empty for this split ratio");
    std::vector<double> train_region(p.raw.series.begin(),
                                     p.raw.series.begin() + p.train_len * p.raw.N * p.raw.F);
    p.norm = fit_normalizer(train_region, p.raw.F);
  }

  TrafficDataset normalized = p.raw;
  p.norm.apply(normalized.series, normalized.F);
  std::vector<PeriodicSample> norm_windows = make_windows(normalized, rc.windows);
  p.norm_split = split_windows(std::move(norm_windows), rc.split_train, rc.split_val, rc.split_test);
  p.ginputs = make_graph_inputs(p.graph);
  return p;
}

// ---- artifact writers ----

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  return f;
}

inline void write_per_horizon_csv(const std::filesystem::path& path, const EvalReport& r) {
  auto f = open_out(path);
  f << "# config_hash=" << r.config_hash << "\n";
  f << "horizon,mae,rmse\n";
  for (size_t m = 0; m < r.mae_h.size(); ++m) {
    f << (m + 1) << ',' << r.mae_h[m] << ',' << r.rmse_h[m] << "\n";
  }
}

inline void write_comparison_csv(const std::filesystem::path& path,
                                 const std::vector<EvalReport>& reports,
                                 const std::string& config_hash) {
  auto f = open_out(path);
  f << "# config_hash=" << config_hash << "\n";
  f << "model,mae,rmse\n";
  for (const EvalReport& r : reports) f << r.model_tag << ',' << r.mae << ',' << r.rmse << "\n";
}

inline json report_to_json(const EvalReport& r) {
  return {{"model", r.model_tag}, {"config_hash", r.config_hash}, {"mae", r.mae}, {"rmse", r.rmse},
          {"mae_per_horizon", r.mae_h}, {"rmse_per_horizon", r.rmse_h}};
}

}  // namespace detail

// ---- commands ----
// Each command is deterministic given config + seed; artifacts land in
// `out_dir` and every file records the config hash.

inline int cmd_synth(const RunConfig& rc) {
  if (!rc.synthetic) throw ConfigError("synth requires $.data.synthetic");
  std::filesystem::create_directories(rc.out_dir);
  SyntheticData sd = generate_synthetic(rc.synth);
  const std::filesystem::path dir(rc.out_dir);
  const std::string comment = "config_hash=" + rc.config_hash;
  write_series_csv((dir / "series.csv").string(), sd.ds, comment);
  write_coords_csv((dir / "coords.csv").string(), sd.ds, comment);
  json manifest = {{"q", sd.ds.q},
                   {"start_timestamp", format_iso8601(sd.ds.start_epoch_s)},
                   {"n_nodes", sd.ds.N},
                   {"files", {{"series", "series.csv"}, {"coords", "coords.csv"}}},
                   {"config_hash", rc.config_hash}};
  auto f = detail::open_out(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
  std::cout << "wrote " << (dir / "series.csv").string() << " (" << sd.ds.S << " slots, " << sd.ds.N
            << " nodes)\n";
  return 0;
}

inline int cmd_train(const RunConfig& rc, const std::string& resume_checkpoint = "") {
  Pipeline p = prepare_pipeline(rc);
  std::filesystem::create_directories(rc.out_dir);
  const std::filesystem::path dir(rc.out_dir);

  ModelParams params;
  TrainState resume_state;
  const TrainState* resume = nullptr;
  if (!resume_checkpoint.empty()) {
    Checkpoint cp = read_checkpoint(resume_checkpoint);
    params = load_checkpoint(cp, p.mcfg, &resume_state);
    resume = &resume_state;
  } else {
    params = init_params(p.mcfg);
  }

  auto log = detail::open_out(dir / "train_log.jsonl");
  TrainResult tr = train(params, p.mcfg, p.ginputs, p.norm_split.train, p.norm_split.val, p.norm,
                         rc.train_opt, resume, &log, rc.config_hash);

  save_checkpoint((dir / "checkpoint.ahst").string(), tr.best, p.mcfg, rc.config_hash, nullptr, &p.norm);
  save_checkpoint((dir / "checkpoint_last.ahst").string(), params, p.mcfg, rc.config_hash, &tr.state,
                  &p.norm);
  if (tr.diverged) {
    std::cerr << "training diverged; last good snapshot written to "
              << (dir / "checkpoint.ahst").string() << "\n";
    throw TrainError("training loss went non-finite");
  }
  std::cout << "trained " << tr.log.size() << " epochs";
  if (!std::isnan(tr.best_val)) std::cout << ", best val MAE " << tr.best_val;
  std::cout << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& rc, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("eval requires --checkpoint");
  Checkpoint cp = read_checkpoint(checkpoint_path);
  Normalizer norm = checkpoint_normalizer(cp);
  Pipeline p = prepare_pipeline(rc, &norm);
  ModelParams params = load_checkpoint(cp, p.mcfg);
  if (p.norm_split.test.empty()) throw ConfigError("test split is empty for this split ratio");

  EvalReport r = evaluate(params, p.mcfg, p.ginputs, p.norm_split.test, p.norm,
                          ablation_name(p.mcfg.ablation));
  r.config_hash = rc.config_hash;

  std::filesystem::create_directories(rc.out_dir);
  const std::filesystem::path dir(rc.out_dir);
  detail::write_per_horizon_csv(dir / "per_horizon.csv", r);
  auto f = detail::open_out(dir / "eval_report.json");
  f << detail::report_to_json(r).dump(2) << "\n";
  std::cout << "test MAE " << r.mae << ", RMSE " << r.rmse << " over " << p.norm_split.test.size()
            << " windows\n";
  return 0;
}

inline int cmd_predict(const RunConfig& rc, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("predict requires --checkpoint");
  Checkpoint cp = read_checkpoint(checkpoint_path);
  Normalizer norm = checkpoint_normalizer(cp);
  Pipeline p = prepare_pipeline(rc, &norm);
  ModelParams params = load_checkpoint(cp, p.mcfg);

  // Windows over the normalized series, across all splits.
  std::vector<PeriodicSample> windows;
  windows.reserve(p.norm_split.train.size() + p.norm_split.val.size() + p.norm_split.test.size());
  for (const auto* part : {&p.norm_split.train, &p.norm_split.val, &p.norm_split.test}) {
    windows.insert(windows.end(), part->begin(), part->end());
  }
  int64_t anchor = rc.has_predict_anchor ? rc.predict_anchor : windows.back().anchor_t;
  const PeriodicSample* sample = nullptr;
  for (const PeriodicSample& w : windows) {
    if (w.anchor_t == anchor) {
      sample = &w;
      break;
    }
  }
  if (!sample) {
    throw ConfigError("predict_anchor " + std::to_string(anchor) +
                      " is not an admissible window anchor for this dataset");
  }

  Batch b = make_batch({*sample}, {0}, p.mcfg.input_len, p.mcfg.n_nodes, p.mcfg.n_features,
                       p.mcfg.horizon);
  Tape tape(false);
  Tensor y_hat = forward(tape, params, p.mcfg, p.ginputs, b);

  std::filesystem::create_directories(rc.out_dir);
  auto f = detail::open_out(std::filesystem::path(rc.out_dir) / "forecast.csv");
  f << "# config_hash=" << rc.config_hash << "\n";
  f << "# anchor_t=" << anchor << " anchor_time="
    << format_iso8601(p.raw.start_epoch_s + anchor * (86400 / p.raw.q)) << "\n";
  f << "horizon";
  for (int64_t n = 0; n < p.raw.N; ++n) f << ",node_" << n;
  f << "\n";
  const double* y = y_hat.data();
  for (int64_t m = 0; m < p.mcfg.horizon; ++m) {
    f << (m + 1);
    for (int64_t n = 0; n < p.raw.N; ++n) {
      for (int64_t feat = 0; feat < p.raw.F; ++feat) {
        f << ',' << p.norm.invert1(y[(m * p.raw.N + n) * p.raw.F + feat], feat);
      }
    }
    f << "\n";
  }
  std::cout << "forecast for anchor " << anchor << " written\n";
  return 0;
}

inline int cmd_baseline(const RunConfig& rc) {
  Pipeline p = prepare_pipeline(rc);
  if (p.raw_split.test.empty()) throw ConfigError("test split is empty for this split ratio");
  std::vector<int64_t> anchors;
  for (const PeriodicSample& w : p.raw_split.test) anchors.push_back(w.anchor_t);

  HaModel ha = ha_fit(p.raw, p.train_len);
  EvalReport r_ha = evaluate_ha(p.raw, ha, anchors, rc.windows.M);
  EvalReport r_p = evaluate_persistence(p.raw, anchors, rc.windows.M);
  r_ha.config_hash = rc.config_hash;
  r_p.config_hash = rc.config_hash;

  std::filesystem::create_directories(rc.out_dir);
  const std::filesystem::path dir(rc.out_dir);
  detail::write_comparison_csv(dir / "baseline_comparison.csv", {r_ha, r_p}, rc.config_hash);
  detail::write_per_horizon_csv(dir / "ha_per_horizon.csv", r_ha);
  detail::write_per_horizon_csv(dir / "persistence_per_horizon.csv", r_p);
  auto f = detail::open_out(dir / "baseline_report.json");
  f << json({detail::report_to_json(r_ha), detail::report_to_json(r_p)}).dump(2) << "\n";
  std::cout << "HA test MAE " << r_ha.mae << ", persistence " << r_p.mae << "\n";
  return 0;
}

// Trains and evaluates all five variants with the shared seed and writes the
// combined comparison table.
inline int cmd_ablate(const RunConfig& rc) {
  std::filesystem::create_directories(rc.out_dir);
  const std::filesystem::path dir(rc.out_dir);
  std::vector<EvalReport> reports;
  for (Ablation a : {Ablation::full, Ablation::no_sagl, Ablation::no_dgl, Ablation::no_stam,
                     Ablation::recently_only}) {
    RunConfig vc = rc;
    vc.model.ablation = a;
    Pipeline p = prepare_pipeline(vc);
    ModelParams params = init_params(p.mcfg);
    TrainResult tr = train(params, p.mcfg, p.ginputs, p.norm_split.train, p.norm_split.val, p.norm,
                           vc.train_opt);
    if (tr.diverged) throw TrainError(std::string("variant ") + ablation_name(a) + " diverged");
    if (p.norm_split.test.empty()) throw ConfigError("test split is empty for this split ratio");
    EvalReport r = evaluate(tr.best, p.mcfg, p.ginputs, p.norm_split.test, p.norm, ablation_name(a));
    r.config_hash = rc.config_hash;
    detail::write_per_horizon_csv(dir / (std::string("ablation_") + ablation_name(a) + "_per_horizon.csv"), r);
    std::cout << ablation_name(a) << ": test MAE " << r.mae << ", RMSE " << r.rmse << "\n";
    reports.push_back(std::move(r));
  }
  detail::write_comparison_csv(dir / "ablation.csv", reports, rc.config_hash);
  return 0;
}

}  // namespace ahst
