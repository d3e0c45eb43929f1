#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ahstgnn/common.hpp"
#include "ahstgnn/data.hpp"
#include "ahstgnn/graph.hpp"
#include "ahstgnn/metrics.hpp"
#include "ahstgnn/stam.hpp"
#include "ahstgnn/tape.hpp"
#include "ahstgnn/temporal.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

enum class Ablation { full, no_sagl, no_dgl, no_stam, recently_only };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_sagl: return "no_sagl";
    case Ablation::no_dgl: return "no_dgl";
    case Ablation::no_stam: return "no_stam";
    case Ablation::recently_only: return "recently_only";
  }
  return "?";
}

inline Ablation ablation_from_name(const std::string& s) {
  for (Ablation a : {Ablation::full, Ablation::no_sagl, Ablation::no_dgl, Ablation::no_stam,
                     Ablation::recently_only}) {
    if (s == ablation_name(a)) return a;
  }
  throw ConfigError("unknown ablation variant '" + s + "'");
}

struct ModelConfig {
  int n_blocks = 4;
  int hidden = 32;       // D
  int embed = 10;        // node embedding width d
  int heads = 4;         // K
  int kernel_size = 2;   // SAGL propagation hops
  int out_hidden = 256;  // C
  int input_len = 12;    // T
  int horizon = 12;      // M
  int n_features = 1;    // F
  int n_nodes = 0;       // N, from the dataset
  Ablation ablation = Ablation::full;
  DglAct dgl_act = DglAct::sigmoid;
  uint64_t seed = 1;

  void validate() const {
    if (n_blocks < 1 || hidden < 1 || embed < 1 || heads < 1 || kernel_size < 1 || out_hidden < 1 ||
        input_len < 1 || horizon < 1 || n_features < 1) {
      throw ConfigError("model dimensions must all be >= 1");
    }
    if (n_nodes < 2) throw ConfigError("model needs n_nodes >= 2");
  }
};

// Per-block parameter bundle. Which members are defined depends on the
// ablation variant; for_each_param skips undefined tensors.
struct BlockParams {
  TcmParams tcm;
  SaglParams sagl;          // full, no_stam, recently_only, no_dgl
  GatParams gat;            // full, no_stam, recently_only, no_sagl (distance graph)
  GateFusionParams gate;    // variants with both spatial branches
  StamParams stam;          // all but no_stam
  GatParams gat_adp;        // no_sagl: second GAT over the adaptive (complete) graph
  SaglParams sagl_dis;      // no_dgl: second SAGL over the row-normalized distance graph
};

struct ModelParams {
  Tensor node_embedding;  // E_G [N,d]; the single instance shared by SAGL and STAM
  std::vector<BlockParams> blocks;
  Tensor w_out1, b_out1;  // [T*D, C], [C]
  Tensor w_out2, b_out2;  // [C, M*F], [M*F]

  template <class F>
  void for_each_param(F&& f) {
    auto visit = [&](const std::string& name, Tensor& t) {
      if (t.defined()) f(name, t);
    };
    visit("e_g", node_embedding);
    for (size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      BlockParams& bp = blocks[b];
      auto visit_tcn = [&](const std::string& n, GatedTcnParams& g) {
        visit(p + "tcm." + n + ".w_filter", g.w_filter);
        visit(p + "tcm." + n + ".b_filter", g.b_filter);
        visit(p + "tcm." + n + ".w_gate", g.w_gate);
        visit(p + "tcm." + n + ".b_gate", g.b_gate);
      };
      visit_tcn("recently", bp.tcm.recently);
      visit_tcn("daily", bp.tcm.daily);
      visit_tcn("weekly", bp.tcm.weekly);
      visit(p + "tcm.w_mlp", bp.tcm.w_mlp);
      visit(p + "tcm.b_mlp", bp.tcm.b_mlp);
      for (size_t i = 0; i < bp.sagl.theta.size(); ++i) {
        visit(p + "sagl.theta" + std::to_string(i), bp.sagl.theta[i]);
      }
      for (size_t i = 0; i < bp.sagl_dis.theta.size(); ++i) {
        visit(p + "sagl_dis.theta" + std::to_string(i), bp.sagl_dis.theta[i]);
      }
      auto visit_gat = [&](const std::string& n, GatParams& g) {
        for (size_t k = 0; k < g.heads.size(); ++k) {
          const std::string hp = p + n + ".head" + std::to_string(k) + ".";
          visit(hp + "w", g.heads[k].w);
          visit(hp + "a_src", g.heads[k].a_src);
          visit(hp + "a_dst", g.heads[k].a_dst);
        }
      };
      visit_gat("gat", bp.gat);
      visit_gat("gat_adp", bp.gat_adp);
      visit(p + "gate.w_sg", bp.gate.w_sg);
      visit(p + "gate.w_dg", bp.gate.w_dg);
      visit(p + "gate.b", bp.gate.b);
      visit(p + "stam.w_q", bp.stam.w_q);
      visit(p + "stam.w_kt", bp.stam.w_kt);
      visit(p + "stam.w_ks", bp.stam.w_ks);
    }
    visit("out.w1", w_out1);
    visit("out.b1", b_out1);
    visit("out.w2", w_out2);
    visit("out.b2", b_out2);
  }

  void zero_grads() {
    for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  ModelParams clone() const {
    ModelParams c = *this;
    auto deep = [](Tensor& t) {
      if (t.defined()) t = t.clone();
    };
    deep(c.node_embedding);
    for (BlockParams& bp : c.blocks) {
      for (GatedTcnParams* g : {&bp.tcm.recently, &bp.tcm.daily, &bp.tcm.weekly}) {
        deep(g->w_filter);
        deep(g->b_filter);
        deep(g->w_gate);
        deep(g->b_gate);
      }
      deep(bp.tcm.w_mlp);
      deep(bp.tcm.b_mlp);
      for (Tensor& t : bp.sagl.theta) deep(t);
      for (Tensor& t : bp.sagl_dis.theta) deep(t);
      for (GatParams* g : {&bp.gat, &bp.gat_adp}) {
        for (GatHead& h : g->heads) {
          deep(h.w);
          deep(h.a_src);
          deep(h.a_dst);
        }
      }
      deep(bp.gate.w_sg);
      deep(bp.gate.w_dg);
      deep(bp.gate.b);
      deep(bp.stam.w_q);
      deep(bp.stam.w_kt);
      deep(bp.stam.w_ks);
    }
    deep(c.w_out1);
    deep(c.b_out1);
    deep(c.w_out2);
    deep(c.b_out2);
    return c;
  }
};

namespace detail {

inline Tensor glorot(Rng& rng, Shape shape, int64_t fan_in, int64_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline GatedTcnParams init_gated_tcn(Rng& rng, int64_t k, int64_t cin, int64_t cout, int64_t dilation) {
  GatedTcnParams p;
  p.w_filter = glorot(rng, {k, cin, cout}, k * cin, cout);
  p.b_filter = Tensor::zeros({cout}, true);
  p.w_gate = glorot(rng, {k, cin, cout}, k * cin, cout);
  p.b_gate = Tensor::zeros({cout}, true);
  p.dilation = dilation;
  return p;
}

inline GatParams init_gat(Rng& rng, int heads, int64_t d) {
  GatParams p;
  for (int k = 0; k < heads; ++k) {
    GatHead h;
    h.w = glorot(rng, {d, d}, d, d);
    h.a_src = glorot(rng, {d}, d, 1);
    h.a_dst = glorot(rng, {d}, d, 1);
    p.heads.push_back(std::move(h));
  }
  return p;
}

}  // namespace detail

// Deterministic parameter initialization from config.seed. Temporal kernel
// width is 2 with dilation 2^(l-1) in block l, which gives the stack an
// exponential receptive field.
inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int64_t D = cfg.hidden, d = cfg.embed, N = cfg.n_nodes, F = cfg.n_features;
  const int64_t T = cfg.input_len, M = cfg.horizon, C = cfg.out_hidden;
  const int64_t k = 2;

  ModelParams p;
  {
    std::vector<double> v(static_cast<size_t>(N * d));
    for (double& x : v) x = rng.normal();
    p.node_embedding = Tensor::from({N, d}, std::move(v), true);
  }
  int64_t dilation = 1;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    BlockParams bp;
    const int64_t cin = b == 0 ? F : D;
    bp.tcm.recently = detail::init_gated_tcn(rng, k, cin, D, dilation);
    bp.tcm.daily = detail::init_gated_tcn(rng, k, cin, D, dilation);
    bp.tcm.weekly = detail::init_gated_tcn(rng, k, cin, D, dilation);
    bp.tcm.w_mlp = detail::glorot(rng, {3 * D, D}, 3 * D, D);
    bp.tcm.b_mlp = Tensor::zeros({D}, true);

    const bool want_sagl = cfg.ablation != Ablation::no_sagl;
    const bool want_dgl = cfg.ablation != Ablation::no_dgl;
    if (want_sagl) {
      for (int i = 0; i < cfg.kernel_size; ++i) bp.sagl.theta.push_back(detail::glorot(rng, {D, D}, D, D));
    }
    if (want_dgl) bp.gat = detail::init_gat(rng, cfg.heads, D);
    if (cfg.ablation == Ablation::no_sagl) bp.gat_adp = detail::init_gat(rng, cfg.heads, D);
    if (cfg.ablation == Ablation::no_dgl) {
      for (int i = 0; i < cfg.kernel_size; ++i) {
        bp.sagl_dis.theta.push_back(detail::glorot(rng, {D, D}, D, D));
      }
    }
    if (want_sagl && want_dgl) {
      bp.gate.w_sg = detail::glorot(rng, {D, D}, D, D);
      bp.gate.w_dg = detail::glorot(rng, {D, D}, D, D);
      bp.gate.b = Tensor::zeros({D}, true);
    }
    if (cfg.ablation != Ablation::no_stam) {
      bp.stam.w_q = detail::glorot(rng, {d, D}, d, D);
      bp.stam.w_kt = detail::glorot(rng, {D, D}, D, D);
      bp.stam.w_ks = detail::glorot(rng, {D, D}, D, D);
    }
    p.blocks.push_back(std::move(bp));
    dilation *= 2;
  }
  p.w_out1 = detail::glorot(rng, {T * D, C}, T * D, C);
  p.b_out1 = Tensor::zeros({C}, true);
  p.w_out2 = detail::glorot(rng, {C, M * F}, C, M * F);
  p.b_out2 = Tensor::zeros({M * F}, true);
  return p;
}

// Constant graph-side inputs derived from the distance graph once per run.
struct GraphInputs {
  Tensor dis_mask;   // [N,N] 0/1 neighbor mask for DGL
  Tensor dis_norm;   // [N,N] row-normalized adjacency for the no_dgl variant
  Tensor full_mask;  // [N,N] all ones: neighbor set of the (dense) adaptive graph
};

inline GraphInputs make_graph_inputs(const DistanceGraph& g) {
  GraphInputs gi;
  gi.dis_mask = neighbor_mask(g);
  gi.dis_norm = row_normalized_adjacency(g);
  gi.full_mask = Tensor::full({g.n, g.n}, 1.0);
  return gi;
}

struct Batch {
  Tensor x_r, x_d, x_w;  // [B,T,N,F]
  Tensor y;              // [B,M,N,F]
};

inline Batch make_batch(const std::vector<PeriodicSample>& windows, const std::vector<int64_t>& idxs,
                        int64_t T, int64_t N, int64_t F, int64_t M) {
  const int64_t B = static_cast<int64_t>(idxs.size());
  std::vector<double> xr, xd, xw, y;
  xr.reserve(static_cast<size_t>(B * T * N * F));
  xd.reserve(static_cast<size_t>(B * T * N * F));
  xw.reserve(static_cast<size_t>(B * T * N * F));
  y.reserve(static_cast<size_t>(B * M * N * F));
  for (int64_t i : idxs) {
    const PeriodicSample& s = windows[static_cast<size_t>(i)];
    xr.insert(xr.end(), s.x_r.begin(), s.x_r.end());
    xd.insert(xd.end(), s.x_d.begin(), s.x_d.end());
    xw.insert(xw.end(), s.x_w.begin(), s.x_w.end());
    y.insert(y.end(), s.y.begin(), s.y.end());
  }
  Batch b;
  b.x_r = Tensor::from({B, T, N, F}, std::move(xr));
  b.x_d = Tensor::from({B, T, N, F}, std::move(xd));
  b.x_w = Tensor::from({B, T, N, F}, std::move(xw));
  b.y = Tensor::from({B, M, N, F}, std::move(y));
  return b;
}

struct BlockTrace {
  Tensor h_t, h_s, h;
};

struct ForwardTrace {
  Tensor a_adp;
  std::vector<BlockTrace> blocks;
  Tensor h_out;
};

// Full AHSTGNN forward: stacked blocks (TCM -> AHGLM -> STAM), summed skip
// connections, then the two-layer output head. The per-component TCM outputs
// flow into the next block; the STAM output feeds only the skip sum.
inline Tensor forward(Tape& tape, ModelParams& params, const ModelConfig& cfg,
                      const GraphInputs& graph, const Batch& batch, ForwardTrace* trace = nullptr) {
  const int64_t B = batch.x_r.dim(0), T = batch.x_r.dim(1), N = batch.x_r.dim(2), F = batch.x_r.dim(3);
  if (T != cfg.input_len || N != cfg.n_nodes || F != cfg.n_features) {
    throw ShapeError("batch " + shape_str(batch.x_r.shape()) + " does not match model config (T=" +
                     std::to_string(cfg.input_len) + ", N=" + std::to_string(cfg.n_nodes) + ", F=" +
                     std::to_string(cfg.n_features) + ")");
  }
  const int64_t D = cfg.hidden, M = cfg.horizon;

  Tensor h_r = batch.x_r;
  Tensor h_d = batch.x_d;
  Tensor h_w = batch.x_w;
  if (cfg.ablation == Ablation::recently_only) {
    h_d = Tensor::zeros({B, T, N, F});
    h_w = Tensor::zeros({B, T, N, F});
  }

  Tensor a_adp;
  if (cfg.ablation != Ablation::no_sagl) {
    a_adp = adaptive_adjacency(tape, params.node_embedding);
    if (trace) trace->a_adp = a_adp;
  }

  Tensor h_out;
  for (BlockParams& bp : params.blocks) {
    TcmOut tcm = tcm_forward(tape, h_r, h_d, h_w, bp.tcm);
    h_r = tcm.h_r;
    h_d = tcm.h_d;
    h_w = tcm.h_w;

    Tensor h_s;
    switch (cfg.ablation) {
      case Ablation::no_sagl: {
        Tensor adp = dgl_forward(tape, tcm.h_t, graph.full_mask, bp.gat_adp, cfg.dgl_act);
        Tensor dis = dgl_forward(tape, tcm.h_t, graph.dis_mask, bp.gat, cfg.dgl_act);
        h_s = tape.add(adp, dis);
        break;
      }
      case Ablation::no_dgl: {
        Tensor adp = sagl_forward(tape, tcm.h_t, a_adp, bp.sagl);
        Tensor dis = sagl_forward(tape, tcm.h_t, graph.dis_norm, bp.sagl_dis);
        h_s = tape.add(adp, dis);
        break;
      }
      default: {
        Tensor h_sg = sagl_forward(tape, tcm.h_t, a_adp, bp.sagl);
        Tensor h_dg = dgl_forward(tape, tcm.h_t, graph.dis_mask, bp.gat, cfg.dgl_act);
        h_s = gate_fusion(tape, h_sg, h_dg, bp.gate);
        break;
      }
    }

    Tensor h = cfg.ablation == Ablation::no_stam
                   ? h_s
                   : stam_forward(tape, tcm.h_t, h_s, params.node_embedding, bp.stam);
    if (trace) trace->blocks.push_back({tcm.h_t, h_s, h});
    h_out = h_out.defined() ? tape.add(h_out, h) : h;
  }
  if (trace) trace->h_out = h_out;

  // Output head: per node, flatten time x channels and apply two dense layers.
  Tensor flat = tape.reshape(tape.permute(h_out, {0, 2, 1, 3}), {B, N, T * D});
  Tensor hidden = tape.relu(tape.add(tape.matmul(flat, params.w_out1), params.b_out1));
  Tensor y = tape.add(tape.matmul(hidden, params.w_out2), params.b_out2);  // [B,N,M*F]
  return tape.permute(tape.reshape(y, {B, N, M, cfg.n_features}), {0, 2, 1, 3});
}

// Mean absolute error over every element (batch, step, node, feature).
inline Tensor mae_loss(Tape& tape, const Tensor& y_hat, const Tensor& y) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError("mae_loss shapes differ: " + shape_str(y_hat.shape()) + " vs " + shape_str(y.shape()));
  }
  return tape.reduce_mean(tape.abs(tape.sub(y_hat, y)));
}

// ---- Adam ----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> m, v;

  void init(ModelParams& params) {
    step = 0;
    names.clear();
    m.clear();
    v.clear();
    params.for_each_param([&](const std::string& name, Tensor& t) {
      names.push_back(name);
      m.emplace_back(static_cast<size_t>(t.numel()), 0.0);
      v.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    });
  }
};

// Bias-corrected Adam update over every defined parameter. Parameters with
// no gradient buffer are treated as zero-gradient (moments still decay).
inline void adam_step(ModelParams& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  size_t idx = 0;
  params.for_each_param([&](const std::string& name, Tensor& t) {
    std::vector<double>& m = state.m[idx];
    std::vector<double>& v = state.v[idx];
    ++idx;
    std::vector<double>& w = t.values();
    const bool has_grad = t.has_grad();
    const std::vector<double>* g = has_grad ? &t.grad() : nullptr;
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? (*g)[i] : 0.0;
      if (!std::isfinite(gi)) {
        throw TrainError("non-finite gradient in parameter '" + name + "'");
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  });
}

// ---- evaluation ----

// Forward passes without recording; metrics accumulate in de-normalized
// units per horizon.
inline EvalReport evaluate(ModelParams& params, const ModelConfig& cfg, const GraphInputs& graph,
                           const std::vector<PeriodicSample>& windows, const Normalizer& norm,
                           const std::string& tag = "ahstgnn", int64_t batch_size = 32) {
  if (windows.empty()) throw ContractError("evaluate on empty split");
  MetricAccumulator acc(cfg.horizon);
  const int64_t n = static_cast<int64_t>(windows.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    std::vector<int64_t> idxs;
    for (int64_t i = start; i < std::min(n, start + batch_size); ++i) idxs.push_back(i);
    Batch b = make_batch(windows, idxs, cfg.input_len, cfg.n_nodes, cfg.n_features, cfg.horizon);
    Tape tape(false);
    Tensor y_hat = forward(tape, params, cfg, graph, b);
    const double* p = y_hat.data();
    const double* y = b.y.data();
    const int64_t B = static_cast<int64_t>(idxs.size());
    const int64_t NF = cfg.n_nodes * cfg.n_features;
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t m = 0; m < cfg.horizon; ++m) {
        for (int64_t j = 0; j < NF; ++j) {
          const int64_t at = (bi * cfg.horizon + m) * NF + j;
          const int64_t f = j % cfg.n_features;
          acc.add(m, norm.invert1(p[at], f), norm.invert1(y[at], f));
        }
      }
    }
  }
  return acc.finalize(tag);
}

// ---- training ----

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  AdamConfig adam;
  int patience = 10;  // early-stopping patience on validation MAE; <=0 disables
  uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_mae = 0.0;  // mean training loss (normalized units)
  double val_mae = 0.0;    // de-normalized validation MAE; NaN when no val split
  int64_t wall_ms = 0;
};

// Optimizer state plus everything needed to resume a run bit-exactly.
struct TrainState {
  AdamState adam;
  std::string rng_state;
  int epochs_done = 0;
};

struct TrainResult {
  ModelParams best;        // best-validation snapshot (final params when no val split)
  std::vector<EpochLog> log;
  double best_val = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;   // loss went non-finite; `best` holds the last good snapshot
  TrainState state;
};

// Mini-batch epochs over seeded shuffles of the training windows. Early
// stopping tracks validation MAE with the given patience; with an empty
// validation split the loop runs for the full epoch budget. On divergence
// training stops and the last good snapshot is returned with
// `diverged = true` so callers can persist it before surfacing the failure.
inline TrainResult train(ModelParams& params, const ModelConfig& cfg, const GraphInputs& graph,
                         const std::vector<PeriodicSample>& train_windows,
                         const std::vector<PeriodicSample>& val_windows, const Normalizer& norm,
                         const TrainOptions& opt, const TrainState* resume = nullptr,
                         std::ostream* log_stream = nullptr,
                         const std::string& config_hash = "") {
  if (train_windows.empty()) throw ContractError("training split is empty");
  TrainResult result;
  Rng rng(opt.seed);
  TrainState state;
  if (resume) {
    state = *resume;
    rng.load_state(state.rng_state);
  } else {
    state.adam.init(params);
  }

  const int64_t n = static_cast<int64_t>(train_windows.size());
  std::vector<int64_t> order(static_cast<size_t>(n));

  double best_val = std::numeric_limits<double>::infinity();
  ModelParams best = params.clone();
  int since_best = 0;

  for (int epoch = state.epochs_done; epoch < opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // Shuffle a fresh identity order so an epoch depends only on the rng
    // state, which the train state serializes for exact resumption.
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t batches = 0;
    bool bad = false;
    for (int64_t start = 0; start < n && !bad; start += opt.batch_size) {
      std::vector<int64_t> idxs(order.begin() + start,
                                order.begin() + std::min(n, start + opt.batch_size));
      Batch b = make_batch(train_windows, idxs, cfg.input_len, cfg.n_nodes, cfg.n_features, cfg.horizon);
      Tape tape;
      Tensor y_hat = forward(tape, params, cfg, graph, b);
      Tensor loss = mae_loss(tape, y_hat, b.y);
      const double lv = loss.values()[0];
      if (!std::isfinite(lv)) {
        bad = true;
        break;
      }
      params.zero_grads();
      tape.backward(loss);
      try {
        adam_step(params, state.adam, opt.adam);
      } catch (const TrainError&) {
        bad = true;
        break;
      }
      loss_sum += lv;
      ++batches;
    }
    if (bad) {
      // The offending update was never applied, so `params` is the last
      // good state.
      result.diverged = true;
      if (val_windows.empty() || best_val == std::numeric_limits<double>::infinity()) {
        best = params.clone();
      }
      break;
    }

    EpochLog rec;
    rec.epoch = epoch + 1;
    rec.train_mae = loss_sum / static_cast<double>(batches);
    if (!val_windows.empty()) {
      EvalReport vr = evaluate(params, cfg, graph, val_windows, norm);
      rec.val_mae = vr.mae;
      if (vr.mae < best_val) {
        best_val = vr.mae;
        best = params.clone();
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      rec.val_mae = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.log.push_back(rec);
    if (log_stream) {
      *log_stream << "{\"epoch\":" << rec.epoch << ",\"train_mae\":" << rec.train_mae
                  << ",\"val_mae\":";
      if (std::isnan(rec.val_mae)) {
        *log_stream << "null";
      } else {
        *log_stream << rec.val_mae;
      }
      *log_stream << ",\"wall_ms\":" << rec.wall_ms;
      if (!config_hash.empty()) *log_stream << ",\"config_hash\":\"" << config_hash << "\"";
      *log_stream << "}\n" << std::flush;
    }
    state.epochs_done = epoch + 1;
    if (!val_windows.empty() && opt.patience > 0 && since_best >= opt.patience) break;
  }

  // With no validation split the final parameters are the snapshot.
  result.best = (val_windows.empty() && !result.diverged) ? params.clone() : best;
  result.best_val = best_val == std::numeric_limits<double>::infinity()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : best_val;
  state.rng_state = rng.save_state();
  result.state = state;
  return result;
}

}  // namespace ahst
