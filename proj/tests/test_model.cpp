#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ahstgnn/checkpoint.hpp"
#include "ahstgnn/model.hpp"
#include "oracles.hpp"

using namespace ahst;

namespace {

ModelConfig tiny_config(int n_nodes, int n_blocks = 1) {
  ModelConfig cfg;
  cfg.n_blocks = n_blocks;
  cfg.hidden = 4;
  cfg.embed = 3;
  cfg.heads = 2;
  cfg.kernel_size = 2;
  cfg.out_hidden = 8;
  cfg.input_len = 3;
  cfg.horizon = 2;
  cfg.n_nodes = n_nodes;
  cfg.seed = 5;
  return cfg;
}

GraphInputs random_graph(Rng& rng, int64_t n, double kappa_frac = 0.55) {
  std::vector<double> coords(static_cast<size_t>(n * 2));
  for (double& c : coords) c = rng.uniform(0.0, 1000.0);
  DistanceGraph g = build_distance_adjacency(pairwise_distances(coords, n), n, 400.0,
                                             1000.0 * kappa_frac);
  return make_graph_inputs(g);
}

Batch random_batch(Rng& rng, const ModelConfig& cfg, int64_t B) {
  Batch b;
  b.x_r = oracle::rand_tensor(rng, {B, cfg.input_len, cfg.n_nodes, cfg.n_features}, -1, 1);
  b.x_d = oracle::rand_tensor(rng, {B, cfg.input_len, cfg.n_nodes, cfg.n_features}, -1, 1);
  b.x_w = oracle::rand_tensor(rng, {B, cfg.input_len, cfg.n_nodes, cfg.n_features}, -1, 1);
  b.y = oracle::rand_tensor(rng, {B, cfg.horizon, cfg.n_nodes, cfg.n_features}, -1, 1);
  return b;
}

std::vector<std::pair<std::string, Tensor>> named_params(ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> out;
  p.for_each_param([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

struct ToySplit {
  std::vector<PeriodicSample> train, val, test;
  Normalizer norm;
  GraphInputs graph;
  ModelConfig cfg;
};

// Small synthetic pipeline shared by the training tests.
ToySplit toy_pipeline(uint64_t seed, int n_nodes = 5, int days = 10, int q = 24,
                      double heterogeneity = 0.5, double noise = 1.0) {
  SyntheticSpec spec;
  spec.n_nodes = n_nodes;
  spec.days = days;
  spec.q = q;
  spec.seed = seed;
  spec.heterogeneity = heterogeneity;
  spec.noise_std = noise;
  spec.sigma = 3000;
  spec.kappa = 5000;
  SyntheticData sd = generate_synthetic(spec);

  ToySplit out;
  out.cfg = tiny_config(n_nodes, 2);
  out.cfg.input_len = 4;
  out.cfg.horizon = 2;
  out.cfg.hidden = 8;
  out.cfg.seed = seed;

  WindowSpec w;
  w.T_R = w.T_D = w.T_W = out.cfg.input_len;
  w.M = out.cfg.horizon;
  auto raw_windows = make_windows(sd.ds, w);
  SplitWindows raw = split_windows(raw_windows, 2, 1, 1);
  const int64_t train_len = raw.train.back().anchor_t + w.M + 1;
  std::vector<double> region(sd.ds.series.begin(), sd.ds.series.begin() + train_len * sd.ds.N);
  out.norm = fit_normalizer(region, 1);
  TrafficDataset normalized = sd.ds;
  out.norm.apply(normalized.series, 1);
  SplitWindows ns = split_windows(make_windows(normalized, w), 2, 1, 1);
  out.train = std::move(ns.train);
  out.val = std::move(ns.val);
  out.test = std::move(ns.test);
  out.graph = make_graph_inputs(sd.graph);
  return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero parameters produce zero output") {
  ModelConfig cfg = tiny_config(4);
  ModelParams p = init_params(cfg);
  p.for_each_param([](const std::string&, Tensor& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0);
  });
  Rng rng(1);
  GraphInputs g = random_graph(rng, 4);
  Batch b = random_batch(rng, cfg, 2);
  Tape tape;
  Tensor y = forward(tape, p, cfg, g, b);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("output shape contract") {
  ModelConfig cfg = tiny_config(5, 2);
  cfg.input_len = 12;
  cfg.horizon = 12;
  ModelParams p = init_params(cfg);
  Rng rng(2);
  GraphInputs g = random_graph(rng, 5);
  Batch b = random_batch(rng, cfg, 2);
  Tape tape;
  Tensor y = forward(tape, p, cfg, g, b);
  CHECK(y.shape() == Shape{2, 12, 5, 1});
}

TEST_CASE("batch/config mismatch raises dimension error") {
  ModelConfig cfg = tiny_config(4);
  ModelParams p = init_params(cfg);
  Rng rng(3);
  GraphInputs g = random_graph(rng, 4);
  ModelConfig other = cfg;
  other.n_nodes = 5;
  Batch b = random_batch(rng, other, 1);
  Tape tape;
  CHECK_THROWS_AS(forward(tape, p, cfg, g, b), ShapeError);
}

TEST_CASE("full one-block model gradients match finite differences") {
  ModelConfig cfg = tiny_config(4);
  ModelParams p = init_params(cfg);
  Rng rng(4);
  GraphInputs g = random_graph(rng, 4);
  Batch b = random_batch(rng, cfg, 1);
  auto loss_fn = [&](Tape& t) {
    Tensor y = forward(t, p, cfg, g, b);
    return mae_loss(t, y, b.y);
  };
  auto check = oracle::finite_difference_check(named_params(p), loss_fn);
  CAPTURE(check.worst);
  CHECK(check.max_rel_err <= 1e-4);
}

TEST_CASE("every parameter receives nonzero gradient on a generic batch") {
  ModelConfig cfg = tiny_config(4, 2);
  ModelParams p = init_params(cfg);
  Rng rng(5);
  GraphInputs g = random_graph(rng, 4);
  Batch b = random_batch(rng, cfg, 2);
  Tape tape;
  Tensor loss = mae_loss(tape, forward(tape, p, cfg, g, b), b.y);
  tape.backward(loss);
  p.for_each_param([](const std::string& name, Tensor& t) {
    REQUIRE_MESSAGE(t.has_grad(), name);
    double norm = 0.0;
    for (double v : t.grad()) norm += v * v;
    CHECK_MESSAGE(norm > 0.0, name);
  });
}

TEST_CASE("mae loss values and node-permutation invariance") {
  Tape tape;
  Tensor y = Tensor::from({1, 1, 2, 1}, {1, 2});
  CHECK(mae_loss(tape, y, y).values()[0] == 0.0);
  Tensor yhat = Tensor::from({1, 1, 2, 1}, {2, 4});
  CHECK(mae_loss(tape, yhat, y).values()[0] == doctest::Approx(1.5));

  Tensor y_swapped = Tensor::from({1, 1, 2, 1}, {2, 1});
  Tensor yhat_swapped = Tensor::from({1, 1, 2, 1}, {4, 2});
  CHECK(mae_loss(tape, yhat_swapped, y_swapped).values()[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(mae_loss(tape, y, Tensor::zeros({1, 1, 3, 1})), ShapeError);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  ModelConfig cfg = tiny_config(4);
  ModelParams p = init_params(cfg);
  std::vector<double> before = p.node_embedding.values();
  AdamState st;
  st.init(p);
  p.zero_grads();
  p.for_each_param([](const std::string&, Tensor& t) { t.ensure_grad(); });
  adam_step(p, st, AdamConfig{});
  CHECK(oracle::bitwise_equal(p.node_embedding.values(), before));
  CHECK(st.step == 1);
}

TEST_CASE("adam first step moves a scalar by about lr") {
  // w=0, grad=1, lr=0.01: bias correction makes the first step exactly
  // lr * 1/(1 + eps') which is -0.01 up to epsilon.
  ModelConfig cfg = tiny_config(2);
  cfg.hidden = 1;
  cfg.embed = 1;
  cfg.heads = 1;
  cfg.kernel_size = 1;
  cfg.out_hidden = 1;
  ModelParams p = init_params(cfg);
  p.for_each_param([](const std::string&, Tensor& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0);
    auto& g = t.ensure_grad();
    std::fill(g.begin(), g.end(), 1.0);
  });
  AdamState st;
  st.init(p);
  AdamConfig ac;
  ac.lr = 0.01;
  adam_step(p, st, ac);
  CHECK(p.node_embedding.values()[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam raises a training error on NaN gradients") {
  ModelConfig cfg = tiny_config(2);
  ModelParams p = init_params(cfg);
  AdamState st;
  st.init(p);
  p.zero_grads();
  p.for_each_param([](const std::string&, Tensor& t) { t.ensure_grad(); });
  p.node_embedding.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(p, st, AdamConfig{}), doctest::Contains("e_g"), TrainError);
}

TEST_CASE("adam is deterministic across identical runs") {
  auto run = [](std::vector<double>& out) {
    ModelConfig cfg = tiny_config(3);
    ModelParams p = init_params(cfg);
    Rng rng(6);
    GraphInputs g = random_graph(rng, 3);
    Batch b = random_batch(rng, cfg, 2);
    AdamState st;
    st.init(p);
    for (int i = 0; i < 5; ++i) {
      Tape tape;
      Tensor loss = mae_loss(tape, forward(tape, p, cfg, g, b), b.y);
      p.zero_grads();
      tape.backward(loss);
      adam_step(p, st, AdamConfig{});
    }
    p.for_each_param([&](const std::string&, Tensor& t) {
      out.insert(out.end(), t.values().begin(), t.values().end());
    });
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  CHECK(oracle::bitwise_equal(a, b));
}

TEST_CASE("training loss decreases substantially on a small dataset") {
  ToySplit toy = toy_pipeline(11);
  ModelParams p = init_params(toy.cfg);
  TrainOptions opt;
  opt.epochs = 20;
  opt.batch_size = 8;
  opt.patience = 0;
  opt.seed = 11;
  TrainResult r = train(p, toy.cfg, toy.graph, toy.train, {}, toy.norm, opt);
  REQUIRE(r.log.size() == 20);
  CHECK_FALSE(r.diverged);
  CHECK(r.log.back().train_mae <= 0.5 * r.log.front().train_mae);
}

TEST_CASE("empty validation split runs exactly the requested epochs") {
  ToySplit toy = toy_pipeline(12);
  ModelParams p = init_params(toy.cfg);
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 16;
  opt.patience = 0;
  opt.seed = 12;
  TrainResult r = train(p, toy.cfg, toy.graph, toy.train, {}, toy.norm, opt);
  CHECK(r.log.size() == 3);
  for (const EpochLog& e : r.log) CHECK(std::isnan(e.val_mae));
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
  ToySplit toy = toy_pipeline(13);
  ModelParams p = init_params(toy.cfg);
  TrainOptions opt;
  opt.epochs = 50;
  opt.batch_size = 16;
  opt.patience = 2;
  opt.seed = 13;
  opt.adam.lr = 0.0;  // nothing improves, so the stop triggers immediately
  TrainResult r = train(p, toy.cfg, toy.graph, toy.train, toy.val, toy.norm, opt);
  CHECK(r.log.size() == 3);  // first epoch sets the best, then patience runs out
}

TEST_CASE("resume from checkpointed state reproduces the next epoch bitwise") {
  ToySplit toy = toy_pipeline(14);
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 8;
  opt.patience = 0;
  opt.seed = 14;

  ModelParams pa = init_params(toy.cfg);
  TrainResult full = train(pa, toy.cfg, toy.graph, toy.train, {}, toy.norm, opt);

  ModelParams pb = init_params(toy.cfg);
  TrainOptions two = opt;
  two.epochs = 2;
  TrainResult part = train(pb, toy.cfg, toy.graph, toy.train, {}, toy.norm, two);
  TrainResult rest = train(pb, toy.cfg, toy.graph, toy.train, {}, toy.norm, opt, &part.state);

  REQUIRE(full.log.size() == 3);
  REQUIRE(rest.log.size() == 1);
  CHECK(std::memcmp(&full.log[2].train_mae, &rest.log[0].train_mae, sizeof(double)) == 0);
}

TEST_CASE("evaluate: perfect predictor, constant predictor, RMSE >= MAE") {
  // Constant predictor built from a zero network with output bias c.
  ModelConfig cfg = tiny_config(2);
  cfg.input_len = 3;
  cfg.horizon = 1;
  ModelParams p = init_params(cfg);
  p.for_each_param([](const std::string&, Tensor& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0);
  });
  const double c = 2.0;
  std::fill(p.b_out2.values().begin(), p.b_out2.values().end(), c);

  Rng rng(7);
  GraphInputs g = random_graph(rng, 2);
  Normalizer identity;
  identity.mean = {0.0};
  identity.std = {1.0};

  // 4-point toy split: two windows, two nodes, one horizon. Targets 1,2,3,5.
  std::vector<PeriodicSample> windows(2);
  for (auto& w : windows) {
    w.x_r.assign(3 * 2, 0.0);
    w.x_d.assign(3 * 2, 0.0);
    w.x_w.assign(3 * 2, 0.0);
  }
  windows[0].y = {1, 2};
  windows[1].y = {3, 5};
  EvalReport r = evaluate(p, cfg, g, windows, identity, "const");
  CHECK(r.mae == doctest::Approx((1 + 0 + 1 + 3) / 4.0));
  CHECK(r.rmse == doctest::Approx(std::sqrt((1 + 0 + 1 + 9) / 4.0)));
  CHECK(r.rmse >= r.mae);

  // a perfect predictor on its own output
  ToySplit toy = toy_pipeline(15);
  ModelParams q = init_params(toy.cfg);
  Tape tape(false);
  std::vector<int64_t> idxs;
  for (size_t i = 0; i < toy.test.size(); ++i) idxs.push_back(static_cast<int64_t>(i));
  Batch all = make_batch(toy.test, idxs, toy.cfg.input_len, toy.cfg.n_nodes, 1, toy.cfg.horizon);
  Tensor pred = forward(tape, q, toy.cfg, toy.graph, all);
  std::vector<PeriodicSample> self = toy.test;
  const double* pv = pred.data();
  for (size_t i = 0; i < self.size(); ++i) {
    for (size_t j = 0; j < self[i].y.size(); ++j) {
      self[i].y[j] = pv[i * self[i].y.size() + j];
    }
  }
  EvalReport perfect = evaluate(q, toy.cfg, toy.graph, self, toy.norm, "self");
  CHECK(perfect.mae <= 1e-12);
  for (double m : perfect.mae_h) CHECK(m <= 1e-12);
}

TEST_CASE("per-horizon metrics satisfy RMSE >= MAE >= 0") {
  ToySplit toy = toy_pipeline(16);
  ModelParams p = init_params(toy.cfg);
  EvalReport r = evaluate(p, toy.cfg, toy.graph, toy.test, toy.norm);
  REQUIRE(r.mae_h.size() == static_cast<size_t>(toy.cfg.horizon));
  for (size_t m = 0; m < r.mae_h.size(); ++m) {
    CHECK(r.mae_h[m] >= 0.0);
    CHECK(r.rmse_h[m] >= r.mae_h[m]);
  }
  CHECK(r.rmse >= r.mae);
}

TEST_CASE("checkpoint round trip is bit-exact through a forward pass") {
  ModelConfig cfg = tiny_config(4, 2);
  ModelParams p = init_params(cfg);
  Rng rng(8);
  GraphInputs g = random_graph(rng, 4);
  Batch b = random_batch(rng, cfg, 2);
  Tape t1(false);
  Tensor y1 = forward(t1, p, cfg, g, b);

  auto path = (std::filesystem::temp_directory_path() / "ahst_ckpt_test.ahst").string();
  Normalizer nm;
  nm.mean = {0.5};
  nm.std = {2.0};
  save_checkpoint(path, p, cfg, "cafe0123", nullptr, &nm);
  Checkpoint cp = read_checkpoint(path);
  CHECK(cp.config_hash == "cafe0123");
  Normalizer nm2 = checkpoint_normalizer(cp);
  CHECK(nm2.mean[0] == 0.5);
  CHECK(nm2.std[0] == 2.0);
  ModelParams q = load_checkpoint(cp, cfg);
  Tape t2(false);
  Tensor y2 = forward(t2, q, cfg, g, b);
  CHECK(oracle::bitwise_equal(y1.values(), y2.values()));
}

TEST_CASE("checkpoint rejects truncation and structural mismatch") {
  ModelConfig cfg = tiny_config(4);
  ModelParams p = init_params(cfg);
  auto dir = std::filesystem::temp_directory_path();
  auto path = (dir / "ahst_ckpt_bad.ahst").string();
  save_checkpoint(path, p, cfg, "deadbeef");

  // truncate the file
  {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path + ".trunc", std::ios::binary);
    out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
  }
  CHECK_THROWS_AS(read_checkpoint(path + ".trunc"), IoError);

  // different node count is refused
  ModelConfig other = tiny_config(5);
  Checkpoint cp = read_checkpoint(path);
  CHECK_THROWS_WITH_AS(load_checkpoint(cp, other), doctest::Contains("structural"), IoError);

  CHECK_THROWS_AS(read_checkpoint((dir / "ahst_no_such.ahst").string()), IoError);
}

TEST_CASE("whole-model permutation equivariance") {
  const int64_t N = 5;
  ModelConfig cfg = tiny_config(static_cast<int>(N), 2);
  ModelParams p = init_params(cfg);
  Rng rng(9);
  std::vector<double> coords(static_cast<size_t>(N * 2));
  for (double& c : coords) c = rng.uniform(0.0, 1000.0);
  DistanceGraph dg = build_distance_adjacency(pairwise_distances(coords, N), N, 400.0, 600.0);
  Batch b = random_batch(rng, cfg, 2);
  const std::vector<int64_t> perm = {3, 1, 4, 0, 2};

  Tape t1(false);
  Tensor base = forward(t1, p, cfg, make_graph_inputs(dg), b);

  ModelParams pp = p.clone();
  pp.node_embedding = Tensor::from(
      p.node_embedding.shape(),
      oracle::permute_nodes(p.node_embedding.values(), 1, N, cfg.embed, perm), true);
  DistanceGraph dgp = dg;
  dgp.a = oracle::permute_matrix(dg.a, N, perm);
  Batch bp;
  const int64_t BT = 2 * cfg.input_len;
  bp.x_r = Tensor::from(b.x_r.shape(), oracle::permute_nodes(b.x_r.values(), BT, N, 1, perm));
  bp.x_d = Tensor::from(b.x_d.shape(), oracle::permute_nodes(b.x_d.values(), BT, N, 1, perm));
  bp.x_w = Tensor::from(b.x_w.shape(), oracle::permute_nodes(b.x_w.values(), BT, N, 1, perm));
  bp.y = b.y;
  Tape t2(false);
  Tensor got = forward(t2, pp, cfg, make_graph_inputs(dgp), bp);

  auto expected = oracle::permute_nodes(base.values(), 2 * cfg.horizon, N, 1, perm);
  CHECK(oracle::max_abs_diff(got.values(), expected) <= 1e-8);
}

TEST_CASE("skip sum with one block equals that block's output") {
  ModelConfig cfg = tiny_config(4, 1);
  ModelParams p = init_params(cfg);
  Rng rng(10);
  GraphInputs g = random_graph(rng, 4);
  Batch b = random_batch(rng, cfg, 1);
  Tape tape(false);
  ForwardTrace trace;
  forward(tape, p, cfg, g, b, &trace);
  REQUIRE(trace.blocks.size() == 1);
  CHECK(trace.h_out.same_storage(trace.blocks[0].h));
}

TEST_CASE("ablation wiring consistency") {
  Rng rng(11);
  GraphInputs g = random_graph(rng, 4);

  SUBCASE("no_stam passes the spatial branch through") {
    ModelConfig cfg = tiny_config(4, 2);
    cfg.ablation = Ablation::no_stam;
    ModelParams p = init_params(cfg);
    Batch b = random_batch(rng, cfg, 2);
    Tape tape(false);
    ForwardTrace trace;
    forward(tape, p, cfg, g, b, &trace);
    for (const BlockTrace& bt : trace.blocks) CHECK(bt.h.same_storage(bt.h_s));
  }

  SUBCASE("recently_only ignores daily and weekly inputs bitwise") {
    ModelConfig cfg = tiny_config(4, 2);
    cfg.ablation = Ablation::recently_only;
    ModelParams p = init_params(cfg);
    Batch b = random_batch(rng, cfg, 2);
    Tape tape(false);
    Tensor y1 = forward(tape, p, cfg, g, b);
    Batch b2 = b;
    b2.x_d = oracle::rand_tensor(rng, b.x_d.shape(), -9, 9);
    b2.x_w = oracle::rand_tensor(rng, b.x_w.shape(), -9, 9);
    Tensor y2 = forward(tape, p, cfg, g, b2);
    CHECK(oracle::bitwise_equal(y1.values(), y2.values()));
  }

  SUBCASE("no_sagl and no_dgl forward, backward, and differ from full") {
    for (Ablation a : {Ablation::no_sagl, Ablation::no_dgl}) {
      ModelConfig cfg = tiny_config(4, 2);
      cfg.ablation = a;
      ModelParams p = init_params(cfg);
      Batch b = random_batch(rng, cfg, 2);
      Tape tape;
      Tensor loss = mae_loss(tape, forward(tape, p, cfg, g, b), b.y);
      tape.backward(loss);
      p.for_each_param([](const std::string& name, Tensor& t) {
        REQUIRE_MESSAGE(t.has_grad(), name);
      });
      if (a == Ablation::no_sagl) {
        bool has_gat_adp = false, has_sagl = false;
        p.for_each_param([&](const std::string& name, Tensor&) {
          has_gat_adp = has_gat_adp || name.find("gat_adp") != std::string::npos;
          has_sagl = has_sagl || name.find(".sagl.") != std::string::npos;
        });
        CHECK(has_gat_adp);
        CHECK_FALSE(has_sagl);
      }
    }
  }
}

TEST_CASE("one-block ablation gradients match finite differences") {
  Rng rng(12);
  GraphInputs g = random_graph(rng, 3);
  for (Ablation a : {Ablation::no_sagl, Ablation::no_dgl, Ablation::no_stam}) {
    ModelConfig cfg = tiny_config(3, 1);
    cfg.hidden = 3;
    cfg.ablation = a;
    ModelParams p = init_params(cfg);
    Batch b = random_batch(rng, cfg, 1);
    auto check = oracle::finite_difference_check(named_params(p), [&](Tape& t) {
      return mae_loss(t, forward(t, p, cfg, g, b), b.y);
    });
    CAPTURE(static_cast<int>(a));
    CAPTURE(check.worst);
    CHECK(check.max_rel_err <= 1e-4);
  }
}

}  // TEST_SUITE
