// Command-line front end: synthesize datasets, train, evaluate, predict,
// run baselines, and sweep ablation variants.
//
// Exit codes: 0 ok, 1 internal error, 2 malformed config, 3 missing file,
// 4 training divergence.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ahstgnn/ahstgnn.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_override;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint) {
  cmd->add_option("--config", args.config_path, "run configuration JSON")->required();
  if (with_checkpoint) {
    cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint file (.ahst)");
  }
  cmd->add_option("--out", args.out_override, "output directory (overrides config out_dir)");
}

ahst::RunConfig load(const CommonArgs& args) {
  ahst::RunConfig rc = ahst::load_run_config(args.config_path);
  if (!args.out_override.empty()) rc.out_dir = args.out_override;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AHSTGNN spatial-temporal traffic forecasting"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, predict_args, baseline_args, ablate_args;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  CLI::App* c_train = app.add_subcommand("train", "train a model (optionally resume)");
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  CLI::App* c_predict = app.add_subcommand("predict", "forecast from one anchor");
  CLI::App* c_baseline = app.add_subcommand("baseline", "historical-average and persistence baselines");
  CLI::App* c_ablate = app.add_subcommand("ablate", "train and compare all ablation variants");
  add_common(c_synth, synth_args, false);
  add_common(c_train, train_args, true);
  add_common(c_eval, eval_args, true);
  add_common(c_predict, predict_args, true);
  add_common(c_baseline, baseline_args, false);
  add_common(c_ablate, ablate_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) return ahst::cmd_synth(load(synth_args));
    if (c_train->parsed()) return ahst::cmd_train(load(train_args), train_args.checkpoint_path);
    if (c_eval->parsed()) return ahst::cmd_eval(load(eval_args), eval_args.checkpoint_path);
    if (c_predict->parsed()) return ahst::cmd_predict(load(predict_args), predict_args.checkpoint_path);
    if (c_baseline->parsed()) return ahst::cmd_baseline(load(baseline_args));
    if (c_ablate->parsed()) return ahst::cmd_ablate(load(ablate_args));
  } catch (const ahst::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ahst::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ahst::TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 4;
  } catch (const ahst::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
