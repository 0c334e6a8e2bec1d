#include <iostream>

#include "CLI11.hpp"
#include "calf/log.hpp"
#include "calf_cli/commands.hpp"

namespace {

void add_runtime(CLI::App* cmd, calf::cli::RuntimeOptions& rt, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Override the configured seed");
  cmd->add_option("--threads", rt.threads, "Worker threads (single-threaded only)");
  cmd->add_option("--device", rt.device, "Compute device")->check(CLI::IsMember({"cpu"}));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace calf::cli;
  CLI::App app{"calf: cross-modal fine-tuning of a frozen language-model backbone for forecasting"};
  app.require_subcommand(1);

  InitBackboneOptions init;
  auto* init_cmd = app.add_subcommand("init-backbone", "Write a randomly initialized backbone container");
  init_cmd->add_option("--out", init.out, "Output container")->required();
  init_cmd->add_option("--layers", init.config.layers, "Transformer blocks");
  init_cmd->add_option("--width", init.config.width, "Hidden width M");
  init_cmd->add_option("--heads", init.config.heads, "Attention heads");
  init_cmd->add_option("--vocab", init.config.vocab_size, "Token-embedding rows");
  init_cmd->add_option("--positions", init.config.max_positions, "Positional table length");
  init_cmd->add_option("--seed", init.seed, "Initialization seed");
  init_cmd->add_option("--vocab-out", init.vocab_out, "Also write a token list");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic multivariate CSV");
  synth_cmd->add_option("--out", synth.out, "Output CSV")->required();
  synth_cmd->add_option("--rows", synth.spec.rows, "Timestamps");
  synth_cmd->add_option("--channels", synth.spec.channels, "Channels");
  synth_cmd->add_option("--noise", synth.spec.noise, "Gaussian noise level");
  synth_cmd->add_option("--seed", synth.spec.seed, "Noise seed");

  PcaExtractOptions pca;
  auto* pca_cmd = app.add_subcommand("pca-extract", "Extract principal word embeddings");
  pca_cmd->add_option("--weights", pca.weights, "Backbone weight container")->required();
  pca_cmd->add_option("--d", pca.components, "Number of principal components")->required();
  pca_cmd->add_option("--out", pca.out, "Output container")->required();
  pca_cmd->add_flag("--unscaled", pca.unscaled, "Store unit-length directions");

  RunOptions run;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_run_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", run.config, "Run configuration (key = value)")->required();
    cmd->add_option("--set", run.overrides, "Override a configuration key (key=value)");
    cmd->add_option("--out", out_dir, "Output directory");
    add_runtime(cmd, run.runtime, seed);
  };
  auto* train_cmd = app.add_subcommand("train", "Train one model per horizon");
  add_run_common(train_cmd);
  train_cmd->add_option("--train-fraction", run.train_fraction, "Few-shot prefix of the training split")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_flag("--no-feature-loss", run.no_feature_loss, "Disable the feature regularization loss");
  train_cmd->add_flag("--no-output-loss", run.no_output_loss, "Disable the output consistency loss");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
  add_run_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", run.checkpoint, "Checkpoint file or training output directory")
      ->required();

  auto* zs_cmd = app.add_subcommand("zero-shot", "Evaluate checkpoints on a different dataset");
  add_run_common(zs_cmd);
  zs_cmd->add_option("--checkpoint", run.checkpoint, "Checkpoint file or training output directory")
      ->required();
  zs_cmd->add_option("--eval-dataset", run.eval_dataset, "CSV to evaluate on")->required();

  ExportOptions exp;
  std::uint64_t exp_seed = 0;
  std::size_t exp_start = 0;
  auto* exp_cmd = app.add_subcommand("export-attention", "Export cross-attention maps and features");
  exp_cmd->add_option("--config", exp.config, "Run configuration")->required();
  exp_cmd->add_option("--set", exp.overrides, "Override a configuration key (key=value)");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required();
  exp_cmd->add_option("--dataset", exp.dataset, "CSV (defaults to the configured dataset)");
  exp_cmd->add_option("--words", exp.words, "Word list, one per line");
  exp_cmd->add_option("--out", exp.out, "Output directory")->required();
  auto* start_opt = exp_cmd->add_option("--start", exp_start, "First row of the input window");
  add_runtime(exp_cmd, exp.runtime, exp_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (init_cmd->parsed()) {
      cmd_init_backbone(init, std::cout);
    } else if (synth_cmd->parsed()) {
      cmd_synth(synth, std::cout);
    } else if (pca_cmd->parsed()) {
      cmd_pca_extract(pca, std::cout);
    } else if (exp_cmd->parsed()) {
      if (exp_cmd->count("--seed")) exp.runtime.seed = exp_seed;
      if (start_opt->count()) exp.start = exp_start;
      cmd_export_attention(exp, std::cout);
    } else {
      CLI::App* active = train_cmd->parsed() ? train_cmd : eval_cmd->parsed() ? eval_cmd : zs_cmd;
      if (active->count("--seed")) run.runtime.seed = seed;
      if (!out_dir.empty()) run.out_dir = out_dir;
      if (active == train_cmd) cmd_train(run, std::cout);
      else if (active == eval_cmd) cmd_eval(run, std::cout);
      else cmd_zero_shot(run, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return exit_ok;
}
