#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "calf/container.hpp"
#include "calf/error.hpp"
#include "calf/pca.hpp"
#include "calf_cli/commands.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace calf;
using namespace calf::cli;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Numeric body of an exported "channel,<cols...>" matrix.
std::vector<std::vector<double>> read_matrix(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

int run_calf(const std::string& args) {
  const std::string cmd = std::string(CALF_EXE) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("calf_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ostringstream sink;

    InitBackboneOptions init;
    init.out = dir_ / "backbone.calf";
    init.config.layers = 2;
    init.config.width = 32;
    init.config.heads = 4;
    init.config.vocab_size = 200;
    init.config.max_positions = 64;
    init.seed = 3;
    init.vocab_out = dir_ / "vocab.txt";
    cmd_init_backbone(init, sink);

    PcaExtractOptions pca;
    pca.weights = init.out;
    pca.components = 8;
    pca.out = dir_ / "principal.calf";
    cmd_pca_extract(pca, sink);

    SynthOptions synth;
    synth.out = dir_ / "data.csv";
    synth.spec.rows = 8400;
    synth.spec.channels = 3;
    cmd_synth(synth, sink);

    synth.out = dir_ / "other.csv";
    synth.spec.rows = 1500;
    synth.spec.seed = 99;
    cmd_synth(synth, sink);

    spit(dir_ / "base.cfg",
         "backbone = backbone.calf\n"
         "backbone.layers = 2\n"
         "backbone.heads = 4\n"
         "principal = principal.calf\n"
         "vocab = vocab.txt\n"
         "dataset = data.csv\n"
         "input_len = 96\n"
         "horizons = 24\n"
         "train.epochs = 1\n"
         "train.batch_size = 8\n"
         "train.max_batches_per_epoch = 3\n"
         "seed = 5\n");
  }

  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static RunOptions run_options(const std::string& out) {
    RunOptions o;
    o.config = dir_ / "base.cfg";
    o.out_dir = dir_ / out;
    return o;
  }

  static fs::path dir_;
  std::ostringstream log_;
};

fs::path Cli::dir_;

TEST_F(Cli, ConfigIncludeAndOverride) {
  spit(dir_ / "child.cfg", "include = base.cfg\ninput_len = 48\n# comment\n");
  auto cfg = load_run_config(dir_ / "child.cfg");
  EXPECT_EQ(cfg.input_len, 48u);
  EXPECT_EQ(cfg.horizons, std::vector<std::size_t>{24});
  EXPECT_EQ(fs::path(cfg.backbone_path), (dir_ / "backbone.calf").lexically_normal());
  apply_override(cfg, "train.lr=0.01");
  EXPECT_DOUBLE_EQ(cfg.train.adam.learning_rate, 0.01);
  apply_override(cfg, "horizons = 96,192");
  EXPECT_EQ(cfg.horizons, (std::vector<std::size_t>{96, 192}));
}

TEST_F(Cli, ConfigRejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_run_config("not.a.key = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("input_len\n"), ConfigError);
  EXPECT_THROW(parse_run_config("dataset.family = weather\n"), ConfigError);
  EXPECT_THROW(parse_run_config("lora.targets = q,x\n"), ConfigError);
  EXPECT_THROW(parse_run_config("include = does_not_exist.cfg\n", dir_), ConfigError);
  RunConfig cfg;
  EXPECT_THROW(apply_override(cfg, "train.lr"), ConfigError);
}

TEST_F(Cli, ResolvedConfigRoundTrips) {
  auto cfg = load_run_config(dir_ / "base.cfg");
  auto again = parse_run_config(cfg.to_text());
  EXPECT_EQ(again.to_text(), cfg.to_text());
}

TEST_F(Cli, PcaExtractClampsToRankAndReloadsExactly) {
  testkit::WarningCapture warnings;
  PcaExtractOptions o;
  o.weights = dir_ / "backbone.calf";
  o.components = 40;
  o.out = dir_ / "pca40.calf";
  auto r = cmd_pca_extract(o, log_);
  EXPECT_EQ(r.components, 32u);
  EXPECT_NEAR(r.explained_variance_ratio, 1.0, 1e-6);
  ASSERT_FALSE(warnings.messages.empty());

  auto p = load_principal<float>(o.out);
  save_principal(dir_ / "pca40_again.calf", p);
  EXPECT_EQ(slurp(o.out), slurp(dir_ / "pca40_again.calf"));
  EXPECT_NE(log_.str().find("explained_variance_ratio="), std::string::npos);
}

TEST_F(Cli, FewShotUsesFloorOfTrainFraction) {
  auto o = run_options("few");
  o.train_fraction = 0.1;
  auto r = cmd_train(o, log_);
  EXPECT_GT(r.full_train_rows, 0u);
  EXPECT_EQ(r.train_rows, static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(r.full_train_rows))));
  const auto run_log = slurp(dir_ / "few" / "train_run.txt");
  EXPECT_NE(run_log.find("train_rows=" + std::to_string(r.train_rows) + " "), std::string::npos);
  EXPECT_NE(slurp(dir_ / "few" / "train_log.txt").find("horizon=24 step=1 "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "few" / "checkpoint_H24.calf"));
  EXPECT_TRUE(fs::exists(dir_ / "few" / "metrics.csv"));
}

TEST_F(Cli, ZeroShotTakesNoOptimizerSteps) {
  auto o = run_options("src");
  auto trained = cmd_train(o, log_);
  EXPECT_GT(trained.optimizer_steps, 0u);
  const auto ckpt_before = slurp(dir_ / "src" / "checkpoint_H24.calf");

  auto z = run_options("zs");
  z.checkpoint = dir_ / "src";
  z.eval_dataset = (dir_ / "other.csv").string();
  auto r = cmd_zero_shot(z, log_);
  EXPECT_EQ(r.optimizer_steps, 0u);
  ASSERT_EQ(r.report.rows().size(), 1u);
  const auto& row = r.report.rows()[0];
  EXPECT_EQ(row.horizon, "24");
  EXPECT_GT(row.windows, 0u);
  EXPECT_TRUE(std::isfinite(row.values.at("mse")));
  EXPECT_TRUE(std::isfinite(row.values.at("mae")));
  EXPECT_NE(slurp(dir_ / "zs" / "zero_shot_run.txt").find("optimizer_steps=0"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "zs" / "metrics.txt").find("horizon=mean"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "src" / "checkpoint_H24.calf"), ckpt_before);
}

TEST_F(Cli, EvalReportsEveryHorizonAndMean) {
  auto o = run_options("long");
  o.overrides = {"horizons=96,192,336,720", "train.max_batches_per_epoch=1", "train.batch_size=4"};
  auto trained = cmd_train(o, log_);
  ASSERT_EQ(trained.report.rows().size(), 4u);

  auto e = run_options("long_eval");
  e.overrides = o.overrides;
  e.checkpoint = dir_ / "long";
  auto r = cmd_eval(e, log_);
  ASSERT_EQ(r.report.rows().size(), 4u);
  const std::vector<std::string> want{"96", "192", "336", "720"};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.report.rows()[i].horizon, want[i]);
    EXPECT_EQ(r.report.rows()[i].values, trained.report.rows()[i].values);
  }
  const auto csv = slurp(dir_ / "long_eval" / "metrics.csv");
  EXPECT_NE(csv.find("mse,mean,"), std::string::npos);
  EXPECT_NE(csv.find("mae,720,"), std::string::npos);
}

TEST_F(Cli, RerunFromResolvedConfigIsBitwiseIdentical) {
  auto a = run_options("run_a");
  a.overrides = {"loss.gamma=0.5"};
  cmd_train(a, log_);
  RunOptions b;
  b.config = dir_ / "run_a" / "resolved_config.txt";
  b.out_dir = dir_ / "run_b";
  cmd_train(b, log_);
  EXPECT_EQ(slurp(dir_ / "run_a" / "metrics.csv"), slurp(dir_ / "run_b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "run_a" / "checkpoint_H24.calf"), slurp(dir_ / "run_b" / "checkpoint_H24.calf"));
  EXPECT_EQ(slurp(dir_ / "run_a" / "train_log.txt"), slurp(dir_ / "run_b" / "train_log.txt"));
}

TEST_F(Cli, IncompatibleCheckpointIsAConfigError) {
  auto o = run_options("compat");
  cmd_train(o, log_);
  auto e = run_options("compat_eval");
  e.overrides = {"input_len=48"};
  e.checkpoint = dir_ / "compat" / "checkpoint_H24.calf";
  EXPECT_THROW(cmd_eval(e, log_), ConfigError);
  e.overrides = {"lora.rank=4"};
  EXPECT_THROW(cmd_eval(e, log_), ConfigError);
}

TEST_F(Cli, ExportAttentionIsNormalizedAndReproducible) {
  auto o = run_options("exp_src");
  cmd_train(o, log_);
  spit(dir_ / "words.txt", "tok3\ntok10\nnot_a_token\n");

  ExportOptions x;
  x.config = dir_ / "base.cfg";
  x.checkpoint = dir_ / "exp_src" / "checkpoint_H24.calf";
  x.words = dir_ / "words.txt";
  x.out = dir_ / "exp1";
  auto r = cmd_export_attention(x, log_);
  EXPECT_EQ(r.channels, 3u);
  EXPECT_EQ(r.components, 8u);
  EXPECT_EQ(r.words, 2u);
  EXPECT_EQ(r.missing_words, std::vector<std::string>{"not_a_token"});
  EXPECT_EQ(slurp(dir_ / "exp1" / "missing_words.txt"), "not_a_token\n");

  for (const char* name : {"principal_attention.csv", "word_relevance.csv"}) {
    auto m = read_matrix(dir_ / "exp1" / name);
    ASSERT_EQ(m.size(), 3u) << name;
    for (const auto& row : m) {
      double s = 0.0;
      for (double v : row) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-5) << name;
    }
  }
  EXPECT_EQ(read_matrix(dir_ / "exp1" / "principal_attention.csv")[0].size(), 8u);
  EXPECT_EQ(read_matrix(dir_ / "exp1" / "features_temporal.csv")[0].size(), 32u);

  x.out = dir_ / "exp2";
  cmd_export_attention(x, log_);
  for (const char* name : {"principal_attention.csv", "word_relevance.csv", "features_temporal.csv",
                           "features_textual.csv"}) {
    EXPECT_EQ(slurp(dir_ / "exp1" / name), slurp(dir_ / "exp2" / name)) << name;
  }
}

TEST_F(Cli, ExportRejectsWindowPastTheEnd) {
  auto o = run_options("exp_end");
  cmd_train(o, log_);
  ExportOptions x;
  x.config = dir_ / "base.cfg";
  x.checkpoint = dir_ / "exp_end" / "checkpoint_H24.calf";
  x.out = dir_ / "exp_end_out";
  x.start = 8400 - 50;
  EXPECT_THROW(cmd_export_attention(x, log_), CapacityError);
}

TEST_F(Cli, ExitCodes) {
  const std::string d = dir_.string();
  EXPECT_EQ(run_calf(""), exit_usage);
  EXPECT_EQ(run_calf("--help"), exit_ok);
  EXPECT_EQ(run_calf("frobnicate"), exit_usage);
  EXPECT_EQ(run_calf("train"), exit_usage);
  EXPECT_EQ(run_calf("train --config " + d + "/missing.cfg"), exit_config);
  EXPECT_EQ(run_calf("train --config " + d + "/base.cfg --set nope=1"), exit_config);
  EXPECT_EQ(run_calf("train --config " + d + "/base.cfg --threads 0 --out " + d + "/x0"), exit_usage);

  spit(dir_ / "bad.csv", "date,a,b\n2020,1,2\n2021,oops,3\n");
  EXPECT_EQ(run_calf("train --config " + d + "/base.cfg --set dataset=" + d + "/bad.csv --out " + d + "/x1"),
            exit_data);
  spit(dir_ / "short.csv", "date,a\n1,1\n2,2\n3,3\n");
  EXPECT_EQ(run_calf("train --config " + d + "/base.cfg --set dataset=" + d + "/short.csv --out " + d + "/x2"),
            exit_data);

  auto bytes = read_file_bytes(dir_ / "principal.calf");
  bytes[0] ^= 0xff;
  write_file_bytes(dir_ / "corrupt.calf", bytes);
  EXPECT_EQ(run_calf("eval --config " + d + "/base.cfg --checkpoint " + d + "/corrupt.calf --out " + d + "/x3"),
            exit_format);
  EXPECT_EQ(run_calf("train --config " + d + "/base.cfg --set principal=" + d + "/corrupt.calf --out " + d +
                     "/x4"),
            exit_format);
}

}  // namespace
