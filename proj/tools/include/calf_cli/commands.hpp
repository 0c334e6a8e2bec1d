#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "calf/backbone.hpp"
#include "calf/data.hpp"
#include "calf/metrics.hpp"
#include "calf/trainer.hpp"
#include "calf_cli/run_config.hpp"

namespace calf::cli {

enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,    // bad flags, dimension mismatches
  exit_config = 2,   // configuration, manifest, incompatible checkpoint
  exit_data = 3,     // unparsable or too-short datasets
  exit_format = 4,   // corrupted containers
  exit_numeric = 5,  // non-finite values
};

int exit_code_for(const std::exception& e) noexcept;

struct RuntimeOptions {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string device = "cpu";
};

struct InitBackboneOptions {
  std::filesystem::path out;
  BackboneConfig config;
  std::uint64_t seed = 0;
  std::filesystem::path vocab_out;  // optional token list "tok<i>"
};
void cmd_init_backbone(const InitBackboneOptions& options, std::ostream& log);

struct SynthOptions {
  std::filesystem::path out;
  SyntheticSpec spec;
};
void cmd_synth(const SynthOptions& options, std::ostream& log);

struct PcaExtractOptions {
  std::filesystem::path weights;
  std::size_t components = 0;
  std::filesystem::path out;
  bool unscaled = false;
};
struct PcaExtractResult {
  std::size_t components = 0;
  double explained_variance_ratio = 0.0;
};
PcaExtractResult cmd_pca_extract(const PcaExtractOptions& options, std::ostream& log);

struct RunOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::filesystem::path> out_dir;
  RuntimeOptions runtime;
  // train only
  std::optional<double> train_fraction;
  bool no_feature_loss = false;
  bool no_output_loss = false;
  // eval / zero-shot / export
  std::filesystem::path checkpoint;
  std::string eval_dataset;
};

struct RunResult {
  MetricReport report;
  std::vector<FitReport> fits;
  std::size_t train_rows = 0;
  std::size_t full_train_rows = 0;
  std::uint64_t optimizer_steps = 0;
  std::filesystem::path out_dir;
  RunConfig config;
};

RunResult cmd_train(const RunOptions& options, std::ostream& log);
RunResult cmd_eval(const RunOptions& options, std::ostream& log);
RunResult cmd_zero_shot(const RunOptions& options, std::ostream& log);

struct ExportOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::filesystem::path checkpoint;
  std::string dataset;  // CSV path or "synthetic"; empty = the configured dataset
  std::optional<std::filesystem::path> words;
  std::filesystem::path out;
  std::optional<std::size_t> start;  // first row of the input window; default = last T rows
  RuntimeOptions runtime;
};
struct ExportResult {
  std::size_t channels = 0;
  std::size_t components = 0;
  std::size_t words = 0;
  std::vector<std::string> missing_words;
};
ExportResult cmd_export_attention(const ExportOptions& options, std::ostream& log);

}  // namespace calf::cli
