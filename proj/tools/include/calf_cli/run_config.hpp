#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calf/backbone.hpp"
#include "calf/data.hpp"
#include "calf/losses.hpp"
#include "calf/match.hpp"
#include "calf/model.hpp"
#include "calf/optim.hpp"
#include "calf/trainer.hpp"

namespace calf::cli {

/// Everything a run needs. Persisted as flat "key = value" text; `include =
/// other.cfg` lines pull in another file (relative to the including file),
/// later keys override earlier ones.
struct RunConfig {
  // data
  std::string dataset = "synthetic";  // CSV path, or "synthetic"
  std::string family = "other";       // ett | m4 | other; picks loss defaults
  SplitSpec split;
  SyntheticSpec synthetic;
  std::string m4_dir;
  std::string m4_frequency = "monthly";
  std::size_t m4_windows_per_series = 16;
  std::map<std::string, double> m4_naive2;  // "<Subset>.smape" / "<Subset>.mase"

  // model
  std::string backbone_path;
  BackboneConfig backbone;
  std::string principal_path;
  std::string vocab_path;  // one token per line, aligned with wte rows
  std::size_t pca_components = 0;  // extract on the fly when no principal file is given
  std::size_t input_len = 96;
  std::vector<std::size_t> horizons{96, 192, 336, 720};
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  std::vector<AttnMatrix> lora_targets{AttnMatrix::query, AttnMatrix::value};
  CrossScale cross_scale = CrossScale::sqrt_channels;

  // training
  TrainConfig train;
  std::optional<LossKind> sim_sup, sim_feature, sim_output;
  std::size_t eval_batch = 256;

  std::string output_dir = "calf_run";
  std::uint64_t seed = 2024;

  void set(std::string_view key, std::string_view value, const std::filesystem::path& base = {});
  std::string get(std::string_view key) const;
  static std::vector<std::string_view> keys();

  /// Full resolved listing, one key per line, fixed order.
  std::string to_text() const;
  void validate() const;

  ModelConfig model_config(std::size_t horizon) const;
  /// Loss kinds from the family unless sim.* keys were given.
  SimSpec effective_sims() const;
};

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base = {},
                           RunConfig start = {});
RunConfig load_run_config(const std::filesystem::path& path);
void apply_override(RunConfig& config, std::string_view assignment);

}  // namespace calf::cli
