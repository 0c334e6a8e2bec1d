#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace calf {

/// N x C multivariate series with named channels and ordered timestamps.
struct SeriesDataset {
  std::vector<std::string> channels;
  std::vector<std::string> timestamps;
  std::vector<double> values;  // N x C, row-major

  std::size_t rows() const { return timestamps.size(); }
  std::size_t cols() const { return channels.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
  /// Rows [begin, end) as an independent dataset.
  SeriesDataset slice(std::size_t begin, std::size_t end) const;
};

/// Header "date,<ch1>,...", then one row per timestamp. Timestamps must be
/// strictly increasing (numerically when both parse as numbers).
SeriesDataset parse_csv(std::string_view text, const std::string& source = "<csv>");
SeriesDataset load_csv(const std::filesystem::path& path);
void save_csv(const std::filesystem::path& path, const SeriesDataset& dataset);

/// true when `a` sorts strictly before `b` under the timestamp ordering.
bool timestamp_before(std::string_view a, std::string_view b);

enum class SplitMode {
  ratio,       // train_ratio / val_ratio / rest
  ett_hour,    // 12 / 4 / 4 months of hourly rows
  ett_minute,  // same at 15-minute resolution
};

SplitMode parse_split_mode(std::string_view name);
std::string_view to_string(SplitMode mode) noexcept;

struct SplitSpec {
  SplitMode mode = SplitMode::ratio;
  double train_ratio = 0.7;
  double val_ratio = 0.1;
  double few_shot_fraction = 1.0;

  void validate() const;
};

struct DatasetSplits {
  SeriesDataset train;  // few-shot prefix when few_shot_fraction < 1
  SeriesDataset val;
  SeriesDataset test;
  std::size_t full_train_rows = 0;
};

/// Chronological, disjoint train/val/test. Every split (including the
/// few-shot prefix) must hold at least `min_rows` rows.
DatasetSplits split(const SeriesDataset& dataset, const SplitSpec& spec, std::size_t min_rows);

struct WindowSpec {
  std::size_t input_len = 96;
  std::size_t horizon = 96;

  void validate() const;
  std::size_t span() const { return input_len + horizon; }
};

/// N - T - H + 1, or a CapacityError when the series is too short.
std::size_t window_count(std::size_t rows, const WindowSpec& spec);

/// Stride-1 sliding windows over one or more segments (each an N_s x C
/// matrix). A CSV split is one segment; M4 collections add one per series.
class WindowSet {
 public:
  WindowSet(WindowSpec spec, std::size_t channels);

  /// Adds every window of the segment whose start is >= first_start.
  void add_segment(std::vector<double> values, std::size_t first_start = 0);
  void add_segment(const SeriesDataset& dataset);

  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }
  std::size_t channels() const { return channels_; }
  const WindowSpec& spec() const { return spec_; }

  /// T x C history of window i (row-major, time-major).
  void input(std::size_t i, std::span<double> out) const;
  /// H x C continuation of window i.
  void target(std::size_t i, std::span<double> out) const;

 private:
  struct Segment {
    std::vector<double> values;
    std::size_t rows = 0;
  };
  struct Entry {
    std::size_t segment = 0;
    std::size_t start = 0;
  };
  void copy_rows(const Entry& e, std::size_t offset, std::size_t count, std::span<double> out) const;

  WindowSpec spec_;
  std::size_t channels_;
  std::vector<Segment> segments_;
  std::vector<Entry> index_;
};

WindowSet windows(const SeriesDataset& view, const WindowSpec& spec);

enum class NormMode { instance, none };
NormMode parse_norm_mode(std::string_view name);
std::string_view to_string(NormMode mode) noexcept;

inline constexpr double norm_epsilon = 1e-5;

/// Per-channel statistics of one window; std = sqrt(var + eps).
struct NormalizationState {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Normalizes a rows x C window in place, per channel.
NormalizationState instance_normalize(std::span<double> window, std::size_t channels,
                                      double eps = norm_epsilon);
/// Inverse of instance_normalize on any rows x C block.
void denormalize(std::span<double> block, std::size_t channels, const NormalizationState& state);

struct SyntheticSpec {
  std::size_t rows = 2000;
  std::size_t channels = 3;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

/// Sinusoids of differing periods plus a linear trend plus Gaussian noise.
SeriesDataset synthetic_series(const SyntheticSpec& spec);

}  // namespace calf
