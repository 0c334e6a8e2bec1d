#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calf/data.hpp"
#include "calf/metrics.hpp"
#include "calf/model.hpp"

namespace calf {

enum class M4Frequency { yearly, quarterly, monthly, others };

M4Frequency parse_m4_frequency(std::string_view name);
std::string_view to_string(M4Frequency f) noexcept;

struct M4SubsetInfo {
  std::string_view name;  // file stem, e.g. "Monthly"
  std::size_t horizon;
  std::size_t season;
};

/// Subsets behind a frequency; "others" is weekly + daily + hourly.
std::span<const M4SubsetInfo> m4_subsets(M4Frequency f);

struct M4Series {
  std::string id;
  std::vector<double> train;
  std::vector<double> test;
};

struct M4Subset {
  std::string name;
  std::size_t horizon = 0;
  std::size_t input_len = 0;  // 2 * horizon
  std::size_t season = 1;
  std::vector<M4Series> series;
  std::size_t skipped = 0;  // series with fewer than 3 * horizon training values
};

struct M4Collection {
  M4Frequency frequency = M4Frequency::monthly;
  std::vector<M4Subset> subsets;

  /// Distinct horizons in subset order.
  std::vector<std::size_t> horizons() const;
};

/// "id,v1,v2,..." rows of variable length; an optional header row is skipped.
std::vector<std::pair<std::string, std::vector<double>>> parse_m4_csv(std::string_view text,
                                                                       const std::string& source);

/// Reads <Name>-train.csv and <Name>-test.csv for each subset of `frequency`.
M4Collection load_m4(const std::filesystem::path& dir, M4Frequency frequency);

/// Sliding windows of length 3H over each training series (only the last
/// `max_per_series` of them when nonzero).
WindowSet m4_training_windows(const M4Subset& subset, std::size_t max_per_series = 0);
/// The final training window of each series, used for early stopping.
WindowSet m4_validation_windows(const M4Subset& subset);
/// Last 2H training values followed by the H test values, one window per series.
WindowSet m4_test_windows(const M4Subset& subset);

struct M4Reference {
  double smape = 0.0;
  double mase = 0.0;
  bool approximate = true;
};

/// Seasonal-naive forecast (repeat the last season) scored on the test set.
/// Stands in for the official Naive2 numbers, hence `approximate`.
M4Reference seasonal_naive_reference(const M4Subset& subset);

struct M4Scores {
  double smape = 0.0;
  double mase = 0.0;
  std::size_t series = 0;
};

/// Temporal-branch forecasts for every series; MASE uses the full training
/// series as in-sample data with the subset's season.
template <std::floating_point T>
M4Scores evaluate_m4(const CalfModel<T>& model, const M4Subset& subset, NormMode norm);

}  // namespace calf
