#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace calf {

double mse(std::span<const double> pred, std::span<const double> truth);
double mae(std::span<const double> pred, std::span<const double> truth);
/// (200 / n) * sum |y - p| / (|y| + |p|); terms with both values zero add 0.
double smape(std::span<const double> pred, std::span<const double> truth);

/// Smallest in-sample scale accepted before clamping (with a warning).
inline constexpr double mase_epsilon = 1e-8;

/// Mean |x_t - x_{t-m}| over the in-sample series.
double seasonal_naive_scale(std::span<const double> insample, std::size_t season);

/// mean|y - p| / seasonal_naive_scale(insample, season).
double mase(std::span<const double> pred, std::span<const double> truth,
            std::span<const double> insample, std::size_t season);

/// 0.5 * (smape / ref_smape + mase / ref_mase).
double owa(double smape_value, double mase_value, double ref_smape, double ref_mase);

/// Values per horizon plus horizon averages.
class MetricReport {
 public:
  struct Row {
    std::string horizon;  // e.g. "96" or "monthly"
    std::size_t windows = 0;
    std::map<std::string, double> values;
  };

  void add(std::string horizon, std::size_t windows, std::map<std::string, double> values);

  const std::vector<Row>& rows() const noexcept { return rows_; }
  /// Metric names in first-seen order.
  std::vector<std::string> metrics() const;
  /// Mean over every row that reports `metric`.
  double average(std::string_view metric) const;
  const Row* find(std::string_view horizon) const;

  /// "horizon=<h> windows=<n> <metric>=<value> ..." lines, then a "mean" line.
  std::string to_text() const;
  /// "metric,horizon,value" with one "mean" row per metric.
  std::string to_csv() const;

 private:
  std::vector<Row> rows_;
};

}  // namespace calf
