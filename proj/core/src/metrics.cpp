#include "calf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "calf/error.hpp"
#include "calf/log.hpp"

namespace calf {

namespace {

void require_same(const char* name, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(name) + ": " + std::to_string(a.size()) +
                         " predictions vs " + std::to_string(b.size()) + " targets");
  }
  if (a.empty()) throw UsageError(std::string(name) + ": empty input");
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> truth) {
  require_same("mse", pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  require_same("mae", pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

double smape(std::span<const double> pred, std::span<const double> truth) {
  require_same("smape", pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double den = std::abs(truth[i]) + std::abs(pred[i]);
    if (den > 0.0) acc += std::abs(truth[i] - pred[i]) / den;
  }
  return 200.0 * acc / static_cast<double>(pred.size());
}

double seasonal_naive_scale(std::span<const double> insample, std::size_t season) {
  if (season == 0 || insample.size() <= season) {
    throw UsageError("MASE needs an in-sample series longer than the season (" +
                     std::to_string(insample.size()) + " <= " + std::to_string(season) + ")");
  }
  double acc = 0.0;
  for (std::size_t t = season; t < insample.size(); ++t) acc += std::abs(insample[t] - insample[t - season]);
  return acc / static_cast<double>(insample.size() - season);
}

double mase(std::span<const double> pred, std::span<const double> truth,
            std::span<const double> insample, std::size_t season) {
  require_same("mase", pred, truth);
  double scale = seasonal_naive_scale(insample, season);
  if (!(scale >= mase_epsilon)) {
    warn("MASE in-sample scale " + format_value(scale) + " clamped to " + format_value(mase_epsilon));
    scale = mase_epsilon;
  }
  return mae(pred, truth) / scale;
}

double owa(double smape_value, double mase_value, double ref_smape, double ref_mase) {
  if (!(ref_smape > 0.0) || !(ref_mase > 0.0)) {
    throw UsageError("OWA references must be positive (got " + format_value(ref_smape) + ", " +
                     format_value(ref_mase) + ")");
  }
  return 0.5 * (smape_value / ref_smape + mase_value / ref_mase);
}

void MetricReport::add(std::string horizon, std::size_t windows, std::map<std::string, double> values) {
  rows_.push_back({std::move(horizon), windows, std::move(values)});
}

std::vector<std::string> MetricReport::metrics() const {
  std::vector<std::string> names;
  for (const auto& row : rows_)
    for (const auto& [name, v] : row.values)
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  return names;
}

double MetricReport::average(std::string_view metric) const {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& row : rows_) {
    auto it = row.values.find(std::string(metric));
    if (it == row.values.end()) continue;
    acc += it->second;
    ++n;
  }
  if (n == 0) throw UsageError("no rows report metric '" + std::string(metric) + "'");
  return acc / static_cast<double>(n);
}

const MetricReport::Row* MetricReport::find(std::string_view horizon) const {
  for (const auto& row : rows_)
    if (row.horizon == horizon) return &row;
  return nullptr;
}

std::string MetricReport::to_text() const {
  std::string out;
  for (const auto& row : rows_) {
    out += "horizon=" + row.horizon + " windows=" + std::to_string(row.windows);
    for (const auto& [name, v] : row.values) out += " " + name + "=" + format_value(v);
    out += "\n";
  }
  if (!rows_.empty()) {
    out += "horizon=mean";
    for (const auto& name : metrics()) out += " " + name + "=" + format_value(average(name));
    out += "\n";
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::string out = "metric,horizon,value\n";
  const auto names = metrics();
  for (const auto& name : names) {
    for (const auto& row : rows_) {
      auto it = row.values.find(name);
      if (it != row.values.end()) out += name + "," + row.horizon + "," + format_value(it->second) + "\n";
    }
    out += name + ",mean," + format_value(average(name)) + "\n";
  }
  return out;
}

}  // namespace calf
