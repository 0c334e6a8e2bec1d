#include "calf/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "calf/container.hpp"
#include "calf/error.hpp"

namespace calf {

SeriesDataset SeriesDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + std::to_string(rows()) + " rows");
  }
  SeriesDataset out;
  out.channels = channels;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
                    values.begin() + static_cast<std::ptrdiff_t>(end * cols()));
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    cells.push_back(trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

bool timestamp_before(std::string_view a, std::string_view b) {
  double x = 0.0;
  double y = 0.0;
  if (parse_number(a, x) && parse_number(b, y)) return x < y;
  return a < b;
}

SeriesDataset parse_csv(std::string_view text, const std::string& source) {
  SeriesDataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_cells(line);
    if (header) {
      if (cells.size() < 2) {
        throw FormatError(source + ": header needs a timestamp column and at least one channel");
      }
      for (std::size_t c = 1; c < cells.size(); ++c) ds.channels.emplace_back(cells[c]);
      header = false;
      continue;
    }
    if (cells.size() != ds.channels.size() + 1) {
      throw ParseError(source + ": expected " + std::to_string(ds.channels.size() + 1) +
                           " cells, found " + std::to_string(cells.size()),
                       line_no, 0);
    }
    if (!ds.timestamps.empty() && !timestamp_before(ds.timestamps.back(), cells[0])) {
      throw ParseError(source + ": timestamp '" + std::string(cells[0]) +
                           "' does not increase", line_no, 1);
    }
    ds.timestamps.emplace_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_number(cells[c], v)) {
        throw ParseError(source + ": non-numeric cell '" + std::string(cells[c]) + "'", line_no,
                         c + 1);
      }
      ds.values.push_back(v);
    }
  }
  if (header) throw FormatError(source + ": empty file");
  if (ds.timestamps.empty()) throw FormatError(source + ": no data rows after the header");
  return ds;
}

SeriesDataset load_csv(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                   path.string());
}

void save_csv(const std::filesystem::path& path, const SeriesDataset& dataset) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out.precision(17);
  out << "date";
  for (const auto& c : dataset.channels) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < dataset.rows(); ++r) {
    out << dataset.timestamps[r];
    for (std::size_t c = 0; c < dataset.cols(); ++c) out << ',' << dataset.at(r, c);
    out << '\n';
  }
}

SplitMode parse_split_mode(std::string_view name) {
  if (name == "ratio") return SplitMode::ratio;
  if (name == "ett_hour") return SplitMode::ett_hour;
  if (name == "ett_minute") return SplitMode::ett_minute;
  throw UsageError("unknown split mode '" + std::string(name) +
                   "' (expected ratio, ett_hour or ett_minute)");
}

std::string_view to_string(SplitMode mode) noexcept {
  switch (mode) {
    case SplitMode::ratio: return "ratio";
    case SplitMode::ett_hour: return "ett_hour";
    case SplitMode::ett_minute: return "ett_minute";
  }
  return "?";
}

void SplitSpec::validate() const {
  if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0)) {
    throw ConfigError("few-shot fraction must lie in (0, 1], got " + std::to_string(few_shot_fraction));
  }
  if (mode == SplitMode::ratio &&
      !(train_ratio > 0.0 && val_ratio >= 0.0 && train_ratio + val_ratio < 1.0)) {
    throw ConfigError("split ratios must satisfy train > 0, val >= 0, train + val < 1");
  }
}

DatasetSplits split(const SeriesDataset& dataset, const SplitSpec& spec, std::size_t min_rows) {
  spec.validate();
  const std::size_t n = dataset.rows();
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  if (spec.mode == SplitMode::ratio) {
    n_train = static_cast<std::size_t>(std::floor(spec.train_ratio * static_cast<double>(n)));
    n_val = static_cast<std::size_t>(std::floor(spec.val_ratio * static_cast<double>(n)));
    n_test = n - n_train - n_val;
  } else {
    const std::size_t per_month = spec.mode == SplitMode::ett_hour ? 30 * 24 : 30 * 24 * 4;
    n_train = 12 * per_month;
    n_val = 4 * per_month;
    n_test = 4 * per_month;
    if (n < n_train + n_val + n_test) {
      throw CapacityError("ETT split needs " + std::to_string(n_train + n_val + n_test) +
                          " rows, dataset has " + std::to_string(n));
    }
  }
  const std::size_t few = spec.few_shot_fraction >= 1.0
                              ? n_train
                              : static_cast<std::size_t>(
                                    std::floor(spec.few_shot_fraction * static_cast<double>(n_train)));
  auto require = [&](const char* what, std::size_t rows) {
    if (rows < min_rows) {
      throw CapacityError(std::string(what) + " split has " + std::to_string(rows) +
                          " rows but at least " + std::to_string(min_rows) +
                          " are required for one window (dataset has " + std::to_string(n) +
                          " rows)");
    }
  };
  require("training", few);
  require("validation", n_val);
  require("test", n_test);

  DatasetSplits out;
  out.full_train_rows = n_train;
  out.train = dataset.slice(0, few);
  out.val = dataset.slice(n_train, n_train + n_val);
  out.test = dataset.slice(n_train + n_val, n_train + n_val + n_test);
  return out;
}

void WindowSpec::validate() const {
  if (input_len == 0 || horizon == 0) throw ConfigError("input length and horizon must be >= 1");
}

std::size_t window_count(std::size_t rows, const WindowSpec& spec) {
  spec.validate();
  if (rows < spec.span()) {
    throw CapacityError("series of " + std::to_string(rows) + " rows is shorter than T + H = " +
                        std::to_string(spec.span()));
  }
  return rows - spec.span() + 1;
}

WindowSet::WindowSet(WindowSpec spec, std::size_t channels) : spec_(spec), channels_(channels) {
  spec_.validate();
  if (channels == 0) throw UsageError("window set needs at least one channel");
}

void WindowSet::add_segment(std::vector<double> values, std::size_t first_start) {
  if (values.size() % channels_ != 0) {
    throw DimensionError(std::to_string(values.size()) + " values are not rows of " +
                         std::to_string(channels_) + " channels");
  }
  const std::size_t rows = values.size() / channels_;
  const std::size_t count = window_count(rows, spec_);
  const std::size_t seg = segments_.size();
  segments_.push_back({std::move(values), rows});
  for (std::size_t s = first_start; s < count; ++s) index_.push_back({seg, s});
}

void WindowSet::add_segment(const SeriesDataset& dataset) {
  if (dataset.cols() != channels_) {
    throw DimensionError("dataset has " + std::to_string(dataset.cols()) + " channels, expected " +
                         std::to_string(channels_));
  }
  add_segment(dataset.values);
}

void WindowSet::copy_rows(const Entry& e, std::size_t offset, std::size_t count,
                          std::span<double> out) const {
  if (out.size() != count * channels_) {
    throw DimensionError("window buffer holds " + std::to_string(out.size()) + " values, needs " +
                         std::to_string(count * channels_));
  }
  const auto& seg = segments_[e.segment];
  const auto* src = seg.values.data() + (e.start + offset) * channels_;
  std::copy(src, src + count * channels_, out.begin());
}

void WindowSet::input(std::size_t i, std::span<double> out) const {
  copy_rows(index_.at(i), 0, spec_.input_len, out);
}

void WindowSet::target(std::size_t i, std::span<double> out) const {
  copy_rows(index_.at(i), spec_.input_len, spec_.horizon, out);
}

WindowSet windows(const SeriesDataset& view, const WindowSpec& spec) {
  WindowSet set(spec, view.cols());
  set.add_segment(view);
  return set;
}

NormMode parse_norm_mode(std::string_view name) {
  if (name == "instance") return NormMode::instance;
  if (name == "none") return NormMode::none;
  throw UsageError("unknown normalization '" + std::string(name) + "' (expected instance or none)");
}

std::string_view to_string(NormMode mode) noexcept {
  return mode == NormMode::instance ? "instance" : "none";
}

NormalizationState instance_normalize(std::span<double> window, std::size_t channels, double eps) {
  if (channels == 0 || window.size() % channels != 0) {
    throw DimensionError("window of " + std::to_string(window.size()) +
                         " values is not a multiple of " + std::to_string(channels) + " channels");
  }
  const std::size_t rows = window.size() / channels;
  NormalizationState st;
  st.mean.assign(channels, 0.0);
  st.stddev.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += window[r * channels + c];
    mu /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = window[r * channels + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    const double sd = std::sqrt(var + eps);
    for (std::size_t r = 0; r < rows; ++r) {
      window[r * channels + c] = (window[r * channels + c] - mu) / sd;
    }
    st.mean[c] = mu;
    st.stddev[c] = sd;
  }
  return st;
}

void denormalize(std::span<double> block, std::size_t channels, const NormalizationState& state) {
  if (state.mean.size() != channels || block.size() % channels != 0) {
    throw DimensionError("denormalize: block does not match " + std::to_string(channels) +
                         " channels");
  }
  const std::size_t rows = block.size() / channels;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c)
      block[r * channels + c] = block[r * channels + c] * state.stddev[c] + state.mean[c];
}

SeriesDataset synthetic_series(const SyntheticSpec& spec) {
  if (spec.rows == 0 || spec.channels == 0) throw UsageError("synthetic series needs rows and channels");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  SeriesDataset ds;
  const double periods[] = {24.0, 12.0, 48.0, 168.0, 8.0};
  std::vector<double> period(spec.channels), ph(spec.channels), trend(spec.channels);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    ds.channels.push_back("ch" + std::to_string(c));
    period[c] = periods[c % std::size(periods)];
    ph[c] = phase(rng);
    trend[c] = 0.0005 * static_cast<double>(c + 1);
  }
  for (std::size_t t = 0; t < spec.rows; ++t) {
    ds.timestamps.push_back(std::to_string(t));
    const double x = static_cast<double>(t);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const double w = 2.0 * std::numbers::pi / period[c];
      ds.values.push_back(std::sin(w * x + ph[c]) + 0.5 * std::sin(2.0 * w * x) + trend[c] * x +
                          noise(rng));
    }
  }
  return ds;
}

}  // namespace calf
