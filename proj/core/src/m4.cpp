#include "calf/m4.hpp"

#include <array>
#include <charconv>
#include <numeric>
#include <unordered_map>

#include "calf/container.hpp"
#include "calf/log.hpp"
#include "calf/trainer.hpp"

namespace calf {

namespace {

constexpr std::array<M4SubsetInfo, 1> yearly{{{"Yearly", 6, 1}}};
constexpr std::array<M4SubsetInfo, 1> quarterly{{{"Quarterly", 8, 4}}};
constexpr std::array<M4SubsetInfo, 1> monthly{{{"Monthly", 18, 12}}};
constexpr std::array<M4SubsetInfo, 3> others{{{"Weekly", 13, 1}, {"Daily", 14, 1}, {"Hourly", 48, 24}}};

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool to_double(std::string_view s, double& v) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

std::filesystem::path find_file(const std::filesystem::path& dir, std::string_view name,
                                std::string_view suffix) {
  std::string stem(name);
  const auto exact = dir / (stem + std::string(suffix));
  if (std::filesystem::exists(exact)) return exact;
  for (auto& ch : stem) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  const auto lower = dir / (stem + std::string(suffix));
  if (std::filesystem::exists(lower)) return lower;
  throw UsageError("M4 file " + exact.string() + " not found");
}

std::vector<std::pair<std::string, std::vector<double>>> load_m4_file(const std::filesystem::path& p) {
  auto bytes = read_file_bytes(p);
  return parse_m4_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                      p.string());
}

}  // namespace

M4Frequency parse_m4_frequency(std::string_view name) {
  if (name == "yearly") return M4Frequency::yearly;
  if (name == "quarterly") return M4Frequency::quarterly;
  if (name == "monthly") return M4Frequency::monthly;
  if (name == "others") return M4Frequency::others;
  throw UsageError("unknown M4 frequency '" + std::string(name) +
                   "' (expected yearly, quarterly, monthly or others)");
}

std::string_view to_string(M4Frequency f) noexcept {
  switch (f) {
    case M4Frequency::yearly: return "yearly";
    case M4Frequency::quarterly: return "quarterly";
    case M4Frequency::monthly: return "monthly";
    case M4Frequency::others: return "others";
  }
  return "?";
}

std::span<const M4SubsetInfo> m4_subsets(M4Frequency f) {
  switch (f) {
    case M4Frequency::yearly: return yearly;
    case M4Frequency::quarterly: return quarterly;
    case M4Frequency::monthly: return monthly;
    case M4Frequency::others: return others;
  }
  return {};
}

std::vector<std::size_t> M4Collection::horizons() const {
  std::vector<std::size_t> out;
  for (const auto& s : subsets)
    if (std::find(out.begin(), out.end(), s.horizon) == out.end()) out.push_back(s.horizon);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>>> parse_m4_csv(std::string_view text,
                                                                       const std::string& source) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (strip(line).empty()) continue;

    std::vector<std::string_view> cells;
    std::size_t p = 0;
    while (true) {
      auto comma = line.find(',', p);
      cells.push_back(strip(line.substr(p, comma == line.npos ? line.npos : comma - p)));
      if (comma == line.npos) break;
      p = comma + 1;
    }
    while (!cells.empty() && cells.back().empty()) cells.pop_back();
    double probe = 0.0;
    if (out.empty() && cells.size() > 1 && !to_double(cells[1], probe)) continue;  // header

    std::vector<double> values;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!to_double(cells[c], v)) {
        throw ParseError(source + ": non-numeric value '" + std::string(cells[c]) + "'", line_no,
                         c + 1);
      }
      values.push_back(v);
    }
    out.emplace_back(std::string(cells.empty() ? std::string_view{} : cells[0]), std::move(values));
  }
  return out;
}

M4Collection load_m4(const std::filesystem::path& dir, M4Frequency frequency) {
  M4Collection col;
  col.frequency = frequency;
  for (const auto& info : m4_subsets(frequency)) {
    auto train = load_m4_file(find_file(dir, info.name, "-train.csv"));
    auto test = load_m4_file(find_file(dir, info.name, "-test.csv"));
    std::unordered_map<std::string, std::size_t> test_index;
    for (std::size_t i = 0; i < test.size(); ++i) test_index.emplace(test[i].first, i);

    M4Subset subset;
    subset.name = std::string(info.name);
    subset.horizon = info.horizon;
    subset.input_len = 2 * info.horizon;
    subset.season = info.season;
    for (auto& [id, values] : train) {
      auto it = test_index.find(id);
      if (it == test_index.end()) {
        throw ParseError(subset.name + ": series '" + id + "' has no test row");
      }
      auto& future = test[it->second].second;
      if (future.size() != info.horizon) {
        throw ParseError(subset.name + ": series '" + id + "' has " + std::to_string(future.size()) +
                         " test values, expected " + std::to_string(info.horizon));
      }
      if (values.size() < 3 * info.horizon) {
        ++subset.skipped;
        continue;
      }
      subset.series.push_back({id, std::move(values), std::move(future)});
    }
    if (subset.skipped > 0) {
      warn(subset.name + ": skipped " + std::to_string(subset.skipped) +
           " series shorter than " + std::to_string(3 * info.horizon) + " values");
    }
    col.subsets.push_back(std::move(subset));
  }
  return col;
}

WindowSet m4_training_windows(const M4Subset& subset, std::size_t max_per_series) {
  WindowSet set({subset.input_len, subset.horizon}, 1);
  for (const auto& s : subset.series) {
    std::vector<double> values = s.train;
    const std::size_t count = values.size() - 3 * subset.horizon + 1;
    const std::size_t first = max_per_series && count > max_per_series ? count - max_per_series : 0;
    set.add_segment(std::move(values), first);
  }
  return set;
}

WindowSet m4_validation_windows(const M4Subset& subset) {
  WindowSet set({subset.input_len, subset.horizon}, 1);
  const std::size_t span = 3 * subset.horizon;
  for (const auto& s : subset.series) {
    set.add_segment(std::vector<double>(s.train.end() - static_cast<std::ptrdiff_t>(span), s.train.end()));
  }
  return set;
}

WindowSet m4_test_windows(const M4Subset& subset) {
  WindowSet set({subset.input_len, subset.horizon}, 1);
  for (const auto& s : subset.series) {
    std::vector<double> values(s.train.end() - static_cast<std::ptrdiff_t>(subset.input_len), s.train.end());
    values.insert(values.end(), s.test.begin(), s.test.end());
    set.add_segment(std::move(values));
  }
  return set;
}

M4Reference seasonal_naive_reference(const M4Subset& subset) {
  if (subset.series.empty()) throw UsageError(subset.name + ": no series to score");
  M4Reference ref;
  std::vector<double> pred(subset.horizon);
  for (const auto& s : subset.series) {
    const std::size_t m = subset.season;
    for (std::size_t i = 0; i < subset.horizon; ++i) {
      pred[i] = s.train[s.train.size() - m + (i % m)];
    }
    ref.smape += smape(pred, s.test);
    ref.mase += mase(pred, s.test, s.train, m);
  }
  const double n = static_cast<double>(subset.series.size());
  ref.smape /= n;
  ref.mase /= n;
  return ref;
}

template <std::floating_point T>
M4Scores evaluate_m4(const CalfModel<T>& model, const M4Subset& subset, NormMode norm) {
  if (subset.series.empty()) throw UsageError(subset.name + ": no series to evaluate");
  if (model.config.input_len != subset.input_len || model.config.horizon != subset.horizon) {
    throw ConfigError(subset.name + ": model expects T=" + std::to_string(model.config.input_len) +
                      ", H=" + std::to_string(model.config.horizon) + " but the subset needs T=" +
                      std::to_string(subset.input_len) + ", H=" + std::to_string(subset.horizon));
  }
  auto windows = m4_test_windows(subset);
  M4Scores scores;
  constexpr std::size_t chunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const std::size_t end = std::min(windows.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = make_batch<T>(windows, idx, norm, 1);
    auto pred = denormalize_rows(batch, predict(model, batch.input, 1));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& s = subset.series[idx[r]];
      std::span<const double> p(pred.data() + r * subset.horizon, subset.horizon);
      scores.smape += smape(p, s.test);
      scores.mase += mase(p, s.test, s.train, subset.season);
    }
  }
  scores.series = subset.series.size();
  scores.smape /= static_cast<double>(scores.series);
  scores.mase /= static_cast<double>(scores.series);
  return scores;
}

template M4Scores evaluate_m4<float>(const CalfModel<float>&, const M4Subset&, NormMode);
template M4Scores evaluate_m4<double>(const CalfModel<double>&, const M4Subset&, NormMode);

}  // namespace calf
