#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "calf/data.hpp"
#include "calf/m4.hpp"
#include "support.hpp"

using namespace calf;

namespace {

SeriesDataset ramp(std::size_t rows, std::size_t channels = 2) {
  SeriesDataset ds;
  for (std::size_t c = 0; c < channels; ++c) ds.channels.push_back("c" + std::to_string(c));
  for (std::size_t r = 0; r < rows; ++r) {
    ds.timestamps.push_back(std::to_string(r));
    for (std::size_t c = 0; c < channels; ++c) ds.values.push_back(double(r) + 0.5 * double(c));
  }
  return ds;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Csv, FixtureRoundTripsExactly) {
  const std::string text =
      "date,OT,HUFL\n"
      "2016-07-01 00:00:00,1.5,-0.25\n"
      "2016-07-01 01:00:00,0.1,3e-7\n"
      "2016-07-01 02:00:00,12345.678901234567,7\n";
  auto ds = parse_csv(text);
  ASSERT_EQ(ds.rows(), 3u);
  ASSERT_EQ(ds.cols(), 2u);
  EXPECT_EQ(ds.channels, (std::vector<std::string>{"OT", "HUFL"}));
  EXPECT_EQ(ds.at(1, 0), 0.1);
  EXPECT_EQ(ds.at(1, 1), 3e-7);
  EXPECT_EQ(ds.at(2, 0), 12345.678901234567);

  auto dir = temp_dir("calf_csv_rt");
  save_csv(dir / "a.csv", ds);
  auto back = load_csv(dir / "a.csv");
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.timestamps, ds.timestamps);
  EXPECT_EQ(back.channels, ds.channels);
  std::filesystem::remove_all(dir);
}

TEST(Csv, HeaderOnlyAndEmptyAreFormatErrors) {
  EXPECT_THROW(parse_csv("date,a,b\n"), FormatError);
  EXPECT_THROW(parse_csv(""), FormatError);
}

TEST(Csv, NonNumericCellPositioned) {
  try {
    parse_csv("date,a,b\n1,2,3\n2,4,oops\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_EQ(e.column(), 3u);
  }
}

TEST(Csv, RaggedRowAndNonIncreasingTimestamps) {
  EXPECT_THROW(parse_csv("date,a\n1,2,3\n"), ParseError);
  EXPECT_THROW(parse_csv("date,a\n2,1\n1,1\n"), ParseError);
  EXPECT_THROW(parse_csv("date,a\n1,1\n1,1\n"), ParseError);
  EXPECT_NO_THROW(parse_csv("date,a\n9,1\n10,1\n"));  // numeric, not lexicographic
  EXPECT_TRUE(timestamp_before("2016-07-01 00:00", "2016-07-01 01:00"));
}

TEST(Split, RatioDisjointAndCovering) {
  auto ds = ramp(1000);
  auto s = split(ds, SplitSpec{}, 10);
  EXPECT_EQ(s.train.rows(), 700u);
  EXPECT_EQ(s.val.rows(), 100u);
  EXPECT_EQ(s.test.rows(), 200u);
  EXPECT_EQ(s.full_train_rows, 700u);
  EXPECT_EQ(s.train.rows() + s.val.rows() + s.test.rows(), ds.rows());
  EXPECT_TRUE(timestamp_before(s.train.timestamps.back(), s.val.timestamps.front()));
  EXPECT_TRUE(timestamp_before(s.val.timestamps.back(), s.test.timestamps.front()));
  std::vector<double> joined = s.train.values;
  joined.insert(joined.end(), s.val.values.begin(), s.val.values.end());
  joined.insert(joined.end(), s.test.values.begin(), s.test.values.end());
  EXPECT_EQ(joined, ds.values);
}

TEST(Split, FewShotPrefix) {
  auto ds = ramp(10000 / 7 + 1);  // n_train = floor(0.7 * 1429) = 1000
  SplitSpec spec;
  spec.few_shot_fraction = 0.1;
  auto s = split(ds, spec, 10);
  EXPECT_EQ(s.full_train_rows, 1000u);
  EXPECT_EQ(s.train.rows(), 100u);
  EXPECT_EQ(s.train.timestamps.front(), ds.timestamps.front());
  auto full = split(ds, SplitSpec{}, 10);
  EXPECT_EQ(full.train.rows(), 1000u);
  EXPECT_TRUE(std::equal(s.train.values.begin(), s.train.values.end(), full.train.values.begin()));
  EXPECT_EQ(s.val.values, full.val.values);
}

TEST(Split, EttHourBoundaries) {
  auto ds = ramp(17420);
  SplitSpec spec;
  spec.mode = SplitMode::ett_hour;
  auto s = split(ds, spec, 120);
  EXPECT_EQ(s.train.rows(), 8640u);
  EXPECT_EQ(s.val.rows(), 2880u);
  EXPECT_EQ(s.test.rows(), 2880u);
  EXPECT_THROW(split(ramp(1000), spec, 120), CapacityError);
}

TEST(Split, TooShortStatesRequiredLength) {
  try {
    split(ramp(50), SplitSpec{}, 40);
    FAIL();
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("40"), std::string::npos);
  }
  SplitSpec bad;
  bad.few_shot_fraction = 0.0;
  EXPECT_THROW(split(ramp(50), bad, 1), ConfigError);
}

TEST(Windows, CountsAndBoundary) {
  EXPECT_EQ(window_count(100, {96, 4}), 1u);
  EXPECT_THROW(window_count(99, {96, 4}), CapacityError);
  auto ds = ramp(12, 1);
  auto w = windows(ds, {8, 4});
  ASSERT_EQ(w.size(), 1u);
  std::vector<double> tgt(4);
  w.target(0, tgt);
  EXPECT_EQ(tgt, (std::vector<double>{8, 9, 10, 11}));
  EXPECT_THROW(windows(ramp(5), {4, 2}), CapacityError);
}

TEST(Windows, SlicesReconstructView) {
  auto ds = ramp(30, 2);
  WindowSpec spec{5, 3};
  auto w = windows(ds, spec);
  ASSERT_EQ(w.size(), 30u - 8 + 1);
  std::vector<double> in(10), out(6);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.input(i, in);
    w.target(i, out);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(in[r * 2 + c], ds.at(i + r, c));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out[r * 2 + c], ds.at(i + 5 + r, c));
  }
}

TEST(Normalize, ConstantChannelBecomesZero) {
  std::vector<double> w{3, 1, 3, 2, 3, 4};  // 3 rows x 2 channels, channel 0 constant
  auto state = instance_normalize(w, 2);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_EQ(w[4], 0.0);
  EXPECT_NEAR(state.stddev[0], std::sqrt(norm_epsilon), 1e-15);
}

TEST(Normalize, MomentsAndRoundTrip) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(5.0, 3.0);
  std::vector<double> w(96 * 3);
  for (auto& v : w) v = n(rng);
  const auto original = w;
  auto state = instance_normalize(w, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < 96; ++r) mean += w[r * 3 + c];
    mean /= 96.0;
    for (std::size_t r = 0; r < 96; ++r) sq += (w[r * 3 + c] - mean) * (w[r * 3 + c] - mean);
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(std::sqrt(sq / 96.0), 1.0, 1e-4);
  }
  denormalize(w, 3, state);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], original[i], 1e-5);
}

TEST(Synthetic, DeterministicShape) {
  SyntheticSpec s;
  s.rows = 300;
  auto a = synthetic_series(s);
  auto b = synthetic_series(s);
  EXPECT_EQ(a.rows(), 300u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_EQ(a.values, b.values);
  s.seed = 8;
  EXPECT_NE(synthetic_series(s).values, a.values);
}

TEST(M4, HorizonsAndInputLengths) {
  EXPECT_EQ(m4_subsets(M4Frequency::monthly)[0].horizon, 18u);
  for (auto f : {M4Frequency::yearly, M4Frequency::quarterly, M4Frequency::monthly, M4Frequency::others})
    for (const auto& s : m4_subsets(f)) {
      EXPECT_GE(s.horizon, 6u);
      EXPECT_LE(s.horizon, 48u);
    }
  EXPECT_THROW(parse_m4_frequency("minutely"), UsageError);
}

TEST(M4, LoadsFixtureSkipsShortSeriesAndBuildsWindows) {
  auto dir = temp_dir("calf_m4_fixture");
  std::string train = "\"V1\",\"V2\",\"V3\"\n";
  std::string test = "\"V1\",\"V2\"\n";
  auto series = [](std::size_t n, double base) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += "," + std::to_string(base + 10.0 * std::sin(double(i)));
    return s;
  };
  train += "\"M1\"" + series(60, 100) + ",,,\n";   // long enough (>= 54)
  train += "\"M2\"" + series(54, 200) + "\n";      // exactly 3H
  train += "\"M3\"" + series(40, 300) + "\n";      // too short
  for (auto id : {"M1", "M2", "M3"}) test += std::string("\"") + id + "\"" + series(18, 150) + "\n";
  write_text(dir / "Monthly-train.csv", train);
  write_text(dir / "Monthly-test.csv", test);

  testkit::WarningCapture warnings;
  auto col = load_m4(dir, M4Frequency::monthly);
  ASSERT_EQ(col.subsets.size(), 1u);
  const auto& m = col.subsets[0];
  EXPECT_EQ(m.horizon, 18u);
  EXPECT_EQ(m.input_len, 36u);
  EXPECT_EQ(m.season, 12u);
  EXPECT_EQ(m.series.size(), 2u);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_EQ(warnings.messages.size(), 1u);
  EXPECT_EQ(m.series[0].train.size(), 60u);  // trailing empty cells dropped

  EXPECT_EQ(m4_training_windows(m).size(), (60u - 54 + 1) + 1);
  EXPECT_EQ(m4_training_windows(m, 3).size(), 3u + 1);
  EXPECT_EQ(m4_validation_windows(m).size(), 2u);
  auto tw = m4_test_windows(m);
  ASSERT_EQ(tw.size(), 2u);
  std::vector<double> in(36), out(18);
  tw.input(0, in);
  tw.target(0, out);
  EXPECT_EQ(in.back(), m.series[0].train.back());
  EXPECT_EQ(out, m.series[0].test);

  auto ref = seasonal_naive_reference(m);
  EXPECT_TRUE(ref.approximate);
  EXPECT_GT(ref.smape, 0.0);
  std::filesystem::remove_all(dir);
}

TEST(M4, MissingFileAndBadValue) {
  auto dir = temp_dir("calf_m4_missing");
  EXPECT_THROW(load_m4(dir, M4Frequency::yearly), UsageError);
  EXPECT_THROW(parse_m4_csv("id,v\nY1,1,x\n", "t"), ParseError);
  std::filesystem::remove_all(dir);
}
