#include <gtest/gtest.h>

#include <filesystem>

#include "calf/container.hpp"
#include "support.hpp"

using namespace calf;

namespace {

Container sample() {
  Container c;
  c.add("a", testkit::random_matrix<float>(3, 2, 1));
  c.add("b.double", testkit::random_matrix<double>(1, 4, 2));
  c.add("scalar", Tensor<double>::scalar(0.25));
  return c;
}

std::size_t expect_format_error(std::span<const std::uint8_t> bytes) {
  try {
    Container::parse(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no FormatError";
  return 0;
}

}  // namespace

TEST(Container, HeaderLayout) {
  Container c;
  c.add("x", Tensor<float>({2}, std::vector<float>{1.0f, 2.0f}));
  auto bytes = c.serialize();
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CALF");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // tensor count
  // 12 header + 4 name_len + 1 name + dtype + rank + 8 dim + 8 data
  EXPECT_EQ(bytes.size(), 12u + 4 + 1 + 1 + 1 + 8 + 8);
  EXPECT_EQ(bytes[17], 0);  // f32
  EXPECT_EQ(bytes[18], 1);  // rank
}

TEST(Container, RoundTripIsByteIdentical) {
  auto c = sample();
  auto bytes = c.serialize();
  auto back = Container::parse(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.at("a").dtype(), DType::f32);
  EXPECT_EQ(back.at("b.double").dtype(), DType::f64);
  EXPECT_EQ(back.at("a").to_tensor<float>().to_vector(), c.at("a").to_tensor<float>().to_vector());
  EXPECT_EQ(back.at("scalar").shape, Shape{});
}

TEST(Container, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "calf_container_roundtrip.calf";
  auto c = sample();
  c.save(path);
  auto back = Container::load(path);
  EXPECT_EQ(back.serialize(), c.serialize());
  std::filesystem::remove(path);
}

TEST(Container, DuplicateNameRejected) {
  Container c;
  c.add("x", Tensor<float>({1}));
  EXPECT_THROW(c.add("x", Tensor<float>({1})), UsageError);
}

TEST(Container, MissingTensorIsManifestError) {
  auto c = sample();
  EXPECT_THROW(c.at("nope"), ManifestError);
  EXPECT_EQ(c.find("nope"), nullptr);
}

TEST(Container, EmptyInputRejected) { EXPECT_EQ(expect_format_error({}), 0u); }

TEST(Container, BadMagicAtOffsetZero) {
  auto bytes = sample().serialize();
  bytes[0] = 'X';
  EXPECT_EQ(expect_format_error(bytes), 0u);
}

TEST(Container, BadVersionPositioned) {
  auto bytes = sample().serialize();
  bytes[4] = 2;
  EXPECT_EQ(expect_format_error(bytes), 4u);
}

TEST(Container, EveryTruncationRejected) {
  auto bytes = sample().serialize();
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::span<const std::uint8_t> prefix(bytes.data(), n);
    const auto off = expect_format_error(prefix);
    EXPECT_LE(off, n);
  }
}

TEST(Container, BadDtypePositioned) {
  auto bytes = sample().serialize();
  const std::size_t dtype_at = 12 + 4 + 1;  // first record, name "a"
  bytes[dtype_at] = 7;
  EXPECT_EQ(expect_format_error(bytes), dtype_at);
}

TEST(Container, TrailingBytesRejected) {
  auto bytes = sample().serialize();
  const auto n = bytes.size();
  bytes.push_back(0);
  EXPECT_EQ(expect_format_error(bytes), n);
}

TEST(Container, MissingFileIsFormatError) {
  EXPECT_THROW(Container::load("/nonexistent/dir/x.calf"), FormatError);
}
