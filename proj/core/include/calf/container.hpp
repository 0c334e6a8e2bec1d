#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "calf/tensor.hpp"

namespace calf {

// Weight-container layout (all integers little-endian):
//   "CALF" | u32 version (=1) | u32 tensor_count
//   per tensor: u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64)
//               | u8 rank | rank x u64 dims | raw row-major values
inline constexpr std::uint32_t container_version = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <std::floating_point T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

struct TensorRecord {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> values;

  DType dtype() const noexcept {
    return std::holds_alternative<std::vector<float>>(values) ? DType::f32 : DType::f64;
  }

  template <std::floating_point T>
  static TensorRecord from_tensor(std::string name, const Tensor<T>& t) {
    TensorRecord r;
    r.name = std::move(name);
    r.shape = t.shape();
    r.values = t.to_vector();
    return r;
  }

  /// Converts to the requested precision (f32 -> f64 is exact).
  template <std::floating_point T>
  Tensor<T> to_tensor() const {
    return std::visit(
        [&](const auto& v) { return Tensor<T>(shape, std::vector<T>(v.begin(), v.end())); },
        values);
  }
};

class Container {
 public:
  /// Appends a record; duplicate names are a usage error.
  void add(TensorRecord record);

  template <std::floating_point T>
  void add(std::string name, const Tensor<T>& t) {
    add(TensorRecord::from_tensor(std::move(name), t));
  }

  bool contains(std::string_view name) const;
  const TensorRecord* find(std::string_view name) const;
  /// Throws ManifestError naming the tensor when absent.
  const TensorRecord& at(std::string_view name) const;

  const std::vector<TensorRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  std::vector<std::uint8_t> serialize() const;
  /// Throws FormatError carrying the byte offset of the first defect.
  static Container parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  std::vector<TensorRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace calf
