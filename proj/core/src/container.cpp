#include "calf/container.hpp"

#include <bit>
#include <fstream>
#include <limits>

namespace calf {

void Container::add(TensorRecord record) {
  if (numel(record.shape) !=
      std::visit([](const auto& v) { return v.size(); }, record.values)) {
    throw DimensionError("container record '" + record.name + "' has shape " +
                         shape_string(record.shape) + " but a different value count");
  }
  if (record.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw UsageError("container record '" + record.name + "' has too many dimensions");
  }
  auto [it, inserted] = index_.emplace(record.name, records_.size());
  if (!inserted) throw UsageError("duplicate tensor name '" + record.name + "' in container");
  records_.push_back(std::move(record));
}

bool Container::contains(std::string_view name) const { return find(name) != nullptr; }

const TensorRecord* Container::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &records_[it->second];
}

const TensorRecord& Container::at(std::string_view name) const {
  if (const auto* r = find(name)) return *r;
  throw ManifestError("container is missing tensor '" + std::string(name) + "'");
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated container while reading ") + what, pos_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> Container::serialize() const {
  Writer w;
  w.bytes("CALF");
  w.u32(container_version);
  w.u32(static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u8(static_cast<std::uint8_t>(r.dtype()));
    w.u8(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) w.u64(d);
    std::visit(
        [&](const auto& values) {
          for (auto x : values) {
            if constexpr (sizeof(x) == 4) {
              w.u32(std::bit_cast<std::uint32_t>(x));
            } else {
              w.u64(std::bit_cast<std::uint64_t>(x));
            }
          }
        },
        r.values);
  }
  return std::move(w.out);
}

Container Container::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != "CALF") throw FormatError("bad magic, expected \"CALF\"", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u32("version");
  if (version != container_version) {
    throw FormatError("unsupported container version " + std::to_string(version), version_at);
  }
  const auto count = r.u32("tensor count");
  Container c;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t record_at = r.offset();
    const auto name_len = r.u32("name length");
    auto name = r.str(name_len, "tensor name");
    const std::size_t dtype_at = r.offset();
    const auto dtype = r.u8("dtype");
    if (dtype > 1) {
      throw FormatError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype),
                        dtype_at);
    }
    const auto rank = r.u8("rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto d = r.u64("dimension");
      if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
        throw FormatError("tensor '" + name + "' dimensions overflow", r.offset());
      }
      n *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    const std::size_t width = dtype == 0 ? 4 : 8;
    if (n > r.remaining() / width) {
      throw FormatError("truncated data for tensor '" + name + "' (needs " +
                            std::to_string(n * width) + " bytes, " +
                            std::to_string(r.remaining()) + " left)",
                        r.offset());
    }
    TensorRecord rec;
    rec.name = std::move(name);
    rec.shape = std::move(shape);
    if (dtype == 0) {
      std::vector<float> values(n);
      for (auto& x : values) x = std::bit_cast<float>(r.u32("f32 value"));
      rec.values = std::move(values);
    } else {
      std::vector<double> values(n);
      for (auto& x : values) x = std::bit_cast<double>(r.u64("f64 value"));
      rec.values = std::move(values);
    }
    if (c.contains(rec.name)) {
      throw FormatError("duplicate tensor name '" + rec.name + "'", record_at);
    }
    c.add(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last tensor",
                      r.offset());
  }
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

void Container::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

Container Container::load(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return parse(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string(), e);
  }
}

}  // namespace calf
