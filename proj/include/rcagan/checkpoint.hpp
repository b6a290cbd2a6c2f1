#pragma once

// Binary checkpoint file:
//   "RCAG" | u32 version | u32 count | count x { u32 name_len | name | u32 rank | rank x u64 dim | f32 data }
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rcagan/errors.hpp"
#include "rcagan/models.hpp"
#include "rcagan/tensor.hpp"

namespace rcagan {

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'A', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

using CheckpointData = std::vector<NamedTensor>;

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError("corrupt checkpoint " + source_ + ": " + msg + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) fail(std::string("truncated while reading ") + what);
  }

  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointData& data) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  for (const auto& t : data) {
    if (t.values.size() != numel(t.shape)) throw CheckpointError("tensor '" + t.name + "' size does not match shape");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (float f : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline CheckpointData decode_checkpoint(std::string bytes, const std::string& source = "<memory>") {
  detail::ByteReader in(std::move(bytes), source);
  if (in.get_bytes(4, "magic") != std::string(kCheckpointMagic, 4)) in.fail("bad magic (expected RCAG)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    in.fail("unsupported format version " + std::to_string(version) + " (expected " +
            std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  CheckpointData data;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = in.get<std::uint32_t>("name length");
    if (name_len == 0 || name_len > 4096) in.fail("implausible name length " + std::to_string(name_len));
    t.name = in.get_bytes(name_len, "name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) in.fail("implausible rank " + std::to_string(rank) + " for '" + t.name + "'");
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = in.get<std::uint64_t>("dims");
      if (d != 0 && n > in.remaining() / d) in.fail("tensor '" + t.name + "' larger than the file");
      n *= d;
      t.shape.push_back(static_cast<std::size_t>(d));
    }
    if (n * 4 > in.remaining()) in.fail("truncated payload of '" + t.name + "'");
    t.values.resize(n);
    for (auto& f : t.values) f = std::bit_cast<float>(in.get<std::uint32_t>("payload"));
    data.push_back(std::move(t));
  }
  if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " trailing bytes");
  return data;
}

// Written to a sibling temp file first, then renamed over `path`.
inline void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(data);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes), path.string());
}

inline const NamedTensor* find_tensor(const CheckpointData& data, const std::string& name) {
  for (const auto& t : data)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
void append_params(CheckpointData& out, const ModelParams<T>& params, const std::string& prefix) {
  for (const auto& e : params.entries()) {
    NamedTensor t{prefix + e.name, e.tensor.shape(), {}};
    t.values.reserve(e.tensor.size());
    for (T v : e.tensor.data()) t.values.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
}

// Overwrites every tensor of `params` from `prefix + name`; the first
// missing or differently shaped tensor is named in the error.
template <typename T>
void restore_params(ModelParams<T>& params, const CheckpointData& data, const std::string& prefix) {
  for (auto& e : params.entries()) {
    const auto* t = find_tensor(data, prefix + e.name);
    if (!t) {
      throw CheckpointError("checkpoint has no tensor '" + prefix + e.name + "' required by " +
                            to_string(params.architecture()));
    }
    if (t->shape != e.tensor.shape()) {
      throw CheckpointError("tensor '" + prefix + e.name + "' has shape " + to_string(t->shape) + " but " +
                            to_string(params.architecture()) + " expects " + to_string(e.tensor.shape()));
    }
    auto dst = e.tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
  for (const auto& t : data) {
    if (t.name.rfind(prefix, 0) != 0 || t.name.rfind("meta/", 0) == 0) continue;
    if (!params.contains(t.name.substr(prefix.size()))) {
      throw CheckpointError("checkpoint tensor '" + t.name + "' has no counterpart in " +
                            to_string(params.architecture()));
    }
  }
}

}  // namespace rcagan
