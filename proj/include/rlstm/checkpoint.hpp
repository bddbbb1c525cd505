#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"

namespace rlstm {

// Layout (all integers and floats little-endian):
//   magic "RLSTMCKP", u32 version
//   manifest: u32 layers, u32 residual_interval, u32 hidden, u64 vocab_size,
//             u8 precision_bytes, u8 dim_fix, u8 reverse_source, u64 vocab_hash,
//             u32 tensor_count
//   per tensor: u16 name_length, name bytes, u64 rows, u64 cols, rows*cols floats
inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'L', 'S', 'T', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointManifest {
  StackConfig config;
  std::size_t vocab_size = 0;
  std::size_t precision_bytes = 0;
  bool reverse_source = false;
  std::uint64_t vocab_hash = 0;
  std::size_t tensor_count = 0;
};

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U value) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::array<unsigned char, sizeof(U)> raw{};
    std::memcpy(raw.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  void put_bytes(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <class U>
  U get(const std::string& field) {
    if (pos_ + sizeof(U) > bytes_.size()) throw CheckpointError("checkpoint truncated while reading " + field);
    std::array<unsigned char, sizeof(U)> raw{};
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(U);
    U value;
    std::memcpy(&value, raw.data(), sizeof(U));
    return value;
  }
  std::string get_string(std::size_t n, const std::string& field) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated while reading " + field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

struct TensorSlot {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

template <class Params, class F>
void for_each_shaped_tensor(Params& p, F&& f) {
  auto visit_stack = [&](auto& stack, const char* prefix) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
      auto& layer = stack[l];
      const std::string base = std::string(prefix) + "." + std::to_string(l + 1) + ".";
      for (std::size_t g = 0; g < kGateCount; ++g) {
        auto& w = layer.input_weights[g];
        f(TensorSlot{base + "wx_" + kGateNames[g], w.rows(), w.cols()}, w.values());
      }
      for (std::size_t g = 0; g < kGateCount; ++g) {
        auto& w = layer.recurrent_weights[g];
        f(TensorSlot{base + "wh_" + kGateNames[g], w.rows(), w.cols()}, w.values());
      }
      for (std::size_t g = 0; g < kGateCount; ++g) {
        auto& b = layer.bias[g];
        f(TensorSlot{base + "b_" + kGateNames[g], b.size(), 1}, std::span(b));
      }
    }
  };
  visit_stack(p.encoder, "encoder");
  visit_stack(p.decoder, "decoder");
  f(TensorSlot{"projection", p.projection.rows(), p.projection.cols()}, p.projection.values());
  f(TensorSlot{"projection_bias", p.projection_bias.size(), 1}, std::span(p.projection_bias));
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline CheckpointManifest read_manifest(ByteReader& r) {
  const std::string magic = r.get_string(kCheckpointMagic.size(), "magic");
  if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
    throw CheckpointError("checkpoint field 'magic': not a model checkpoint");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint field 'version': unsupported version " + std::to_string(version));
  }
  CheckpointManifest m;
  m.config.num_layers = r.get<std::uint32_t>("layers");
  m.config.residual_interval = r.get<std::uint32_t>("residual_interval");
  m.config.hidden = r.get<std::uint32_t>("hidden");
  m.vocab_size = r.get<std::uint64_t>("vocab_size");
  m.precision_bytes = r.get<std::uint8_t>("precision");
  const auto dim_fix = r.get<std::uint8_t>("dim_fix");
  if (dim_fix > 1) throw CheckpointError("checkpoint field 'dim_fix': invalid value " + std::to_string(dim_fix));
  m.config.dim_fix = dim_fix == 0 ? DimFix::pad_input_with_zeros : DimFix::clip_hidden_to_input;
  m.reverse_source = r.get<std::uint8_t>("reverse_source") != 0;
  m.vocab_hash = r.get<std::uint64_t>("vocab_hash");
  m.tensor_count = r.get<std::uint32_t>("tensor_count");
  if (m.precision_bytes != 4 && m.precision_bytes != 8) {
    throw CheckpointError("checkpoint field 'precision': invalid width " + std::to_string(m.precision_bytes));
  }
  return m;
}

}  // namespace detail

/// Serialises the model. Writes to a temporary file first and renames it into
/// place, so an existing checkpoint at `path` is never left half-written.
template <std::floating_point T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path) {
  params.validate();
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(params.config.num_layers));
  w.put(static_cast<std::uint32_t>(params.config.residual_interval));
  w.put(static_cast<std::uint32_t>(params.config.hidden));
  w.put(static_cast<std::uint64_t>(params.vocab_size));
  w.put(static_cast<std::uint8_t>(sizeof(T)));
  w.put(static_cast<std::uint8_t>(params.config.dim_fix == DimFix::pad_input_with_zeros ? 0 : 1));
  w.put(static_cast<std::uint8_t>(params.reverse_source ? 1 : 0));
  w.put(params.vocab_hash);
  std::uint32_t count = 0;
  detail::for_each_shaped_tensor(params, [&](const detail::TensorSlot&, auto) { ++count; });
  w.put(count);
  detail::for_each_shaped_tensor(params, [&](const detail::TensorSlot& slot, auto values) {
    w.put(static_cast<std::uint16_t>(slot.name.size()));
    w.put_bytes(slot.name.data(), slot.name.size());
    w.put(static_cast<std::uint64_t>(slot.rows));
    w.put(static_cast<std::uint64_t>(slot.cols));
    for (T v : values) w.put(v);
  });

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path));
  return detail::read_manifest(r);
}

/// Loads a checkpoint written by save_checkpoint. When `expected_vocab_hash` is
/// given, a different stored hash is an error.
template <std::floating_point T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path,
                               std::optional<std::uint64_t> expected_vocab_hash = std::nullopt) {
  detail::ByteReader r(detail::read_file_bytes(path));
  const CheckpointManifest m = detail::read_manifest(r);
  if (m.precision_bytes != sizeof(T)) {
    throw CheckpointError("checkpoint field 'precision': stored " + std::to_string(m.precision_bytes * 8) +
                          "-bit, requested " + std::to_string(sizeof(T) * 8) + "-bit");
  }
  if (expected_vocab_hash && *expected_vocab_hash != m.vocab_hash) {
    throw CheckpointError("checkpoint field 'vocab_hash': checkpoint was built for a different vocabulary");
  }
  ModelParams<T> params;
  try {
    params = ModelParams<T>::zeros(m.config, m.vocab_size);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint manifest is inconsistent: ") + e.what());
  }
  params.reverse_source = m.reverse_source;
  params.vocab_hash = m.vocab_hash;
  std::size_t expected = 0;
  detail::for_each_shaped_tensor(params, [&](const detail::TensorSlot&, auto) { ++expected; });
  if (m.tensor_count != expected) {
    throw CheckpointError("checkpoint field 'tensor_count': expected " + std::to_string(expected) + ", found " +
                          std::to_string(m.tensor_count));
  }
  detail::for_each_shaped_tensor(params, [&](const detail::TensorSlot& slot, std::span<T> values) {
    const auto name_len = r.get<std::uint16_t>(slot.name + " name length");
    const std::string name = r.get_string(name_len, slot.name + " name");
    if (name != slot.name) throw CheckpointError("checkpoint tensor '" + name + "': expected '" + slot.name + "'");
    const auto rows = r.get<std::uint64_t>(slot.name + " rows");
    const auto cols = r.get<std::uint64_t>(slot.name + " cols");
    if (rows != slot.rows || cols != slot.cols) {
      throw CheckpointError("checkpoint tensor '" + slot.name + "': shape (" + std::to_string(rows) + "x" +
                            std::to_string(cols) + ") does not match the manifest");
    }
    for (T& v : values) v = r.get<T>(slot.name + " data");
  });
  if (!r.at_end()) {
    throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return params;
}

}  // namespace rlstm
