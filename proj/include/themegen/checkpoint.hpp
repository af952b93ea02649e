#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "themegen/errors.hpp"
#include "themegen/params.hpp"

namespace themegen {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian and written verbatim");

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint truncated");
  return v;
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  if (len > (1u << 20)) throw DataError("checkpoint corrupt: unreasonable string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("checkpoint truncated");
  return s;
}

template <class Scalar>
void write_tensor(std::ostream& out, const std::string& name, const Mat<Scalar>& m) {
  write_string(out, name);
  write_pod(out, static_cast<std::uint8_t>(sizeof(Scalar)));  // 4 = f32, 8 = f64
  write_pod(out, static_cast<std::uint32_t>(m.rows()));
  write_pod(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
}

// Payload is column-major, matching in-memory layout.
template <class Scalar>
std::pair<std::string, Mat<Scalar>> read_tensor(std::istream& in) {
  std::string name = read_string(in);
  const auto dtype = read_pod<std::uint8_t>(in);
  const auto rows = read_pod<std::uint32_t>(in);
  const auto cols = read_pod<std::uint32_t>(in);
  if (rows > (1u << 24) || cols > (1u << 24)) {
    throw DataError("checkpoint corrupt: unreasonable tensor shape for " + name);
  }
  Mat<Scalar> m(rows, cols);
  auto read_as = [&](auto tag) {
    using Stored = decltype(tag);
    std::vector<Stored> buf(static_cast<std::size_t>(m.size()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(sizeof(Stored) * buf.size()));
    if (!in) throw DataError("checkpoint truncated inside tensor " + name);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      m.data()[k] = static_cast<Scalar>(buf[static_cast<std::size_t>(k)]);
    }
  };
  if (dtype == 4) read_as(float{});
  else if (dtype == 8) read_as(double{});
  else throw DataError("checkpoint corrupt: unknown dtype tag for " + name);
  return {std::move(name), std::move(m)};
}

}  // namespace detail

// Container layout: magic, version, config hash, optimizer step, metadata
// strings, then one record per tensor (parameter values plus .adam_m/.adam_v
// moment buffers).
template <class Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<Scalar>& store,
                     std::uint64_t config_hash,
                     const std::map<std::string, std::string>& meta = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  detail::write_pod(out, detail::kCheckpointVersion);
  detail::write_pod(out, config_hash);
  detail::write_pod(out, static_cast<std::int64_t>(store.step));
  detail::write_pod(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    detail::write_string(out, k);
    detail::write_string(out, v);
  }
  detail::write_pod(out, static_cast<std::uint32_t>(store.entries.size() * 3));
  for (const auto& [name, e] : store.entries) {
    detail::write_tensor(out, name, e.value);
    detail::write_tensor(out, name + ".adam_m", e.adam_m);
    detail::write_tensor(out, name + ".adam_v", e.adam_v);
  }
  if (!out) throw DataError("failed while writing checkpoint: " + path.string());
}

// Loads a store saved with save_checkpoint.  A nonzero expected_config_hash
// must match the stored one; tensors stored in the other precision are
// converted element-wise (f32 -> f64 is exact).
template <class Scalar>
ParamStore<Scalar> load_checkpoint(const std::filesystem::path& path,
                                   std::uint64_t expected_config_hash,
                                   std::map<std::string, std::string>* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[sizeof detail::kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, detail::kCheckpointMagic)) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != detail::kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored_hash = detail::read_pod<std::uint64_t>(in);
  if (expected_config_hash != 0 && stored_hash != expected_config_hash) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx, expected %016llx",
                  static_cast<unsigned long long>(stored_hash),
                  static_cast<unsigned long long>(expected_config_hash));
    throw DataError(std::string("checkpoint config hash mismatch: ") + buf);
  }
  const auto step = detail::read_pod<std::int64_t>(in);
  const auto meta_count = detail::read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = detail::read_string(in);
    std::string v = detail::read_string(in);
    if (meta) (*meta)[k] = v;
  }

  ParamStore<Scalar> store;
  store.step = step;
  const auto tensor_count = detail::read_pod<std::uint32_t>(in);
  std::map<std::string, Mat<Scalar>> tensors;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    auto [name, m] = detail::read_tensor<Scalar>(in);
    if (!tensors.emplace(std::move(name), std::move(m)).second) {
      throw DataError("checkpoint corrupt: duplicate tensor");
    }
  }

  for (auto& [name, m] : tensors) {
    if (name.ends_with(".adam_m") || name.ends_with(".adam_v")) continue;
    auto& value = store.create(name, std::move(m));
    auto& e = store.entry(name);
    auto moment = [&](const std::string& suffix, Mat<Scalar>& slot) {
      auto it = tensors.find(name + suffix);
      if (it == tensors.end()) return;  // fresh optimizer state
      if (it->second.rows() != value.rows() || it->second.cols() != value.cols()) {
        throw DataError("checkpoint corrupt: moment shape mismatch for " + name);
      }
      slot = std::move(it->second);
    };
    moment(".adam_m", e.adam_m);
    moment(".adam_v", e.adam_v);
  }
  return store;
}

}  // namespace themegen
