// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hkp/error.hpp"
#include "hkp/netgraph.hpp"
#include "hkp/ops.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight archive I/O assumes a little-endian host");

namespace hkp {

// HKWF layout, all integers little-endian:
//   "HKWF" | u32 version | u32 entry_count |
//   entry_count x ( u32 name_len | name bytes (UTF-8) | u32 dtype |
//                   u32 ndims | ndims x u32 dim | payload ) |
//   u32 crc32 (IEEE) of every preceding byte
inline constexpr char kArchiveMagic[4] = {'H', 'K', 'W', 'F'};
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;

struct ArchiveEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct WeightArchive {
  std::uint32_t version = kArchiveVersion;
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  void add(std::string name, std::vector<std::uint32_t> dims,
           std::vector<float> values) {
    entries.push_back({std::move(name), std::move(dims), std::move(values)});
  }
};

inline std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated weight archive");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> write_archive(const WeightArchive& archive) {
  std::vector<std::uint8_t> out(std::begin(kArchiveMagic), std::end(kArchiveMagic));
  detail::put_u32(out, archive.version);
  detail::put_u32(out, static_cast<std::uint32_t>(archive.entries.size()));
  std::set<std::string> seen;
  for (const auto& e : archive.entries) {
    if (!seen.insert(e.name).second)
      throw FormatError("duplicate archive entry name: " + e.name);
    if (e.values.size() != e.element_count())
      throw FormatError("entry " + e.name + " payload does not match its dims");
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_u32(out, kDtypeFloat32);
    detail::put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) detail::put_u32(out, d);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(e.values.data());
    out.insert(out.end(), raw, raw + e.values.size() * sizeof(float));
  }
  detail::put_u32(out, crc32_ieee(out));
  return out;
}

inline WeightArchive read_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0)
    throw FormatError("not a weight archive");
  if (bytes.size() < 16) throw FormatError("truncated weight archive");
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader tail(bytes.last(4));
  if (tail.u32() != crc32_ieee(body))
    throw CorruptionError("weight archive checksum mismatch (corrupted data)");

  detail::ByteReader r(body);
  r.take(4);
  WeightArchive a;
  a.version = r.u32();
  if (a.version != kArchiveVersion)
    throw FormatError("unsupported weight archive version " +
                      std::to_string(a.version));
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    const auto name = r.take(r.u32());
    e.name.assign(name.begin(), name.end());
    if (!seen.insert(e.name).second)
      throw FormatError("duplicate archive entry name: " + e.name);
    if (const auto dtype = r.u32(); dtype != kDtypeFloat32)
      throw FormatError("entry " + e.name + ": unsupported dtype " +
                        std::to_string(dtype));
    const std::uint32_t ndims = r.u32();
    if (ndims > r.remaining() / 4) throw FormatError("truncated weight archive");
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      e.dims.push_back(r.u32());
      elems *= e.dims.back();
      if (elems > r.remaining()) throw FormatError("truncated weight archive");
    }
    const auto payload = r.take(elems * sizeof(float));
    e.values.resize(elems);
    std::memcpy(e.values.data(), payload.data(), payload.size());
    a.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after last archive entry");
  return a;
}

inline void save_archive(const std::string& path, const WeightArchive& archive) {
  const auto bytes = write_archive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write archive " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing archive " + path);
}

inline WeightArchive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return read_archive(bytes);
}

/// One tensor the network expects from an archive.
struct ExpectedEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  bool is_parameter = true;  // false for batch-norm running stats and eps
};

/// Archive names per layer: <layer>.weight, <layer>.bias (head only) and
/// <layer>.bn.{gamma,beta,mean,var,eps}. Depthwise weights are (kh, kw, c);
/// all other kernels are (kh, kw, c_in, c_out).
inline std::vector<ExpectedEntry> expected_entries(const Network& net) {
  std::vector<ExpectedEntry> out;
  for (const auto& st : net.stages)
    for (const auto& l : st.layers) {
      const auto k = static_cast<std::uint32_t>(l.kernel());
      if (l.op == LayerOp::depthwise)
        out.push_back({l.name + ".weight",
                       {k, k, static_cast<std::uint32_t>(l.dw.channels)}});
      else
        out.push_back({l.name + ".weight",
                       {k, k, static_cast<std::uint32_t>(l.conv.c_in),
                        static_cast<std::uint32_t>(l.conv.c_out)}});
      const auto c = static_cast<std::uint32_t>(l.out_channels());
      if (l.has_bias) out.push_back({l.name + ".bias", {c}});
      if (l.has_bn) {
        out.push_back({l.name + ".bn.gamma", {c}});
        out.push_back({l.name + ".bn.beta", {c}});
        out.push_back({l.name + ".bn.mean", {c}, false});
        out.push_back({l.name + ".bn.var", {c}, false});
        out.push_back({l.name + ".bn.eps", {1}, false});
      }
    }
  return out;
}

namespace detail {

inline std::string dims_str(const std::vector<std::uint32_t>& d) {
  std::string s = "(";
  for (std::size_t i = 0; i < d.size(); ++i)
    s += (i ? "," : "") + std::to_string(d[i]);
  return s + ")";
}

}  // namespace detail

/// Returns a copy of net with weights from the archive, batch norms folded
/// into their convolutions.
inline Network bind_weights(const Network& net, const WeightArchive& archive) {
  const auto expected = expected_entries(net);
  std::vector<std::string> missing;
  for (const auto& e : expected) {
    const auto* found = archive.find(e.name);
    if (!found) {
      missing.push_back(e.name);
      continue;
    }
    if (found->dims != e.dims)
      throw ConfigError("entry " + e.name + " has shape " +
                        detail::dims_str(found->dims) + ", expected " +
                        detail::dims_str(e.dims));
  }
  if (!missing.empty()) {
    std::string msg = "weight archive is missing " +
                      std::to_string(missing.size()) + " entries:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }

  auto get = [&](const std::string& n) -> const std::vector<float>& {
    return archive.find(n)->values;
  };
  Network out = net;
  for (auto& st : out.stages)
    for (auto& l : st.layers) {
      if (l.op == LayerOp::depthwise) {
        l.dw.weights = get(l.name + ".weight");
        std::fill(l.dw.bias.begin(), l.dw.bias.end(), 0.0f);
      } else {
        l.conv.weights = get(l.name + ".weight");
        if (l.has_bias)
          l.conv.bias = get(l.name + ".bias");
        else
          std::fill(l.conv.bias.begin(), l.conv.bias.end(), 0.0f);
      }
      if (!l.has_bn) continue;
      BatchNormParams bn;
      bn.gamma = get(l.name + ".bn.gamma");
      bn.beta = get(l.name + ".bn.beta");
      bn.mean = get(l.name + ".bn.mean");
      bn.variance = get(l.name + ".bn.var");
      bn.epsilon = get(l.name + ".bn.eps").front();
      if (l.op == LayerOp::depthwise)
        l.dw = fold_batchnorm(l.dw, bn);
      else
        l.conv = fold_batchnorm(l.conv, bn);
    }
  return out;
}

/// Deterministic He-style random weights with plausible batch-norm
/// statistics, for benchmarks and tests.
inline WeightArchive make_random_archive(const Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) {
    return static_cast<float>(lo + (hi - lo) * (static_cast<double>(rng() >> 11) *
                                                0x1.0p-53));
  };
  WeightArchive a;
  std::map<std::string, int> fan_in;
  for (const auto& st : net.stages)
    for (const auto& l : st.layers)
      fan_in[l.name + ".weight"] =
          l.op == LayerOp::depthwise ? l.kernel() * l.kernel()
                                     : l.kernel() * l.kernel() * l.in_channels();
  for (const auto& e : expected_entries(net)) {
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    std::vector<float> v(n);
    const auto suffix = e.name.substr(e.name.rfind('.') + 1);
    if (suffix == "weight") {
      const double bound = std::sqrt(3.0 / fan_in[e.name]);
      for (auto& x : v) x = uni(-bound, bound);
    } else if (suffix == "gamma") {
      for (auto& x : v) x = uni(0.5, 1.5);
    } else if (suffix == "beta" || suffix == "mean" || suffix == "bias") {
      for (auto& x : v) x = uni(-0.1, 0.1);
    } else if (suffix == "var") {
      for (auto& x : v) x = uni(0.5, 1.5);
    } else if (suffix == "eps") {
      v[0] = 1e-3f;
    }
    a.add(e.name, e.dims, std::move(v));
  }
  return a;
}

/// Archive matching the network layout with all-zero weights and identity
/// batch norms.
inline WeightArchive make_zero_archive(const Network& net) {
  WeightArchive a;
  for (const auto& e : expected_entries(net)) {
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    const auto suffix = e.name.substr(e.name.rfind('.') + 1);
    std::vector<float> v(n, 0.0f);
    if (suffix == "gamma" || suffix == "var") std::fill(v.begin(), v.end(), 1.0f);
    if (suffix == "eps") v[0] = 1e-3f;
    a.add(e.name, e.dims, std::move(v));
  }
  return a;
}

}  // namespace hkp
