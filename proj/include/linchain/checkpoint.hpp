// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary checkpoint container, all integers little-endian:
//
//   magic      8 bytes  "LCHAINCK"
//   version    u32      1
//   config     u32 length + UTF-8 JSON of the AdapterConfig
//   count      u32      number of matrices
//   per matrix u32 name length + name, u64 rows, u64 cols,
//              rows*cols IEEE-754 binary64 entries, row-major
//
// Adapter checkpoints store "w0", "A", "W1".."Wn", "B" in that order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linchain/adapters.hpp"
#include "linchain/config.hpp"
#include "linchain/matrix.hpp"

namespace linchain {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'L', 'C', 'H', 'A', 'I', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMatrix {
  std::string name;
  Matrix value;
};

struct MatrixContainer {
  AdapterConfig config;
  std::vector<NamedMatrix> matrices;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  template <typename U>
  void uint(U v) {
    std::array<unsigned char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf.data(), buf.size());
  }

  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  void string(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError("checkpoint truncated");
  }

  template <typename U>
  U uint() {
    std::array<unsigned char, sizeof(U)> buf{};
    bytes(buf.data(), buf.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  std::string string(std::size_t limit) {
    const auto n = uint<std::uint32_t>();
    if (n > limit) throw CheckpointError("checkpoint string length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline void save_matrices(const std::filesystem::path& path, const MatrixContainer& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  detail::LeWriter w(out);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.uint(kCheckpointVersion);
  w.string(to_json(c.config).dump());
  w.uint(static_cast<std::uint32_t>(c.matrices.size()));
  for (const auto& m : c.matrices) {
    w.string(m.name);
    w.uint(static_cast<std::uint64_t>(m.value.rows()));
    w.uint(static_cast<std::uint64_t>(m.value.cols()));
    for (double v : m.value.data()) w.f64(v);
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

inline MatrixContainer load_matrices(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  detail::LeReader r(in);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw CheckpointError("bad checkpoint magic in " + path.string());
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  MatrixContainer c;
  const std::string config_text = r.string(file_size);
  try {
    c.config = adapter_config_from_json(Json::parse(config_text), "checkpoint.config");
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config block: ") + e.what());
  }
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedMatrix m;
    m.name = r.string(file_size);
    const auto rows = r.uint<std::uint64_t>();
    const auto cols = r.uint<std::uint64_t>();
    if (cols != 0 && rows > file_size / 8 / cols) throw CheckpointError("checkpoint truncated");
    std::vector<double> data(rows * cols);
    for (double& v : data) v = r.f64();
    m.value = Matrix(rows, cols, std::move(data));
    c.matrices.push_back(std::move(m));
  }
  return c;
}

inline void save_checkpoint(const AdaptedLinear& ad, const std::filesystem::path& path) {
  MatrixContainer c{ad.config, {}};
  const auto names = ad.group_names();
  const auto params = ad.parameters();
  c.matrices.push_back({"w0", ad.w0});
  for (std::size_t i = 0; i < names.size(); ++i) c.matrices.push_back({names[i], *params[i]});
  save_matrices(path, c);
}

inline AdaptedLinear load_checkpoint(const std::filesystem::path& path) {
  MatrixContainer c = load_matrices(path);
  AdaptedLinear ad;
  ad.config = c.config;
  std::vector<std::string> expected{"w0"};
  for (std::size_t i = 0; i < c.config.chain_length() + 2; ++i) {
    if (i == 0) {
      expected.push_back("A");
    } else if (i == c.config.chain_length() + 1) {
      expected.push_back("B");
    } else {
      expected.push_back("W" + std::to_string(i));
    }
  }
  if (c.matrices.size() != expected.size()) throw CheckpointError("checkpoint matrix count does not match its config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (c.matrices[i].name != expected[i])
      throw CheckpointError("checkpoint entry " + std::to_string(i) + " is '" + c.matrices[i].name + "', expected '" +
                            expected[i] + "'");
  }
  ad.w0 = std::move(c.matrices[0].value);
  ad.a = std::move(c.matrices[1].value);
  for (std::size_t i = 0; i < c.config.chain_length(); ++i) ad.chain.push_back(std::move(c.matrices[2 + i].value));
  ad.b = std::move(c.matrices.back().value);
  try {
    ad.check_shapes();
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint shapes: ") + e.what());
  }
  return ad;
}

/// Loads and requires the stored config to equal `expected`.
inline AdaptedLinear load_checkpoint(const std::filesystem::path& path, const AdapterConfig& expected) {
  AdaptedLinear ad = load_checkpoint(path);
  if (!(ad.config == expected)) {
    throw CheckpointError("checkpoint config mismatch: file has " + to_json(ad.config).dump() + ", expected " +
                          to_json(expected).dump());
  }
  return ad;
}

/// Single-matrix export of w0 + delta_weight, tagged with the adapter config.
inline void save_merged(const AdaptedLinear& ad, const std::filesystem::path& path) {
  save_matrices(path, {ad.config, {{"merged", merge(ad)}}});
}

}  // namespace linchain
