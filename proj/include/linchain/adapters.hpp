// Copyright 2026 The LinChain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "linchain/matrix.hpp"
#include "linchain/rng.hpp"

namespace linchain {

enum class Method { kLora, kMoslora, kLinchain };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kLora: return "lora";
    case Method::kMoslora: return "moslora";
    case Method::kLinchain: return "linchain";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "lora") return Method::kLora;
  if (s == "moslora") return Method::kMoslora;
  if (s == "linchain") return Method::kLinchain;
  return std::nullopt;
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Declarative adapter description.
///
/// `chain_dims` = [r0, r1, ..., rk]: A is d_in x r0, chain matrix W_i is
/// r_{i-1} x r_i, and B is r_k x d_out. LoRA is the empty chain ([r]),
/// MoSLoRA a single square mixer ([r, r]).
struct AdapterConfig {
  Method method = Method::kLora;
  std::size_t d_in = 1;
  std::size_t d_out = 1;
  std::vector<std::size_t> chain_dims{1};
  double scaling = 1.0;
  std::uint64_t seed = 0;
  /// Diagnostic override: chain matrices start as (rectangular) identity
  /// instead of Kaiming draws. A is still drawn first.
  bool identity_chain = false;

  std::size_t chain_length() const { return chain_dims.empty() ? 0 : chain_dims.size() - 1; }
  std::size_t rank_in() const { return chain_dims.front(); }
  std::size_t rank_out() const { return chain_dims.back(); }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;

  /// Throws ConfigError on a violated invariant.
  void validate() const {
    if (d_in == 0 || d_out == 0) throw ConfigError("adapter: d_in and d_out must be positive");
    if (chain_dims.empty()) throw ConfigError("adapter: chain_dims must not be empty");
    const std::size_t limit = std::min(d_in, d_out);
    for (std::size_t r : chain_dims) {
      if (r == 0) throw ConfigError("adapter: chain_dims entries must be positive");
      if (r > limit) {
        throw ConfigError("adapter: chain dimension " + std::to_string(r) +
                          " exceeds min(d_in, d_out) = " + std::to_string(limit));
      }
    }
    switch (method) {
      case Method::kLora:
        if (chain_dims.size() != 1) throw ConfigError("adapter: lora takes exactly one rank");
        break;
      case Method::kMoslora:
        if (chain_dims.size() != 2 || chain_dims[0] != chain_dims[1])
          throw ConfigError("adapter: moslora takes chain_dims [r, r]");
        break;
      case Method::kLinchain:
        if (chain_dims.size() < 2)
          throw ConfigError("adapter: linchain needs at least one chain matrix");
        break;
    }
    if (!(scaling > 0.0)) throw ConfigError("adapter: scaling must be positive");
  }

  /// True when some rank is not far below min(d_in, d_out); a warning only.
  bool rank_not_small() const {
    const std::size_t limit = std::min(d_in, d_out);
    return std::any_of(chain_dims.begin(), chain_dims.end(),
                       [&](std::size_t r) { return 4 * r > limit; });
  }
};

inline AdapterConfig lora_config(std::size_t d_in, std::size_t d_out, std::size_t r,
                                 std::uint64_t seed = 0) {
  return {Method::kLora, d_in, d_out, {r}, 1.0, seed, false};
}

inline AdapterConfig moslora_config(std::size_t d_in, std::size_t d_out, std::size_t r,
                                    std::uint64_t seed = 0) {
  return {Method::kMoslora, d_in, d_out, {r, r}, 1.0, seed, false};
}

/// Square chain of n matrices r x r.
inline AdapterConfig linchain_config(std::size_t d_in, std::size_t d_out, std::size_t r,
                                     std::size_t n, std::uint64_t seed = 0) {
  return {Method::kLinchain, d_in, d_out, std::vector<std::size_t>(n + 1, r), 1.0, seed, false};
}

/// Frozen base weight plus trainable A, W_1..W_n, B.
struct AdaptedLinear {
  AdapterConfig config;
  Matrix w0;
  Matrix a;
  std::vector<Matrix> chain;
  Matrix b;

  /// Trainable parameter groups in canonical order: A, W1..Wn, B.
  std::vector<std::string> group_names() const {
    std::vector<std::string> names{"A"};
    for (std::size_t i = 0; i < chain.size(); ++i) names.push_back("W" + std::to_string(i + 1));
    names.push_back("B");
    return names;
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> ps{&a};
    for (auto& w : chain) ps.push_back(&w);
    ps.push_back(&b);
    return ps;
  }
  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> ps{&a};
    for (const auto& w : chain) ps.push_back(&w);
    ps.push_back(&b);
    return ps;
  }

  void check_shapes() const {
    const auto& c = config;
    auto expect = [](const Matrix& m, std::size_t r, std::size_t k, const std::string& name) {
      if (m.rows() != r || m.cols() != k) {
        throw ShapeError(name + " has shape " + m.shape() + ", expected " +
                         Matrix::shape_string(r, k));
      }
    };
    expect(w0, c.d_in, c.d_out, "w0");
    expect(a, c.d_in, c.rank_in(), "A");
    if (chain.size() != c.chain_length()) throw ShapeError("chain length does not match config");
    for (std::size_t i = 0; i < chain.size(); ++i)
      expect(chain[i], c.chain_dims[i], c.chain_dims[i + 1], "W" + std::to_string(i + 1));
    expect(b, c.rank_out(), c.d_out, "B");
  }
};

/// Draws A then W_1..W_n (Kaiming uniform) from `rng`; B starts at zero.
inline AdaptedLinear init_adapter(const AdapterConfig& config, const Matrix& w0, Rng& rng) {
  config.validate();
  if (w0.rows() != config.d_in || w0.cols() != config.d_out) {
    throw ShapeError("init_adapter: w0 is " + w0.shape() + " but config expects " +
                     Matrix::shape_string(config.d_in, config.d_out));
  }
  AdaptedLinear ad;
  ad.config = config;
  ad.w0 = w0;
  ad.a = kaiming_uniform(config.d_in, config.rank_in(), rng);
  for (std::size_t i = 0; i < config.chain_length(); ++i) {
    const std::size_t r = config.chain_dims[i];
    const std::size_t c = config.chain_dims[i + 1];
    ad.chain.push_back(config.identity_chain ? Matrix::eye(r, c) : kaiming_uniform(r, c, rng));
  }
  ad.b = Matrix::zeros(config.rank_out(), config.d_out);
  return ad;
}

/// Seeds the generator from `config.seed`.
inline AdaptedLinear init_adapter(const AdapterConfig& config, const Matrix& w0) {
  Rng rng(config.seed);
  return init_adapter(config, w0, rng);
}

/// W_1 * ... * W_n, or the r0 x r0 identity for an empty chain.
inline Matrix chain_product(const AdaptedLinear& ad) {
  if (ad.chain.empty()) return Matrix::identity(ad.config.rank_in());
  return matmul_chain(ad.chain);
}

/// scaling * A * W_1 * ... * W_n * B.
inline Matrix delta_weight(const AdaptedLinear& ad) {
  Matrix acc = ad.a;
  for (const auto& w : ad.chain) acc = matmul(acc, w);
  return matmul(acc, ad.b) * ad.config.scaling;
}

/// x * w0 + scaling * (((x A) W_1) ... W_n) B, never materializing the update.
inline Matrix forward(const AdaptedLinear& ad, const Matrix& x) {
  if (x.cols() != ad.config.d_in) {
    throw ShapeError("forward: input is " + x.shape() + ", adapter expects " +
                     std::to_string(ad.config.d_in) + " columns");
  }
  Matrix h = matmul(x, ad.a);
  for (const auto& w : ad.chain) h = matmul(h, w);
  return matmul(x, ad.w0) + matmul(h, ad.b) * ad.config.scaling;
}

inline Matrix merge(const AdaptedLinear& ad) { return ad.w0 + delta_weight(ad); }

/// Trainable scalars: d_in*r0 + r_k*d_out + sum r_{i-1}*r_i.
inline std::size_t param_count(const AdapterConfig& config) {
  const auto& d = config.chain_dims;
  std::size_t total = config.d_in * d.front() + d.back() * config.d_out;
  for (std::size_t i = 1; i < d.size(); ++i) total += d[i - 1] * d[i];
  return total;
}

/// Scalars held by the chain matrices alone.
inline std::size_t chain_param_count(const AdapterConfig& config) {
  const auto& d = config.chain_dims;
  std::size_t total = 0;
  for (std::size_t i = 1; i < d.size(); ++i) total += d[i - 1] * d[i];
  return total;
}

/// Folds the chain into B: b' = W_1 ... W_n B. Same delta_weight up to rounding.
inline AdaptedLinear collapse_to_lora(const AdaptedLinear& ad) {
  if (ad.config.method == Method::kLora) return ad;
  AdaptedLinear out;
  out.config = ad.config;
  out.config.method = Method::kLora;
  out.config.chain_dims = {ad.config.rank_in()};
  out.config.identity_chain = false;
  out.w0 = ad.w0;
  out.a = ad.a;
  Matrix folded = ad.b;
  for (auto it = ad.chain.rbegin(); it != ad.chain.rend(); ++it) folded = matmul(*it, folded);
  out.b = std::move(folded);
  return out;
}

/// Overwrites every trainable matrix with uniform [-range, range) entries.
/// Test and gradient-check helper; w0 is left alone.
inline void randomize_parameters(AdaptedLinear& ad, double range, Rng& rng) {
  for (Matrix* p : ad.parameters()) *p = uniform_matrix(p->rows(), p->cols(), -range, range, rng);
}

}  // namespace linchain
