#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lbv/errors.hpp"
#include "lbv/rng.hpp"
#include "lbv/tensor.hpp"

namespace lbv {

inline constexpr std::uint16_t kBankFormatVersion = 1;

/// The fixed, non-trainable 3x3x3 ternary filters shared by every LBV layer.
/// Entries live in {-1, 0, +1}; the bank is immutable after creation and is
/// never touched by an optimizer.
class TernaryFilterBank {
 public:
  static constexpr std::array<std::int64_t, 3> kFilterShape = {3, 3, 3};
  static constexpr std::int64_t kFilterVolume = 27;

  TernaryFilterBank() = default;

  TernaryFilterBank(std::int64_t count, float sparsity, std::uint64_t seed,
                    std::vector<std::int8_t> entries)
      : count_(count), sparsity_(sparsity), seed_(seed), entries_(std::move(entries)) {
    if (count_ < 1) throw ValidationError("bank count must be >= 1");
    if (static_cast<std::int64_t>(entries_.size()) != count_ * kFilterVolume)
      throw ValidationError("bank entry count does not match filter count");
    for (auto e : entries_)
      if (e < -1 || e > 1) throw ValidationError("bank entry outside {-1,0,1}");
  }

  std::int64_t count() const { return count_; }
  float sparsity() const { return sparsity_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::int8_t>& entries() const { return entries_; }

  std::int8_t entry(std::int64_t filter, std::int64_t flat) const {
    return entries_[static_cast<std::size_t>(filter * kFilterVolume + flat)];
  }

  /// Content hash over parameters and entries; equal ids mean bit-identical
  /// banks. Used to enforce bank sharing across LBV layers and checkpoints.
  std::string id() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    mix(&count_, sizeof(count_));
    mix(&sparsity_, sizeof(sparsity_));
    mix(&seed_, sizeof(seed_));
    mix(entries_.data(), entries_.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }

  double nonzero_fraction() const {
    std::int64_t nz = 0;
    for (auto e : entries_) nz += (e != 0);
    return static_cast<double>(nz) / static_cast<double>(entries_.size());
  }

 private:
  std::int64_t count_ = 0;
  float sparsity_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::int8_t> entries_;
};

/// Samples a bank: each entry is independently non-zero with probability
/// `sparsity`, and +1 or -1 with equal probability given non-zero.
inline TernaryFilterBank generate_bank(std::int64_t count, float sparsity, std::uint64_t seed) {
  if (count < 1) throw ValidationError("bank count must be >= 1");
  if (!(sparsity >= 0.0f && sparsity <= 1.0f))
    throw ValidationError("sparsity must lie in [0,1]");
  Pcg32 rng(seed, /*stream=*/0x17);
  std::vector<std::int8_t> entries(static_cast<std::size_t>(count) * 27);
  for (auto& e : entries) {
    if (rng.uniform() < static_cast<double>(sparsity))
      e = rng.uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1};
    else
      e = 0;
  }
  return TernaryFilterBank(count, sparsity, seed, std::move(entries));
}

/// Bank embedded as dense float weights of shape [count, 3, 3, 3]; only the
/// dense-reference equivalence path ever materializes this.
template <typename Scalar = float>
Tensor<Scalar> bank_as_dense_weights(const TernaryFilterBank& bank) {
  Tensor<Scalar> w({bank.count(), 3, 3, 3});
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<Scalar>(bank.entries()[static_cast<std::size_t>(i)]);
  return w;
}

/// Dense weights tiled across `in_channels`, shape [count, in, 3, 3, 3]:
/// the conventional-conv equivalent of applying one ternary filter to every
/// input channel and summing.
template <typename Scalar = float>
Tensor<Scalar> bank_as_dense_weights(const TernaryFilterBank& bank, std::int64_t in_channels) {
  Tensor<Scalar> w({bank.count(), in_channels, 3, 3, 3});
  std::int64_t i = 0;
  for (std::int64_t f = 0; f < bank.count(); ++f)
    for (std::int64_t c = 0; c < in_channels; ++c)
      for (std::int64_t k = 0; k < 27; ++k)
        w[i++] = static_cast<Scalar>(bank.entry(f, k));
  return w;
}

// Bank file: "LBVB" | u16 version | u32 count | f32 sparsity | u64 seed |
// count x 27 int8 entries.

inline void save_bank(const TernaryFilterBank& bank, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for write: " + path);
  os.write("LBVB", 4);
  detail::write_raw(os, kBankFormatVersion);
  detail::write_raw(os, static_cast<std::uint32_t>(bank.count()));
  detail::write_raw(os, bank.sparsity());
  detail::write_raw(os, bank.seed());
  os.write(reinterpret_cast<const char*>(bank.entries().data()),
           static_cast<std::streamsize>(bank.entries().size()));
  if (!os) throw Error("write failed: " + path);
}

inline TernaryFilterBank load_bank(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LBVB", 4) != 0) throw ParseError("bad bank magic");
  const auto version = detail::read_raw<std::uint16_t>(is, "bank version");
  if (version != kBankFormatVersion)
    throw ParseError("unsupported bank format version " + std::to_string(version));
  const auto count = detail::read_raw<std::uint32_t>(is, "bank count");
  const auto sparsity = detail::read_raw<float>(is, "bank sparsity");
  const auto seed = detail::read_raw<std::uint64_t>(is, "bank seed");
  std::vector<std::int8_t> entries(static_cast<std::size_t>(count) * 27);
  is.read(reinterpret_cast<char*>(entries.data()),
          static_cast<std::streamsize>(entries.size()));
  if (static_cast<std::size_t>(is.gcount()) != entries.size())
    throw ParseError("bank payload truncated");
  return TernaryFilterBank(count, sparsity, seed, std::move(entries));
}

inline TernaryFilterBank load_bank(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for read: " + path);
  return load_bank(is);
}

}  // namespace lbv
