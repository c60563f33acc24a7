#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lbv/errors.hpp"

namespace lbv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense n-dimensional array, row-major (last axis fastest).
/// Value semantics throughout: operations return fresh tensors and never
/// alias their inputs.
template <typename Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar> || !std::is_arithmetic_v<Scalar>,
                "Tensor holds floating-point or instrumented scalars");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  static Tensor from_data(Shape shape, std::vector<Scalar> data) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::vector<Scalar>& vec() { return data_; }
  const std::vector<Scalar>& vec() const { return data_; }

  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[flat_index({static_cast<std::int64_t>(ix)...})];
  }
  template <typename... Ix>
  const Scalar& operator()(Ix... ix) const {
    return data_[flat_index({static_cast<std::int64_t>(ix)...})];
  }

  Shape strides() const {
    Shape st(shape_.size());
    std::int64_t acc = 1;
    for (std::size_t i = shape_.size(); i-- > 0;) {
      st[i] = acc;
      acc *= shape_[i];
    }
    return st;
  }

  /// Same data, new shape (element count must match).
  Tensor reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
  }
  Tensor reshaped(Shape shape) && {
    validate_shape(shape);
    if (shape_numel(shape) != size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data_);
    return t;
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
    for (auto d : shape)
      if (d < 1) throw ShapeError("invalid axis length in shape " + shape_str(shape));
  }

  std::size_t flat_index(std::initializer_list<std::int64_t> ix) const {
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (auto i : ix) {
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return static_cast<std::size_t>(flat);
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

/// tensor_new: fresh tensor of the given shape, every element = fill.
template <typename Scalar>
Tensor<Scalar> tensor_new(Shape shape, Scalar fill = Scalar(0)) {
  return Tensor<Scalar>(std::move(shape), fill);
}

/// Reorders axes: output axis a holds input axis order[a].
/// Output element at (i_0,...,i_{r-1}) equals input element at the
/// positions mapped back through the permutation.
template <typename Scalar>
Tensor<Scalar> permute_axes(const Tensor<Scalar>& t, const std::vector<std::size_t>& order) {
  const std::size_t r = t.rank();
  if (order.size() != r) throw ShapeError("permutation length != rank");
  std::vector<bool> seen(r, false);
  for (auto a : order) {
    if (a >= r || seen[a]) throw ShapeError("order is not a permutation of 0..rank-1");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t a = 0; a < r; ++a) out_shape[a] = t.shape()[order[a]];
  Tensor<Scalar> out(out_shape);

  const Shape in_strides = t.strides();
  // Stride of output axis a in the *input* buffer.
  Shape walk(r);
  for (std::size_t a = 0; a < r; ++a) walk[a] = in_strides[order[a]];

  Shape idx(r, 0);
  const Scalar* src = t.data();
  Scalar* dst = out.data();
  const std::int64_t n = t.size();
  std::int64_t src_off = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    dst[flat] = src[src_off];
    // Odometer over the output index, tracking the input offset.
    for (std::size_t a = r; a-- > 0;) {
      ++idx[a];
      src_off += walk[a];
      if (idx[a] < out_shape[a]) break;
      src_off -= walk[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  return out;
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t a = 0; a < order.size(); ++a) inv[order[a]] = a;
  return inv;
}

// ---------------------------------------------------------------------------
// Tensor file format (LBVT), little-endian:
//   "LBVT" | u16 version = 1 | u8 dtype (1=float32, 2=float64) | u8 rank |
//   rank x u32 axis lengths | raw row-major payload.
// No compression, no padding.
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "LBVT serialization assumes a little-endian host");

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError(std::string("truncated file while reading ") + what);
  return v;
}

template <typename Scalar>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<Scalar, float>) return 1;
  else if constexpr (std::is_same_v<Scalar, double>) return 2;
  else static_assert(sizeof(Scalar) == 0, "unsupported dtype");
}

}  // namespace detail

inline constexpr std::uint16_t kTensorFormatVersion = 1;

template <typename Scalar>
void save_tensor(const Tensor<Scalar>& t, std::ostream& os) {
  os.write("LBVT", 4);
  detail::write_raw(os, kTensorFormatVersion);
  detail::write_raw(os, detail::dtype_code<Scalar>());
  detail::write_raw(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) detail::write_raw(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * t.size()));
}

template <typename Scalar>
void save_tensor(const Tensor<Scalar>& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for write: " + path);
  save_tensor(t, os);
  if (!os) throw Error("write failed: " + path);
}

template <typename Scalar>
Tensor<Scalar> load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LBVT", 4) != 0) throw ParseError("bad tensor magic");
  const auto version = detail::read_raw<std::uint16_t>(is, "version");
  if (version != kTensorFormatVersion)
    throw ParseError("unsupported tensor format version " + std::to_string(version));
  const auto dtype = detail::read_raw<std::uint8_t>(is, "dtype");
  if (dtype != 1 && dtype != 2)
    throw ParseError("unknown dtype code " + std::to_string(dtype));
  if (dtype != detail::dtype_code<Scalar>())
    throw ParseError("tensor dtype mismatch: file has code " + std::to_string(dtype));
  const auto rank = detail::read_raw<std::uint8_t>(is, "rank");
  if (rank == 0) throw ParseError("tensor rank 0 in file");
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::read_raw<std::uint32_t>(is, "axis length");
    if (d < 1) throw ParseError("axis length 0 in file");
  }
  std::vector<Scalar> data(static_cast<std::size_t>(shape_numel(shape)));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * data.size()));
  if (static_cast<std::size_t>(is.gcount()) != sizeof(Scalar) * data.size())
    throw ParseError("payload shorter than product(shape) * dtype size");
  return Tensor<Scalar>::from_data(std::move(shape), std::move(data));
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for read: " + path);
  return load_tensor<Scalar>(is);
}

/// Dtype code stored in an LBVT file without loading the payload.
inline std::uint8_t peek_tensor_dtype(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LBVT", 4) != 0) throw ParseError("bad tensor magic");
  detail::read_raw<std::uint16_t>(is, "version");
  return detail::read_raw<std::uint8_t>(is, "dtype");
}

// Small numeric helpers used across modules and tests.

template <typename Scalar>
Scalar max_abs(const Tensor<Scalar>& t) {
  Scalar m = 0;
  for (std::int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

/// Max elementwise deviation of `a` from `b`, normalized by the largest
/// magnitude in `b` (falls back to absolute deviation near an all-zero `b`).
template <typename Scalar>
double max_rel_deviation(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_shape(b)) throw ShapeError("deviation of mismatched shapes");
  const double scale = std::max(static_cast<double>(max_abs(b)), 1e-30);
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / scale);
  return worst;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

}  // namespace lbv
