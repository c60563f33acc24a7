#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>

namespace lbv {

/// Scalar arithmetic tally for instrumented kernel runs.
struct OpCounts {
  std::uint64_t adds = 0;
  std::uint64_t subs = 0;
  std::uint64_t muls = 0;
  std::uint64_t divs = 0;
  std::uint64_t compares = 0;

  OpCounts& operator+=(const OpCounts& o) {
    adds += o.adds;
    subs += o.subs;
    muls += o.muls;
    divs += o.divs;
    compares += o.compares;
    return *this;
  }
};

inline std::ostream& operator<<(std::ostream& os, const OpCounts& c) {
  return os << "{adds: " << c.adds << ", subs: " << c.subs << ", muls: " << c.muls
            << ", divs: " << c.divs << ", compares: " << c.compares << "}";
}

namespace detail {
inline thread_local OpCounts* active_counts = nullptr;
}

/// Routes Counting<T> arithmetic into `sink` for the scope's lifetime.
class CountScope {
 public:
  explicit CountScope(OpCounts& sink) : prev_(detail::active_counts) {
    detail::active_counts = &sink;
  }
  ~CountScope() { detail::active_counts = prev_; }
  CountScope(const CountScope&) = delete;
  CountScope& operator=(const CountScope&) = delete;

 private:
  OpCounts* prev_;
};

/// Drop-in scalar that tallies every arithmetic operation it participates in.
/// Running a kernel templated on Scalar with Counting<double> *measures* its
/// operation mix rather than trusting an analytic formula.
template <typename T>
struct Counting {
  T v{};

  Counting() = default;
  Counting(T x) : v(x) {}  // NOLINT: implicit by design, mirrors a raw scalar

  static void bump(std::uint64_t OpCounts::* field) {
    if (detail::active_counts) ++((*detail::active_counts).*field);
  }

  friend Counting operator+(Counting a, Counting b) { bump(&OpCounts::adds); return {a.v + b.v}; }
  friend Counting operator-(Counting a, Counting b) { bump(&OpCounts::subs); return {a.v - b.v}; }
  friend Counting operator*(Counting a, Counting b) { bump(&OpCounts::muls); return {a.v * b.v}; }
  friend Counting operator/(Counting a, Counting b) { bump(&OpCounts::divs); return {a.v / b.v}; }
  Counting operator-() const { bump(&OpCounts::subs); return {-v}; }

  Counting& operator+=(Counting o) { bump(&OpCounts::adds); v += o.v; return *this; }
  Counting& operator-=(Counting o) { bump(&OpCounts::subs); v -= o.v; return *this; }
  Counting& operator*=(Counting o) { bump(&OpCounts::muls); v *= o.v; return *this; }
  Counting& operator/=(Counting o) { bump(&OpCounts::divs); v /= o.v; return *this; }

  friend bool operator<(Counting a, Counting b) { bump(&OpCounts::compares); return a.v < b.v; }
  friend bool operator>(Counting a, Counting b) { bump(&OpCounts::compares); return a.v > b.v; }
  friend bool operator<=(Counting a, Counting b) { bump(&OpCounts::compares); return a.v <= b.v; }
  friend bool operator>=(Counting a, Counting b) { bump(&OpCounts::compares); return a.v >= b.v; }
  friend bool operator==(Counting a, Counting b) { bump(&OpCounts::compares); return a.v == b.v; }

  explicit operator double() const { return static_cast<double>(v); }
};

template <typename T>
Counting<T> sqrt(Counting<T> x) {
  return {std::sqrt(x.v)};
}
template <typename T>
Counting<T> exp(Counting<T> x) {
  return {std::exp(x.v)};
}
template <typename T>
Counting<T> log(Counting<T> x) {
  return {std::log(x.v)};
}
template <typename T>
Counting<T> abs(Counting<T> x) {
  return {std::abs(x.v)};
}

template <typename T>
struct is_counting : std::false_type {};
template <typename T>
struct is_counting<Counting<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_counting_v = is_counting<T>::value;

}  // namespace lbv
