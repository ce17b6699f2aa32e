#pragma once

#include <cmath>
#include <type_traits>

namespace vdc {

// Forward-mode dual number carrying one tangent direction. Running a
// reverse-mode backward pass on Dual values yields Hessian-vector products
// (forward-over-reverse), which is how unrolled inner loops are
// differentiated.
template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  template <class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
  constexpr Dual(A value) : v(static_cast<T>(value)), d(0) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

  constexpr Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.v;
    d = (d - v * inv * o.d) * inv;
    v *= inv;
    return *this;
  }
  constexpr Dual operator-() const { return {-v, -d}; }
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};
template <class T>
inline constexpr bool is_dual_v = is_dual<T>::value;

template <class T>
struct real_of {
  using type = T;
};
template <class T>
struct real_of<Dual<T>> {
  using type = T;
};
template <class T>
using real_of_t = typename real_of<T>::type;

template <class T>
constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <class T>
constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <class T>
constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <class T>
constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }

template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator+(Dual<T> a, A b) { return a += Dual<T>(b); }
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator+(A a, Dual<T> b) { return b += Dual<T>(a); }
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator-(Dual<T> a, A b) { return a -= Dual<T>(b); }
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator-(A a, const Dual<T>& b) { return Dual<T>(a) - b; }
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator*(Dual<T> a, A b) {
  return {a.v * static_cast<T>(b), a.d * static_cast<T>(b)};
}
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator*(A a, Dual<T> b) {
  return {b.v * static_cast<T>(a), b.d * static_cast<T>(a)};
}
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator/(Dual<T> a, A b) {
  return {a.v / static_cast<T>(b), a.d / static_cast<T>(b)};
}
template <class T, class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
constexpr Dual<T> operator/(A a, const Dual<T>& b) { return Dual<T>(a) / b; }

// Comparisons look only at the primal value; branches taken on them are
// locally constant, so the tangent is still correct almost everywhere.
template <class T>
constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <class T>
constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <class T>
constexpr bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.v == b.v && a.d == b.d; }

template <class T>
inline Dual<T> exp(const Dual<T>& x) {
  const T e = std::exp(x.v);
  return {e, e * x.d};
}
template <class T>
inline Dual<T> log(const Dual<T>& x) { return {std::log(x.v), x.d / x.v}; }
template <class T>
inline Dual<T> sqrt(const Dual<T>& x) {
  const T s = std::sqrt(x.v);
  return {s, x.d / (T(2) * s)};
}

template <class S>
constexpr real_of_t<S> value_of(const S& x) {
  if constexpr (is_dual_v<S>) {
    return x.v;
  } else {
    return x;
  }
}

template <class S>
constexpr real_of_t<S> tangent_of(const S& x) {
  if constexpr (is_dual_v<S>) {
    return x.d;
  } else {
    return real_of_t<S>(0);
  }
}

template <class S>
inline bool is_finite(const S& x) {
  if constexpr (is_dual_v<S>) {
    return std::isfinite(x.v) && std::isfinite(x.d);
  } else {
    return std::isfinite(x);
  }
}

// Generic math entry points so templated code can call exp/log/sqrt on both
// plain and dual scalars without ADL surprises.
template <class S>
inline S sexp(const S& x) {
  using std::exp;
  return exp(x);
}
template <class S>
inline S slog(const S& x) {
  using std::log;
  return log(x);
}
template <class S>
inline S ssqrt(const S& x) {
  using std::sqrt;
  return sqrt(x);
}

}  // namespace vdc
