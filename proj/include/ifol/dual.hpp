#pragma once

#include <cmath>

namespace ifol {

/// Forward-mode dual scalar. Nesting (Dual<Dual<double>>) gives exact second
/// derivatives; the FEM element kernels are templated on the scalar type so
/// one loss expression yields values, residuals and tangents.
template <class S>
struct Dual {
  S v{};  // value
  S d{};  // tangent

  Dual() = default;
  Dual(double value) : v(value) {}
  Dual(S value, S tangent) : v(std::move(value)), d(std::move(tangent)) {}
};

template <class S> Dual<S> operator+(const Dual<S>& a, const Dual<S>& b) { return {a.v + b.v, a.d + b.d}; }
template <class S> Dual<S> operator-(const Dual<S>& a, const Dual<S>& b) { return {a.v - b.v, a.d - b.d}; }
template <class S> Dual<S> operator-(const Dual<S>& a) { return {-a.v, -a.d}; }
template <class S> Dual<S> operator*(const Dual<S>& a, const Dual<S>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class S> Dual<S> operator/(const Dual<S>& a, const Dual<S>& b) {
  S q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

template <class S> Dual<S> operator+(double a, const Dual<S>& b) { return Dual<S>(a) + b; }
template <class S> Dual<S> operator+(const Dual<S>& a, double b) { return a + Dual<S>(b); }
template <class S> Dual<S> operator-(double a, const Dual<S>& b) { return Dual<S>(a) - b; }
template <class S> Dual<S> operator-(const Dual<S>& a, double b) { return a - Dual<S>(b); }
template <class S> Dual<S> operator*(double a, const Dual<S>& b) { return {a * b.v, a * b.d}; }
template <class S> Dual<S> operator*(const Dual<S>& a, double b) { return {a.v * b, a.d * b}; }
template <class S> Dual<S> operator/(const Dual<S>& a, double b) { return {a.v / b, a.d / b}; }
template <class S> Dual<S> operator/(double a, const Dual<S>& b) { return Dual<S>(a) / b; }

using std::cos;
using std::exp;
using std::log;
using std::pow;
using std::sin;
using std::sqrt;

template <class S> Dual<S> sin(const Dual<S>& a) { return {sin(a.v), a.d * cos(a.v)}; }
template <class S> Dual<S> cos(const Dual<S>& a) { return {cos(a.v), -a.d * sin(a.v)}; }
template <class S> Dual<S> exp(const Dual<S>& a) {
  S e = exp(a.v);
  return {e, a.d * e};
}
template <class S> Dual<S> log(const Dual<S>& a) { return {log(a.v), a.d / a.v}; }
template <class S> Dual<S> sqrt(const Dual<S>& a) {
  S r = sqrt(a.v);
  return {r, a.d / (2.0 * r)};
}
template <class S> Dual<S> pow(const Dual<S>& a, double p) {
  S ap = pow(a.v, p);
  return {ap, a.d * (p * pow(a.v, p - 1.0))};
}

/// Scalar value of an arbitrarily nested dual.
inline double scalar_value(double x) { return x; }
template <class S> double scalar_value(const Dual<S>& x) { return scalar_value(x.v); }

/// Strips all derivative information (stop-gradient for dual arithmetic).
template <class T> T detach(const T& x) { return T(scalar_value(x)); }

inline bool is_finite_scalar(double x) { return std::isfinite(x); }
template <class S> bool is_finite_scalar(const Dual<S>& x) { return is_finite_scalar(x.v); }

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;

}  // namespace ifol
