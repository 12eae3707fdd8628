#pragma once

#include <cmath>
#include <type_traits>

namespace stabopt::ad {

/// Forward-mode dual number a + b·ε with ε² = 0. Nest Dual<Dual<double>>
/// for second derivatives.
template <class T>
struct Dual {
    T v{};
    T d{};

    Dual() = default;
    Dual(double x) : v(x), d(0.0) {}
    Dual(const T& value, const T& deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
    Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }
};

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};

template <class T> Dual<T> operator+(const Dual<T>& a) { return a; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
    T inv = T(1.0) / b.v;
    return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
}

template <class T> Dual<T> operator+(const Dual<T>& a, double s) { return {a.v + s, a.d}; }
template <class T> Dual<T> operator+(double s, const Dual<T>& a) { return {a.v + s, a.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, double s) { return {a.v - s, a.d}; }
template <class T> Dual<T> operator-(double s, const Dual<T>& a) { return {s - a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, double s) { return {a.v * s, a.d * s}; }
template <class T> Dual<T> operator*(double s, const Dual<T>& a) { return {a.v * s, a.d * s}; }
template <class T> Dual<T> operator/(const Dual<T>& a, double s) { return {a.v / s, a.d / s}; }
template <class T> Dual<T> operator/(double s, const Dual<T>& a) { return Dual<T>(s) / a; }

template <class T> Dual<T> sin(const Dual<T>& a) {
    using std::sin; using std::cos;
    return {sin(a.v), a.d * cos(a.v)};
}
template <class T> Dual<T> cos(const Dual<T>& a) {
    using std::sin; using std::cos;
    return {cos(a.v), -(a.d * sin(a.v))};
}
template <class T> Dual<T> sqrt(const Dual<T>& a) {
    using std::sqrt;
    T r = sqrt(a.v);
    return {r, a.d / (2.0 * r)};
}
template <class T> Dual<T> exp(const Dual<T>& a) {
    using std::exp;
    T e = exp(a.v);
    return {e, a.d * e};
}
template <class T> Dual<T> log(const Dual<T>& a) {
    using std::log;
    return {log(a.v), a.d / a.v};
}

inline double value_of(double x) { return x; }
template <class T> double value_of(const Dual<T>& x) { return value_of(x.v); }

using D1 = Dual<double>;
using D2 = Dual<Dual<double>>;

}  // namespace stabopt::ad
