#pragma once

#include <cmath>

namespace icm {

// Truncated second-order Taylor arithmetic in two independent variables
// (t, d). Carries value, both first derivatives and the full Hessian, so one
// evaluation of an energy density yields psi, grad psi and the exact tangent.
struct Dual2 {
    double v = 0;    // value
    double t = 0;    // d/dt
    double d = 0;    // d/dd
    double tt = 0;   // d2/dt2
    double td = 0;   // d2/dtdd
    double dd = 0;   // d2/dd2

    Dual2() = default;
    Dual2(double value) : v(value) {}
    Dual2(double value, double dt, double ddv, double dtt, double dtd, double ddd)
        : v(value), t(dt), d(ddv), tt(dtt), td(dtd), dd(ddd) {}

    static Dual2 var_t(double value) { return {value, 1, 0, 0, 0, 0}; }
    static Dual2 var_d(double value) { return {value, 0, 1, 0, 0, 0}; }
};

inline Dual2 operator+(const Dual2& a, const Dual2& b) {
    return {a.v + b.v, a.t + b.t, a.d + b.d, a.tt + b.tt, a.td + b.td, a.dd + b.dd};
}
inline Dual2 operator-(const Dual2& a, const Dual2& b) {
    return {a.v - b.v, a.t - b.t, a.d - b.d, a.tt - b.tt, a.td - b.td, a.dd - b.dd};
}
inline Dual2 operator-(const Dual2& a) {
    return {-a.v, -a.t, -a.d, -a.tt, -a.td, -a.dd};
}
inline Dual2 operator*(const Dual2& a, const Dual2& b) {
    return {a.v * b.v,
            a.t * b.v + a.v * b.t,
            a.d * b.v + a.v * b.d,
            a.tt * b.v + 2.0 * a.t * b.t + a.v * b.tt,
            a.td * b.v + a.t * b.d + a.d * b.t + a.v * b.td,
            a.dd * b.v + 2.0 * a.d * b.d + a.v * b.dd};
}

// f(g) via chain rule with scalar f', f''.
inline Dual2 chain(const Dual2& g, double f, double f1, double f2) {
    return {f,
            f1 * g.t,
            f1 * g.d,
            f2 * g.t * g.t + f1 * g.tt,
            f2 * g.t * g.d + f1 * g.td,
            f2 * g.d * g.d + f1 * g.dd};
}

inline Dual2 inv(const Dual2& a) {
    const double iv = 1.0 / a.v;
    return chain(a, iv, -iv * iv, 2.0 * iv * iv * iv);
}
inline Dual2 operator/(const Dual2& a, const Dual2& b) { return a * inv(b); }
inline Dual2 operator+(const Dual2& a, double c) { return a + Dual2(c); }
inline Dual2 operator+(double c, const Dual2& a) { return a + Dual2(c); }
inline Dual2 operator-(const Dual2& a, double c) { return a - Dual2(c); }
inline Dual2 operator-(double c, const Dual2& a) { return Dual2(c) - a; }
inline Dual2 operator*(const Dual2& a, double c) {
    return {a.v * c, a.t * c, a.d * c, a.tt * c, a.td * c, a.dd * c};
}
inline Dual2 operator*(double c, const Dual2& a) { return a * c; }
inline Dual2 operator/(const Dual2& a, double c) { return a * (1.0 / c); }
inline Dual2 operator/(double c, const Dual2& a) { return inv(a) * c; }

inline Dual2 log(const Dual2& a) {
    const double iv = 1.0 / a.v;
    return chain(a, std::log(a.v), iv, -iv * iv);
}
inline Dual2 exp(const Dual2& a) {
    const double e = std::exp(a.v);
    return chain(a, e, e, e);
}
inline Dual2 sqrt(const Dual2& a) {
    const double s = std::sqrt(a.v);
    return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}
inline Dual2 pow(const Dual2& a, double p) {
    const double f = std::pow(a.v, p);
    const double f1 = p * std::pow(a.v, p - 1.0);
    const double f2 = p * (p - 1.0) * std::pow(a.v, p - 2.0);
    return chain(a, f, f1, f2);
}

// Integer power with 0^0 = 1, usable at basis-term boundaries.
inline Dual2 pow_int(const Dual2& a, int n) {
    if (n == 0) return Dual2(1.0);
    Dual2 r = a;
    for (int i = 1; i < n; ++i) r = r * a;
    return r;
}

}  // namespace icm
