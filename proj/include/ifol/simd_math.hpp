#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace ifol {

/// Branch-free sin/cos over arrays. std::sin on doubles defeats
/// auto-vectorization (libm call per element) and dominates network
/// evaluation cost, so the sine layers use this instead: Cody-Waite
/// range reduction plus minimax polynomials, accurate to ~2 ulp for
/// |x| <= 2^30, which covers any finite pre-activation seen in practice.
namespace vecmath {

inline constexpr double kInvPio2 = 6.36619772367581382433e-01;  // 2/pi
inline constexpr double kPio2Hi = 1.57079632673412561417e+00;
inline constexpr double kPio2Md = 6.07710050650619224932e-11;
inline constexpr double kPio2Lo = 2.02226624879595063154e-21;
inline constexpr double kRoundMagic = 6755399441055744.0;  // 1.5 * 2^52

struct SinCos {
  double s;
  double c;
};

inline SinCos sincos_core(double x) {
  // k = nearest integer to x * 2/pi, via the shift trick (round-to-even).
  double kd = x * kInvPio2 + kRoundMagic;
  std::int64_t q;
  __builtin_memcpy(&q, &kd, 8);
  kd -= kRoundMagic;
  double r = x - kd * kPio2Hi;
  r -= kd * kPio2Md;
  r -= kd * kPio2Lo;

  double r2 = r * r;
  double sp = 1.58962301576546568060e-10;
  sp = sp * r2 - 2.50507477628578072866e-8;
  sp = sp * r2 + 2.75573136213857245213e-6;
  sp = sp * r2 - 1.98412698295895385996e-4;
  sp = sp * r2 + 8.33333333332211858878e-3;
  sp = sp * r2 - 1.66666666666666307295e-1;
  double ps = r + r * r2 * sp;

  double cp = -1.13585365213876817300e-11;
  cp = cp * r2 + 2.08757008419747316778e-9;
  cp = cp * r2 - 2.75573141792967388112e-7;
  cp = cp * r2 + 2.48015872888517179954e-5;
  cp = cp * r2 - 1.38888888888730564116e-3;
  cp = cp * r2 + 4.16666666666665929218e-2;
  double pc = 1.0 - 0.5 * r2 + r2 * r2 * cp;

  std::int64_t swap = q & 1;
  std::int64_t neg_s = q & 2;
  std::int64_t neg_c = (q + 1) & 2;
  SinCos out;
  out.s = swap ? pc : ps;
  out.c = swap ? ps : pc;
  if (neg_s) out.s = -out.s;
  if (neg_c) out.c = -out.c;
  return out;
}

/// s[i] = sin(x[i]), c[i] = cos(x[i]).
inline void sincos(const double* x, double* s, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    SinCos sc = sincos_core(x[i]);
    s[i] = sc.s;
    c[i] = sc.c;
  }
}

inline void sin_only(const double* x, double* s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) s[i] = sincos_core(x[i]).s;
}

}  // namespace vecmath
}  // namespace ifol
