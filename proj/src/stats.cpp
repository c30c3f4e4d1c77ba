#include "perfskill/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "perfskill/error.hpp"

namespace perfskill {

namespace {

// Continued fraction for I_x(a, b); converges quickly for x < (a+1)/(a+b+2).
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double f_upper_tail_p(double f, double df1, double df2) {
  if (!std::isfinite(f)) throw ParameterError("F statistic must be finite");
  if (f < 0.0) throw ParameterError("F statistic must be >= 0");
  if (df1 < 1.0 || df2 < 1.0) throw ParameterError("F degrees of freedom must be >= 1");
  if (f == 0.0) return 1.0;
  // P[F > f] = I_{df2 / (df2 + df1 f)}(df2 / 2, df1 / 2)
  const double x = df2 / (df2 + df1 * f);
  return std::clamp(regularized_incomplete_beta(x, 0.5 * df2, 0.5 * df1), 0.0, 1.0);
}

std::vector<double> benjamini_hochberg(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ParameterError("p-value outside [0,1]: " + std::to_string(p));
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double rank = static_cast<double>(k + 1);
    running = std::min(running, p_values[order[k]] * static_cast<double>(m) / rank);
    // p * m / rank >= p in exact arithmetic; rounding can undercut it at rank m.
    q[order[k]] = std::max(std::min(running, 1.0), p_values[order[k]]);
  }
  return q;
}

}  // namespace perfskill
