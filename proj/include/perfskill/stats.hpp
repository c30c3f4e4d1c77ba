#pragma once

#include <span>
#include <vector>

namespace perfskill {

// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
double regularized_incomplete_beta(double x, double a, double b);

// P[F > f] for F ~ F(df1, df2). Throws ParameterError on non-finite f.
double f_upper_tail_p(double f, double df1, double df2);

// Benjamini-Hochberg step-up q-values, in input order.
std::vector<double> benjamini_hochberg(std::span<const double> p_values);

}  // namespace perfskill
