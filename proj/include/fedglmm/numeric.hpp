#pragma once

// Shared numerical routines: distribution tails, rank statistics, and the
// text formatting used by every writer.

#include <span>
#include <string>
#include <vector>

namespace fedglmm::num {

// Two-sided normal tail probability 2*(1 - Phi(|z|)), evaluated through the
// complementary error function so extreme scores keep relative accuracy
// instead of cancelling to zero. Stays nonzero out to |z| ~ 38.
double normal_two_sided_p(double z);

// Logistic sigmoid, overflow safe for any finite argument.
double sigmoid(double eta);

// log(1 + exp(eta)) without overflow for large |eta|.
double log1p_exp(double eta);

// Regularized incomplete beta function I_x(a, b) via the Lentz continued
// fraction. Requires a > 0, b > 0, x in [0, 1].
double betainc(double a, double b, double x);

// Two-sided Student-t p-value with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

// Spearman rank correlation with average ranks on ties. Returns NaN for
// fewer than two points or zero-variance ranks.
double spearman(std::span<const double> a, std::span<const double> b);

// Pearson correlation. NaN if either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Kolmogorov-Smirnov statistic against Uniform(0,1).
double ks_uniform_statistic(std::span<const double> values);

// Average ranks (1-based, ties averaged).
std::vector<double> average_ranks(std::span<const double> values);

// Format a double with 17 significant digits ("%.17g"), the precision used
// by every TSV writer; round-trips binary64 exactly.
std::string format_g17(double value);

// strtod with full-string validation; throws ParamError on trailing junk.
double parse_double(const std::string& token, const char* what);

}  // namespace fedglmm::num
