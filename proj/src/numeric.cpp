#include "fedglmm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>

#include "fedglmm/errors.hpp"

namespace fedglmm::num {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
}

double normal_two_sided_p(double z) {
  // erfc(|z|/sqrt 2) == 2*(1 - Phi(|z|)); glibc's erfc keeps relative
  // accuracy through the subnormal range (p down past 1e-300 at |z|=38).
  double p = std::erfc(std::fabs(z) / kSqrt2);
  if (p <= 0.0) p = std::numeric_limits<double>::denorm_min();
  if (p > 1.0) p = 1.0;
  return p;
}

double sigmoid(double eta) {
  if (eta >= 0.0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  double e = std::exp(eta);
  return e / (1.0 + e);
}

double log1p_exp(double eta) {
  if (eta > 35.0) return eta + std::exp(-eta);
  if (eta < -35.0) return std::exp(eta);
  return std::log1p(std::exp(eta));
}

namespace {

// Continued fraction for the incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  double qab = a + b;
  double qap = a + 1.0;
  double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double betainc(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ParamError("betainc: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ParamError("betainc: x must be in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw ParamError("student_t_two_sided_p: df must be positive");
  if (!std::isfinite(t)) {
    return std::numeric_limits<double>::denorm_min();
  }
  double x = df / (df + t * t);
  double p = betainc(0.5 * df, 0.5, x);
  if (p <= 0.0) p = std::numeric_limits<double>::denorm_min();
  if (p > 1.0) p = 1.0;
  return p;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t i, size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const size_t n = a.size();
  if (n != b.size() || n < 2) return std::numeric_limits<double>::quiet_NaN();
  double ma = 0.0;
  double mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double da = a[i] - ma;
    double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<double> ra = average_ranks(a);
  std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

double ks_uniform_statistic(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  double stat = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double lo = static_cast<double>(i) / static_cast<double>(n);
    double hi = static_cast<double>(i + 1) / static_cast<double>(n);
    stat = std::max(stat, std::fabs(v[i] - lo));
    stat = std::max(stat, std::fabs(v[i] - hi));
  }
  return stat;
}

std::string format_g17(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

double parse_double(const std::string& token, const char* what) {
  if (token.empty()) throw ParamError(std::string(what) + ": empty numeric token");
  char* end = nullptr;
  double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size()) {
    throw ParamError(std::string(what) + ": bad numeric token '" + token + "'");
  }
  return v;
}

}  // namespace fedglmm::num
