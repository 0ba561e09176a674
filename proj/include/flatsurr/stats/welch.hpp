#pragma once

#include <string>
#include <vector>

namespace flatsurr {

enum class Alternative { two_sided, greater, less };

Alternative parse_alternative(const std::string& name);

struct WelchResult {
  double t = 0;
  double df = 0;
  double p = 1;
};

/// Welch two-sample t-test (unequal variances) with Welch-Satterthwaite
/// degrees of freedom. `greater` tests mean(a) > mean(b).
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b,
                         Alternative alternative = Alternative::two_sided);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Student t survival function P(T > t) with `df` degrees of freedom.
double student_t_sf(double t, double df);

double mean(const std::vector<double>& v);
/// Sample variance (n - 1 denominator).
double sample_variance(const std::vector<double>& v);
double sample_stddev(const std::vector<double>& v);

}  // namespace flatsurr
