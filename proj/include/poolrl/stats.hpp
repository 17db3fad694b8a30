#pragma once
// Small statistics toolbox shared by the verification harnesses: compensated
// summation, interval estimates, least-squares fits, and the hypothesis tests
// the experiment verdicts are built on. Distribution CDFs come from
// Boost.Math; everything else is implemented directly and unit-tested against
// known values.

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace poolrl::stats {

// Neumaier compensated summation; order-stable aggregation for reproducible
// parallel reductions (workers accumulate locally, then merge in worker order).
class NeumaierSum {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double mean(const std::vector<double>& xs);
// Population (not sample) standard deviation.
double population_std(const std::vector<double>& xs);
// Unbiased sample variance (n-1 denominator); n >= 2.
double sample_variance(const std::vector<double>& xs);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// 95% Wilson score interval for a binomial proportion.
Interval wilson_interval(std::size_t successes, std::size_t trials,
                         double z = 1.959963984540054);

// Slope of the ordinary least-squares line through (0..n-1, ys).
double least_squares_slope(const std::vector<double>& ys);

struct OriginQuadratic {
  double a = 0.0;   // linear coefficient
  double b = 0.0;   // quadratic penalty: model y = a*u - b*u^2
  double r_squared = 0.0;
};

// Least-squares fit of y = a*u - b*u^2 (through the origin by construction).
// Requires >= 3 distinct abscissae; throws std::invalid_argument otherwise or
// when the normal equations are rank-deficient.
OriginQuadratic fit_origin_quadratic(const std::vector<double>& u,
                                     const std::vector<double>& y);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_two_sided = 1.0;
};

WelchResult welch_t_test(const std::vector<double>& xs,
                         const std::vector<double>& ys);

// Mann-Kendall trend test; returns the one-sided p-value for a positive trend.
double mann_kendall_p_positive(const std::vector<double>& ys);

struct SpearmanResult {
  double rho = 0.0;
  double p_one_sided = 1.0;  // H1: rho > 0
};

// Tie-aware Spearman rank correlation with a Student-t approximation for the
// p-value; n >= 3.
SpearmanResult spearman(const std::vector<double>& xs,
                        const std::vector<double>& ys);

// One-sided Fisher exact test on a 2x2 table: successes a of n_a vs b of n_b.
// Returns P[arm B at least as extreme] under H0, testing H1: rate_b > rate_a.
double fisher_exact_p_greater(int a, int n_a, int b, int n_b);

// P[Binomial(n, 0.5) <= k]; exact, used for sign tests.
double binomial_cdf_half(int k, int n);

double normal_cdf(double z);

// log C(n, k) via lgamma; n, k >= 0, k <= n.
double log_choose(double n, double k);

}  // namespace poolrl::stats
