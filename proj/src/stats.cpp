#include "poolrl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace poolrl::stats {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  NeumaierSum s;
  for (double x : xs) s.add(x);
  return s.value() / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  double m = mean(xs);
  NeumaierSum s;
  for (double x : xs) s.add((x - m) * (x - m));
  return std::sqrt(s.value() / static_cast<double>(xs.size()));
}

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_variance: need n >= 2");
  double m = mean(xs);
  NeumaierSum s;
  for (double x : xs) s.add((x - m) * (x - m));
  return s.value() / static_cast<double>(xs.size() - 1);
}

Interval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) throw std::invalid_argument("wilson_interval: zero trials");
  double n = static_cast<double>(trials);
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (p + z2 / (2.0 * n)) / denom;
  double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double least_squares_slope(const std::vector<double>& ys) {
  std::size_t n = ys.size();
  if (n < 2) throw std::invalid_argument("least_squares_slope: need >= 2 points");
  double xbar = (static_cast<double>(n) - 1.0) / 2.0;
  double ybar = mean(ys);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = static_cast<double>(i) - xbar;
    num += dx * (ys[i] - ybar);
    den += dx * dx;
  }
  return num / den;
}

OriginQuadratic fit_origin_quadratic(const std::vector<double>& u,
                                     const std::vector<double>& y) {
  if (u.size() != y.size()) throw std::invalid_argument("fit: size mismatch");
  std::vector<double> distinct = u;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3)
    throw std::invalid_argument("fit: need >= 3 distinct abscissae");

  // Normal equations for y = a*u - b*u^2 with design columns (u, -u^2).
  NeumaierSum s2, s3, s4, sy1, sy2;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double u2 = u[i] * u[i];
    s2.add(u2);
    s3.add(u2 * u[i]);
    s4.add(u2 * u2);
    sy1.add(u[i] * y[i]);
    sy2.add(u2 * y[i]);
  }
  double a11 = s2.value(), a12 = -s3.value();
  double a21 = s3.value(), a22 = -s4.value();
  double det = a11 * a22 - a12 * a21;
  double scale = std::max({std::abs(a11 * a22), std::abs(a12 * a21), 1e-300});
  if (std::abs(det) <= 1e-12 * scale)
    throw std::invalid_argument("fit: rank-deficient design");
  double b1 = sy1.value(), b2 = sy2.value();
  double a = (b1 * a22 - a12 * b2) / det;
  double b = (a11 * b2 - b1 * a21) / det;

  double ybar = mean(y);
  NeumaierSum ss_res, ss_tot;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double pred = a * u[i] - b * u[i] * u[i];
    ss_res.add((y[i] - pred) * (y[i] - pred));
    ss_tot.add((y[i] - ybar) * (y[i] - ybar));
  }
  double r2 = ss_tot.value() > 0.0 ? 1.0 - ss_res.value() / ss_tot.value()
                                   : (ss_res.value() == 0.0 ? 1.0 : 0.0);
  return {a, b, r2};
}

WelchResult welch_t_test(const std::vector<double>& xs,
                         const std::vector<double>& ys) {
  if (xs.size() < 2 || ys.size() < 2)
    throw std::invalid_argument("welch_t_test: need n >= 2 per arm");
  double mx = mean(xs), my = mean(ys);
  double vx = sample_variance(xs) / static_cast<double>(xs.size());
  double vy = sample_variance(ys) / static_cast<double>(ys.size());
  double se2 = vx + vy;
  if (se2 == 0.0) {
    // Identical constant arms: no evidence of difference.
    return {0.0, static_cast<double>(xs.size() + ys.size() - 2), 1.0};
  }
  double t = (mx - my) / std::sqrt(se2);
  double dof = se2 * se2 /
               (vx * vx / (static_cast<double>(xs.size()) - 1.0) +
                vy * vy / (static_cast<double>(ys.size()) - 1.0));
  boost::math::students_t dist(dof);
  double p = 2.0 * boost::math::cdf(dist, -std::abs(t));
  return {t, dof, p};
}

double mann_kendall_p_positive(const std::vector<double>& ys) {
  std::size_t n = ys.size();
  if (n < 3) return 1.0;
  long long s = 0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      s += (ys[j] > ys[i]) - (ys[j] < ys[i]);
  // Tie-corrected variance.
  std::vector<double> sorted = ys;
  std::sort(sorted.begin(), sorted.end());
  double var = static_cast<double>(n) * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    double t = static_cast<double>(j - i);
    if (t > 1) var -= t * (t - 1.0) * (2.0 * t + 5.0) / 18.0;
    i = j;
  }
  if (var <= 0.0) return 1.0;
  double z;
  if (s > 0) {
    z = (static_cast<double>(s) - 1.0) / std::sqrt(var);
  } else if (s < 0) {
    z = (static_cast<double>(s) + 1.0) / std::sqrt(var);
  } else {
    z = 0.0;
  }
  return 1.0 - normal_cdf(z);
}

namespace {
std::vector<double> mid_ranks(const std::vector<double>& xs) {
  std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && xs[idx[j]] == xs[idx[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
    i = j;
  }
  return r;
}
}  // namespace

SpearmanResult spearman(const std::vector<double>& xs,
                        const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw std::invalid_argument("spearman: need n >= 3 paired points");
  std::vector<double> rx = mid_ranks(xs), ry = mid_ranks(ys);
  double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, 1.0};
  double rho = sxy / std::sqrt(sxx * syy);
  double n = static_cast<double>(xs.size());
  if (rho >= 1.0) return {1.0, 0.0};
  if (rho <= -1.0) return {-1.0, 1.0};
  double t = rho * std::sqrt((n - 2.0) / (1.0 - rho * rho));
  boost::math::students_t dist(n - 2.0);
  return {rho, 1.0 - boost::math::cdf(dist, t)};
}

double log_choose(double n, double k) {
  if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double fisher_exact_p_greater(int a, int n_a, int b, int n_b) {
  if (a < 0 || b < 0 || a > n_a || b > n_b)
    throw std::invalid_argument("fisher_exact: counts out of range");
  // Hypergeometric tail: condition on total successes, sum over tables with
  // arm-B count >= observed b.
  int total = a + b;
  NeumaierSum p;
  for (int bb = b; bb <= std::min(total, n_b); ++bb) {
    int aa = total - bb;
    if (aa < 0 || aa > n_a) continue;
    double lp = log_choose(n_a, aa) + log_choose(n_b, bb) -
                log_choose(n_a + n_b, total);
    p.add(std::exp(lp));
  }
  return std::min(1.0, p.value());
}

double binomial_cdf_half(int k, int n) {
  if (n < 0) throw std::invalid_argument("binomial_cdf_half: n < 0");
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  NeumaierSum p;
  double ln_half = -std::log(2.0) * n;
  for (int i = 0; i <= k; ++i) p.add(std::exp(log_choose(n, i) + ln_half));
  return std::min(1.0, p.value());
}

double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

}  // namespace poolrl::stats
