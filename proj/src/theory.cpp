#include "poolrl/theory.hpp"

#include <cmath>
#include <stdexcept>

namespace poolrl::theory {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double expansion_x(double g, double sigma) {
  if (g == 0.0) throw std::invalid_argument("expansion requires g != 0");
  double x = (sigma / g) * (sigma / g);
  if (x > kExpansionCap)
    throw std::domain_error("x = (sigma/g)^2 exceeds the expansion validity cap");
  return x;
}

}  // namespace

double effective_rollout(double p, int n) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("effective_rollout: p outside [0,1]");
  if (n < 1) throw std::invalid_argument("effective_rollout: N must be >= 1");
  if (p == 0.0 || p == 1.0) return 0.0;
  double nd = static_cast<double>(n);
  return nd * (1.0 - std::pow(p, nd) - std::pow(1.0 - p, nd));
}

double efficiency_quadratic(double eta, double n, const EfficiencyModel& model) {
  if (eta <= 0.0) throw std::invalid_argument("efficiency_quadratic: eta must be > 0");
  if (n < 1.0) throw std::invalid_argument("efficiency_quadratic: N must be >= 1");
  double u = eta / n;
  return u * model.mu_p - u * u * model.mu_n;
}

double optimal_eta_over_n(const EfficiencyModel& model) {
  if (model.mu_n <= 0.0)
    throw std::domain_error(
        "no finite optimum; efficiency increases monotonically in eta/N");
  return model.mu_p / (2.0 * model.mu_n);
}

EfficiencyModel sgd_efficiency_model(const Eigen::VectorXd& g,
                                     const Eigen::MatrixXd& h,
                                     const Eigen::MatrixXd& sigma) {
  return {g.squaredNorm(), -0.5 * (h * sigma).trace()};
}

double sgd_efficiency_analytic(double eta, double n, const Eigen::VectorXd& g,
                               const Eigen::MatrixXd& h,
                               const Eigen::MatrixXd& sigma) {
  double u = eta / n;
  return u * g.squaredNorm() + 0.5 * u * u * (h * sigma).trace();
}

double adam_first_moment(double g, double sigma, double eta, double n_m,
                         double n_v, ExpansionOrder order) {
  if (n_m < 1.0 || n_v < 1.0)
    throw std::invalid_argument("adam moments: window lengths must be >= 1");
  double x = expansion_x(g, sigma);
  double c1, c2;
  if (order == ExpansionOrder::simplified) {
    c1 = 0.5;
    c2 = 3.0 / 8.0;
  } else {
    double r = n_m / n_v;
    c1 = 0.5 * (1.0 + 2.0 * r);
    c2 = (3.0 / 8.0) * (1.0 + r) * (1.0 + r);
  }
  return -eta * sign(g) * (1.0 - c1 * x + c2 * x * x);
}

double adam_second_moment(double g, double sigma, double eta, double n_m,
                          double n_v, bool full_terms) {
  if (n_m < 1.0 || n_v < 1.0)
    throw std::invalid_argument("adam moments: window lengths must be >= 1");
  double x = expansion_x(g, sigma);
  double inv_m = 1.0 / n_m;
  double c1, c2;
  if (full_terms) {
    c1 = inv_m - 1.0 + 4.0 / n_v;
    c2 = 1.0 - inv_m * (1.0 - 4.0 / n_v);
  } else {
    c1 = inv_m - 1.0;
    c2 = 1.0 - inv_m;
  }
  return eta * eta * (1.0 + c1 * x + c2 * x * x + inv_m * x * x * x);
}

SdeCoefficients adam_sde_coefficients(double g, double sigma, double n_m) {
  if (n_m < 1.0) throw std::invalid_argument("adam_sde_coefficients: N_m >= 1");
  double x = expansion_x(g, sigma);
  SdeCoefficients c;
  c.x = x;
  c.drift = -sign(g) * (1.0 - 0.5 * x + (3.0 / 8.0) * x * x);
  double inv_m = 1.0 / n_m;
  double d2 = x * inv_m - x * x * inv_m + (3.0 / 8.0 + inv_m) * x * x * x;
  if (d2 < 0.0) {
    c.diffusion_sq = 0.0;
    c.clamped = true;
  } else {
    c.diffusion_sq = d2;
  }
  return c;
}

EfficiencyModel adam_efficiency_model(const Eigen::VectorXd& g,
                                      const Eigen::MatrixXd& h,
                                      const Eigen::MatrixXd& sigma, double n_m) {
  double g2 = g.squaredNorm();
  if (g2 == 0.0)
    throw std::domain_error("adam efficiency undefined at g = 0");
  double mu_p = g.array().abs().sum(); // g^T sign(g)
  double mu_n = -(h * sigma).trace() / (2.0 * n_m * g2);
  return {mu_p, mu_n};
}

double adam_efficiency_analytic(double eta, double n, const Eigen::VectorXd& g,
                                const Eigen::MatrixXd& h,
                                const Eigen::MatrixXd& sigma, double n_m) {
  EfficiencyModel m = adam_efficiency_model(g, h, sigma, n_m);
  double u = eta / n;
  return u * m.mu_p - u * u * m.mu_n;
}

EfficiencyFit fit_efficiency_curve(const std::vector<std::pair<double, double>>& points) {
  std::vector<double> u, e;
  u.reserve(points.size());
  e.reserve(points.size());
  for (const auto& [ui, ei] : points) {
    u.push_back(ui);
    e.push_back(ei);
  }
  stats::OriginQuadratic fit = stats::fit_origin_quadratic(u, e);
  return {{fit.a, fit.b}, fit.r_squared};
}

}  // namespace poolrl::theory
