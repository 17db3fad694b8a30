#pragma once
// Closed forms for the computational-efficiency analysis: the per-step
// efficiency quadratic in eta/N for SGD and Adam, the effective-rollout
// discount for zero-variance groups, windowed-Adam moment expansions in
// x = (sigma/g)^2, the Adam SDE coefficients, and the origin-quadratic fit
// used to recover (mu_p, mu_n) from measurements.

#include <Eigen/Dense>
#include <vector>

#include "poolrl/stats.hpp"

namespace poolrl::theory {

struct EfficiencyModel {
  double mu_p = 0.0; // linear gain coefficient
  double mu_n = 0.0; // quadratic noise penalty; > 0 required for a finite optimum
};

struct EfficiencyFit {
  EfficiencyModel model;
  double r_squared = 0.0;
};

// Expected rollouts that carry learning signal: N * (1 - p^N - (1-p)^N).
double effective_rollout(double p, int n);

// E = (eta/N) mu_p - (eta/N)^2 mu_n.
double efficiency_quadratic(double eta, double n, const EfficiencyModel& model);

// Argmax of the quadratic, mu_p / (2 mu_n); throws when mu_n <= 0 (efficiency
// then increases monotonically and has no finite optimum).
double optimal_eta_over_n(const EfficiencyModel& model);

// E_SGD = (eta/N) g^T g + 1/2 (eta/N)^2 tr(H Sigma); equals the quadratic with
// mu_p = g^T g, mu_n = -1/2 tr(H Sigma).
double sgd_efficiency_analytic(double eta, double n, const Eigen::VectorXd& g,
                               const Eigen::MatrixXd& h, const Eigen::MatrixXd& sigma);
EfficiencyModel sgd_efficiency_model(const Eigen::VectorXd& g,
                                     const Eigen::MatrixXd& h,
                                     const Eigen::MatrixXd& sigma);

// Expansion order for the windowed-Adam moments: `simplified` is the headline
// series; `full` keeps the N_m/N_v cross terms.
enum class ExpansionOrder { simplified, full };

inline constexpr double kExpansionCap = 0.25; // validity cap on x = (sigma/g)^2

// E[one Adam step]: -eta sign(g) [1 - x/2 + 3x^2/8] (simplified), with
// (1 + 2 N_m/N_v) and (1 + N_m/N_v)^2 correction factors in the full variant.
double adam_first_moment(double g, double sigma, double eta, double n_m,
                         double n_v, ExpansionOrder order = ExpansionOrder::simplified);

// E[(one Adam step)^2]: eta^2 [1 + (1/N_m - 1)x + (1 - 1/N_m)x^2 + x^3/N_m];
// full_terms keeps the 4/N_v contributions the derivation drops on its final
// line.
double adam_second_moment(double g, double sigma, double eta, double n_m,
                          double n_v, bool full_terms = false);

struct SdeCoefficients {
  double drift = 0.0;        // b
  double diffusion_sq = 0.0; // sigma^2, clamped at 0 if the series dips negative
  double x = 0.0;            // (sigma/g)^2
  bool clamped = false;
};

// b = -sign(g)(1 - x/2 + 3x^2/8); sigma^2 = x/N_m - x^2/N_m + (3/8 + 1/N_m)x^3.
SdeCoefficients adam_sde_coefficients(double g, double sigma, double n_m);

// E_Adam = (eta/N) g^T sign(g) + (1/(2 N_m g^T g)) (eta/N)^2 tr(H Sigma).
double adam_efficiency_analytic(double eta, double n, const Eigen::VectorXd& g,
                                const Eigen::MatrixXd& h, const Eigen::MatrixXd& sigma,
                                double n_m);
EfficiencyModel adam_efficiency_model(const Eigen::VectorXd& g,
                                      const Eigen::MatrixXd& h,
                                      const Eigen::MatrixXd& sigma, double n_m);

// Least-squares fit of measured (u = eta/N, E) points to E = mu_p u - mu_n u^2.
EfficiencyFit fit_efficiency_curve(const std::vector<std::pair<double, double>>& points);

}  // namespace poolrl::theory
