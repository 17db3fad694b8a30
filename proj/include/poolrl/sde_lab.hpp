#pragma once
// Simulation harnesses that check the efficiency theory empirically: noisy
// SGD/Adam descent on a bandit reward landscape, a generic Euler-Maruyama
// integrator, one-step moment measurement with pre-filled Adam windows, and
// the zero-variance-rate estimate behind the effective-rollout formula.

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <vector>

namespace poolrl::sde {

// Sources of noisy LOSS gradients. injected_gaussian adds exactly-controlled
// N(0, Sigma/N) noise to the analytic gradient of the bandit landscape
// R(theta) = softmax(theta)[correct]; bandit_reinforce estimates that gradient
// from N sampled rollouts (exact-mean-baseline REINFORCE, the estimator whose
// single-sample covariance the env module computes); constant_gaussian fixes
// the mean gradient outright (linear landscape R = -g^T theta) for moment
// measurements that need a prescribed g.
struct NoisyGradientOracle {
  enum class Kind { injected_gaussian, bandit_reinforce, constant_gaussian };
  Kind kind = Kind::injected_gaussian;
  int correct_arm = 0;
  int group_size = 1;            // N: noise scales as Sigma/N
  Eigen::VectorXd mean_gradient; // constant_gaussian only
  Eigen::MatrixXd sigma;         // injected covariance
  Eigen::MatrixXd sigma_sqrt;
  bool sigma_diagonal = false;
};

NoisyGradientOracle make_injected_oracle(int correct_arm, const Eigen::MatrixXd& sigma,
                                         int group_size);
NoisyGradientOracle make_reinforce_oracle(int correct_arm, int group_size);
NoisyGradientOracle make_constant_oracle(const Eigen::VectorXd& mean_loss_gradient,
                                         const Eigen::MatrixXd& sigma, int group_size);

Eigen::VectorXd sample_loss_gradient(const NoisyGradientOracle& oracle,
                                     const Eigen::VectorXd& theta,
                                     std::mt19937_64& rng);

enum class Optimizer { sgd, adam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct Trajectory {
  std::vector<Eigen::VectorXd> params;        // steps + 1 snapshots
  std::vector<double> rewards;                // R(theta) per snapshot
  std::vector<long long> cumulative_rollouts; // i * N at snapshot i
  bool diverged = false;

  int steps() const { return static_cast<int>(params.size()) - 1; }
};

// Iterates the exact discrete update theta <- theta - eta * step(g_hat).
// Divergence (non-finite parameters) truncates the trajectory and sets the
// flag instead of throwing.
Trajectory simulate_noisy_descent(const NoisyGradientOracle& oracle,
                                  Optimizer optimizer, double eta, int n,
                                  int steps, const Eigen::VectorXd& theta0,
                                  std::mt19937_64& rng,
                                  const AdamParams& adam = AdamParams{});

using DriftFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using DiffusionFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
using RewardFn = std::function<double(const Eigen::VectorXd&)>;

// theta += eta * drift(theta) * dt + eta * diffusion(theta) * sqrt(dt) * xi,
// xi ~ N(0, I); dt = 1 per discrete optimizer step (stated convention).
Trajectory euler_maruyama(const DriftFn& drift, const DiffusionFn& diffusion,
                          double eta, int steps, const Eigen::VectorXd& theta0,
                          std::mt19937_64& rng, double dt = 1.0,
                          const RewardFn& reward = nullptr,
                          int rollouts_per_step = 1);

// (R at `window` steps - R at start) / rollouts consumed over the window.
double measure_efficiency(const Trajectory& trajectory, int window);

struct StepMoments {
  Eigen::VectorXd mean_delta;      // E[dtheta] per coordinate
  Eigen::VectorXd mean_delta_sq;   // E[dtheta^2] per coordinate
  Eigen::VectorXd se_delta;        // standard errors of the mean
  Eigen::VectorXd se_delta_sq;
};

// Empirical first/second moments of one optimizer step from a fixed point.
// Adam steps are taken from pre-filled moment windows: m averages the n_m most
// recent of the n_v gradient draws that v averages (the windows overlap, as in
// the moving-average model). For the injected-Gaussian diagonal-covariance
// oracle the n_v - n_m tail draws are realized through their sufficient
// statistics (sample mean and chi-square sum of squares), which is
// distributionally exact and keeps 10^6-trial runs fast.
StepMoments measure_step_moments(const NoisyGradientOracle& oracle,
                                 Optimizer optimizer, double eta, long trials,
                                 const Eigen::VectorXd& theta0,
                                 std::mt19937_64& rng, double n_m = 10.0,
                                 double n_v = 1000.0,
                                 const AdamParams& adam = AdamParams{});

// One Adam step delta drawn from pre-filled windows (same window model as
// measure_step_moments, same sufficient-statistic tail). Requires a Gaussian
// oracle with diagonal covariance; the sweep harnesses use this directly when
// they need the reward change of a single step rather than delta moments.
Eigen::VectorXd sample_windowed_adam_delta(const NoisyGradientOracle& oracle,
                                           const Eigen::VectorXd& theta,
                                           double eta, double n_m, double n_v,
                                           const AdamParams& adam,
                                           std::mt19937_64& rng);

// Fraction of N-Bernoulli(p) groups that are all-0 or all-1, estimated from
// `trials` Monte Carlo groups (drawn via their success counts, which is the
// same distribution).
double zero_variance_rate(double p, int n, long trials, std::mt19937_64& rng);

}  // namespace poolrl::sde
