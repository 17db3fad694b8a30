#include "poolrl/sde_lab.hpp"

#include <cmath>
#include <stdexcept>

#include "poolrl/env.hpp"
#include "poolrl/stats.hpp"

namespace poolrl::sde {

namespace {

double oracle_reward(const NoisyGradientOracle& oracle, const Eigen::VectorXd& theta);

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("covariance eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * std::max(1.0, std::abs(ev.maxCoeff())))
      throw std::invalid_argument("covariance is not positive semidefinite");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool is_diagonal(const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != 0.0) return false;
  return true;
}

double oracle_reward(const NoisyGradientOracle& oracle, const Eigen::VectorXd& theta) {
  if (oracle.kind == NoisyGradientOracle::Kind::constant_gaussian)
    return -oracle.mean_gradient.dot(theta);
  return poolrl::softmax(theta)[oracle.correct_arm];
}

}  // namespace

NoisyGradientOracle make_injected_oracle(int correct_arm, const Eigen::MatrixXd& sigma,
                                         int group_size) {
  if (group_size < 1) throw std::invalid_argument("oracle group size must be >= 1");
  if (sigma.rows() != sigma.cols()) throw std::invalid_argument("sigma must be square");
  NoisyGradientOracle o;
  o.kind = NoisyGradientOracle::Kind::injected_gaussian;
  o.correct_arm = correct_arm;
  o.group_size = group_size;
  o.sigma = sigma;
  o.sigma_sqrt = psd_sqrt(sigma);
  o.sigma_diagonal = is_diagonal(sigma);
  return o;
}

NoisyGradientOracle make_reinforce_oracle(int correct_arm, int group_size) {
  if (group_size < 1) throw std::invalid_argument("oracle group size must be >= 1");
  NoisyGradientOracle o;
  o.kind = NoisyGradientOracle::Kind::bandit_reinforce;
  o.correct_arm = correct_arm;
  o.group_size = group_size;
  return o;
}

NoisyGradientOracle make_constant_oracle(const Eigen::VectorXd& mean_loss_gradient,
                                         const Eigen::MatrixXd& sigma, int group_size) {
  if (group_size < 1) throw std::invalid_argument("oracle group size must be >= 1");
  if (sigma.rows() != sigma.cols() || sigma.rows() != mean_loss_gradient.size())
    throw std::invalid_argument("oracle dimension mismatch");
  NoisyGradientOracle o;
  o.kind = NoisyGradientOracle::Kind::constant_gaussian;
  o.group_size = group_size;
  o.mean_gradient = mean_loss_gradient;
  o.sigma = sigma;
  o.sigma_sqrt = psd_sqrt(sigma);
  o.sigma_diagonal = is_diagonal(sigma);
  return o;
}

Eigen::VectorXd sample_loss_gradient(const NoisyGradientOracle& oracle,
                                     const Eigen::VectorXd& theta,
                                     std::mt19937_64& rng) {
  if (oracle.kind != NoisyGradientOracle::Kind::bandit_reinforce) {
    if (oracle.sigma.rows() != theta.size())
      throw std::invalid_argument("oracle/theta dimension mismatch");
    Eigen::VectorXd g_loss =
        oracle.kind == NoisyGradientOracle::Kind::constant_gaussian
            ? oracle.mean_gradient
            : -poolrl::bandit_reward_gradient(theta, oracle.correct_arm).eval();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd xi(theta.size());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = gauss(rng);
    return g_loss + oracle.sigma_sqrt * xi / std::sqrt(oracle.group_size);
  }

  // REINFORCE with the exact mean baseline, averaged over the group.
  Eigen::VectorXd probs = poolrl::softmax(theta);
  double p = probs[oracle.correct_arm];
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(theta.size());
  for (int i = 0; i < oracle.group_size; ++i) {
    double u = unif(rng);
    int arm = 0;
    double cum = 0.0;
    for (Eigen::Index a = 0; a < probs.size(); ++a) {
      cum += probs[a];
      if (u < cum) {
        arm = static_cast<int>(a);
        break;
      }
      arm = static_cast<int>(probs.size() - 1);
    }
    double r = (arm == oracle.correct_arm) ? 1.0 : 0.0;
    acc -= (r - p) * probs; // (r - p) * (e_arm - probs), accumulated
    acc[arm] += (r - p);
  }
  return -acc / static_cast<double>(oracle.group_size);
}

Trajectory simulate_noisy_descent(const NoisyGradientOracle& oracle,
                                  Optimizer optimizer, double eta, int n,
                                  int steps, const Eigen::VectorXd& theta0,
                                  std::mt19937_64& rng, const AdamParams& adam) {
  if (steps < 1) throw std::invalid_argument("simulate_noisy_descent: steps >= 1");
  NoisyGradientOracle local = oracle;
  local.group_size = n;

  Trajectory traj;
  traj.params.push_back(theta0);
  traj.rewards.push_back(oracle_reward(oracle, theta0));
  traj.cumulative_rollouts.push_back(0);

  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());

  for (int k = 1; k <= steps; ++k) {
    Eigen::VectorXd g = sample_loss_gradient(local, theta, rng);
    if (optimizer == Optimizer::sgd) {
      theta -= eta * g;
    } else {
      m = adam.beta1 * m + (1.0 - adam.beta1) * g;
      v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
      theta -= eta * (m.array() / (v.array().sqrt() + adam.epsilon)).matrix();
    }
    if (!theta.allFinite()) {
      traj.diverged = true;
      break;
    }
    traj.params.push_back(theta);
    traj.rewards.push_back(oracle_reward(oracle, theta));
    traj.cumulative_rollouts.push_back(static_cast<long long>(k) * n);
  }
  return traj;
}

Trajectory euler_maruyama(const DriftFn& drift, const DiffusionFn& diffusion,
                          double eta, int steps, const Eigen::VectorXd& theta0,
                          std::mt19937_64& rng, double dt, const RewardFn& reward,
                          int rollouts_per_step) {
  if (steps < 1) throw std::invalid_argument("euler_maruyama: steps >= 1");
  Trajectory traj;
  traj.params.push_back(theta0);
  traj.rewards.push_back(reward ? reward(theta0) : 0.0);
  traj.cumulative_rollouts.push_back(0);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd theta = theta0;
  double sqrt_dt = std::sqrt(dt);
  for (int k = 1; k <= steps; ++k) {
    theta += eta * dt * drift(theta);
    Eigen::MatrixXd b = diffusion(theta);
    if (b.size() != 0) {
      Eigen::VectorXd xi(b.cols());
      for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = gauss(rng);
      theta += eta * sqrt_dt * (b * xi);
    }
    if (!theta.allFinite()) {
      traj.diverged = true;
      break;
    }
    traj.params.push_back(theta);
    traj.rewards.push_back(reward ? reward(theta) : 0.0);
    traj.cumulative_rollouts.push_back(static_cast<long long>(k) * rollouts_per_step);
  }
  return traj;
}

double measure_efficiency(const Trajectory& trajectory, int window) {
  if (window < 1) throw std::invalid_argument("measure_efficiency: window >= 1");
  int last = std::min<int>(window, trajectory.steps());
  if (last < 1) throw std::invalid_argument("measure_efficiency: empty trajectory");
  double d_reward = trajectory.rewards[last] - trajectory.rewards[0];
  double rollouts = static_cast<double>(trajectory.cumulative_rollouts[last] -
                                        trajectory.cumulative_rollouts[0]);
  if (rollouts <= 0.0) throw std::logic_error("measure_efficiency: no rollouts consumed");
  return d_reward / rollouts;
}

Eigen::VectorXd sample_windowed_adam_delta(const NoisyGradientOracle& oracle,
                                           const Eigen::VectorXd& theta,
                                           double eta, double n_m, double n_v,
                                           const AdamParams& adam,
                                           std::mt19937_64& rng) {
  if (oracle.kind == NoisyGradientOracle::Kind::bandit_reinforce ||
      !oracle.sigma_diagonal)
    throw std::invalid_argument(
        "sample_windowed_adam_delta: needs a diagonal-covariance Gaussian oracle");
  long n_head = std::lround(n_m);
  long n_total = std::lround(n_v);
  if (n_head < 1 || n_total < n_head)
    throw std::invalid_argument("sample_windowed_adam_delta: invalid window lengths");
  long n_tail = n_total - n_head;

  Eigen::VectorXd mean_g =
      oracle.kind == NoisyGradientOracle::Kind::constant_gaussian
          ? oracle.mean_gradient
          : (-poolrl::bandit_reward_gradient(theta, oracle.correct_arm)).eval();
  Eigen::VectorXd sd_g =
      (oracle.sigma.diagonal() / static_cast<double>(oracle.group_size)).cwiseSqrt();

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::gamma_distribution<double> chi2_tail(
      n_tail > 1 ? (static_cast<double>(n_tail) - 1.0) / 2.0 : 1.0, 2.0);
  Eigen::VectorXd delta(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    double mu = mean_g[i], sd = sd_g[i];
    double head_sum = 0.0, head_sq = 0.0;
    for (long j = 0; j < n_head; ++j) {
      double g = mu + sd * gauss(rng);
      head_sum += g;
      head_sq += g * g;
    }
    double tail_sq = 0.0;
    if (n_tail > 0) {
      // Tail sufficient statistics: sample mean and centered sum of squares.
      double tail_mean =
          mu + sd * gauss(rng) / std::sqrt(static_cast<double>(n_tail));
      double tail_ss = n_tail > 1 ? sd * sd * chi2_tail(rng) : 0.0;
      tail_sq = tail_ss + static_cast<double>(n_tail) * tail_mean * tail_mean;
    }
    double m = head_sum / static_cast<double>(n_head);
    double v = (head_sq + tail_sq) / static_cast<double>(n_total);
    delta[i] = -eta * m / (std::sqrt(v) + adam.epsilon);
  }
  return delta;
}

StepMoments measure_step_moments(const NoisyGradientOracle& oracle,
                                 Optimizer optimizer, double eta, long trials,
                                 const Eigen::VectorXd& theta0,
                                 std::mt19937_64& rng, double n_m, double n_v,
                                 const AdamParams& adam) {
  if (trials < 10000)
    throw std::invalid_argument("measure_step_moments: need >= 10^4 trials");
  Eigen::Index dim = theta0.size();
  long n_head = std::lround(n_m);
  long n_total = std::lround(n_v);
  if (n_head < 1 || n_total < n_head)
    throw std::invalid_argument("measure_step_moments: invalid window lengths");
  long n_tail = n_total - n_head;

  std::vector<stats::NeumaierSum> s1(dim), s2(dim), s1sq(dim), s2sq(dim);

  const bool gaussian_oracle =
      oracle.kind != NoisyGradientOracle::Kind::bandit_reinforce;
  const bool fast_tail =
      optimizer == Optimizer::adam && gaussian_oracle && oracle.sigma_diagonal &&
      n_tail > 0;

  Eigen::VectorXd delta(dim);
  for (long trial = 0; trial < trials; ++trial) {
    if (optimizer == Optimizer::sgd) {
      delta = -eta * sample_loss_gradient(oracle, theta0, rng);
    } else if (fast_tail) {
      delta = sample_windowed_adam_delta(oracle, theta0, eta, n_m, n_v, adam, rng);
    } else {
      // Naive pre-filled windows: n_v draws, m averages the most recent n_m.
      Eigen::VectorXd sum_m = Eigen::VectorXd::Zero(dim);
      Eigen::VectorXd sum_v = Eigen::VectorXd::Zero(dim);
      for (long j = 0; j < n_total; ++j) {
        Eigen::VectorXd g = sample_loss_gradient(oracle, theta0, rng);
        sum_v += g.cwiseProduct(g);
        if (j < n_head) sum_m += g;
      }
      Eigen::VectorXd m = sum_m / static_cast<double>(n_head);
      Eigen::VectorXd v = sum_v / static_cast<double>(n_total);
      delta = -eta * (m.array() / (v.array().sqrt() + adam.epsilon)).matrix();
    }
    for (Eigen::Index i = 0; i < dim; ++i) {
      double d = delta[i];
      s1[i].add(d);
      s2[i].add(d * d);
      s1sq[i].add(d * d);
      s2sq[i].add(d * d * d * d);
    }
  }

  StepMoments out;
  out.mean_delta.resize(dim);
  out.mean_delta_sq.resize(dim);
  out.se_delta.resize(dim);
  out.se_delta_sq.resize(dim);
  double n = static_cast<double>(trials);
  for (Eigen::Index i = 0; i < dim; ++i) {
    double m1 = s1[i].value() / n;
    double m2 = s2[i].value() / n;
    out.mean_delta[i] = m1;
    out.mean_delta_sq[i] = m2;
    double var1 = std::max(0.0, s1sq[i].value() / n - m1 * m1);
    double var2 = std::max(0.0, s2sq[i].value() / n - m2 * m2);
    out.se_delta[i] = std::sqrt(var1 / n);
    out.se_delta_sq[i] = std::sqrt(var2 / n);
  }
  return out;
}

double zero_variance_rate(double p, int n, long trials, std::mt19937_64& rng) {
  if (trials < 1000) throw std::invalid_argument("zero_variance_rate: trials >= 10^3");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("zero_variance_rate: bad p");
  if (n < 1) throw std::invalid_argument("zero_variance_rate: N >= 1");
  if (p == 0.0 || p == 1.0) return 1.0;
  std::binomial_distribution<int> binom(n, p);
  long zero_var = 0;
  for (long t = 0; t < trials; ++t) {
    int c = binom(rng);
    if (c == 0 || c == n) ++zero_var;
  }
  return static_cast<double>(zero_var) / static_cast<double>(trials);
}

}  // namespace poolrl::sde
