#include <doctest.h>

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>
#include <vector>

#include "poolrl/theory.hpp"

using namespace poolrl;

TEST_CASE("effective rollout count") {
  CHECK(theory::effective_rollout(0.05, 20) ==
        doctest::Approx(12.830281551829161).epsilon(1e-12));
  CHECK(theory::effective_rollout(0.5, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(theory::effective_rollout(0.0, 16) == doctest::Approx(0.0));
  CHECK(theory::effective_rollout(1.0, 16) == doctest::Approx(0.0));
  CHECK_THROWS_AS(theory::effective_rollout(-0.1, 4), std::invalid_argument);
  CHECK_THROWS_AS(theory::effective_rollout(0.5, 0), std::invalid_argument);
}

TEST_CASE("efficiency quadratic and its optimum") {
  theory::EfficiencyModel model{3.0, 7.0};
  // u = eta/N = 0.1: 0.1*3 - 0.01*7
  CHECK(theory::efficiency_quadratic(1.0, 10.0, model) ==
        doctest::Approx(0.23).epsilon(1e-12));
  CHECK(theory::optimal_eta_over_n(model) == doctest::Approx(3.0 / 14.0).epsilon(1e-15));
  CHECK_THROWS_AS(theory::optimal_eta_over_n({3.0, 0.0}), std::domain_error);
  CHECK_THROWS_AS(theory::optimal_eta_over_n({3.0, -1.0}), std::domain_error);
  CHECK_THROWS_AS(theory::efficiency_quadratic(0.0, 10.0, model),
                  std::invalid_argument);
  CHECK_THROWS_AS(theory::efficiency_quadratic(1.0, 0.0, model),
                  std::invalid_argument);
}

TEST_CASE("sgd efficiency from gradient, hessian, and noise covariance") {
  Eigen::VectorXd g(2);
  g << 1.0, -2.0;
  Eigen::MatrixXd h = -Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(2, 2);
  sigma(0, 0) = 2.0;
  sigma(1, 1) = 3.0;
  theory::EfficiencyModel model = theory::sgd_efficiency_model(g, h, sigma);
  CHECK(model.mu_p == doctest::Approx(5.0).epsilon(1e-15));   // g^T g
  CHECK(model.mu_n == doctest::Approx(2.5).epsilon(1e-15));   // -tr(H Sigma)/2
  double direct = theory::sgd_efficiency_analytic(1.0, 5.0, g, h, sigma);
  CHECK(direct == doctest::Approx(theory::efficiency_quadratic(1.0, 5.0, model))
                      .epsilon(1e-15));
  CHECK(direct == doctest::Approx(0.2 * 5.0 - 0.04 * 2.5).epsilon(1e-12));
}

TEST_CASE("windowed adam first moment expansions") {
  // g = 2, sigma = 0.2 -> x = 0.01; eta = 0.3, N_m = 10, N_v = 1000
  CHECK(theory::adam_first_moment(2.0, 0.2, 0.3, 10, 1000) ==
        doctest::Approx(-0.29851125).epsilon(1e-12));
  CHECK(theory::adam_first_moment(2.0, 0.2, 0.3, 10, 1000,
                                  theory::ExpansionOrder::full) ==
        doctest::Approx(-0.298481476125).epsilon(1e-12));
  // negative mean gradient flips the sign
  CHECK(theory::adam_first_moment(-2.0, 0.2, 0.3, 10, 1000) ==
        doctest::Approx(0.29851125).epsilon(1e-12));
  // zero noise: exactly -eta * sign(g)
  CHECK(theory::adam_first_moment(2.0, 0.0, 0.3, 10, 1000) ==
        doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("windowed adam second moment expansions") {
  CHECK(theory::adam_second_moment(2.0, 0.2, 0.3, 10, 1000) ==
        doctest::Approx(0.089198109).epsilon(1e-12));
  CHECK(theory::adam_second_moment(2.0, 0.2, 0.3, 10, 1000, true) ==
        doctest::Approx(0.0892017126).epsilon(1e-12));
  CHECK(theory::adam_second_moment(2.0, 0.0, 0.3, 10, 1000) ==
        doctest::Approx(0.09).epsilon(1e-15));
}

TEST_CASE("adam moment expansions reject out-of-domain inputs") {
  CHECK_THROWS_AS(theory::adam_first_moment(0.0, 0.2, 0.3, 10, 1000),
                  std::invalid_argument);
  // x = (0.6/1)^2 = 0.36 > 0.25 validity cap
  CHECK_THROWS_AS(theory::adam_first_moment(1.0, 0.6, 0.3, 10, 1000),
                  std::domain_error);
  CHECK_THROWS_AS(theory::adam_second_moment(1.0, 0.6, 0.3, 10, 1000),
                  std::domain_error);
  CHECK_THROWS_AS(theory::adam_first_moment(2.0, 0.2, 0.3, 0, 1000),
                  std::invalid_argument);
  CHECK_THROWS_AS(theory::adam_second_moment(2.0, 0.2, 0.3, 10, 0),
                  std::invalid_argument);
}

TEST_CASE("adam sde coefficients") {
  // g = 3, sigma = 0.6 -> x = 0.04, N_m = 10
  auto sde = theory::adam_sde_coefficients(3.0, 0.6, 10.0);
  CHECK(sde.x == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(sde.drift == doctest::Approx(-0.9806).epsilon(1e-12));
  CHECK(sde.diffusion_sq == doctest::Approx(0.0038704).epsilon(1e-12));
  CHECK_FALSE(sde.clamped);
  auto neg = theory::adam_sde_coefficients(-3.0, 0.6, 10.0);
  CHECK(neg.drift == doctest::Approx(0.9806).epsilon(1e-12));
  CHECK_THROWS_AS(theory::adam_sde_coefficients(0.0, 0.6, 10.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(theory::adam_sde_coefficients(1.0, 0.6, 10.0),
                  std::domain_error);
  CHECK_THROWS_AS(theory::adam_sde_coefficients(3.0, 0.6, 0.5),
                  std::invalid_argument);
}

TEST_CASE("adam efficiency model") {
  Eigen::VectorXd g(2);
  g << 1.0, -2.0;
  Eigen::MatrixXd h = -Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
  theory::EfficiencyModel model = theory::adam_efficiency_model(g, h, sigma, 10.0);
  CHECK(model.mu_p == doctest::Approx(3.0).epsilon(1e-15));  // l1 norm of g
  // -tr(H Sigma) / (2 N_m g^T g) = 2 / 100
  CHECK(model.mu_n == doctest::Approx(0.02).epsilon(1e-15));
  double direct = theory::adam_efficiency_analytic(1.0, 10.0, g, h, sigma, 10.0);
  CHECK(direct ==
        doctest::Approx(theory::efficiency_quadratic(1.0, 10.0, model)).epsilon(1e-15));
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(theory::adam_efficiency_model(zero, h, sigma, 10.0),
                  std::domain_error);
}

TEST_CASE("efficiency curve fit recovers the generating coefficients") {
  theory::EfficiencyModel truth{3.0, 7.0};
  std::vector<std::pair<double, double>> points;
  for (double u : {0.01, 0.02, 0.04, 0.08, 0.15})
    points.push_back({u, truth.mu_p * u - truth.mu_n * u * u});
  auto fit = theory::fit_efficiency_curve(points);
  CHECK(fit.model.mu_p == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(fit.model.mu_n == doctest::Approx(7.0).epsilon(1e-9));
  CHECK(fit.r_squared == doctest::Approx(1.0));
}
