#pragma once

#include <Eigen/Core>

#include "spaars/cvae.hpp"
#include "spaars/envs.hpp"

namespace spaars::oracle {

struct Optima {
    double j_raw = 0.0;     ///< best return over the action grid
    double j_latent = 0.0;  ///< best return over decoded latent-grid actions
    Eigen::VectorXd a_star;  ///< best grid action (first step for multi-step envs)
    Eigen::VectorXd z_star;  ///< best latent grid point (first step for multi-step envs)

    double gap() const { return j_raw - j_latent; }
};

/// Longest horizon the exhaustive oracle accepts.
constexpr int kMaxHorizon = 50;

/// Exhaustive grid search for the best unconstrained and manifold-constrained policies.
/// Bandit: one lattice over A and one over the latent box (prior mean +- 3 prior std).
/// reach-1d: finite-horizon DP over a state grid from the fixed start, linear interpolation
/// of the value function. `gamma` < 0 uses the environment's discount.
Optima brute_force_optima(const envs::Env& env, const cvae::CvaeModel& model, int grid_resolution,
                          double gamma = -1.0);

/// Unconstrained optimum only (no CVAE needed).
double brute_force_raw(const envs::Env& env, int grid_resolution, double gamma = -1.0,
                       Eigen::VectorXd* a_star = nullptr);

}  // namespace spaars::oracle
