#pragma once

// Lifted-linear test plant with known operators, used for adaptation studies
// and as an exact-model stand-in for the learned lifting.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mako/adaptation.hpp"

namespace mako {

/// A = radius * Q with Q a random orthogonal matrix, B and C standard normal.
KoopmanOps make_lifted_linear_plant(int obs_dim, int input_dim, int state_dim, double radius,
                                    std::uint64_t seed);

/// Uniform sample from the Euclidean ball of the given radius.
Eigen::VectorXd sample_ball(Rng& rng, int dim, double radius);

struct AdaptStudyConfig {
  int obs_dim = 8, input_dim = 2, state_dim = 3;
  double radius = 0.95;
  int steps = 5000;
  AdaptConfig adapt;
  double noise_w = 0.0, noise_v = 0.0;  // radii of the injected lifted/output noise
  double init_perturbation = 0.1;       // std of the Gaussian error on the initial estimate
  double input_amplitude = 1.0;
  std::uint64_t seed = 0;
};

struct AdaptStudyResult {
  KoopmanOps truth;
  AdaptiveOps final_ops;
  double initial_lyapunov = 0.0;
  std::vector<AdaptRecord> trace;  // lyapunov filled after every step
};

/// Drives the plant with i.i.d. uniform inputs and adapts after every step.
AdaptStudyResult run_adaptation_study(const AdaptStudyConfig& config);

}  // namespace mako
