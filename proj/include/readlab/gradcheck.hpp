#pragma once

// Central finite-difference checks of every analytic gradient in the library,
// run on micro configurations.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "readlab/nn.hpp"

namespace readlab::gradcheck {

struct Options {
  std::uint64_t seed = 1;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Test hook: applied to the analytic gradients before comparison.
  std::function<void(const nn::ParamList&)> corrupt;
};

struct Report {
  std::string component;
  double worst_rel_error = 0.0;
  std::string worst_coordinate;  // "<param>[<index>]"
  long coordinates = 0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, kRelFloor).
inline constexpr double kRelFloor = 1e-6;
double relative_error(double analytic, double numeric);

/// Compares the gradient that `analytic` leaves in the params' grads against
/// central differences of `objective`.
Report check(const std::string& component, const nn::ParamList& params,
             const std::function<double()>& objective, const std::function<void()>& analytic,
             const Options& opts);

/// Teacher-forced weighted log-likelihood of the generator.
Report check_generator(const Options& opts = {});
/// IRL objective of the reward net, in both reward modes.
Report check_reward(const Options& opts = {});
/// w_l L_l + w_u L_u + w_f L_f through the encoder and the k+1 head.
Report check_classifier(const Options& opts = {});

/// component: generator | reward | classifier | all. Throws std::invalid_argument otherwise.
std::vector<Report> run(const std::string& component, const Options& opts = {});

}  // namespace readlab::gradcheck
