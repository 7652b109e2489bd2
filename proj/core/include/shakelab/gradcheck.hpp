#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shakelab/model.hpp"
#include "shakelab/shake.hpp"

namespace shakelab {

struct GradcheckOptions {
  std::size_t batch = 4;
  std::size_t image_size = 8;
  std::uint64_t seed = 1;
  // Negative control: swap beta and 1 - beta in every shake backward rule.
  bool swapped_backward = false;
};

struct ParamGradError {
  std::string name;
  std::size_t entries = 0;
  // Entries whose default step straddled a ReLU kink and were re-measured
  // with a smaller step.
  std::size_t refined = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct GradcheckReport {
  std::string model;
  std::string shake;
  double tolerance = 0;
  std::vector<ParamGradError> params;
  double max_rel_error = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// dominating through cancellation noise.
inline constexpr double kGradcheckFloor = 1e-6;
double relative_error(double analytic, double numeric, double floor = kGradcheckFloor);

// Compares the analytic gradient of the mean cross-entropy of a random
// double-precision batch with central differences (L(t + h) - L(t - h)) / 2h,
// h = 1e-4 * max(1, |t|), for every scalar of every parameter. Where t +- h
// changes the sign pattern of any ReLU input the difference quotient spans a
// kink and says nothing about the derivative at t, so h is divided by 10
// (up to four times) until both sides stay on t's linear piece. Shake
// coefficients are sampled once and held fixed for all evaluations. Only
// configurations whose backward pass is the true gradient (Even/Even or Keep
// backward) are accepted; anything else throws ConfigError.
GradcheckReport gradcheck(const ModelSpec& model, const ShakeConfig& config,
                          double tolerance, const GradcheckOptions& options = {});

}  // namespace shakelab
