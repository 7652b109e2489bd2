#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shakelab/autograd.hpp"
#include "shakelab/rng.hpp"

namespace shakelab {

enum class ForwardMode { Even, Shake };

// Even: 0.5. Shake: fresh draw. Keep: reuse the forward coefficient.
// M1..M5: position beta relative to alpha (see beta_rule).
enum class BackwardMode { Even, Shake, Keep, M1, M2, M3, M4, M5 };

// Batch: one coefficient per block for the whole mini-batch.
// Image: one coefficient per block per image.
enum class Level { Batch, Image };

enum class Phase { Train, Test };

struct ShakeConfig {
  ForwardMode forward = ForwardMode::Shake;
  BackwardMode backward = BackwardMode::Shake;
  Level level = Level::Image;
  // Interval for Shake draws of alpha and beta; [0, 1] unless restricted.
  double alpha_lo = 0.0;
  double alpha_hi = 1.0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  // Forward-Backward-Level shorthand, e.g. "S-S-I", "E-E-B", "S-M3-I".
  std::string short_name() const;
  static ShakeConfig from_short_name(std::string_view name);

  friend bool operator==(const ShakeConfig&, const ShakeConfig&) = default;
};

std::string_view to_string(ForwardMode mode);
std::string_view to_string(BackwardMode mode);
std::string_view to_string(Level level);
ForwardMode parse_forward_mode(std::string_view text);
BackwardMode parse_backward_mode(std::string_view text);
Level parse_level(std::string_view text);

// Per-block coefficients for one training step. At Batch level every entry
// of alpha (and of beta) holds the same value.
struct ShakeCoefficients {
  enum class Stage { Empty, Forward, Backward };

  std::size_t block = 0;
  std::vector<double> alpha;
  std::vector<double> beta;
  Stage stage = Stage::Empty;
};

// Backward coefficient for one image from its forward coefficient and a
// uniform r in [0, 1]. Even, Keep and M1 ignore r; Shake is not a closed
// form (it needs the interval) and is rejected here.
//
//            alpha < 0.5                  alpha >= 0.5
//   M1       1 - a                        1 - a
//   M2       r * a                        r * (1 - a) + a
//   M3       r * (0.5 - a) + a            r * (a - 0.5) + 0.5
//   M4       r * (0.5 - a) + 0.5          r * (0.5 - (1 - a)) + (1 - a)
//   M5       r * a + (1 - a)              r * (1 - a)
double beta_rule(BackwardMode mode, double alpha, double r);

bool backward_mode_draws(BackwardMode mode);

// Forward coefficients for a batch of n images (train phase).
std::vector<double> sample_alpha(const ShakeConfig& config, std::size_t n,
                                 RngStream& rng);

// Backward coefficients given this step's forward coefficients.
std::vector<double> sample_beta(const ShakeConfig& config,
                                std::span<const double> alpha, RngStream& rng);

// Owns the coefficient stream and enforces the per-step order: forward
// coefficients for every block, then backward coefficients for every block.
// Blocks are visited in index order and images in batch order.
class ShakeSchedule {
 public:
  ShakeSchedule(ShakeConfig config, RngStream rng);

  void sample_forward(std::span<ShakeCoefficients> blocks, std::size_t batch_size);
  void sample_backward(std::span<ShakeCoefficients> blocks);

  const ShakeConfig& config() const noexcept { return config_; }
  RngStream& rng() noexcept { return rng_; }
  const RngStream& rng() const noexcept { return rng_; }

 private:
  ShakeConfig config_;
  RngStream rng_;
};

// x_skip + a_j * branch1 + (1 - a_j) * branch2 per image j, where a_j is the
// sampled alpha in the train phase and 0.5 in the test phase. skip may be an
// invalid Var for skipless blocks. The backward rule sends beta_j * g to
// branch1, (1 - beta_j) * g to branch2 and g to skip, reading beta from
// coeffs when backward runs; coeffs must outlive the tape.
template <typename T>
Var<T> shake_combine(Var<T> skip, Var<T> branch1, Var<T> branch2,
                     const ShakeCoefficients& coeffs, Phase phase);

// Same node with the branch adjoints swapped (beta <-> 1 - beta). Only used
// as a negative control by the verification suite.
template <typename T>
Var<T> shake_combine_swapped_backward(Var<T> skip, Var<T> branch1,
                                      Var<T> branch2,
                                      const ShakeCoefficients& coeffs,
                                      Phase phase);

}  // namespace shakelab
