#include "shakelab/shake.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "shakelab/errors.hpp"

namespace shakelab {

namespace {

constexpr std::array<std::pair<BackwardMode, std::string_view>, 8> kBackwardNames{{
    {BackwardMode::Even, "even"},
    {BackwardMode::Shake, "shake"},
    {BackwardMode::Keep, "keep"},
    {BackwardMode::M1, "m1"},
    {BackwardMode::M2, "m2"},
    {BackwardMode::M3, "m3"},
    {BackwardMode::M4, "m4"},
    {BackwardMode::M5, "m5"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(ForwardMode mode) {
  return mode == ForwardMode::Even ? "even" : "shake";
}

std::string_view to_string(BackwardMode mode) {
  for (const auto& [m, name] : kBackwardNames) {
    if (m == mode) return name;
  }
  return "?";
}

std::string_view to_string(Level level) {
  return level == Level::Batch ? "batch" : "image";
}

ForwardMode parse_forward_mode(std::string_view text) {
  const std::string t = lower(text);
  if (t == "even" || t == "e") return ForwardMode::Even;
  if (t == "shake" || t == "s") return ForwardMode::Shake;
  throw ConfigError("shake.forward: expected 'even' or 'shake', got '" +
                    std::string(text) + "'");
}

BackwardMode parse_backward_mode(std::string_view text) {
  const std::string t = lower(text);
  if (t == "e") return BackwardMode::Even;
  if (t == "s") return BackwardMode::Shake;
  if (t == "k") return BackwardMode::Keep;
  for (const auto& [m, name] : kBackwardNames) {
    if (name == t) return m;
  }
  throw ConfigError("shake.backward: expected one of even|shake|keep|m1..m5, got '" +
                    std::string(text) + "'");
}

Level parse_level(std::string_view text) {
  const std::string t = lower(text);
  if (t == "batch" || t == "b") return Level::Batch;
  if (t == "image" || t == "i") return Level::Image;
  throw ConfigError("shake.level: expected 'batch' or 'image', got '" +
                    std::string(text) + "'");
}

void ShakeConfig::validate() const {
  if (!(alpha_lo >= 0.0 && alpha_lo <= 1.0)) {
    throw ConfigError("shake.alpha_lo must lie in [0, 1], got " +
                      std::to_string(alpha_lo));
  }
  if (!(alpha_hi >= 0.0 && alpha_hi <= 1.0)) {
    throw ConfigError("shake.alpha_hi must lie in [0, 1], got " +
                      std::to_string(alpha_hi));
  }
  if (alpha_lo > alpha_hi) {
    throw ConfigError("shake.alpha_lo (" + std::to_string(alpha_lo) +
                      ") must not exceed shake.alpha_hi (" +
                      std::to_string(alpha_hi) + ")");
  }
}

std::string ShakeConfig::short_name() const {
  std::string b;
  switch (backward) {
    case BackwardMode::Even: b = "E"; break;
    case BackwardMode::Shake: b = "S"; break;
    case BackwardMode::Keep: b = "K"; break;
    default: b = "M" + std::string(1, to_string(backward)[1]); break;
  }
  return std::string(forward == ForwardMode::Even ? "E" : "S") + "-" + b + "-" +
         (level == Level::Batch ? "B" : "I");
}

ShakeConfig ShakeConfig::from_short_name(std::string_view name) {
  const auto first = name.find('-');
  const auto last = name.rfind('-');
  if (first == std::string_view::npos || first == last) {
    throw ConfigError("expected Forward-Backward-Level shorthand like 'S-S-I', got '" +
                      std::string(name) + "'");
  }
  ShakeConfig c;
  c.forward = parse_forward_mode(name.substr(0, first));
  c.backward = parse_backward_mode(name.substr(first + 1, last - first - 1));
  c.level = parse_level(name.substr(last + 1));
  return c;
}

double beta_rule(BackwardMode mode, double a, double r) {
  const bool low = a < 0.5;
  switch (mode) {
    case BackwardMode::Even: return 0.5;
    case BackwardMode::Keep: return a;
    case BackwardMode::M1: return 1.0 - a;
    case BackwardMode::M2: return low ? r * a : r * (1.0 - a) + a;
    case BackwardMode::M3: return low ? r * (0.5 - a) + a : r * (a - 0.5) + 0.5;
    case BackwardMode::M4:
      return low ? r * (0.5 - a) + 0.5 : r * (0.5 - (1.0 - a)) + (1.0 - a);
    case BackwardMode::M5: return low ? r * a + (1.0 - a) : r * (1.0 - a);
    case BackwardMode::Shake: break;
  }
  throw UsageError("beta_rule has no closed form for the Shake backward mode");
}

bool backward_mode_draws(BackwardMode mode) {
  switch (mode) {
    case BackwardMode::Shake:
    case BackwardMode::M2:
    case BackwardMode::M3:
    case BackwardMode::M4:
    case BackwardMode::M5:
      return true;
    default:
      return false;
  }
}

std::vector<double> sample_alpha(const ShakeConfig& config, std::size_t n,
                                 RngStream& rng) {
  if (config.forward == ForwardMode::Even) return std::vector<double>(n, 0.5);
  if (config.level == Level::Batch) {
    return std::vector<double>(n, rng.uniform(config.alpha_lo, config.alpha_hi));
  }
  std::vector<double> out(n);
  for (double& a : out) a = rng.uniform(config.alpha_lo, config.alpha_hi);
  return out;
}

std::vector<double> sample_beta(const ShakeConfig& config,
                                std::span<const double> alpha, RngStream& rng) {
  const std::size_t n = alpha.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  const bool per_image = config.level == Level::Image;
  const std::size_t draws = per_image ? n : 1;
  for (std::size_t j = 0; j < draws; ++j) {
    double b;
    if (config.backward == BackwardMode::Shake) {
      b = rng.uniform(config.alpha_lo, config.alpha_hi);
    } else {
      const double r = backward_mode_draws(config.backward) ? rng.uniform() : 0.0;
      b = beta_rule(config.backward, alpha[j], r);
    }
    out[j] = b;
  }
  if (!per_image) std::fill(out.begin() + 1, out.end(), out[0]);
  return out;
}

ShakeSchedule::ShakeSchedule(ShakeConfig config, RngStream rng)
    : config_(config), rng_(rng) {
  config_.validate();
}

void ShakeSchedule::sample_forward(std::span<ShakeCoefficients> blocks,
                                   std::size_t batch_size) {
  if (batch_size == 0) throw UsageError("cannot sample coefficients for an empty batch");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    ShakeCoefficients& c = blocks[i];
    c.block = i;
    c.alpha = sample_alpha(config_, batch_size, rng_);
    c.beta.clear();
    c.stage = ShakeCoefficients::Stage::Forward;
  }
}

void ShakeSchedule::sample_backward(std::span<ShakeCoefficients> blocks) {
  for (const ShakeCoefficients& c : blocks) {
    if (c.stage != ShakeCoefficients::Stage::Forward) {
      throw UsageError("backward coefficients requested for block " +
                       std::to_string(c.block) +
                       " before its forward coefficients were sampled this step");
    }
  }
  for (ShakeCoefficients& c : blocks) {
    c.beta = sample_beta(config_, c.alpha, rng_);
    c.stage = ShakeCoefficients::Stage::Backward;
  }
}

namespace {

template <typename T>
Var<T> combine(Var<T> skip, Var<T> branch1, Var<T> branch2,
               const ShakeCoefficients& coeffs, Phase phase, bool swap_backward) {
  const Shape& s = branch1.shape();
  if (branch2.shape() != s || (skip.valid() && skip.shape() != s)) {
    throw ConfigError("shake_combine shape mismatch: branch1 " + shape_string(s) +
                      ", branch2 " + shape_string(branch2.shape()) +
                      (skip.valid() ? ", skip " + shape_string(skip.shape()) : ""));
  }
  if (s.empty()) throw ConfigError("shake_combine needs a batch axis");
  const std::size_t N = s[0];
  const std::size_t slice = branch1.value().size() / N;
  if (phase == Phase::Train &&
      (coeffs.stage == ShakeCoefficients::Stage::Empty || coeffs.alpha.size() != N)) {
    throw UsageError("block " + std::to_string(coeffs.block) +
                     ": forward coefficients were not sampled for a batch of " +
                     std::to_string(N));
  }

  const T* x1 = branch1.value().data();
  const T* x2 = branch2.value().data();
  Tensor<T> out = skip.valid() ? skip.value() : Tensor<T>(s);
  for (std::size_t j = 0; j < N; ++j) {
    const double a = phase == Phase::Train ? coeffs.alpha[j] : 0.5;
    const T w1 = static_cast<T>(a);
    const T w2 = static_cast<T>(1.0 - a);
    T* o = out.data() + j * slice;
    const T* p1 = x1 + j * slice;
    const T* p2 = x2 + j * slice;
    for (std::size_t i = 0; i < slice; ++i) o[i] = o[i] + w1 * p1[i] + w2 * p2[i];
  }

  const std::size_t b1 = branch1.id(), b2 = branch2.id();
  const bool has_skip = skip.valid();
  const std::size_t sk = has_skip ? skip.id() : 0;
  const ShakeCoefficients* cp = &coeffs;
  auto backward = [=](Tape<T>& tape, std::size_t self) {
    if (phase == Phase::Train &&
        (cp->stage != ShakeCoefficients::Stage::Backward || cp->beta.size() != N)) {
      throw UsageError("block " + std::to_string(cp->block) +
                       ": backward coefficients must be sampled after the forward "
                       "pass and before backward");
    }
    const Tensor<T>& g = tape.grad(self);
    if (has_skip && tape.requires_grad(sk)) tape.grad(sk) += g;
    T* d1 = tape.requires_grad(b1) ? tape.grad(b1).data() : nullptr;
    T* d2 = tape.requires_grad(b2) ? tape.grad(b2).data() : nullptr;
    for (std::size_t j = 0; j < N; ++j) {
      double b = phase == Phase::Train ? cp->beta[j] : 0.5;
      if (swap_backward) b = 1.0 - b;
      const T w1 = static_cast<T>(b);
      const T w2 = static_cast<T>(1.0 - b);
      const T* gj = g.data() + j * slice;
      if (d1) {
        T* d = d1 + j * slice;
        for (std::size_t i = 0; i < slice; ++i) d[i] += w1 * gj[i];
      }
      if (d2) {
        T* d = d2 + j * slice;
        for (std::size_t i = 0; i < slice; ++i) d[i] += w2 * gj[i];
      }
    }
  };
  if (has_skip) {
    return branch1.tape().record("shake_combine", std::move(out),
                                 {skip, branch1, branch2}, std::move(backward));
  }
  return branch1.tape().record("shake_combine", std::move(out), {branch1, branch2},
                               std::move(backward));
}

}  // namespace

template <typename T>
Var<T> shake_combine(Var<T> skip, Var<T> branch1, Var<T> branch2,
                     const ShakeCoefficients& coeffs, Phase phase) {
  return combine(skip, branch1, branch2, coeffs, phase, false);
}

template <typename T>
Var<T> shake_combine_swapped_backward(Var<T> skip, Var<T> branch1, Var<T> branch2,
                                      const ShakeCoefficients& coeffs, Phase phase) {
  return combine(skip, branch1, branch2, coeffs, phase, true);
}

template Var<float> shake_combine(Var<float>, Var<float>, Var<float>,
                                  const ShakeCoefficients&, Phase);
template Var<double> shake_combine(Var<double>, Var<double>, Var<double>,
                                   const ShakeCoefficients&, Phase);
template Var<float> shake_combine_swapped_backward(Var<float>, Var<float>, Var<float>,
                                                   const ShakeCoefficients&, Phase);
template Var<double> shake_combine_swapped_backward(Var<double>, Var<double>,
                                                    Var<double>,
                                                    const ShakeCoefficients&, Phase);

}  // namespace shakelab
