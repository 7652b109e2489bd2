#include "shakelab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "shakelab/errors.hpp"
#include "shakelab/ops.hpp"

namespace shakelab {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

constexpr int kMaxRefinements = 4;

void require_true_gradient(const ShakeConfig& config) {
  const bool even = config.forward == ForwardMode::Even && config.backward == BackwardMode::Even;
  if (config.backward == BackwardMode::Keep || even) return;
  throw ConfigError("gradcheck: backward mode '" + std::string(to_string(config.backward)) +
                    "' with forward mode '" + std::string(to_string(config.forward)) +
                    "' is not the gradient of the forward pass; use backward 'keep' or "
                    "forward and backward 'even'");
}

}  // namespace

GradcheckReport gradcheck(const ModelSpec& model_spec, const ShakeConfig& config,
                          double tolerance, const GradcheckOptions& options) {
  require_true_gradient(config);
  if (!(tolerance > 0)) throw ConfigError("gradcheck: tolerance must be positive");
  if (options.batch == 0) throw ConfigError("gradcheck: batch must be positive");

  ModelSpec spec = model_spec;
  spec.shake = config;
  spec.validate();
  Model<double> model(spec, options.seed);
  model.set_swapped_backward_for_testing(options.swapped_backward);

  RngStream rng = RngStream::derive(options.seed, {0x6C4E});
  const std::size_t s = options.image_size;
  Tensor<double> images(
      {options.batch, static_cast<std::size_t>(spec.input_channels), s, s});
  for (auto& v : images.values()) v = rng.normal();
  std::vector<int> labels(options.batch);
  for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));

  ShakeSchedule schedule(config, RngStream::derive(options.seed, {0x5AE5}));
  schedule.sample_forward(model.coefficients(), options.batch);
  schedule.sample_backward(model.coefficients());

  // Loss plus the sign pattern of every ReLU output, which identifies the
  // linear piece of the network the evaluation point lies on.
  std::vector<bool> pattern;
  auto loss_at = [&](std::vector<bool>* relu_pattern) {
    Tape<double> tape;
    Var<double> x = tape.input(images);
    Var<double> logits = model.forward(tape, x, Phase::Train);
    const double loss =
        ops::softmax_cross_entropy(logits, std::span<const int>(labels)).value()[0];
    if (relu_pattern) {
      relu_pattern->clear();
      for (std::size_t id = 0; id < tape.size(); ++id) {
        if (tape.op(id) != "relu") continue;
        for (double v : tape.value(id).values()) relu_pattern->push_back(v > 0);
      }
    }
    return loss;
  };

  std::vector<bool> base_pattern;
  {
    model.params().zero_grad();
    Tape<double> tape;
    Var<double> x = tape.input(images);
    Var<double> logits = model.forward(tape, x, Phase::Train);
    tape.backward(ops::softmax_cross_entropy(logits, std::span<const int>(labels)));
  }
  loss_at(&base_pattern);

  GradcheckReport report;
  report.model = spec.name();
  report.shake = config.short_name();
  report.tolerance = tolerance;
  for (auto& p : model.params()) {
    ParamGradError err;
    err.name = p.name;
    err.entries = p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double theta = p.value[i];
      double h = 1e-4 * std::max(1.0, std::abs(theta));
      double numeric = 0;
      for (int attempt = 0;; ++attempt) {
        p.value[i] = theta + h;
        const double up = loss_at(&pattern);
        const bool smooth_up = pattern == base_pattern;
        p.value[i] = theta - h;
        const double down = loss_at(&pattern);
        const bool smooth = smooth_up && pattern == base_pattern;
        p.value[i] = theta;
        numeric = (up - down) / (2 * h);
        if (smooth || attempt == kMaxRefinements) break;
        h *= 0.1;
        if (attempt == 0) ++err.refined;
      }
      const double analytic = p.grad[i];
      err.max_abs_error = std::max(err.max_abs_error, std::abs(analytic - numeric));
      err.max_rel_error = std::max(err.max_rel_error, relative_error(analytic, numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.params.push_back(std::move(err));
  }
  return report;
}

}  // namespace shakelab
