#include "shakelab/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "shakelab/errors.hpp"
#include "shakelab/gradcheck.hpp"
#include "shakelab/model.hpp"
#include "shakelab/shake.hpp"

namespace shakelab {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Rounding slack for the interval checks; the rules are evaluated in
// double precision and the bounds are the exact real-valued ones.
constexpr double kRangeSlack = 4e-16;

bool within(double v, double lo, double hi) {
  if (lo > hi) std::swap(lo, hi);
  return v >= lo - kRangeSlack && v <= hi + kRangeSlack;
}

bool rule_in_range(BackwardMode mode, double a, double b) {
  switch (mode) {
    case BackwardMode::M1:
      return std::abs(b - (1.0 - a)) <= kRangeSlack;
    case BackwardMode::M2:
      return a < 0.5 ? within(b, 0.0, a) : within(b, a, 1.0);
    case BackwardMode::M3:
      return within(b, a, 0.5);
    case BackwardMode::M4:
      return a < 0.5 ? within(b, 0.5, 1.0 - a) : within(b, 1.0 - a, 0.5);
    case BackwardMode::M5:
      return a < 0.5 ? within(b, 1.0 - a, 1.0) : within(b, 0.0, 1.0 - a);
    default:
      return false;
  }
}

VerifyCheck gradcheck_check(const std::string& label, Family family, int depth,
                            const std::string& shake, bool swapped) {
  VerifyCheck c;
  c.name = "gradcheck " + label + " " + shake + (swapped ? " (corrupted backward)" : "");
  ModelSpec spec;
  spec.family = family;
  spec.depth = depth;
  spec.base_width = 4;
  GradcheckOptions opts;
  opts.swapped_backward = swapped;
  const GradcheckReport r = gradcheck(spec, ShakeConfig::from_short_name(shake), 1e-4, opts);
  c.passed = r.passed();
  c.measured = "max rel err " + fmt("%.3e", r.max_rel_error) + " (tol 1e-4)";
  return c;
}

VerifyCheck rejects_check() {
  VerifyCheck c;
  c.name = "gradcheck rejects S-E-I";
  try {
    ModelSpec spec;
    spec.depth = 8;
    spec.base_width = 4;
    gradcheck(spec, ShakeConfig::from_short_name("S-E-I"), 1e-4);
    c.measured = "accepted";
  } catch (const ConfigError&) {
    c.passed = true;
    c.measured = "rejected";
  }
  return c;
}

VerifyCheck schedule_order_check() {
  VerifyCheck c;
  c.name = "backward coefficients require forward sampling";
  ShakeSchedule schedule(ShakeConfig{}, RngStream(7));
  std::vector<ShakeCoefficients> blocks(3);
  try {
    schedule.sample_backward(blocks);
    c.measured = "accepted";
  } catch (const UsageError&) {
    c.passed = true;
    c.measured = "rejected";
  }
  return c;
}

}  // namespace

VerifyCheck check_param_count(const std::string& label, int depth, int width,
                              double expected, double rel_tolerance) {
  ModelSpec spec;
  spec.depth = depth;
  spec.base_width = width;
  const Model<float> model(spec, 0);
  const double n = static_cast<double>(count_params(model));
  const double rel = std::abs(n - expected) / expected;
  VerifyCheck c;
  c.name = "param count " + label;
  c.passed = rel <= rel_tolerance;
  c.measured = fmt("%.0f", n) + " vs " + fmt("%.0f", expected) + ", rel diff " +
               fmt("%.4f", rel);
  return c;
}

VerifyCheck check_beta_rule_ranges(std::size_t grid) {
  std::size_t violations = 0, total = 0;
  for (BackwardMode mode : {BackwardMode::M1, BackwardMode::M2, BackwardMode::M3,
                            BackwardMode::M4, BackwardMode::M5}) {
    for (std::size_t i = 0; i < grid; ++i) {
      const double a = static_cast<double>(i) / static_cast<double>(grid - 1);
      for (std::size_t k = 0; k < grid; ++k) {
        const double r = static_cast<double>(k) / static_cast<double>(grid - 1);
        ++total;
        if (!rule_in_range(mode, a, beta_rule(mode, a, r))) ++violations;
      }
    }
  }
  VerifyCheck c;
  c.name = "beta rule ranges M1-M5";
  c.passed = violations == 0;
  c.measured = std::to_string(violations) + " violations in " + std::to_string(total);
  return c;
}

template <typename T>
VerifyCheck check_backward_contract(bool swapped) {
  const std::size_t N = 3, C = 2, H = 3, W = 3;
  RngStream rng(11);
  std::size_t mismatches = 0, cases = 0;
  for (Level level : {Level::Batch, Level::Image}) {
    for (int k = 0; k <= 10; ++k) {
      Tape<T> tape;
      auto random = [&] {
        Tensor<T> t({N, C, H, W});
        for (auto& v : t.values()) v = static_cast<T>(rng.normal());
        return t;
      };
      Var<T> skip = tape.input(random(), true);
      Var<T> b1 = tape.input(random(), true);
      Var<T> b2 = tape.input(random(), true);
      ShakeCoefficients coeffs;
      coeffs.alpha.assign(N, 0.5);
      coeffs.beta.resize(N);
      for (std::size_t j = 0; j < N; ++j) {
        // Image level gets a different grid value per image.
        const int kj = level == Level::Batch ? k : static_cast<int>((k + 4 * j) % 11);
        coeffs.beta[j] = kj / 10.0;
      }
      coeffs.stage = ShakeCoefficients::Stage::Backward;
      Var<T> out = swapped ? shake_combine_swapped_backward(skip, b1, b2, coeffs, Phase::Train)
                           : shake_combine(skip, b1, b2, coeffs, Phase::Train);
      const Tensor<T> upstream = random();
      tape.backward(out, upstream);
      const std::size_t slice = C * H * W;
      for (std::size_t j = 0; j < N; ++j) {
        const T w1 = static_cast<T>(coeffs.beta[j]);
        const T w2 = static_cast<T>(1.0 - coeffs.beta[j]);
        for (std::size_t i = j * slice; i < (j + 1) * slice; ++i) {
          ++cases;
          if (tape.grad(b1.id())[i] != w1 * upstream[i] ||
              tape.grad(b2.id())[i] != w2 * upstream[i] ||
              tape.grad(skip.id())[i] != upstream[i]) {
            ++mismatches;
          }
        }
      }
    }
  }
  VerifyCheck c;
  c.name = std::string("shake backward contract (") + (sizeof(T) == 4 ? "float" : "double") +
           ")" + (swapped ? " (corrupted backward)" : "");
  c.passed = mismatches == 0;
  c.measured = std::to_string(mismatches) + " bitwise mismatches in " + std::to_string(cases);
  return c;
}

template VerifyCheck check_backward_contract<float>(bool);
template VerifyCheck check_backward_contract<double>(bool);

bool all_passed(const std::vector<VerifyCheck>& checks) {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

std::string format_check(const VerifyCheck& check) {
  return std::string(check.passed ? "PASS" : "FAIL") + "  " + check.name + ": " +
         check.measured;
}

std::vector<VerifyCheck> run_verification(const VerifyOptions& options, std::ostream* log) {
  const bool bad = options.corrupt_backward;
  std::vector<std::function<VerifyCheck()>> plan = {
      [] { return check_param_count("26 2x32d", 26, 32, 2.9e6, 0.02); },
      [] { return check_param_count("26 2x96d", 26, 96, 26.2e6, 0.02); },
      [] { return check_beta_rule_ranges(); },
      [=] { return check_backward_contract<float>(bad); },
      [=] { return check_backward_contract<double>(bad); },
      [] { return schedule_order_check(); },
      [] { return rejects_check(); },
      [=] { return gradcheck_check("shake_resnet 8", Family::ShakeResNet, 8, "E-E-B", bad); },
      [=] { return gradcheck_check("shake_resnet 8", Family::ShakeResNet, 8, "S-K-I", bad); },
      [=] { return gradcheck_check("shake_resnet 8", Family::ShakeResNet, 8, "S-K-B", bad); },
      [=] { return gradcheck_check("arch_a 8", Family::ArchA, 8, "E-E-B", bad); },
      [=] { return gradcheck_check("arch_b 8", Family::ArchB, 8, "S-K-I", bad); },
      [=] { return gradcheck_check("arch_c 14", Family::ArchC, 14, "S-K-I", bad); },
  };
  std::vector<VerifyCheck> checks;
  for (const auto& run : plan) {
    VerifyCheck c;
    try {
      c = run();
    } catch (const std::exception& e) {
      c.name = c.name.empty() ? "check" : c.name;
      c.passed = false;
      c.measured = std::string("error: ") + e.what();
    }
    if (log) *log << format_check(c) << std::endl;
    checks.push_back(std::move(c));
  }
  return checks;
}

}  // namespace shakelab
