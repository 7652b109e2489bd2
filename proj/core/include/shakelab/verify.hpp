#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace shakelab {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string measured;  // human-readable measured quantity
};

struct VerifyOptions {
  // Runs the shake-dependent checks against a backward rule with beta and
  // 1 - beta swapped; every such check is expected to fail.
  bool corrupt_backward = false;
};

// Gradient checks, shake backward contract, beta-rule ranges and parameter
// counts. Each finished check is written to `log` as one line when given.
std::vector<VerifyCheck> run_verification(const VerifyOptions& options = {},
                                          std::ostream* log = nullptr);

bool all_passed(const std::vector<VerifyCheck>& checks);
std::string format_check(const VerifyCheck& check);

// Individual checks, shared with the test suites.
VerifyCheck check_param_count(const std::string& label, int depth, int width,
                              double expected, double rel_tolerance);
VerifyCheck check_beta_rule_ranges(std::size_t grid = 101);
template <typename T>
VerifyCheck check_backward_contract(bool swapped);

}  // namespace shakelab
