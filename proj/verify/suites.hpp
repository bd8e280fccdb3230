#pragma once

// Named invariant sweeps runnable from the command line (`khpn verify`) and
// reused by the test suite. Each suite returns pass/fail plus a short
// human-readable detail string (worst error, counterexample, ...).

#include <cstdint>
#include <string>
#include <vector>

namespace khpn::verify {

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Runs every registered suite with the given seed. Suites are deterministic
// for a fixed seed.
std::vector<SuiteResult> run_all(uint64_t seed);

// Runs the suites whose name is in `names` (exact match). Unknown names
// produce a failed result so typos do not silently pass.
std::vector<SuiteResult> run_named(const std::vector<std::string>& names,
                                   uint64_t seed);

// All registered suite names, in execution order.
std::vector<std::string> suite_names();

}  // namespace khpn::verify
