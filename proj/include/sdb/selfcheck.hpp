#ifndef SDB_SELFCHECK_HPP_
#define SDB_SELFCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "sdb/losses.hpp"

namespace sdb {

struct SelfcheckOptions {
  Softplus softplus = kStableSoftplus;  // swapped out by fault injection
  std::uint64_t seed = 1;
  int metric_instances = 200;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

// Gradient checks, mask persistence, metric oracle, schedule table and loss
// constants. Each check runs in isolation; an exception counts as a failure.
std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opts = {});

// Correct value, wrong derivative.
Softplus broken_softplus();

}  // namespace sdb

#endif  // SDB_SELFCHECK_HPP_
