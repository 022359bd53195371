#ifndef SDB_OPTIM_HPP_
#define SDB_OPTIM_HPP_

#include <map>
#include <string>

#include "sdb/nn.hpp"

namespace sdb {

// Adam without weight decay. State is per parameter (keyed by name) and only
// the parameters passed to step() are touched, so branches that took no part
// in a step keep their values and moments bit-for-bit.
class Adam {
 public:
  struct Slot {
    Tensor m, v;
    long long t = 0;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const nn::ParamRefs& params, double lr);

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  double beta1_, beta2_, eps_;
  std::map<std::string, Slot> slots_;
};

}  // namespace sdb

#endif  // SDB_OPTIM_HPP_
