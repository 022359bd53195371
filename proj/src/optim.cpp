#include "sdb/optim.hpp"

#include <cmath>

namespace sdb {

void Adam::step(const nn::ParamRefs& params, double lr) {
  for (auto* p : params) {
    auto& s = slots_[p->name];
    if (s.m.size() != p->value.size()) {
      s.m = Tensor(p->value.shape());
      s.v = Tensor(p->value.shape());
      s.t = 0;
    }
    ++s.t;
    const double c1 = 1 - std::pow(beta1_, static_cast<double>(s.t));
    const double c2 = 1 - std::pow(beta2_, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real g = p->grad[i];
      s.m[i] = beta1_ * s.m[i] + (1 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1 - beta2_) * g * g;
      p->value[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

}  // namespace sdb
