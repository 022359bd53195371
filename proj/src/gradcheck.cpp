#include "sdb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sdb/errors.hpp"

namespace sdb {

namespace {

double rel_error(Real a, Real n, Real floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

GradCheck check_gradient(const std::function<Real()>& loss, Tensor& x, const Tensor& analytic, Real h, Real floor) {
  if (x.shape() != analytic.shape()) throw ParameterError("check_gradient: gradient shape mismatch");
  GradCheck r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real keep = x[i];
    x[i] = keep + h;
    const Real up = loss();
    x[i] = keep - h;
    const Real down = loss();
    x[i] = keep;
    const double e = rel_error(analytic[i], (up - down) / (2 * h), floor);
    if (!(e <= r.max_rel_error)) {
      r.max_rel_error = e;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

GradCheck check_gradient(const std::function<Real()>& loss, Real& x, Real analytic, Real h, Real floor) {
  const Real keep = x;
  x = keep + h;
  const Real up = loss();
  x = keep - h;
  const Real down = loss();
  x = keep;
  return {rel_error(analytic, (up - down) / (2 * h), floor), 0, 1};
}

}  // namespace sdb
