#ifndef SDB_GRADCHECK_HPP_
#define SDB_GRADCHECK_HPP_

#include <cstddef>
#include <functional>

#include "sdb/tensor.hpp"

namespace sdb {

struct GradCheck {
  double max_rel_error = 0;  // max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central differences of `loss` w.r.t. every element of `x` (perturbed in
// place and restored), compared with `analytic`.
GradCheck check_gradient(const std::function<Real()>& loss, Tensor& x, const Tensor& analytic, Real h = 1e-5,
                         Real floor = 1e-6);

// Scalar variant.
GradCheck check_gradient(const std::function<Real()>& loss, Real& x, Real analytic, Real h = 1e-5,
                         Real floor = 1e-6);

}  // namespace sdb

#endif  // SDB_GRADCHECK_HPP_
