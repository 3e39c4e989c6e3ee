#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only:
// the numeric side evaluates loss values with no tape installed.

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "mmalign/autodiff.hpp"

namespace mmalign::testing {

struct GradCheck {
  double worst_relative_error = 0.0;
  std::size_t worst_parameter = 0;
};

inline double relative_error(const ad::Matrix& analytic, const ad::Matrix& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-10});
  return (analytic - numeric).norm() / scale;
}

// Compares d(loss)/d(param) per parameter tensor via relative Frobenius error.
inline GradCheck check_gradients(std::vector<ad::Tensor>& params,
                                 const std::function<ad::Tensor()>& loss_fn,
                                 double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  {
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    ad::backward(loss_fn());
  }
  GradCheck result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Matrix& value = params[k].mutable_value();
    ad::Matrix numeric(value.rows(), value.cols());
    for (ad::Index i = 0; i < value.size(); ++i) {
      double& x = value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_fn().item();
      x = saved - h;
      const double down = loss_fn().item();
      x = saved;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double err = relative_error(params[k].grad(), numeric);
    if (err > result.worst_relative_error) {
      result.worst_relative_error = err;
      result.worst_parameter = k;
    }
  }
  return result;
}

inline ad::Matrix random_matrix(std::mt19937_64& rng, ad::Index rows, ad::Index cols,
                                double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace mmalign::testing
