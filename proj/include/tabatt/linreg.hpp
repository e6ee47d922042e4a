#pragma once

#include "tabatt/tensor.hpp"

namespace tabatt {

// Ridge-regularized least squares with intercept via normal equations.
// X: [n,D], y: [n]; returns [D+1] weights, intercept last. The intercept is
// not penalized. Throws SingularSystem when the regularized system is
// numerically singular.
Tensor linreg_fit(const Tensor& X, const Tensor& y, double ridge);

// w.x + intercept for each row of X.
Tensor linreg_predict(const Tensor& X, const Tensor& weights);

}  // namespace tabatt
