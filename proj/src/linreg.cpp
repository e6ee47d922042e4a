#include "tabatt/linreg.hpp"

#include <cmath>
#include <vector>

namespace tabatt {

Tensor linreg_fit(const Tensor& X, const Tensor& y, double ridge) {
  if (X.rank() != 2 || y.rank() != 1 || X.extent(0) != y.extent(0)) {
    throw ShapeMismatch("linreg_fit expects X [n,D], y [n]");
  }
  if (ridge < 0.0) throw InvalidSpec("ridge must be >= 0");
  const int64_t n = X.extent(0);
  const int64_t d = X.extent(1);
  if (n <= d + 1) throw TooFewSamples("linreg needs n > D+1");
  const int64_t p = d + 1;  // intercept column appended

  // A = Xa^T Xa + ridge * diag(1,...,1,0), b = Xa^T y
  std::vector<double> A(static_cast<size_t>(p * p), 0.0);
  std::vector<double> b(static_cast<size_t>(p), 0.0);
  auto xa = [&](int64_t row, int64_t col) -> double {
    return col < d ? X[row * d + col] : 1.0;
  };
  for (int64_t i = 0; i < p; ++i) {
    for (int64_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (int64_t r = 0; r < n; ++r) s += xa(r, i) * xa(r, j);
      A[static_cast<size_t>(i * p + j)] = s;
    }
    if (i < d) A[static_cast<size_t>(i * p + i)] += ridge;
    double s = 0.0;
    for (int64_t r = 0; r < n; ++r) s += xa(r, i) * y[r];
    b[static_cast<size_t>(i)] = s;
  }

  // Gaussian elimination with partial pivoting; pivot ratio as a cheap
  // condition estimate.
  double max_pivot = 0.0;
  for (int64_t col = 0; col < p; ++col) {
    int64_t piv = col;
    for (int64_t r = col + 1; r < p; ++r) {
      if (std::fabs(A[static_cast<size_t>(r * p + col)]) >
          std::fabs(A[static_cast<size_t>(piv * p + col)])) {
        piv = r;
      }
    }
    const double pv = A[static_cast<size_t>(piv * p + col)];
    max_pivot = std::max(max_pivot, std::fabs(pv));
    if (!(std::fabs(pv) > max_pivot * 1e-12) || pv == 0.0) {
      throw SingularSystem("regularized Gram matrix is numerically singular");
    }
    if (piv != col) {
      for (int64_t j = 0; j < p; ++j) {
        std::swap(A[static_cast<size_t>(col * p + j)], A[static_cast<size_t>(piv * p + j)]);
      }
      std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(piv)]);
    }
    for (int64_t r = col + 1; r < p; ++r) {
      const double f = A[static_cast<size_t>(r * p + col)] / A[static_cast<size_t>(col * p + col)];
      if (f == 0.0) continue;
      for (int64_t j = col; j < p; ++j) {
        A[static_cast<size_t>(r * p + j)] -= f * A[static_cast<size_t>(col * p + j)];
      }
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  Tensor w({p}, 0.0);
  for (int64_t r = p - 1; r >= 0; --r) {
    double s = b[static_cast<size_t>(r)];
    for (int64_t j = r + 1; j < p; ++j) s -= A[static_cast<size_t>(r * p + j)] * w[j];
    w[r] = s / A[static_cast<size_t>(r * p + r)];
  }
  return w;
}

Tensor linreg_predict(const Tensor& X, const Tensor& weights) {
  if (X.rank() != 2 || weights.rank() != 1 || X.extent(1) + 1 != weights.extent(0)) {
    throw ShapeMismatch("linreg_predict shape mismatch");
  }
  const int64_t n = X.extent(0);
  const int64_t d = X.extent(1);
  Tensor out({n}, 0.0);
  for (int64_t r = 0; r < n; ++r) {
    double s = weights[d];
    for (int64_t j = 0; j < d; ++j) s += weights[j] * X[r * d + j];
    out[r] = s;
  }
  return out;
}

}  // namespace tabatt
