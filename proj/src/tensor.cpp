#include "tabatt/tensor.hpp"

#include <cmath>
#include <sstream>

namespace tabatt {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[static_cast<size_t>(i)] =
        strides[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
  }
  return strides;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeMismatch("tensor rank must be 1.." + std::to_string(kMaxRank) +
                        ", got " + shape_str(shape));
  }
  for (int64_t e : shape) {
    if (e < 1) throw ShapeMismatch("tensor extents must be >= 1, got " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
  }
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  const auto strides = row_major_strides(shape_);
  int64_t off = 0;
  size_t i = 0;
  for (int64_t v : idx) off += v * strides[i++];
  return data_[static_cast<size_t>(off)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeMismatch("shapes " + shape_str(a) + " and " + shape_str(b) +
                          " are not broadcast-compatible");
    }
    out[rank - 1 - i] = std::max(ea, eb);
  }
  return out;
}

std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  if (in.size() > out.size()) {
    throw ShapeMismatch("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
  }
  const auto in_strides = row_major_strides(in);
  std::vector<int64_t> strides(out.size(), 0);
  const size_t pad = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) {
    const int64_t ein = in[i];
    const int64_t eout = out[pad + i];
    if (ein == eout) {
      strides[pad + i] = in_strides[i];
    } else if (ein == 1) {
      strides[pad + i] = 0;
    } else {
      throw ShapeMismatch("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    }
  }
  return strides;
}

Tensor reduce_to(const Tensor& t, const Shape& target) {
  if (t.shape() == target) return t;
  Tensor out(target, 0.0);
  const auto strides = broadcast_strides(target, t.shape());
  const auto tshape = t.shape();
  const size_t rank = tshape.size();
  std::vector<int64_t> idx(rank, 0);
  const int64_t n = t.size();
  int64_t off = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    out[off] += t[lin];
    // advance multi-index
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      off += strides[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < tshape[static_cast<size_t>(ax)]) break;
      off -= strides[static_cast<size_t>(ax)] * tshape[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
  return out;
}

Tensor mm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeMismatch("matmul requires rank >= 2 operands");
  }
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const int64_t am = sa[sa.size() - 2], an = sa[sa.size() - 1];
  const int64_t bm = sb[sb.size() - 2], bn = sb[sb.size() - 1];
  const int64_t m = transpose_a ? an : am;
  const int64_t k = transpose_a ? am : an;
  const int64_t k2 = transpose_b ? bn : bm;
  const int64_t n = transpose_b ? bm : bn;
  if (k != k2) {
    throw ShapeMismatch("matmul inner extents differ: " + shape_str(sa) + " vs " +
                        shape_str(sb));
  }
  Shape batch_a(sa.begin(), sa.end() - 2);
  Shape batch_b(sb.begin(), sb.end() - 2);
  if (batch_a.empty()) batch_a = {1};
  if (batch_b.empty()) batch_b = {1};
  const Shape batch = broadcast_shape(batch_a, batch_b);
  const int64_t nbatch = numel(batch);
  const auto stra = broadcast_strides(batch_a, batch);
  const auto strb = broadcast_strides(batch_b, batch);

  Shape out_shape;
  if (sa.size() > 2 || sb.size() > 2) {
    out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
  } else {
    out_shape = {m, n};
  }
  Tensor out(out_shape, 0.0);

  const int64_t a_mat = am * an, b_mat = bm * bn;
  const auto batch_strides = row_major_strides(batch);
  for (int64_t bi = 0; bi < nbatch; ++bi) {
    int64_t ai = 0, bj = 0;
    int64_t rem = bi;
    for (size_t ax = 0; ax < batch.size(); ++ax) {
      const int64_t c = rem / batch_strides[ax];
      rem %= batch_strides[ax];
      ai += c * stra[ax];
      bj += c * strb[ax];
    }
    const double* pa = a.data() + ai * a_mat;
    const double* pb = b.data() + bj * b_mat;
    double* pc = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = transpose_a ? pa[kk * an + i] : pa[i * an + kk];
        if (av == 0.0) continue;
        for (int64_t j = 0; j < n; ++j) {
          const double bv = transpose_b ? pb[j * bn + kk] : pb[kk * bn + j];
          pc[i * n + j] += av * bv;
        }
      }
    }
  }
  return out;
}

}  // namespace tabatt
