#include "tabatt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tabatt {

const Tensor& Var::val() const { return tape->value(id); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Tensor& g) {
  Tensor& buf = grads_[static_cast<size_t>(id)];
  if (!buf.same_shape(g)) {
    throw ShapeMismatch("gradient shape " + shape_str(g.shape()) +
                        " does not match primal shape " + shape_str(buf.shape()));
  }
  double* dst = buf.data();
  const double* src = g.data();
  const int64_t n = g.size();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  touched_[static_cast<size_t>(id)] = true;
}

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.id < 0 ||
      loss.id >= static_cast<int>(nodes_.size())) {
    throw NonScalarLoss("loss node does not belong to this tape");
  }
  if (value(loss.id).size() != 1) {
    throw NonScalarLoss("backward requires a scalar-shaped loss, got " +
                        shape_str(value(loss.id).shape()));
  }
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.emplace_back(n.value.shape(), 0.0);
  touched_.assign(nodes_.size(), false);
  grads_[static_cast<size_t>(loss.id)] = Tensor::ones({1});
  touched_[static_cast<size_t>(loss.id)] = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.backward || !touched_[static_cast<size_t>(i)]) continue;
    n.backward(*this, grads_[static_cast<size_t>(i)]);
  }
}

Var constant(Tape& tape, Tensor value) { return tape.leaf(std::move(value)); }

namespace {

// Elementwise map over the broadcast of two tensors.
template <typename F>
Tensor ew_map(const Tensor& a, const Tensor& b, F f) {
  const Shape os = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  Tensor out(os, 0.0);
  const size_t rank = os.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  const int64_t n = out.size();
  for (int64_t lin = 0; lin < n; ++lin) {
    out[lin] = f(a[oa], b[ob]);
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      const size_t u = static_cast<size_t>(ax);
      idx[u]++;
      oa += sa[u];
      ob += sb[u];
      if (idx[u] < os[u]) break;
      oa -= sa[u] * os[u];
      ob -= sb[u] * os[u];
      idx[u] = 0;
    }
  }
  return out;
}

void check_axes(const std::vector<int>& axes, int rank) {
  if (axes.empty()) throw InvalidAxis("reduction requires at least one axis");
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= rank) {
      throw InvalidAxis("axis " + std::to_string(ax) + " out of range for rank " +
                        std::to_string(rank));
    }
    if (seen[static_cast<size_t>(ax)]) {
      throw InvalidAxis("duplicate reduction axis " + std::to_string(ax));
    }
    seen[static_cast<size_t>(ax)] = true;
  }
}

}  // namespace

Var binary(BinOp op, Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  Tensor out;
  switch (op) {
    case BinOp::Add: out = ew_map(av, bv, [](double x, double y) { return x + y; }); break;
    case BinOp::Sub: out = ew_map(av, bv, [](double x, double y) { return x - y; }); break;
    case BinOp::Mul: out = ew_map(av, bv, [](double x, double y) { return x * y; }); break;
    case BinOp::Div: out = ew_map(av, bv, [](double x, double y) { return x / y; }); break;
  }
  const int ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [op, ia, ib](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    switch (op) {
      case BinOp::Add:
        t.accumulate(ia, reduce_to(g, x.shape()));
        t.accumulate(ib, reduce_to(g, y.shape()));
        break;
      case BinOp::Sub:
        t.accumulate(ia, reduce_to(g, x.shape()));
        t.accumulate(ib, reduce_to(ew_map(g, g, [](double gv, double) { return -gv; }),
                                   y.shape()));
        break;
      case BinOp::Mul:
        t.accumulate(ia, reduce_to(ew_map(g, y, [](double gv, double yv) { return gv * yv; }),
                                   x.shape()));
        t.accumulate(ib, reduce_to(ew_map(g, x, [](double gv, double xv) { return gv * xv; }),
                                   y.shape()));
        break;
      case BinOp::Div: {
        t.accumulate(ia, reduce_to(ew_map(g, y, [](double gv, double yv) { return gv / yv; }),
                                   x.shape()));
        Tensor xdivy2 = ew_map(x, y, [](double xv, double yv) { return -xv / (yv * yv); });
        t.accumulate(ib, reduce_to(ew_map(g, xdivy2, [](double gv, double s) { return gv * s; }),
                                   y.shape()));
        break;
      }
    }
  });
}

Var add(Var a, Var b) { return binary(BinOp::Add, a, b); }
Var sub(Var a, Var b) { return binary(BinOp::Sub, a, b); }
Var mul(Var a, Var b) { return binary(BinOp::Mul, a, b); }
Var div(Var a, Var b) { return binary(BinOp::Div, a, b); }

Var unary(UnaryOp op, Var x) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  Tensor out(xv.shape(), 0.0);
  const int64_t n = xv.size();
  for (int64_t i = 0; i < n; ++i) {
    switch (op) {
      case UnaryOp::Relu: out[i] = xv[i] > 0.0 ? xv[i] : 0.0; break;
      case UnaryOp::Sigmoid: out[i] = 1.0 / (1.0 + std::exp(-xv[i])); break;
      case UnaryOp::Sqrt: out[i] = std::sqrt(xv[i]); break;
      case UnaryOp::Neg: out[i] = -xv[i]; break;
    }
  }
  const int ix = x.id;
  Var y = tape.record(std::move(out), {ix}, nullptr);
  const int iy = y.id;
  // Patch in backward with access to both primal and output values.
  return tape.replace_backward(iy, [op, ix, iy](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& yv = t.value(iy);
    Tensor gx(xv2.shape(), 0.0);
    const int64_t m = xv2.size();
    for (int64_t i = 0; i < m; ++i) {
      switch (op) {
        case UnaryOp::Relu: gx[i] = xv2[i] > 0.0 ? g[i] : 0.0; break;
        case UnaryOp::Sigmoid: gx[i] = g[i] * yv[i] * (1.0 - yv[i]); break;
        case UnaryOp::Sqrt: gx[i] = g[i] * 0.5 / yv[i]; break;
        case UnaryOp::Neg: gx[i] = -g[i]; break;
      }
    }
    t.accumulate(ix, gx);
  });
}

Var relu(Var x) { return unary(UnaryOp::Relu, x); }
Var sigmoid(Var x) { return unary(UnaryOp::Sigmoid, x); }
Var sqrt(Var x) { return unary(UnaryOp::Sqrt, x); }
Var neg(Var x) { return unary(UnaryOp::Neg, x); }

Var scale(Var x, double c) {
  const Tensor& xv = x.val();
  Tensor out(xv.shape(), 0.0);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, c](Tape& t, const Tensor& g) {
    Tensor gx(g.shape(), 0.0);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] = g[i] * c;
    t.accumulate(ix, gx);
  });
}

Var shift(Var x, double c) {
  const Tensor& xv = x.val();
  Tensor out(xv.shape(), 0.0);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  const int ix = x.id;
  return x.tape->record(std::move(out), {ix},
                        [ix](Tape& t, const Tensor& g) { t.accumulate(ix, g); });
}

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape;
  Tensor out = mm(a.val(), b.val());
  const int ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    t.accumulate(ia, reduce_to(mm(g, bv, false, true), av.shape()));
    t.accumulate(ib, reduce_to(mm(av, g, true, false), bv.shape()));
  });
}

Var reduce(ReduceOp op, Var x, std::vector<int> axes, bool keepdims) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const Shape& in_shape = xv.shape();
  const int rank = xv.rank();
  check_axes(axes, rank);

  Shape keep_shape = in_shape;
  int64_t count = 1;
  for (int ax : axes) {
    count *= in_shape[static_cast<size_t>(ax)];
    keep_shape[static_cast<size_t>(ax)] = 1;
  }
  Tensor out(keep_shape, op == ReduceOp::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<int64_t> argmax;
  if (op == ReduceOp::Max) argmax.assign(static_cast<size_t>(out.size()), -1);

  const auto ostr = broadcast_strides(keep_shape, in_shape);
  const size_t r = in_shape.size();
  std::vector<int64_t> idx(r, 0);
  int64_t off = 0;
  const int64_t n = xv.size();
  for (int64_t lin = 0; lin < n; ++lin) {
    switch (op) {
      case ReduceOp::Sum:
      case ReduceOp::Mean: out[off] += xv[lin]; break;
      case ReduceOp::Max:
        if (xv[lin] > out[off]) {
          out[off] = xv[lin];
          argmax[static_cast<size_t>(off)] = lin;
        }
        break;
    }
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      const size_t u = static_cast<size_t>(ax);
      idx[u]++;
      off += ostr[u];
      if (idx[u] < in_shape[u]) break;
      off -= ostr[u] * in_shape[u];
      idx[u] = 0;
    }
  }
  if (op == ReduceOp::Mean) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(count);
  }

  Shape final_shape;
  if (keepdims) {
    final_shape = keep_shape;
  } else {
    std::vector<bool> reduced(static_cast<size_t>(rank), false);
    for (int ax : axes) reduced[static_cast<size_t>(ax)] = true;
    for (int i = 0; i < rank; ++i) {
      if (!reduced[static_cast<size_t>(i)]) final_shape.push_back(in_shape[static_cast<size_t>(i)]);
    }
    if (final_shape.empty()) final_shape = {1};
  }
  Tensor final_out(final_shape, std::move(out.vec()));

  const int ix = x.id;
  return tape.record(
      std::move(final_out), {ix},
      [op, ix, in_shape, keep_shape, count, argmax = std::move(argmax),
       ostr](Tape& t, const Tensor& g) {
        Tensor gx(in_shape, 0.0);
        if (op == ReduceOp::Max) {
          for (size_t oi = 0; oi < argmax.size(); ++oi) {
            gx[argmax[oi]] += g[static_cast<int64_t>(oi)];
          }
        } else {
          const double inv = op == ReduceOp::Mean ? 1.0 / static_cast<double>(count) : 1.0;
          const size_t r2 = in_shape.size();
          std::vector<int64_t> idx2(r2, 0);
          int64_t off2 = 0;
          const int64_t n2 = gx.size();
          for (int64_t lin = 0; lin < n2; ++lin) {
            gx[lin] = g[off2] * inv;
            for (int ax = static_cast<int>(r2) - 1; ax >= 0; --ax) {
              const size_t u = static_cast<size_t>(ax);
              idx2[u]++;
              off2 += ostr[u];
              if (idx2[u] < in_shape[u]) break;
              off2 -= ostr[u] * in_shape[u];
              idx2[u] = 0;
            }
          }
        }
        t.accumulate(ix, gx);
      });
}

Var sum(Var x, std::vector<int> axes, bool keepdims) {
  return reduce(ReduceOp::Sum, x, std::move(axes), keepdims);
}
Var mean(Var x, std::vector<int> axes, bool keepdims) {
  return reduce(ReduceOp::Mean, x, std::move(axes), keepdims);
}
Var reduce_max(Var x, std::vector<int> axes, bool keepdims) {
  return reduce(ReduceOp::Max, x, std::move(axes), keepdims);
}

Var sum_all(Var x) {
  std::vector<int> axes(static_cast<size_t>(x.val().rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return sum(x, std::move(axes), false);
}

Var mean_all(Var x) {
  std::vector<int> axes(static_cast<size_t>(x.val().rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return mean(x, std::move(axes), false);
}

Var softmax_lastaxis(Var x) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const int64_t width = xv.shape().back();
  const int64_t rows = xv.size() / width;
  Tensor out(xv.shape(), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* o = out.data() + r * width;
    double mx = in[0];
    for (int64_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (int64_t j = 0; j < width; ++j) o[j] /= denom;
  }
  const int ix = x.id;
  Var y = tape.record(std::move(out), {ix}, nullptr);
  const int iy = y.id;
  return tape.replace_backward(iy, [ix, iy, rows, width](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(iy);
    Tensor gx(yv.shape(), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = yv.data() + r * width;
      const double* gr = g.data() + r * width;
      double dot = 0.0;
      for (int64_t j = 0; j < width; ++j) dot += yr[j] * gr[j];
      double* gxr = gx.data() + r * width;
      for (int64_t j = 0; j < width; ++j) gxr[j] = yr[j] * (gr[j] - dot);
    }
    t.accumulate(ix, gx);
  });
}

Var reshape(Var x, Shape new_shape) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  if (numel(new_shape) != xv.size()) {
    throw ShapeMismatch("reshape from " + shape_str(xv.shape()) + " to " +
                        shape_str(new_shape) + " changes element count");
  }
  Tensor out(new_shape, xv.vec());
  const int ix = x.id;
  const Shape old_shape = xv.shape();
  return tape.record(std::move(out), {ix}, [ix, old_shape](Tape& t, const Tensor& g) {
    t.accumulate(ix, Tensor(old_shape, g.vec()));
  });
}

namespace {
Tensor permute_raw(const Tensor& x, const std::vector<int>& order) {
  const Shape& in_shape = x.shape();
  const size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[static_cast<size_t>(order[i])];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<int64_t> src_strides(rank);
  for (size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[static_cast<size_t>(order[i])];
  Tensor out(out_shape, 0.0);
  std::vector<int64_t> idx(rank, 0);
  int64_t off = 0;
  const int64_t n = out.size();
  for (int64_t lin = 0; lin < n; ++lin) {
    out[lin] = x[off];
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      const size_t u = static_cast<size_t>(ax);
      idx[u]++;
      off += src_strides[u];
      if (idx[u] < out_shape[u]) break;
      off -= src_strides[u] * out_shape[u];
      idx[u] = 0;
    }
  }
  return out;
}
}  // namespace

Var permute(Var x, std::vector<int> order) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const int rank = xv.rank();
  if (static_cast<int>(order.size()) != rank) {
    throw InvalidAxis("permutation length must equal rank");
  }
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int ax : order) {
    if (ax < 0 || ax >= rank || seen[static_cast<size_t>(ax)]) {
      throw InvalidAxis("invalid permutation");
    }
    seen[static_cast<size_t>(ax)] = true;
  }
  Tensor out = permute_raw(xv, order);
  std::vector<int> inverse(order.size());
  for (size_t i = 0; i < order.size(); ++i) inverse[static_cast<size_t>(order[i])] = static_cast<int>(i);
  const int ix = x.id;
  return tape.record(std::move(out), {ix},
                     [ix, inverse = std::move(inverse)](Tape& t, const Tensor& g) {
                       t.accumulate(ix, permute_raw(g, inverse));
                     });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat requires at least one input");
  Tape& tape = *parts[0].tape;
  const int rank = parts[0].val().rank();
  if (axis < 0 || axis >= rank) throw InvalidAxis("concat axis out of range");
  Shape out_shape = parts[0].val().shape();
  int64_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.val().shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeMismatch("concat rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && s[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)]) {
        throw ShapeMismatch("concat extents disagree off-axis");
      }
    }
    total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];

  Tensor out(out_shape, 0.0);
  std::vector<int> ids;
  std::vector<int64_t> extents;
  int64_t pos = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.val();
    const int64_t e = pv.shape()[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = pv.data() + o * e * inner;
      double* dst = out.data() + o * total * inner + pos * inner;
      std::copy(src, src + e * inner, dst);
    }
    ids.push_back(p.id);
    extents.push_back(e);
    pos += e;
  }
  return tape.record(std::move(out), ids,
                     [ids, extents, outer, inner, total](Tape& t, const Tensor& g) {
                       int64_t pos2 = 0;
                       for (size_t pi = 0; pi < ids.size(); ++pi) {
                         const int64_t e = extents[pi];
                         Tensor gp(t.value(ids[pi]).shape(), 0.0);
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* src = g.data() + o * total * inner + pos2 * inner;
                           double* dst = gp.data() + o * e * inner;
                           std::copy(src, src + e * inner, dst);
                         }
                         t.accumulate(ids[pi], gp);
                         pos2 += e;
                       }
                     });
}

Var slice(Var x, const std::vector<std::pair<int64_t, int64_t>>& ranges) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const Shape& in_shape = xv.shape();
  const size_t rank = in_shape.size();
  if (ranges.size() != rank) throw InvalidAxis("slice requires a range per axis");
  Shape out_shape(rank);
  int64_t base = 0;
  const auto in_strides = row_major_strides(in_shape);
  for (size_t i = 0; i < rank; ++i) {
    const auto [start, stop] = ranges[i];
    if (start < 0 || stop > in_shape[i] || start >= stop) {
      throw InvalidAxis("slice range out of bounds on axis " + std::to_string(i));
    }
    out_shape[i] = stop - start;
    base += start * in_strides[i];
  }
  Tensor out(out_shape, 0.0);
  std::vector<int64_t> idx(rank, 0);
  int64_t off = base;
  const int64_t n = out.size();
  for (int64_t lin = 0; lin < n; ++lin) {
    out[lin] = xv[off];
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      const size_t u = static_cast<size_t>(ax);
      idx[u]++;
      off += in_strides[u];
      if (idx[u] < out_shape[u]) break;
      off -= in_strides[u] * out_shape[u];
      idx[u] = 0;
    }
  }
  const int ix = x.id;
  return tape.record(std::move(out), {ix},
                     [ix, in_shape, in_strides, out_shape, base](Tape& t, const Tensor& g) {
                       Tensor gx(in_shape, 0.0);
                       const size_t r2 = in_shape.size();
                       std::vector<int64_t> idx2(r2, 0);
                       int64_t off2 = base;
                       const int64_t n2 = g.size();
                       for (int64_t lin = 0; lin < n2; ++lin) {
                         gx[off2] += g[lin];
                         for (int ax = static_cast<int>(r2) - 1; ax >= 0; --ax) {
                           const size_t u = static_cast<size_t>(ax);
                           idx2[u]++;
                           off2 += in_strides[u];
                           if (idx2[u] < out_shape[u]) break;
                           off2 -= in_strides[u] * out_shape[u];
                           idx2[u] = 0;
                         }
                       }
                       t.accumulate(ix, gx);
                     });
}

}  // namespace tabatt
