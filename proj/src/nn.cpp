#include "tabatt/nn.hpp"

#include <cmath>

namespace tabatt {

Tensor& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) {
    throw InvalidSpec("duplicate parameter name: " + name);
  }
  index_[name] = items_.size();
  items_.push_back(Item{name, std::move(value), trainable});
  return items_.back().value;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidSpec("unknown parameter: " + name);
  return items_[it->second].value;
}

const Tensor& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

int64_t ParamStore::scalar_count(bool trainable_only) const {
  int64_t n = 0;
  for (const Item& it : items_) {
    if (!trainable_only || it.trainable) n += it.value.size();
  }
  return n;
}

Var Ctx::p(const std::string& name) {
  auto it = node_of.find(name);
  if (it != node_of.end()) return Var{&tape, it->second};
  Var v = tape.leaf(params.at(name));
  node_of[name] = v.id;
  return v;
}

Tensor Ctx::grad_of(const std::string& name) const {
  auto it = node_of.find(name);
  if (it == node_of.end()) return Tensor(params.at(name).shape(), 0.0);
  return tape.grad(it->second);
}

namespace {
Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(shape, 0.0);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}
}  // namespace

void init_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.add(prefix + ".weight", he_uniform({out, in}, in, rng));
  ps.add(prefix + ".bias", Tensor::zeros({out}));
}

void init_mlp(ParamStore& ps, const std::string& prefix, const MLPSpec& spec, Rng& rng) {
  init_linear(ps, prefix + ".fc1", spec.in_dim, spec.hidden_dim, rng);
  init_linear(ps, prefix + ".fc2", spec.hidden_dim, spec.out_dim, rng);
}

void init_conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int kh,
                 int kw, Rng& rng) {
  ps.add(prefix + ".weight",
         he_uniform({cout, cin, kh, kw}, static_cast<int64_t>(cin) * kh * kw, rng));
  ps.add(prefix + ".bias", Tensor::zeros({cout}));
}

void init_conv3d(ParamStore& ps, const std::string& prefix, int cin, int cout, int kt,
                 int kh, int kw, Rng& rng) {
  ps.add(prefix + ".weight",
         he_uniform({cout, cin, kt, kh, kw}, static_cast<int64_t>(cin) * kt * kh * kw, rng));
  ps.add(prefix + ".bias", Tensor::zeros({cout}));
}

void init_batchnorm(ParamStore& ps, const std::string& prefix, int channels) {
  ps.add(prefix + ".gamma", Tensor::ones({channels}));
  ps.add(prefix + ".beta", Tensor::zeros({channels}));
  ps.add(prefix + ".running_mean", Tensor::zeros({channels}), /*trainable=*/false);
  ps.add(prefix + ".running_var", Tensor::ones({channels}), /*trainable=*/false);
}

Var linear_apply(Var x, Var w, Var b) {
  const Shape xs = x.shape();
  const Shape& ws = w.shape();
  const int64_t in = ws[1];
  const int64_t out = ws[0];
  if (xs.back() != in) {
    throw ShapeMismatch("linear input extent " + std::to_string(xs.back()) +
                        " does not match weight in-dim " + std::to_string(in));
  }
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < xs.size(); ++i) rows *= xs[i];
  Var x2 = reshape(x, {rows, in});
  Var y2 = add(matmul(x2, permute(w, {1, 0})), b);
  Shape ys(xs.begin(), xs.end() - 1);
  ys.push_back(out);
  return reshape(y2, ys);
}

Var linear(Ctx& ctx, const std::string& prefix, Var x) {
  return linear_apply(x, ctx.p(prefix + ".weight"), ctx.p(prefix + ".bias"));
}

Var mlp_forward(Ctx& ctx, const std::string& prefix, Var x) {
  return linear(ctx, prefix + ".fc2", relu(linear(ctx, prefix + ".fc1", x)));
}

namespace {
// Validates before computing the output extent: stride feeds a division.
int64_t checked_out_extent(const char* what, int64_t in, int64_t k, int stride, int pad) {
  if (k < 1 || k % 2 == 0) throw InvalidGeometry(std::string(what) + ": kernel extents must be odd");
  if (stride < 1) throw InvalidGeometry(std::string(what) + ": stride must be >= 1");
  if (pad < 0) throw InvalidGeometry(std::string(what) + ": padding must be >= 0");
  const int64_t out = conv_out_extent(in, static_cast<int>(k), pad, stride);
  if (out < 1) {
    throw InvalidGeometry(std::string(what) + ": output extent < 1 (input " +
                          std::to_string(in) + ", kernel " + std::to_string(k) + ")");
  }
  return out;
}
}  // namespace

Var conv2d(Var x, Var w, Var b, std::array<int, 2> stride, std::array<int, 2> pad) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (xv.rank() != 4 || wv.rank() != 4) throw ShapeMismatch("conv2d expects rank-4 input and weight");
  const int64_t N = xv.extent(0), Cin = xv.extent(1), H = xv.extent(2), W = xv.extent(3);
  const int64_t Cout = wv.extent(0), kh = wv.extent(2), kw = wv.extent(3);
  if (wv.extent(1) != Cin) throw ShapeMismatch("conv2d channel mismatch");
  if (bv.rank() != 1 || bv.extent(0) != Cout) throw ShapeMismatch("conv2d bias shape");
  const int64_t Ho = checked_out_extent("conv2d", H, kh, stride[0], pad[0]);
  const int64_t Wo = checked_out_extent("conv2d", W, kw, stride[1], pad[1]);

  Tensor out({N, Cout, Ho, Wo}, 0.0);
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Cout; ++co) {
      double* o = out.data() + ((n * Cout + co) * Ho) * Wo;
      for (int64_t oh = 0; oh < Ho; ++oh) {
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = bv[co];
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double* xp = xv.data() + ((n * Cin + ci) * H) * W;
            const double* wp = wv.data() + ((co * Cin + ci) * kh) * kw;
            for (int64_t i = 0; i < kh; ++i) {
              const int64_t ih = oh * stride[0] - pad[0] + i;
              if (ih < 0 || ih >= H) continue;
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t iw = ow * stride[1] - pad[1] + j;
                if (iw < 0 || iw >= W) continue;
                acc += xp[ih * W + iw] * wp[i * kw + j];
              }
            }
          }
          o[oh * Wo + ow] = acc;
        }
      }
    }
  }

  const int ix = x.id, iw_id = w.id, ib = b.id;
  return tape.record(
      std::move(out), {ix, iw_id, ib},
      [ix, iw_id, ib, stride, pad, N, Cin, Cout, H, W, Ho, Wo, kh, kw](Tape& t,
                                                                       const Tensor& g) {
        const Tensor& xv2 = t.value(ix);
        const Tensor& wv2 = t.value(iw_id);
        Tensor gx(xv2.shape(), 0.0);
        Tensor gw(wv2.shape(), 0.0);
        Tensor gb({Cout}, 0.0);
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t co = 0; co < Cout; ++co) {
            const double* gp = g.data() + ((n * Cout + co) * Ho) * Wo;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const double gv = gp[oh * Wo + ow];
                if (gv == 0.0) continue;
                gb[co] += gv;
                for (int64_t ci = 0; ci < Cin; ++ci) {
                  const double* xp = xv2.data() + ((n * Cin + ci) * H) * W;
                  double* gxp = gx.data() + ((n * Cin + ci) * H) * W;
                  const double* wp = wv2.data() + ((co * Cin + ci) * kh) * kw;
                  double* gwp = gw.data() + ((co * Cin + ci) * kh) * kw;
                  for (int64_t i = 0; i < kh; ++i) {
                    const int64_t ih = oh * stride[0] - pad[0] + i;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t j = 0; j < kw; ++j) {
                      const int64_t iw2 = ow * stride[1] - pad[1] + j;
                      if (iw2 < 0 || iw2 >= W) continue;
                      gxp[ih * W + iw2] += gv * wp[i * kw + j];
                      gwp[i * kw + j] += gv * xp[ih * W + iw2];
                    }
                  }
                }
              }
            }
          }
        }
        t.accumulate(ix, gx);
        t.accumulate(iw_id, gw);
        t.accumulate(ib, gb);
      });
}

Var conv2d(Ctx& ctx, const std::string& prefix, Var x, std::array<int, 2> stride,
           std::array<int, 2> pad) {
  return conv2d(x, ctx.p(prefix + ".weight"), ctx.p(prefix + ".bias"), stride, pad);
}

Var conv3d(Var x, Var w, Var b, std::array<int, 3> stride, std::array<int, 3> pad) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (xv.rank() != 5 || wv.rank() != 5) throw ShapeMismatch("conv3d expects rank-5 input and weight");
  const int64_t N = xv.extent(0), Cin = xv.extent(1), T = xv.extent(2), H = xv.extent(3),
                W = xv.extent(4);
  const int64_t Cout = wv.extent(0), kt = wv.extent(2), kh = wv.extent(3), kw = wv.extent(4);
  if (wv.extent(1) != Cin) throw ShapeMismatch("conv3d channel mismatch");
  if (bv.rank() != 1 || bv.extent(0) != Cout) throw ShapeMismatch("conv3d bias shape");
  const int64_t To = checked_out_extent("conv3d", T, kt, stride[0], pad[0]);
  const int64_t Ho = checked_out_extent("conv3d", H, kh, stride[1], pad[1]);
  const int64_t Wo = checked_out_extent("conv3d", W, kw, stride[2], pad[2]);

  Tensor out({N, Cout, To, Ho, Wo}, 0.0);
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Cout; ++co) {
      double* o = out.data() + (((n * Cout + co) * To) * Ho) * Wo;
      for (int64_t ot = 0; ot < To; ++ot) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
          for (int64_t ow = 0; ow < Wo; ++ow) {
            double acc = bv[co];
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const double* xp = xv.data() + (((n * Cin + ci) * T) * H) * W;
              const double* wp = wv.data() + (((co * Cin + ci) * kt) * kh) * kw;
              for (int64_t a = 0; a < kt; ++a) {
                const int64_t it = ot * stride[0] - pad[0] + a;
                if (it < 0 || it >= T) continue;
                for (int64_t i = 0; i < kh; ++i) {
                  const int64_t ih = oh * stride[1] - pad[1] + i;
                  if (ih < 0 || ih >= H) continue;
                  for (int64_t j = 0; j < kw; ++j) {
                    const int64_t iw2 = ow * stride[2] - pad[2] + j;
                    if (iw2 < 0 || iw2 >= W) continue;
                    acc += xp[(it * H + ih) * W + iw2] * wp[(a * kh + i) * kw + j];
                  }
                }
              }
            }
            o[(ot * Ho + oh) * Wo + ow] = acc;
          }
        }
      }
    }
  }

  const int ix = x.id, iw_id = w.id, ib = b.id;
  return tape.record(
      std::move(out), {ix, iw_id, ib},
      [ix, iw_id, ib, stride, pad, N, Cin, Cout, T, H, W, To, Ho, Wo, kt, kh,
       kw](Tape& t, const Tensor& g) {
        const Tensor& xv2 = t.value(ix);
        const Tensor& wv2 = t.value(iw_id);
        Tensor gx(xv2.shape(), 0.0);
        Tensor gw(wv2.shape(), 0.0);
        Tensor gb({Cout}, 0.0);
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t co = 0; co < Cout; ++co) {
            const double* gp = g.data() + (((n * Cout + co) * To) * Ho) * Wo;
            for (int64_t ot = 0; ot < To; ++ot) {
              for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                  const double gv = gp[(ot * Ho + oh) * Wo + ow];
                  if (gv == 0.0) continue;
                  gb[co] += gv;
                  for (int64_t ci = 0; ci < Cin; ++ci) {
                    const double* xp = xv2.data() + (((n * Cin + ci) * T) * H) * W;
                    double* gxp = gx.data() + (((n * Cin + ci) * T) * H) * W;
                    const double* wp = wv2.data() + (((co * Cin + ci) * kt) * kh) * kw;
                    double* gwp = gw.data() + (((co * Cin + ci) * kt) * kh) * kw;
                    for (int64_t a = 0; a < kt; ++a) {
                      const int64_t it = ot * stride[0] - pad[0] + a;
                      if (it < 0 || it >= T) continue;
                      for (int64_t i = 0; i < kh; ++i) {
                        const int64_t ih = oh * stride[1] - pad[1] + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t j = 0; j < kw; ++j) {
                          const int64_t iw3 = ow * stride[2] - pad[2] + j;
                          if (iw3 < 0 || iw3 >= W) continue;
                          gxp[(it * H + ih) * W + iw3] += gv * wp[(a * kh + i) * kw + j];
                          gwp[(a * kh + i) * kw + j] += gv * xp[(it * H + ih) * W + iw3];
                        }
                      }
                    }
                  }
                }
              }
            }
          }
        }
        t.accumulate(ix, gx);
        t.accumulate(iw_id, gw);
        t.accumulate(ib, gb);
      });
}

Var conv3d(Ctx& ctx, const std::string& prefix, Var x, std::array<int, 3> stride,
           std::array<int, 3> pad) {
  return conv3d(x, ctx.p(prefix + ".weight"), ctx.p(prefix + ".bias"), stride, pad);
}

Var batchnorm(Ctx& ctx, const std::string& prefix, Var x, double momentum, double eps) {
  const Tensor& xv = x.val();
  if (xv.rank() < 2) throw ShapeMismatch("batchnorm expects rank >= 2");
  const int64_t C = xv.extent(1);
  std::vector<int> axes;
  int64_t count = 1;
  for (int i = 0; i < xv.rank(); ++i) {
    if (i == 1) continue;
    axes.push_back(i);
    count *= xv.extent(i);
  }
  Shape cshape(static_cast<size_t>(xv.rank()), 1);
  cshape[1] = C;
  Var gamma = reshape(ctx.p(prefix + ".gamma"), cshape);
  Var beta = reshape(ctx.p(prefix + ".beta"), cshape);

  if (ctx.training) {
    if (count < 2) {
      throw DegenerateBatch("batchnorm train mode needs >= 2 values per channel, got " +
                            std::to_string(count));
    }
    Var m = mean(x, axes, /*keepdims=*/true);
    Var xc = sub(x, m);
    Var v = mean(mul(xc, xc), axes, /*keepdims=*/true);
    Var y = add(mul(gamma, div(xc, sqrt(shift(v, eps)))), beta);

    Tensor& rm = ctx.params.at(prefix + ".running_mean");
    Tensor& rv = ctx.params.at(prefix + ".running_var");
    const Tensor& mv = m.val();
    const Tensor& vv = v.val();
    for (int64_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mv[c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * vv[c];
    }
    return y;
  }

  Var rm = reshape(constant(ctx.tape, ctx.params.at(prefix + ".running_mean")), cshape);
  Var rv = reshape(constant(ctx.tape, ctx.params.at(prefix + ".running_var")), cshape);
  return add(mul(gamma, div(sub(x, rm), sqrt(shift(rv, eps)))), beta);
}

}  // namespace tabatt
