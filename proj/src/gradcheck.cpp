#include "tabatt/gradcheck.hpp"

#include <cmath>

#include "tabatt/train.hpp"

namespace tabatt {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape), 0.0);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps relu/max inputs away from their kinks so central differences are valid.
Tensor random_away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (int64_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.05, 2.0);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Zero-initialized biases chain into relu inputs that sit exactly on the
// kink; nudge every trainable scalar so the check runs at a generic point.
void jitter_params(ParamStore& ps, Rng& rng, double mag = 0.05) {
  for (auto& item : ps.items()) {
    if (!item.trainable) continue;
    for (int64_t i = 0; i < item.value.size(); ++i)
      item.value[i] += rng.uniform(-mag, mag);
  }
}

}  // namespace

double module_gradcheck(ParamStore& params, const std::function<Var(Ctx&)>& forward,
                        uint64_t weight_seed, double h) {
  Tensor weights;
  auto eval = [&](std::unordered_map<std::string, Tensor>* grads_out) -> double {
    Tape tape;
    Ctx ctx{tape, params, /*training=*/true};
    Var out = forward(ctx);
    if (weights.size() == 0) {
      Rng wrng(weight_seed);
      weights = random_tensor(out.shape(), wrng, -1.0, 1.0);
    }
    Var loss = sum_all(mul(out, constant(tape, weights)));
    const double lv = loss.val()[0];
    if (grads_out) {
      tape.backward(loss);
      for (const auto& item : params.items()) {
        if (item.trainable) grads_out->emplace(item.name, ctx.grad_of(item.name));
      }
    }
    return lv;
  };

  std::unordered_map<std::string, Tensor> analytic;
  eval(&analytic);

  double worst = 0.0;
  for (auto& item : params.items()) {
    if (!item.trainable) continue;
    Tensor& p = item.value;
    const Tensor& a = analytic.at(item.name);
    for (int64_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double lp = eval(nullptr);
      p[i] = orig - h;
      const double lm = eval(nullptr);
      p[i] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double rel = std::fabs(a[i] - num) / std::max(1.0, std::fabs(num));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.input_size = 12;  // stem halves this to 6
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.z = 4;
  cfg.heads = 2;
  cfg.d = 4;
  cfg.kind = ModelKind::TabAttention;
  return cfg;
}

namespace {

GradcheckEntry check(const std::string& name, double tol,
                     const std::function<double()>& run) {
  GradcheckEntry e;
  e.name = name;
  e.tolerance = tol;
  e.worst = run();
  e.pass = e.worst <= tol;
  return e;
}

double check_binary(BinOp op, bool away_from_zero_b) {
  Rng rng(11 + static_cast<uint64_t>(op));
  double worst = 0.0;
  // includes a broadcasting pair
  const std::vector<std::pair<Shape, Shape>> shapes = {
      {{3, 4}, {3, 4}}, {{2, 1}, {1, 3}}, {{4, 1, 1, 1}, {4, 2, 3, 3}}};
  for (const auto& [sa, sb] : shapes) {
    ParamStore ps;
    ps.add("a", random_tensor(sa, rng));
    ps.add("b", away_from_zero_b ? random_away_from_zero(sb, rng) : random_tensor(sb, rng));
    worst = std::max(worst, module_gradcheck(ps, [op](Ctx& ctx) {
      return binary(op, ctx.p("a"), ctx.p("b"));
    }, 5 + static_cast<uint64_t>(op)));
  }
  return worst;
}

double check_matmul() {
  Rng rng(23);
  double worst = 0.0;
  {
    ParamStore ps;
    ps.add("a", random_tensor({2, 3}, rng));
    ps.add("b", random_tensor({3, 2}, rng));
    worst = std::max(worst, module_gradcheck(
                                ps, [](Ctx& c) { return matmul(c.p("a"), c.p("b")); }, 31));
  }
  {
    ParamStore ps;
    ps.add("a", random_tensor({2, 5, 4}, rng));
    ps.add("b", random_tensor({2, 4, 5}, rng));
    worst = std::max(worst, module_gradcheck(
                                ps, [](Ctx& c) { return matmul(c.p("a"), c.p("b")); }, 32));
  }
  {
    // broadcast batch axis
    ParamStore ps;
    ps.add("a", random_tensor({3, 2, 4}, rng));
    ps.add("b", random_tensor({4, 3}, rng));
    worst = std::max(worst, module_gradcheck(
                                ps, [](Ctx& c) { return matmul(c.p("a"), c.p("b")); }, 33));
  }
  return worst;
}

double check_reduce(ReduceOp op) {
  Rng rng(41 + static_cast<uint64_t>(op));
  double worst = 0.0;
  const std::vector<std::vector<int>> axsets = {{0}, {1, 2}, {0, 1, 2, 3}};
  for (const auto& axes : axsets) {
    ParamStore ps;
    ps.add("x", random_away_from_zero({2, 3, 2, 2}, rng));
    for (bool keep : {true, false}) {
      worst = std::max(worst, module_gradcheck(ps, [op, axes, keep](Ctx& c) {
        return reduce(op, c.p("x"), axes, keep);
      }, 61 + static_cast<uint64_t>(op)));
    }
  }
  return worst;
}

double check_unary(UnaryOp op) {
  Rng rng(71 + static_cast<uint64_t>(op));
  ParamStore ps;
  ps.add("x", op == UnaryOp::Sqrt ? random_tensor({3, 4}, rng, 0.2, 3.0)
                                  : random_away_from_zero({3, 4}, rng));
  return module_gradcheck(
      ps, [op](Ctx& c) { return unary(op, c.p("x")); }, 77 + static_cast<uint64_t>(op));
}

double check_softmax() {
  Rng rng(83);
  ParamStore ps;
  ps.add("x", random_tensor({3, 5}, rng));
  return module_gradcheck(ps, [](Ctx& c) { return softmax_lastaxis(c.p("x")); }, 85);
}

double check_views() {
  Rng rng(91);
  ParamStore ps;
  ps.add("x", random_tensor({2, 3, 4}, rng));
  ps.add("y", random_tensor({2, 2, 4}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    Var r = reshape(c.p("x"), {4, 6});
    Var p = permute(reshape(r, {2, 3, 4}), {2, 0, 1});   // [4,2,3]
    Var s = slice(p, {{0, 4}, {0, 2}, {1, 3}});          // [4,2,2]
    Var cat = concat({s, permute(c.p("y"), {2, 0, 1})}, 2);
    return cat;
  }, 93);
}

double check_linear() {
  Rng rng(101);
  ParamStore ps;
  init_linear(ps, "lin", 3, 2, rng);
  ps.add("x", random_tensor({4, 3}, rng));
  return module_gradcheck(ps, [](Ctx& c) { return linear(c, "lin", c.p("x")); }, 103);
}

double check_mlp() {
  Rng rng(107);
  ParamStore ps;
  init_mlp(ps, "mlp", {3, 5, 2}, rng);
  ps.add("x", random_away_from_zero({4, 3}, rng));
  return module_gradcheck(ps, [](Ctx& c) { return mlp_forward(c, "mlp", c.p("x")); }, 109);
}

double check_conv2d() {
  Rng rng(113);
  ParamStore ps;
  init_conv2d(ps, "conv", 2, 3, 3, 3, rng);
  ps.add("x", random_tensor({2, 2, 5, 5}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    return conv2d(c, "conv", c.p("x"), {2, 1}, {1, 1});
  }, 115);
}

double check_conv3d() {
  Rng rng(121);
  ParamStore ps;
  init_conv3d(ps, "conv", 2, 2, 3, 3, 3, rng);
  ps.add("x", random_tensor({1, 2, 3, 4, 4}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    return conv3d(c, "conv", c.p("x"), {1, 2, 2}, {1, 1, 1});
  }, 123);
}

double check_batchnorm() {
  Rng rng(131);
  ParamStore ps;
  init_batchnorm(ps, "bn", 3);
  ps.add("x", random_tensor({4, 3, 2, 2}, rng));
  return module_gradcheck(ps, [](Ctx& c) { return batchnorm(c, "bn", c.p("x")); }, 133);
}

ModelConfig attention_unit_config() {
  ModelConfig cfg = tiny_model_config();
  cfg.sam_kernel = 3;
  return cfg;
}

double check_cam() {
  const ModelConfig cfg = attention_unit_config();
  Rng rng(141);
  ParamStore ps;
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  ps.add("s", random_away_from_zero({4, 4, 6, 6}, rng));
  ps.add("tab", random_tensor({3}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    return cam_forward(c, "attn.cam", c.p("s"), c.p("tab"));
  }, 143);
}

double check_sam() {
  const ModelConfig cfg = attention_unit_config();
  Rng rng(151);
  ParamStore ps;
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  ps.add("s", random_away_from_zero({4, 4, 6, 6}, rng));
  ps.add("tab", random_tensor({3}, rng));
  return module_gradcheck(ps, [cfg](Ctx& c) {
    return sam_forward(c, "attn.sam", c.p("s"), c.p("tab"), cfg.sam_kernel);
  }, 153);
}

double check_mhsa() {
  const ModelConfig cfg = attention_unit_config();
  Rng rng(161);
  ParamStore ps;
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  ps.add("seq", random_tensor({4, 3}, rng));
  return module_gradcheck(ps, [cfg](Ctx& c) {
    return mhsa_forward(c, "attn.tam", c.p("seq"), cfg.heads, cfg.d);
  }, 163);
}

double check_tam() {
  const ModelConfig cfg = attention_unit_config();
  Rng rng(171);
  ParamStore ps;
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  ps.add("s", random_away_from_zero({4, 4, 6, 6}, rng));
  ps.add("tab", random_tensor({3}, rng));
  return module_gradcheck(ps, [cfg](Ctx& c) {
    return tam_forward(c, "attn.tam", c.p("s"), c.p("tab"), cfg.heads, cfg.d);
  }, 173);
}

double check_tabattention() {
  const ModelConfig cfg = attention_unit_config();
  Rng rng(181);
  ParamStore ps;
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  ps.add("s", random_away_from_zero({4, 4, 6, 6}, rng));
  ps.add("tab", random_tensor({3}, rng));
  return module_gradcheck(ps, [cfg](Ctx& c) {
    return tabattention_forward(c, "attn", c.p("s"), c.p("tab"), cfg);
  }, 183);
}

double check_fusion(ModelKind kind) {
  ModelConfig cfg = tiny_model_config();
  cfg.kind = kind;
  Rng rng(191 + static_cast<uint64_t>(kind));
  ParamStore ps;
  init_model_params(ps, cfg, rng.next_u64());
  jitter_params(ps, rng);
  ps.add("video", random_tensor({2, 1, cfg.frames, cfg.input_size, cfg.input_size}, rng,
                                0.0, 1.0));
  ps.add("tab", random_tensor({2, cfg.tab_dim}, rng));
  return module_gradcheck(ps, [cfg, kind](Ctx& c) {
    std::optional<Var> tab;
    if (kind != ModelKind::ImageOnly) tab = c.p("tab");
    return backbone_forward(c, cfg, c.p("video"), tab);
  }, 197 + static_cast<uint64_t>(kind));
}

double check_mse() {
  Rng rng(211);
  ParamStore ps;
  ps.add("pred", random_tensor({5}, rng));
  ps.add("target", random_tensor({5}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    return mse_loss(c.p("pred"), c.p("target"));
  }, 213);
}

double check_full_model() {
  const ModelConfig cfg = tiny_model_config();
  Rng rng(221);
  ParamStore ps;
  init_model_params(ps, cfg, 4242);
  jitter_params(ps, rng);
  ps.add("video", random_tensor({2, 1, cfg.frames, cfg.input_size, cfg.input_size}, rng,
                                0.0, 1.0));
  ps.add("tab", random_tensor({2, cfg.tab_dim}, rng));
  ps.add("target", random_tensor({2}, rng));
  return module_gradcheck(ps, [cfg](Ctx& c) {
    Var pred = backbone_forward(c, cfg, c.p("video"), c.p("tab"));
    return mse_loss(pred, c.p("target"));
  }, 223);
}

// Sigmoid with a sign-flipped backward rule; exists to prove the checker
// catches wrong gradients.
double check_fault_injection() {
  Rng rng(231);
  ParamStore ps;
  ps.add("x", random_tensor({3, 3}, rng));
  return module_gradcheck(ps, [](Ctx& c) {
    Var x = c.p("x");
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    Tensor out(xv.shape(), 0.0);
    for (int64_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    const int ix = x.id;
    Var y = t.record(std::move(out), {ix}, nullptr);
    const int iy = y.id;
    return t.replace_backward(iy, [ix, iy](Tape& tp, const Tensor& g) {
      const Tensor& yv = tp.value(iy);
      Tensor gx(yv.shape(), 0.0);
      for (int64_t i = 0; i < yv.size(); ++i) gx[i] = -g[i] * yv[i] * (1.0 - yv[i]);
      tp.accumulate(ix, gx);
    });
  }, 233);
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(bool include_fault) {
  std::vector<GradcheckEntry> out;
  out.push_back(check("elementwise.add", 1e-6, [] { return check_binary(BinOp::Add, false); }));
  out.push_back(check("elementwise.sub", 1e-6, [] { return check_binary(BinOp::Sub, false); }));
  out.push_back(check("elementwise.mul", 1e-6, [] { return check_binary(BinOp::Mul, false); }));
  out.push_back(check("elementwise.div", 1e-6, [] { return check_binary(BinOp::Div, true); }));
  out.push_back(check("matmul", 1e-6, check_matmul));
  out.push_back(check("reduce.sum", 1e-6, [] { return check_reduce(ReduceOp::Sum); }));
  out.push_back(check("reduce.mean", 1e-6, [] { return check_reduce(ReduceOp::Mean); }));
  out.push_back(check("reduce.max", 1e-6, [] { return check_reduce(ReduceOp::Max); }));
  out.push_back(check("activation.relu", 1e-6, [] { return check_unary(UnaryOp::Relu); }));
  out.push_back(check("activation.sigmoid", 1e-6, [] { return check_unary(UnaryOp::Sigmoid); }));
  out.push_back(check("sqrt", 1e-6, [] { return check_unary(UnaryOp::Sqrt); }));
  out.push_back(check("softmax_lastaxis", 1e-6, check_softmax));
  out.push_back(check("reshape_permute_concat_slice", 1e-6, check_views));
  out.push_back(check("linear", 1e-6, check_linear));
  out.push_back(check("mlp", 1e-6, check_mlp));
  out.push_back(check("conv2d", 1e-6, check_conv2d));
  out.push_back(check("conv3d", 1e-6, check_conv3d));
  out.push_back(check("batchnorm", 1e-6, check_batchnorm));
  out.push_back(check("mse_loss", 1e-6, check_mse));
  out.push_back(check("cam_forward", 1e-6, check_cam));
  out.push_back(check("sam_forward", 1e-6, check_sam));
  out.push_back(check("mhsa_forward", 1e-6, check_mhsa));
  out.push_back(check("tam_forward", 1e-6, check_tam));
  out.push_back(check("tabattention_forward", 1e-6, check_tabattention));
  out.push_back(check("fusion.interactive", 1e-5, [] { return check_fusion(ModelKind::Interactive); }));
  out.push_back(check("fusion.daft", 1e-5, [] { return check_fusion(ModelKind::Daft); }));
  out.push_back(check("fusion.late_concat", 1e-5, [] { return check_fusion(ModelKind::LateConcat); }));
  out.push_back(check("full_model.tabattention", 1e-5, check_full_model));
  if (include_fault) {
    out.push_back(check("fault.sigmoid_sign_flip", 1e-6, check_fault_injection));
  }
  return out;
}

}  // namespace tabatt
