#include "doctest.h"

#include <cmath>
#include <vector>

#include "tabatt/model.hpp"

using namespace tabatt;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape), 0.0);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void jitter(ParamStore& ps, Rng& rng, double mag = 0.3) {
  for (auto& item : ps.items()) {
    if (!item.trainable) continue;
    for (int64_t i = 0; i < item.value.size(); ++i) item.value[i] += rng.uniform(-mag, mag);
  }
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = W2 relu(W1 x + b1) + b2, weights laid out [out,in]
std::vector<double> mlp_oracle(const ParamStore& ps, const std::string& prefix,
                               const std::vector<double>& x) {
  const Tensor& w1 = ps.at(prefix + ".fc1.weight");
  const Tensor& b1 = ps.at(prefix + ".fc1.bias");
  const Tensor& w2 = ps.at(prefix + ".fc2.weight");
  const Tensor& b2 = ps.at(prefix + ".fc2.bias");
  std::vector<double> h(static_cast<size_t>(w1.extent(0)));
  for (int64_t o = 0; o < w1.extent(0); ++o) {
    double acc = b1[o];
    for (int64_t i = 0; i < w1.extent(1); ++i) acc += w1.at({o, i}) * x[static_cast<size_t>(i)];
    h[static_cast<size_t>(o)] = std::max(0.0, acc);
  }
  std::vector<double> y(static_cast<size_t>(w2.extent(0)));
  for (int64_t o = 0; o < w2.extent(0); ++o) {
    double acc = b2[o];
    for (int64_t i = 0; i < w2.extent(1); ++i) acc += w2.at({o, i}) * h[static_cast<size_t>(i)];
    y[static_cast<size_t>(o)] = acc;
  }
  return y;
}

std::vector<double> linear_oracle(const ParamStore& ps, const std::string& prefix,
                                  const std::vector<double>& x) {
  const Tensor& w = ps.at(prefix + ".weight");
  const Tensor& b = ps.at(prefix + ".bias");
  std::vector<double> y(static_cast<size_t>(w.extent(0)));
  for (int64_t o = 0; o < w.extent(0); ++o) {
    double acc = b[o];
    for (int64_t i = 0; i < w.extent(1); ++i) acc += w.at({o, i}) * x[static_cast<size_t>(i)];
    y[static_cast<size_t>(o)] = acc;
  }
  return y;
}

Tensor cam_oracle(const ParamStore& ps, const std::string& prefix, const Tensor& s,
                  const Tensor* tab) {
  const int64_t T = s.extent(0), C = s.extent(1), H = s.extent(2), W = s.extent(3);
  std::vector<double> tab_term(static_cast<size_t>(C), 0.0);
  if (tab) {
    std::vector<double> tv(tab->vec().begin(), tab->vec().end());
    tab_term = mlp_oracle(ps, prefix + ".mlp", mlp_oracle(ps, prefix + ".emb", tv));
  }
  Tensor out({T, C, 1, 1}, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    std::vector<double> fmax(static_cast<size_t>(C), -1e300), favg(static_cast<size_t>(C), 0.0);
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const double v = s.at({t, c, h, w});
          fmax[static_cast<size_t>(c)] = std::max(fmax[static_cast<size_t>(c)], v);
          favg[static_cast<size_t>(c)] += v / (H * W);
        }
    }
    const auto a = mlp_oracle(ps, prefix + ".mlp", fmax);
    const auto b = mlp_oracle(ps, prefix + ".mlp", favg);
    for (int64_t c = 0; c < C; ++c) {
      const size_t ci = static_cast<size_t>(c);
      out.at({t, c, 0, 0}) = sig(a[ci] + b[ci] + (tab ? tab_term[ci] : 0.0));
    }
  }
  return out;
}

Tensor sam_oracle(const ParamStore& ps, const std::string& prefix, const Tensor& s,
                  const Tensor* tab, int kernel) {
  const int64_t T = s.extent(0), C = s.extent(1), H = s.extent(2), W = s.extent(3);
  const int pad = (kernel - 1) / 2;
  const Tensor& cw = ps.at(prefix + ".conv.weight");
  const Tensor& cb = ps.at(prefix + ".conv.bias");
  std::vector<double> emb;
  if (tab) {
    std::vector<double> tv(tab->vec().begin(), tab->vec().end());
    emb = mlp_oracle(ps, prefix + ".emb", tv);  // H*W values
  }
  Tensor out({T, 1, H, W}, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    // channel 0: max over C, channel 1: mean over C, channel 2: tab embedding
    Tensor chans({tab ? int64_t{3} : int64_t{2}, H, W}, 0.0);
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double mx = -1e300, mn = 0;
        for (int64_t c = 0; c < C; ++c) {
          mx = std::max(mx, s.at({t, c, h, w}));
          mn += s.at({t, c, h, w}) / C;
        }
        chans.at({0, h, w}) = mx;
        chans.at({1, h, w}) = mn;
        if (tab) chans.at({2, h, w}) = emb[static_cast<size_t>(h * W + w)];
      }
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double acc = cb[0];
        for (int64_t c = 0; c < chans.extent(0); ++c)
          for (int64_t i = 0; i < kernel; ++i)
            for (int64_t j = 0; j < kernel; ++j) {
              const int64_t hi = h - pad + i, wi = w - pad + j;
              if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
              acc += chans.at({c, hi, wi}) * cw.at({0, c, i, j});
            }
        out.at({t, 0, h, w}) = sig(acc);
      }
  }
  return out;
}

Tensor tam_oracle(const ParamStore& ps, const std::string& prefix, const Tensor& s,
                  const Tensor* tab, int heads, int d) {
  const int64_t T = s.extent(0), C = s.extent(1), H = s.extent(2), W = s.extent(3);
  std::vector<double> emb;
  if (tab) {
    std::vector<double> tv(tab->vec().begin(), tab->vec().end());
    emb = mlp_oracle(ps, prefix + ".emb", tv);  // [T]
  }
  // sequence [T, 2 or 3]: (max, avg, tab)
  std::vector<std::vector<double>> seq(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    double mx = -1e300, mn = 0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          mx = std::max(mx, s.at({t, c, h, w}));
          mn += s.at({t, c, h, w}) / (C * H * W);
        }
    seq[static_cast<size_t>(t)] = {mx, mn};
    if (tab) seq[static_cast<size_t>(t)].push_back(emb[static_cast<size_t>(t)]);
  }
  const Tensor& r = ps.at(prefix + ".r");  // [T,d]
  std::vector<std::vector<double>> merged(static_cast<size_t>(T));
  for (int hd = 0; hd < heads; ++hd) {
    const std::string hp = prefix + ".head" + std::to_string(hd);
    std::vector<std::vector<double>> q(static_cast<size_t>(T)), k(static_cast<size_t>(T)),
        v(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) {
      q[static_cast<size_t>(t)] = linear_oracle(ps, hp + ".q", seq[static_cast<size_t>(t)]);
      k[static_cast<size_t>(t)] = linear_oracle(ps, hp + ".k", seq[static_cast<size_t>(t)]);
      v[static_cast<size_t>(t)] = linear_oracle(ps, hp + ".v", seq[static_cast<size_t>(t)]);
    }
    for (int64_t i = 0; i < T; ++i) {
      std::vector<double> scores(static_cast<size_t>(T));
      double mx = -1e300;
      for (int64_t j = 0; j < T; ++j) {
        double acc = 0;
        for (int dd = 0; dd < d; ++dd)
          acc += q[static_cast<size_t>(i)][static_cast<size_t>(dd)] *
                 (k[static_cast<size_t>(j)][static_cast<size_t>(dd)] + r.at({j, dd}));
        scores[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, scores[static_cast<size_t>(j)]);
      }
      double denom = 0;
      for (double sc : scores) denom += std::exp(sc - mx);
      std::vector<double> ho(static_cast<size_t>(d), 0.0);
      for (int64_t j = 0; j < T; ++j) {
        const double a = std::exp(scores[static_cast<size_t>(j)] - mx) / denom;
        for (int dd = 0; dd < d; ++dd)
          ho[static_cast<size_t>(dd)] += a * v[static_cast<size_t>(j)][static_cast<size_t>(dd)];
      }
      auto& m = merged[static_cast<size_t>(i)];
      m.insert(m.end(), ho.begin(), ho.end());
    }
  }
  Tensor out({T, 1, 1, 1}, 0.0);
  for (int64_t t = 0; t < T; ++t)
    out.at({t, 0, 0, 0}) = sig(linear_oracle(ps, prefix + ".out", merged[static_cast<size_t>(t)])[0]);
  return out;
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.input_size = 12;
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.z = 4;
  cfg.heads = 2;
  cfg.d = 4;
  cfg.sam_kernel = 3;
  return cfg;
}

struct AttnFixture {
  ParamStore ps;
  Tensor s, tab;
  ModelConfig cfg = tiny_cfg();

  explicit AttnFixture(uint64_t seed, bool do_jitter = true) {
    Rng rng(seed);
    init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
    if (do_jitter) jitter(ps, rng);
    s = rand_tensor({4, 4, 6, 6}, rng);
    tab = rand_tensor({3}, rng);
  }
};

}  // namespace

TEST_CASE("attention maps have the documented shapes") {
  AttnFixture f(1);
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Var s = tape.leaf(f.s);
  Var tab = tape.leaf(f.tab);
  CHECK(cam_forward(ctx, "attn.cam", s, tab).shape() == Shape{4, 4, 1, 1});
  CHECK(sam_forward(ctx, "attn.sam", s, tab, 3).shape() == Shape{4, 1, 6, 6});
  CHECK(tam_forward(ctx, "attn.tam", s, tab, 2, 4).shape() == Shape{4, 1, 1, 1});
  CHECK(tabattention_forward(ctx, "attn", s, tab, f.cfg).shape() == Shape{4, 4, 6, 6});
}

TEST_CASE("attention values lie strictly inside (0,1)") {
  for (uint64_t seed : {2u, 3u, 4u}) {
    AttnFixture f(seed);
    Tape tape;
    Ctx ctx{tape, f.ps, false};
    Var s = tape.leaf(f.s);
    Var tab = tape.leaf(f.tab);
    for (Var m : {cam_forward(ctx, "attn.cam", s, tab),
                  sam_forward(ctx, "attn.sam", s, tab, 3),
                  tam_forward(ctx, "attn.tam", s, tab, 2, 4)}) {
      for (int64_t i = 0; i < m.val().size(); ++i) {
        CHECK(m.val()[i] > 0.0);
        CHECK(m.val()[i] < 1.0);
      }
    }
  }
}

TEST_CASE("zero-initialized gate weights give exactly 0.5 everywhere") {
  AttnFixture f(5, /*do_jitter=*/false);
  for (auto& item : f.ps.items())
    for (int64_t i = 0; i < item.value.size(); ++i) item.value[i] = 0.0;
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Var m = cam_forward(ctx, "attn.cam", tape.leaf(f.s), tape.leaf(f.tab));
  for (int64_t i = 0; i < m.val().size(); ++i) CHECK(m.val()[i] == 0.5);
  Var ms = sam_forward(ctx, "attn.sam", tape.leaf(f.s), tape.leaf(f.tab), 3);
  for (int64_t i = 0; i < ms.val().size(); ++i) CHECK(ms.val()[i] == 0.5);
  Var mt = tam_forward(ctx, "attn.tam", tape.leaf(f.s), tape.leaf(f.tab), 2, 4);
  for (int64_t i = 0; i < mt.val().size(); ++i) CHECK(mt.val()[i] == 0.5);
}

TEST_CASE("saturated gates reduce the module to the identity") {
  AttnFixture f(6, /*do_jitter=*/false);
  // zero every weight, then drive the final pre-sigmoid biases far positive
  for (auto& item : f.ps.items())
    for (int64_t i = 0; i < item.value.size(); ++i) item.value[i] = 0.0;
  f.ps.at("attn.cam.mlp.fc2.bias") = Tensor({4}, 60.0);
  f.ps.at("attn.sam.conv.bias") = Tensor({1}, 60.0);
  f.ps.at("attn.tam.out.bias") = Tensor({1}, 60.0);
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Var out = tabattention_forward(ctx, "attn", tape.leaf(f.s), tape.leaf(f.tab), f.cfg);
  for (int64_t i = 0; i < f.s.size(); ++i)
    CHECK(std::fabs(out.val()[i] - f.s[i]) <= 1e-6);
}

TEST_CASE("cam matches per-frame loop oracle") {
  for (uint64_t seed = 10; seed < 15; ++seed) {
    AttnFixture f(seed);
    Tape tape;
    Ctx ctx{tape, f.ps, false};
    Var m = cam_forward(ctx, "attn.cam", tape.leaf(f.s), tape.leaf(f.tab));
    Tensor want = cam_oracle(f.ps, "attn.cam", f.s, &f.tab);
    REQUIRE(m.shape() == want.shape());
    for (int64_t i = 0; i < want.size(); ++i) CHECK(std::fabs(m.val()[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("sam matches per-frame loop oracle") {
  for (uint64_t seed = 20; seed < 25; ++seed) {
    AttnFixture f(seed);
    Tape tape;
    Ctx ctx{tape, f.ps, false};
    Var m = sam_forward(ctx, "attn.sam", tape.leaf(f.s), tape.leaf(f.tab), 3);
    Tensor want = sam_oracle(f.ps, "attn.sam", f.s, &f.tab, 3);
    REQUIRE(m.shape() == want.shape());
    for (int64_t i = 0; i < want.size(); ++i) CHECK(std::fabs(m.val()[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("tam matches loop oracle including relative position term") {
  for (uint64_t seed = 30; seed < 35; ++seed) {
    AttnFixture f(seed);
    // the learned r starts at zero; give it structure so the test covers it
    Rng rr(seed * 7 + 1);
    Tensor& r = f.ps.at("attn.tam.r");
    for (int64_t i = 0; i < r.size(); ++i) r[i] = rr.uniform(-1.0, 1.0);
    Tape tape;
    Ctx ctx{tape, f.ps, false};
    Var m = tam_forward(ctx, "attn.tam", tape.leaf(f.s), tape.leaf(f.tab), 2, 4);
    Tensor want = tam_oracle(f.ps, "attn.tam", f.s, &f.tab, 2, 4);
    REQUIRE(m.shape() == want.shape());
    for (int64_t i = 0; i < want.size(); ++i) CHECK(std::fabs(m.val()[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("mhsa with zero value projection returns the output bias") {
  AttnFixture f(40);
  f.ps.at("attn.tam.head0.v.weight") = Tensor({4, 3}, 0.0);
  f.ps.at("attn.tam.head0.v.bias") = Tensor({4}, 0.0);
  f.ps.at("attn.tam.head1.v.weight") = Tensor({4, 3}, 0.0);
  f.ps.at("attn.tam.head1.v.bias") = Tensor({4}, 0.0);
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Rng rng(41);
  Var seq = tape.leaf(rand_tensor({4, 3}, rng));
  Var out = mhsa_forward(ctx, "attn.tam", seq, 2, 4);
  const double bias = f.ps.at("attn.tam.out.bias")[0];
  for (int64_t i = 0; i < out.val().size(); ++i)
    CHECK(out.val()[i] == doctest::Approx(bias).epsilon(1e-12));
}

TEST_CASE("mhsa degenerates gracefully for a single-step sequence") {
  ModelConfig cfg = tiny_cfg();
  cfg.frames = 1;
  ParamStore ps;
  Rng rng(42);
  init_tabattention_params(ps, "attn", {4, 1, 6, 6, 3}, cfg, rng);
  jitter(ps, rng);
  Tape tape;
  Ctx ctx{tape, ps, false};
  Var seq = tape.leaf(rand_tensor({1, 3}, rng));
  Var out = mhsa_forward(ctx, "attn.tam", seq, 2, 4);
  CHECK(out.shape() == Shape{1, 1});
  // softmax over one key is exactly 1, so output = Wout [v0, v1] + b
  std::vector<double> sv(seq.val().vec().begin(), seq.val().vec().end());
  std::vector<double> m;
  for (int h = 0; h < 2; ++h) {
    auto v = linear_oracle(ps, "attn.tam.head" + std::to_string(h) + ".v", sv);
    m.insert(m.end(), v.begin(), v.end());
  }
  CHECK(out.val()[0] == doctest::Approx(linear_oracle(ps, "attn.tam.out", m)[0]).epsilon(1e-12));
}

TEST_CASE("mhsa with zero r is equivariant to frame permutation") {
  AttnFixture f(44);
  f.ps.at("attn.tam.r") = Tensor::zeros({4, 4});
  Rng rng(45);
  Tensor seqv = rand_tensor({4, 3}, rng);
  Tensor perm({4, 3}, 0.0);
  const int order[4] = {2, 0, 3, 1};
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 3; ++c) perm.at({t, c}) = seqv.at({order[t], c});
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Var a = mhsa_forward(ctx, "attn.tam", tape.leaf(seqv), 2, 4);
  Var b = mhsa_forward(ctx, "attn.tam", tape.leaf(perm), 2, 4);
  for (int64_t t = 0; t < 4; ++t)
    CHECK(b.val().at({t, 0}) == doctest::Approx(a.val().at({order[t], 0})).epsilon(1e-12));
}

TEST_CASE("disabled submodules are skipped; all-off is the identity") {
  AttnFixture f(50);
  ModelConfig cfg = f.cfg;
  cfg.use_cam = cfg.use_sam = cfg.use_tam = false;
  Tape tape;
  Ctx ctx{tape, f.ps, false};
  Var s = tape.leaf(f.s);
  Var out = tabattention_forward(ctx, "attn", s, tape.leaf(f.tab), cfg);
  for (int64_t i = 0; i < f.s.size(); ++i) CHECK(out.val()[i] == f.s[i]);

  // cam-only equals applying the cam gate manually
  ModelConfig cam_only = f.cfg;
  cam_only.use_sam = cam_only.use_tam = false;
  Var got = tabattention_forward(ctx, "attn", s, tape.leaf(f.tab), cam_only);
  Var want = mul(cam_forward(ctx, "attn.cam", s, tape.leaf(f.tab)), s);
  for (int64_t i = 0; i < f.s.size(); ++i)
    CHECK(got.val()[i] == doctest::Approx(want.val()[i]).epsilon(1e-14));
}

TEST_CASE("use_tab=false drops every tabular branch") {
  ModelConfig cfg = tiny_cfg();
  cfg.use_tab = false;
  ParamStore ps;
  Rng rng(52);
  init_tabattention_params(ps, "attn", {4, 4, 6, 6, 3}, cfg, rng);
  CHECK(!ps.contains("attn.cam.emb.fc1.weight"));
  CHECK(!ps.contains("attn.sam.emb.fc1.weight"));
  CHECK(!ps.contains("attn.tam.emb.fc1.weight"));
  // SAM conv consumes 2 channels instead of 3
  CHECK(ps.at("attn.sam.conv.weight").shape() == Shape{1, 2, 3, 3});
  jitter(ps, rng);
  Tape tape;
  Ctx ctx{tape, ps, false};
  Tensor s = rand_tensor({4, 4, 6, 6}, rng);
  Var out = tabattention_forward(ctx, "attn", tape.leaf(s), std::nullopt, cfg);
  CHECK(out.shape() == Shape{4, 4, 6, 6});
  // oracles with tab disabled
  Tensor mc = cam_oracle(ps, "attn.cam", s, nullptr);
  Tape t2;
  Ctx c2{t2, ps, false};
  Var got = cam_forward(c2, "attn.cam", t2.leaf(s), std::nullopt);
  for (int64_t i = 0; i < mc.size(); ++i) CHECK(std::fabs(got.val()[i] - mc[i]) < 1e-10);
}

TEST_CASE("backbone forward is batch equivariant in eval mode") {
  ModelConfig cfg = tiny_cfg();
  ParamStore ps;
  init_model_params(ps, cfg, 99);
  Rng rng(100);
  jitter(ps, rng, 0.05);
  Tensor video = rand_tensor({2, 1, 4, 12, 12}, rng, 0.0, 1.0);
  Tensor tab = rand_tensor({2, 3}, rng);
  Tape tape;
  Ctx ctx{tape, ps, false};
  Var batch = backbone_forward(ctx, cfg, tape.leaf(video), tape.leaf(tab));
  REQUIRE(batch.shape() == Shape{2});
  for (int64_t n = 0; n < 2; ++n) {
    Tensor v1({1, 1, 4, 12, 12}, 0.0), t1({1, 3}, 0.0);
    for (int64_t i = 0; i < v1.size(); ++i) v1[i] = video[n * v1.size() + i];
    for (int64_t i = 0; i < 3; ++i) t1[i] = tab.at({n, i});
    Tape tp;
    Ctx c{tp, ps, false};
    Var single = backbone_forward(c, cfg, tp.leaf(v1), tp.leaf(t1));
    CHECK(single.val()[0] == doctest::Approx(batch.val()[n]).epsilon(1e-10));
  }
}

TEST_CASE("backbone output is sensitive to the tabular input") {
  ModelConfig cfg = tiny_cfg();
  ParamStore ps;
  init_model_params(ps, cfg, 7);
  Rng rng(8);
  jitter(ps, rng, 0.1);
  Tensor video = rand_tensor({1, 1, 4, 12, 12}, rng, 0.0, 1.0);
  Tensor tab1 = rand_tensor({1, 3}, rng);
  Tensor tab2 = rand_tensor({1, 3}, rng);
  Tape t1, t2;
  Ctx c1{t1, ps, false}, c2{t2, ps, false};
  const double y1 = backbone_forward(c1, cfg, t1.leaf(video), t1.leaf(tab1)).val()[0];
  const double y2 = backbone_forward(c2, cfg, t2.leaf(video), t2.leaf(tab2)).val()[0];
  CHECK(y1 != y2);
}

TEST_CASE("backbone validates input layout and required tab") {
  ModelConfig cfg = tiny_cfg();
  ParamStore ps;
  init_model_params(ps, cfg, 1);
  Tape tape;
  Ctx ctx{tape, ps, false};
  Var bad = tape.leaf(Tensor({1, 2, 4, 12, 12}, 0.5));
  CHECK_THROWS_AS(backbone_forward(ctx, cfg, bad, std::nullopt), ShapeMismatch);
  Var good = tape.leaf(Tensor({1, 1, 4, 12, 12}, 0.5));
  CHECK_THROWS_AS(backbone_forward(ctx, cfg, good, std::nullopt), ShapeMismatch);
}

TEST_CASE("stage spatial extents follow the stem-then-downsample rule") {
  ModelConfig cfg;  // defaults: input 64, widths {8,16,32}
  const auto s = stage_spatial_extents(cfg);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == 32);  // stem
  CHECK(s[1] == 32);  // stage 1, stride 1
  CHECK(s[2] == 16);
  CHECK(s[3] == 8);
}

TEST_CASE("backbone trainable-parameter count is identical across fusion variants") {
  std::vector<int64_t> counts;
  for (ModelKind k : {ModelKind::ImageOnly, ModelKind::LateConcat, ModelKind::Interactive,
                      ModelKind::Daft, ModelKind::TabAttention}) {
    ModelConfig cfg = tiny_cfg();
    cfg.kind = k;
    ParamStore ps;
    init_model_params(ps, cfg, 3);
    counts.push_back(backbone_param_count(ps));
  }
  for (size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] == counts[0]);
}

TEST_CASE("model config json round-trips") {
  ModelConfig cfg = tiny_cfg();
  cfg.kind = ModelKind::Daft;
  cfg.use_sam = false;
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.kind == ModelKind::Daft);
  CHECK(back.widths == cfg.widths);
  CHECK(back.use_sam == false);
  CHECK(back.frames == 4);
  CHECK(back.sam_kernel == 3);
}

TEST_CASE("model kind strings round-trip and reject junk") {
  for (ModelKind k : {ModelKind::ImageOnly, ModelKind::TabularLinreg, ModelKind::LateConcat,
                      ModelKind::Interactive, ModelKind::Daft, ModelKind::TabAttention}) {
    CHECK(model_kind_from_string(to_string(k)) == k);
  }
  CHECK(model_kind_from_string("linreg") == ModelKind::TabularLinreg);
  CHECK_THROWS_AS(model_kind_from_string("resnet"), InvalidSpec);
}

TEST_CASE("cam/sam gate parameter counts are independent of clip length") {
  // shared per-frame weights: only TAM's r may grow with T
  auto count_non_r = [](int frames) {
    ModelConfig cfg = tiny_cfg();
    cfg.frames = frames;
    cfg.use_tam = false;
    ParamStore ps;
    Rng rng(1);
    init_tabattention_params(ps, "attn", {4, frames, 6, 6, 3}, cfg, rng);
    return ps.scalar_count(true);
  };
  CHECK(count_non_r(4) == count_non_r(16));
}

TEST_CASE("seed-identical model init is bitwise reproducible") {
  ModelConfig cfg = tiny_cfg();
  ParamStore a, b;
  init_model_params(a, cfg, 123);
  init_model_params(b, cfg, 123);
  REQUIRE(a.items().size() == b.items().size());
  for (size_t i = 0; i < a.items().size(); ++i) {
    CHECK(a.items()[i].name == b.items()[i].name);
    for (int64_t j = 0; j < a.items()[i].value.size(); ++j)
      CHECK(a.items()[i].value[j] == b.items()[i].value[j]);
  }
}
