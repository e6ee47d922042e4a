#include "doctest.h"

#include <cmath>
#include <vector>

#include "tabatt/linreg.hpp"
#include "tabatt/model.hpp"

using namespace tabatt;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape), 0.0);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Symmetric eigendecomposition by cyclic Jacobi rotations; used to build an
// independent pseudo-inverse oracle for the normal equations.
void jacobi_eig(std::vector<std::vector<double>> a, std::vector<double>& evals,
                std::vector<std::vector<double>>& evecs) {
  const size_t n = a.size();
  evecs.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) evecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (size_t i = 0; i < n; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (size_t i = 0; i < n; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
          const double vip = evecs[i][p], viq = evecs[i][q];
          evecs[i][p] = c * vip - s * viq;
          evecs[i][q] = s * vip + c * viq;
        }
      }
  }
  evals.resize(n);
  for (size_t i = 0; i < n; ++i) evals[i] = a[i][i];
}

// Ridge solution via eigendecomposition of the augmented Gram matrix:
// w = V diag(1/(lambda_i + r_i)) V^T A^T y with the intercept unpenalized.
std::vector<double> pinv_oracle(const Tensor& X, const Tensor& y, double ridge) {
  const size_t n = static_cast<size_t>(X.extent(0));
  const size_t D = static_cast<size_t>(X.extent(1));
  const size_t m = D + 1;
  std::vector<std::vector<double>> A(n, std::vector<double>(m, 1.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < D; ++j) A[i][j] = X.at({static_cast<int64_t>(i), static_cast<int64_t>(j)});
  std::vector<std::vector<double>> G(m, std::vector<double>(m, 0.0));
  std::vector<double> Aty(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < m; ++j)
      for (size_t r = 0; r < n; ++r) G[i][j] += A[r][i] * A[r][j];
    for (size_t r = 0; r < n; ++r) Aty[i] += A[r][i] * y[static_cast<int64_t>(r)];
  }
  for (size_t i = 0; i < D; ++i) G[i][i] += ridge;  // intercept not penalized
  std::vector<double> evals;
  std::vector<std::vector<double>> V;
  jacobi_eig(G, evals, V);
  std::vector<double> w(m, 0.0);
  for (size_t k = 0; k < m; ++k) {
    if (std::fabs(evals[k]) < 1e-10) continue;  // pseudo-inverse: drop null space
    double proj = 0;
    for (size_t i = 0; i < m; ++i) proj += V[i][k] * Aty[i];
    proj /= evals[k];
    for (size_t i = 0; i < m; ++i) w[i] += V[i][k] * proj;
  }
  return w;
}

}  // namespace

TEST_CASE("linreg exactly recovers a noiseless linear model") {
  Rng rng(1);
  const int64_t n = 40, D = 4;
  Tensor X = rand_tensor({n, D}, rng);
  const std::vector<double> w_true = {2.0, -1.5, 0.25, 3.0};
  const double b_true = 7.5;
  Tensor y({n}, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = b_true;
    for (int64_t j = 0; j < D; ++j) acc += X.at({i, j}) * w_true[static_cast<size_t>(j)];
    y[i] = acc;
  }
  Tensor w = linreg_fit(X, y, 0.0);
  REQUIRE(w.shape() == Shape{D + 1});
  for (int64_t j = 0; j < D; ++j)
    CHECK(w[j] == doctest::Approx(w_true[static_cast<size_t>(j)]).epsilon(1e-9));
  CHECK(w[D] == doctest::Approx(b_true).epsilon(1e-9));
  Tensor pred = linreg_predict(X, w);
  for (int64_t i = 0; i < n; ++i) CHECK(pred[i] == doctest::Approx(y[i]).epsilon(1e-9));
}

TEST_CASE("linreg matches the pseudo-inverse oracle to 1e-8") {
  Rng rng(2);
  for (int inst = 0; inst < 20; ++inst) {
    const int64_t n = rng.uniform_int(12, 40), D = rng.uniform_int(1, 5);
    Tensor X = rand_tensor({n, D}, rng);
    Tensor y = rand_tensor({n}, rng, -10.0, 10.0);
    const double ridge = inst % 2 == 0 ? 0.0 : 1e-4;
    Tensor w = linreg_fit(X, y, ridge);
    const auto want = pinv_oracle(X, y, ridge);
    for (int64_t j = 0; j <= D; ++j)
      CHECK(std::fabs(w[j] - want[static_cast<size_t>(j)]) < 1e-8);
  }
}

TEST_CASE("linreg rejects singular designs and tiny sample counts") {
  Rng rng(3);
  Tensor X({10, 3}, 0.0);
  for (int64_t i = 0; i < 10; ++i) {
    const double v = rng.uniform(-1.0, 1.0);
    X.at({i, 0}) = v;
    X.at({i, 1}) = 2.0 * v;  // exactly collinear
    X.at({i, 2}) = rng.uniform(-1.0, 1.0);
  }
  Tensor y = rand_tensor({10}, rng);
  CHECK_THROWS_AS(linreg_fit(X, y, 0.0), SingularSystem);
  // a small ridge regularizes it
  CHECK_NOTHROW(linreg_fit(X, y, 1e-6));
  Tensor Xs = rand_tensor({4, 4}, rng);
  Tensor ys = rand_tensor({4}, rng);
  CHECK_THROWS_AS(linreg_fit(Xs, ys, 0.0), TooFewSamples);
}

TEST_CASE("interactive gating multiplies features channel-wise after each stage") {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.input_size = 12;
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.kind = ModelKind::Interactive;
  ParamStore ps;
  init_model_params(ps, cfg, 11);
  CHECK(ps.contains("fusion.stage1.gate.fc1.weight"));

  Rng rng(12);
  Tensor video = rand_tensor({1, 1, 4, 12, 12}, rng, 0.0, 1.0);
  Tensor tab = rand_tensor({1, 3}, rng);

  // a gate head forced to emit exactly 1 leaves the image path untouched
  ps.at("fusion.stage1.gate.fc2.weight") = Tensor({4, 2}, 0.0);
  ps.at("fusion.stage1.gate.fc2.bias") = Tensor({4}, 1.0);
  Tape t1;
  Ctx c1{t1, ps, false};
  const double gated = backbone_forward(c1, cfg, t1.leaf(video), t1.leaf(tab)).val()[0];

  ModelConfig img = cfg;
  img.kind = ModelKind::ImageOnly;
  ParamStore ps_img;
  init_model_params(ps_img, img, 11);
  // align the shared backbone/head weights by name
  for (auto& item : ps_img.items()) item.value = ps.at(item.name);
  Tape t2;
  Ctx c2{t2, ps_img, false};
  const double plain = backbone_forward(c2, img, t2.leaf(video), std::nullopt).val()[0];
  CHECK(gated == doctest::Approx(plain).epsilon(1e-12));

  // zero gate zeroes the pooled features, leaving only the head bias
  ps.at("fusion.stage1.gate.fc2.bias") = Tensor({4}, 0.0);
  Tape t3;
  Ctx c3{t3, ps, false};
  const double zeroed = backbone_forward(c3, cfg, t3.leaf(video), t3.leaf(tab)).val()[0];
  CHECK(zeroed == doctest::Approx(ps.at("head.bias")[0]).epsilon(1e-12));
}

TEST_CASE("daft affine with zero gamma/beta is the image-only network") {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.input_size = 12;
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.kind = ModelKind::Daft;
  ParamStore ps;
  init_model_params(ps, cfg, 21);
  REQUIRE(ps.contains("fusion.daft.fc1.weight"));
  ps.at("fusion.daft.fc2.weight") = Tensor({8, 2}, 0.0);
  ps.at("fusion.daft.fc2.bias") = Tensor({8}, 0.0);

  Rng rng(22);
  Tensor video = rand_tensor({1, 1, 4, 12, 12}, rng, 0.0, 1.0);
  Tensor tab = rand_tensor({1, 3}, rng);
  Tape t1;
  Ctx c1{t1, ps, false};
  const double daft = backbone_forward(c1, cfg, t1.leaf(video), t1.leaf(tab)).val()[0];

  ModelConfig img = cfg;
  img.kind = ModelKind::ImageOnly;
  ParamStore ps_img;
  init_model_params(ps_img, img, 21);
  for (auto& item : ps_img.items()) item.value = ps.at(item.name);
  Tape t2;
  Ctx c2{t2, ps_img, false};
  const double plain = backbone_forward(c2, img, t2.leaf(video), std::nullopt).val()[0];
  CHECK(daft == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("daft affine matches a direct (1+gamma)h+beta computation") {
  // stand-alone check of the affine law on a fixed feature map
  ModelConfig cfg;
  cfg.frames = 2;
  cfg.input_size = 12;
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.kind = ModelKind::Daft;
  ParamStore ps;
  init_model_params(ps, cfg, 31);
  Rng rng(32);
  Tensor tab = rand_tensor({1, 3}, rng);

  // compute gamma/beta with a loop oracle
  const Tensor& w1 = ps.at("fusion.daft.fc1.weight");
  const Tensor& b1 = ps.at("fusion.daft.fc1.bias");
  const Tensor& w2 = ps.at("fusion.daft.fc2.weight");
  const Tensor& b2 = ps.at("fusion.daft.fc2.bias");
  std::vector<double> hid(static_cast<size_t>(w1.extent(0)));
  for (int64_t o = 0; o < w1.extent(0); ++o) {
    double acc = b1[o];
    for (int64_t i = 0; i < 3; ++i) acc += w1.at({o, i}) * tab.at({0, i});
    hid[static_cast<size_t>(o)] = std::max(0.0, acc);
  }
  std::vector<double> gb(8);
  for (int64_t o = 0; o < 8; ++o) {
    double acc = b2[o];
    for (int64_t i = 0; i < w2.extent(1); ++i) acc += w2.at({o, i}) * hid[static_cast<size_t>(i)];
    gb[static_cast<size_t>(o)] = acc;
  }

  Tensor h = rand_tensor({1, 4, 2, 3, 3}, rng);
  Tape tape;
  Ctx ctx{tape, ps, false};
  Var gbv = mlp_forward(ctx, "fusion.daft", tape.leaf(tab));
  Var gamma = reshape(slice(gbv, {{0, 1}, {0, 4}}), {1, 4, 1, 1, 1});
  Var beta = reshape(slice(gbv, {{0, 1}, {4, 8}}), {1, 4, 1, 1, 1});
  Var out = add(mul(shift(gamma, 1.0), tape.leaf(h)), beta);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t t = 0; t < 2; ++t)
      for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 3; ++x) {
          const double want =
              (1.0 + gb[static_cast<size_t>(c)]) * h.at({0, c, t, y, x}) + gb[static_cast<size_t>(c + 4)];
          CHECK(out.val().at({0, c, t, y, x}) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("late concat consumes pooled features plus raw tab through one head") {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.input_size = 12;
  cfg.tab_dim = 3;
  cfg.widths = {4};
  cfg.kind = ModelKind::LateConcat;
  ParamStore ps;
  init_model_params(ps, cfg, 41);
  CHECK(ps.at("fusion.head.weight").shape() == Shape{1, 7});  // C + D
  CHECK(!ps.contains("head.weight"));

  // zeroing the image part of the head weight makes the output linear in tab
  Tensor& w = ps.at("fusion.head.weight");
  for (int64_t i = 0; i < 4; ++i) w.at({0, i}) = 0.0;
  Rng rng(42);
  Tensor video = rand_tensor({1, 1, 4, 12, 12}, rng, 0.0, 1.0);
  Tensor tab = rand_tensor({1, 3}, rng);
  Tape tape;
  Ctx ctx{tape, ps, false};
  const double got = backbone_forward(ctx, cfg, tape.leaf(video), tape.leaf(tab)).val()[0];
  double want = ps.at("fusion.head.bias")[0];
  for (int64_t i = 0; i < 3; ++i) want += w.at({0, 4 + i}) * tab.at({0, i});
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("image-only model carries no fusion or tabular parameters") {
  ModelConfig cfg;
  cfg.widths = {4};
  cfg.frames = 4;
  cfg.input_size = 12;
  cfg.kind = ModelKind::ImageOnly;
  ParamStore ps;
  init_model_params(ps, cfg, 51);
  for (const auto& item : ps.items()) {
    CHECK(item.name.rfind("fusion.", 0) != 0);
    CHECK(item.name.find(".attn.") == std::string::npos);
  }
}
