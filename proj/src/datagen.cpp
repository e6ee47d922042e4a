#include "tabatt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tabatt/serialize.hpp"

namespace tabatt {

Tensor Dataset::tab_matrix() const {
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t d = spec.tab_dim;
  Tensor m({n, d}, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) m[i * d + j] = samples[static_cast<size_t>(i)].tab[j];
  }
  return m;
}

std::vector<double> Dataset::targets() const {
  std::vector<double> t;
  t.reserve(samples.size());
  for (const Sample& s : samples) t.push_back(s.target);
  return t;
}

namespace {

double ramanujan_circumference(double a, double b) {
  return M_PI * (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
}

void validate(const SyntheticTaskSpec& spec) {
  if (spec.n_samples < 1) throw InvalidSpec("n_samples must be >= 1");
  if (spec.frames_min < 16) throw TooShort("frames must be >= 16");
  if (spec.frames_max < spec.frames_min) throw InvalidSpec("frames_max < frames_min");
  if (spec.height < 4 || spec.width < 4) throw InvalidSpec("frame size too small");
  if (spec.tab_dim < 3) throw InvalidSpec("tab_dim must be >= 3");
  if (spec.redundancy < 0.0 || spec.redundancy > 1.0) {
    throw InvalidSpec("redundancy must be in [0,1]");
  }
  if (spec.noise_std < 0.0) throw InvalidSpec("noise_std must be >= 0");
}

}  // namespace

Dataset generate(const SyntheticTaskSpec& spec, uint64_t seed) {
  validate(spec);
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;
  const int H = spec.height, W = spec.width;
  const double m = static_cast<double>(std::min(H, W));
  for (int i = 0; i < spec.n_samples; ++i) {
    Rng rng(Rng::derive(seed, static_cast<uint64_t>(i)));
    Sample s;
    s.id = "s" + std::to_string(i);
    const int64_t T0 = rng.uniform_int(spec.frames_min, spec.frames_max);
    const double alpha = rng.uniform(0.15, 0.35) * m;
    const double beta = rng.uniform(0.15, 0.35) * m;
    const double cx0 = 0.5 * W + rng.uniform(-0.05, 0.05) * W;
    const double cy0 = 0.5 * H + rng.uniform(-0.05, 0.05) * H;

    s.video = Tensor({T0, 1, H, W}, 0.0);
    for (int64_t t = 0; t < T0; ++t) {
      const double cx = cx0 + rng.normal() * 0.5;
      const double cy = cy0 + rng.normal() * 0.5;
      double* frame = s.video.data() + t * H * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double dx = (x - cx) / alpha;
          const double dy = (y - cy) / beta;
          double v = (dx * dx + dy * dy <= 1.0) ? 0.9 : 0.05;
          v += rng.uniform(0.0, 0.03);
          frame[y * W + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }

    const double circ = ramanujan_circumference(alpha, beta);
    const double latent = (circ / m - M_PI * 0.5) / 0.3;  // roughly centered/scaled
    const double u = std::clamp(rng.normal(), -3.0, 3.0);
    const double rho = spec.redundancy;

    s.tab = Tensor({spec.tab_dim}, 0.0);
    s.tab[0] = rho * latent + (1.0 - rho) * rng.normal();
    s.tab[1] = rho * latent + (1.0 - rho) * rng.normal();
    s.tab[2] = u;
    for (int j = 3; j < spec.tab_dim; ++j) s.tab[j] = rng.normal();

    double target = spec.a_img * circ + spec.a_tab * u + spec.noise_std * rng.normal();
    s.target = std::max(target, 1.0);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["seed"] = ds.seed;
  manifest["tab_dim"] = ds.spec.tab_dim;
  manifest["spec"] = {
      {"n_samples", ds.spec.n_samples},   {"frames_min", ds.spec.frames_min},
      {"frames_max", ds.spec.frames_max}, {"height", ds.spec.height},
      {"width", ds.spec.width},           {"tab_dim", ds.spec.tab_dim},
      {"a_img", ds.spec.a_img},           {"a_tab", ds.spec.a_tab},
      {"noise_std", ds.spec.noise_std},   {"redundancy", ds.spec.redundancy}};
  nlohmann::json samples = nlohmann::json::array();
  for (const Sample& s : ds.samples) {
    const std::string video_rel = "samples/" + s.id + ".video.ndt";
    const std::string tab_rel = "samples/" + s.id + ".tab.ndt";
    save_tensor(dir / video_rel, s.video);
    save_tensor(dir / tab_rel, s.tab);
    samples.push_back({{"id", s.id},
                       {"video", video_rel},
                       {"tab", tab_rel},
                       {"target", s.target}});
  }
  manifest["samples"] = std::move(samples);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(is);
  Dataset ds;
  ds.seed = manifest.at("seed");
  const auto& sp = manifest.at("spec");
  ds.spec.n_samples = sp.at("n_samples");
  ds.spec.frames_min = sp.at("frames_min");
  ds.spec.frames_max = sp.at("frames_max");
  ds.spec.height = sp.at("height");
  ds.spec.width = sp.at("width");
  ds.spec.tab_dim = sp.at("tab_dim");
  ds.spec.a_img = sp.at("a_img");
  ds.spec.a_tab = sp.at("a_tab");
  ds.spec.noise_std = sp.at("noise_std");
  ds.spec.redundancy = sp.at("redundancy");
  for (const auto& js : manifest.at("samples")) {
    Sample s;
    s.id = js.at("id");
    s.video = load_tensor(dir / js.at("video").get<std::string>());
    s.tab = load_tensor(dir / js.at("tab").get<std::string>());
    s.target = js.at("target");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Tensor Standardizer::apply(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.extent(1) != mean.extent(0)) {
    throw ShapeMismatch("standardizer dimension mismatch");
  }
  Tensor out = rows;
  const int64_t n = rows.extent(0), d = rows.extent(1);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) out[i * d + j] = (rows[i * d + j] - mean[j]) / std[j];
  }
  return out;
}

Tensor Standardizer::apply_row(const Tensor& row) const {
  if (row.rank() != 1 || row.extent(0) != mean.extent(0)) {
    throw ShapeMismatch("standardizer dimension mismatch");
  }
  Tensor out = row;
  for (int64_t j = 0; j < row.extent(0); ++j) out[j] = (row[j] - mean[j]) / std[j];
  return out;
}

Standardizer standardize_fit(const Tensor& train_rows) {
  if (train_rows.rank() != 2) throw ShapeMismatch("standardize_fit expects [n,D]");
  const int64_t n = train_rows.extent(0), d = train_rows.extent(1);
  if (n < 2) throw TooFewSamples("standardization needs >= 2 training rows");
  Standardizer st{Tensor({d}, 0.0), Tensor({d}, 1.0)};
  for (int64_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int64_t i = 0; i < n; ++i) mu += train_rows[i * d + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double c = train_rows[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    st.mean[j] = mu;
    st.std[j] = var > 1e-24 ? std::sqrt(var) : 1.0;  // constant column -> 0
  }
  return st;
}

std::vector<int64_t> segment_starts(int64_t total_frames, int64_t seg_len) {
  if (total_frames < seg_len) {
    throw TooShort("video has " + std::to_string(total_frames) + " frames, need >= " +
                   std::to_string(seg_len));
  }
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + seg_len <= total_frames; s += seg_len) starts.push_back(s);
  if (starts.back() + seg_len < total_frames) starts.push_back(total_frames - seg_len);
  return starts;
}

std::vector<Tensor> segment(const Tensor& video, int64_t seg_len) {
  if (video.rank() != 4) throw ShapeMismatch("segment expects [T,1,H,W]");
  const int64_t T = video.extent(0);
  const int64_t frame = video.extent(1) * video.extent(2) * video.extent(3);
  std::vector<Tensor> out;
  for (int64_t s : segment_starts(T, seg_len)) {
    Tensor seg({seg_len, video.extent(1), video.extent(2), video.extent(3)}, 0.0);
    std::copy(video.data() + s * frame, video.data() + (s + seg_len) * frame, seg.data());
    out.push_back(std::move(seg));
  }
  return out;
}

Tensor hflip(const Tensor& video) {
  const int64_t T = video.extent(0), C = video.extent(1), H = video.extent(2),
                W = video.extent(3);
  Tensor out(video.shape(), 0.0);
  for (int64_t t = 0; t < T * C; ++t) {
    for (int64_t y = 0; y < H; ++y) {
      const double* src = video.data() + (t * H + y) * W;
      double* dst = out.data() + (t * H + y) * W;
      for (int64_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
    }
  }
  return out;
}

Tensor adjust_brightness_contrast(const Tensor& video, double shift, double scalefac) {
  Tensor out = video;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp((video[i] - 0.5) * scalefac + 0.5 + shift, 0.0, 1.0);
  }
  return out;
}

Tensor add_gaussian_noise(const Tensor& video, double sigma, Rng& rng) {
  Tensor out = video;
  if (sigma == 0.0) return out;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(video[i] + sigma * rng.normal(), 0.0, 1.0);
  }
  return out;
}

Tensor rotate_nn(const Tensor& video, double angle_deg) {
  const int64_t T = video.extent(0), C = video.extent(1), H = video.extent(2),
                W = video.extent(3);
  const double th = angle_deg * M_PI / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = 0.5 * (H - 1), cx = 0.5 * (W - 1);
  Tensor out(video.shape(), 0.0);
  for (int64_t t = 0; t < T * C; ++t) {
    const double* src = video.data() + t * H * W;
    double* dst = out.data() + t * H * W;
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        // inverse rotation about the frame center, nearest neighbor
        const double sy = cy + (y - cy) * c - (x - cx) * s;
        const double sx = cx + (y - cy) * s + (x - cx) * c;
        const int64_t iy = static_cast<int64_t>(std::lround(sy));
        const int64_t ix = static_cast<int64_t>(std::lround(sx));
        if (iy >= 0 && iy < H && ix >= 0 && ix < W) dst[y * W + x] = src[iy * W + ix];
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& video, Rng& rng, const AugmentFlags& flags,
               double noise_sigma, double max_angle_deg) {
  Tensor out = video;
  if (flags.rotation) out = rotate_nn(out, rng.uniform(-max_angle_deg, max_angle_deg));
  if (flags.brightness_contrast) {
    const double shift = rng.uniform(-0.2, 0.2);
    const double scalefac = rng.uniform(0.8, 1.2);
    out = adjust_brightness_contrast(out, shift, scalefac);
  }
  if (flags.gaussian_noise) out = add_gaussian_noise(out, noise_sigma, rng);
  if (flags.hflip && rng.uniform() < 0.5) out = hflip(out);
  return out;
}

}  // namespace tabatt
