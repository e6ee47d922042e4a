#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tabatt/rng.hpp"
#include "tabatt/tensor.hpp"

namespace tabatt {

struct Sample {
  std::string id;
  Tensor video;   // [T0,1,H0,W0], grayscale in [0,1]
  Tensor tab;     // [D], raw (unstandardized)
  double target = 0.0;
};

struct SyntheticTaskSpec {
  int n_samples = 96;
  int frames_min = 16;
  int frames_max = 48;
  int height = 64;
  int width = 64;
  int tab_dim = 6;
  double a_img = 100.0;    // weight of the latent ellipse circumference
  double a_tab = 300.0;    // weight of the tabular-only factor
  double noise_std = 25.0;
  double redundancy = 0.5;  // rho: correlation of mixed tab features with the latent
};

struct Dataset {
  std::vector<Sample> samples;
  SyntheticTaskSpec spec;
  uint64_t seed = 0;

  // [n,D] matrix of raw tabular rows.
  Tensor tab_matrix() const;
  std::vector<double> targets() const;
};

// Deterministic per (spec, seed); per-sample streams derived by hashing.
Dataset generate(const SyntheticTaskSpec& spec, uint64_t seed);

// On-disk format: manifest.json + samples/<id>.video.ndt + samples/<id>.tab.ndt
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct Standardizer {
  Tensor mean;  // [D]
  Tensor std;   // [D], constant columns recorded as 1
  Tensor apply(const Tensor& rows) const;      // [n,D] -> [n,D]
  Tensor apply_row(const Tensor& row) const;   // [D] -> [D]
};

// Fitted on training rows only.
Standardizer standardize_fit(const Tensor& train_rows);

// Non-overlapping 16-frame windows; a trailing partial window becomes the
// last 16 frames (overlapping tail).
std::vector<int64_t> segment_starts(int64_t total_frames, int64_t seg_len = 16);
std::vector<Tensor> segment(const Tensor& video, int64_t seg_len = 16);

struct AugmentFlags {
  bool hflip = false;
  bool brightness_contrast = false;
  bool gaussian_noise = false;
  bool rotation = false;
};

// Deterministic augmentation primitives; each applies the same transform to
// every frame and clips to [0,1].
Tensor hflip(const Tensor& video);
Tensor adjust_brightness_contrast(const Tensor& video, double shift, double scalefac);
Tensor add_gaussian_noise(const Tensor& video, double sigma, Rng& rng);
Tensor rotate_nn(const Tensor& video, double angle_deg);

// Samples transform parameters from `rng` for each enabled flag.
Tensor augment(const Tensor& video, Rng& rng, const AugmentFlags& flags,
               double noise_sigma = 0.02, double max_angle_deg = 15.0);

}  // namespace tabatt
