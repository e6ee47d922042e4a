#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabatt/nn.hpp"

namespace tabatt {

enum class ModelKind { ImageOnly, TabularLinreg, LateConcat, Interactive, Daft, TabAttention };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind kind);

// Architecture hyperparameters. Attention switches double as ablation knobs:
// use_tab=false drops every tabular-embedding branch (pure CBAM+TAM path),
// use_tam=false is the 2D degenerate case.
struct ModelConfig {
  int frames = 16;       // T at the input and at every attention site
  int input_size = 64;   // H0 = W0
  int tab_dim = 6;       // D
  std::vector<int> widths = {8, 16, 32};
  int z = 16;            // channel-MLP reduction ratio
  int heads = 2;         // MHSA heads
  int d = 4;             // per-head Q/K/V size
  int sam_kernel = 7;
  bool use_cam = true;
  bool use_sam = true;
  bool use_tam = true;
  bool use_tab = true;
  ModelKind kind = ModelKind::TabAttention;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Feature-map geometry at one attention insertion point.
struct AttnDims {
  int C = 1, T = 1, H = 1, W = 1, D = 1;
};

void init_tabattention_params(ParamStore& ps, const std::string& prefix,
                              const AttnDims& dims, const ModelConfig& cfg, Rng& rng);

// s: [T,C,H,W] feature maps of one sample; tab: standardized [D] vector,
// absent when use_tab=false.
Var cam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab);
Var sam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab,
                int kernel);
// seq: [T,F] pooled descriptor sequence; returns [T,1].
Var mhsa_forward(Ctx& ctx, const std::string& prefix, Var seq, int heads, int d);
Var tam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab,
                int heads, int d);
// Sequential channel -> spatial -> temporal refinement of [T,C,H,W].
Var tabattention_forward(Ctx& ctx, const std::string& prefix, Var s,
                         std::optional<Var> tab, const ModelConfig& cfg);

// Residual block: conv3d-BN-ReLU-[TabAttention]-conv3d-BN-(+skip)-ReLU.
// x: [N,Cin,T,H,W]; tab_batch: [N,D]. stride_hw downsamples H,W only.
Var resblock_forward(Ctx& ctx, const std::string& prefix, Var x,
                     std::optional<Var> tab_batch, int stride_hw,
                     const ModelConfig& cfg, const AttnDims& dims, bool use_attention,
                     bool daft_here);

void init_model_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed);

// video: [N,1,T,H0,W0]; tab: [N,D]; returns [N] raw predictions.
Var backbone_forward(Ctx& ctx, const ModelConfig& cfg, Var video,
                     std::optional<Var> tab);

// Spatial extent of the feature maps after the stem and after each stage.
std::vector<int> stage_spatial_extents(const ModelConfig& cfg);

// Trainable scalars of the shared backbone, excluding attention, fusion
// extras and the prediction head. Identical across imaging variants.
int64_t backbone_param_count(const ParamStore& ps);

}  // namespace tabatt
