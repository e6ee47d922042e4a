#include "tabatt/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace tabatt {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "image_only") return ModelKind::ImageOnly;
  if (s == "linreg" || s == "tabular_linreg") return ModelKind::TabularLinreg;
  if (s == "late_concat") return ModelKind::LateConcat;
  if (s == "interactive") return ModelKind::Interactive;
  if (s == "daft") return ModelKind::Daft;
  if (s == "tabattention") return ModelKind::TabAttention;
  throw InvalidSpec("unknown model kind: " + s);
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ImageOnly: return "image_only";
    case ModelKind::TabularLinreg: return "tabular_linreg";
    case ModelKind::LateConcat: return "late_concat";
    case ModelKind::Interactive: return "interactive";
    case ModelKind::Daft: return "daft";
    case ModelKind::TabAttention: return "tabattention";
  }
  return "unknown";
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["stages"] = widths.size();
  j["widths"] = widths;
  j["z"] = z;
  j["heads"] = heads;
  j["d"] = d;
  j["use_cam"] = use_cam;
  j["use_sam"] = use_sam;
  j["use_tam"] = use_tam;
  j["use_tab"] = use_tab;
  j["frames"] = frames;
  j["input_size"] = input_size;
  j["tab_dim"] = tab_dim;
  j["sam_kernel"] = sam_kernel;
  j["kind"] = to_string(kind);
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.widths = j.at("widths").get<std::vector<int>>();
  cfg.z = j.at("z");
  cfg.heads = j.at("heads");
  cfg.d = j.at("d");
  cfg.use_cam = j.at("use_cam");
  cfg.use_sam = j.at("use_sam");
  cfg.use_tam = j.at("use_tam");
  cfg.use_tab = j.at("use_tab");
  cfg.frames = j.at("frames");
  cfg.input_size = j.at("input_size");
  cfg.tab_dim = j.at("tab_dim");
  cfg.sam_kernel = j.value("sam_kernel", 7);
  cfg.kind = model_kind_from_string(j.at("kind"));
  return cfg;
}

void init_tabattention_params(ParamStore& ps, const std::string& prefix,
                              const AttnDims& dims, const ModelConfig& cfg, Rng& rng) {
  const int c_hidden = bottleneck_dim(dims.C, cfg.z);
  if (cfg.use_cam) {
    init_mlp(ps, prefix + ".cam.mlp", {dims.C, c_hidden, dims.C}, rng);
    if (cfg.use_tab) {
      init_mlp(ps, prefix + ".cam.emb", {dims.D, c_hidden, dims.C}, rng);
    }
  }
  if (cfg.use_sam) {
    const int conv_in = cfg.use_tab ? 3 : 2;
    if (cfg.use_tab) {
      const int hw = dims.H * dims.W;
      init_mlp(ps, prefix + ".sam.emb", {dims.D, bottleneck_dim(hw, 2), hw}, rng);
    }
    init_conv2d(ps, prefix + ".sam.conv", conv_in, 1, cfg.sam_kernel, cfg.sam_kernel, rng);
  }
  if (cfg.use_tam) {
    const int seq_feat = cfg.use_tab ? 3 : 2;
    if (cfg.use_tab) {
      init_mlp(ps, prefix + ".tam.emb", {dims.D, bottleneck_dim(dims.T, 2), dims.T}, rng);
    }
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = prefix + ".tam.head" + std::to_string(h);
      init_linear(ps, hp + ".q", seq_feat, cfg.d, rng);
      init_linear(ps, hp + ".k", seq_feat, cfg.d, rng);
      init_linear(ps, hp + ".v", seq_feat, cfg.d, rng);
    }
    // relative positional encodings, added row-wise to every head's K
    ps.add(prefix + ".tam.r", Tensor::zeros({dims.T, cfg.d}));
    init_linear(ps, prefix + ".tam.out", cfg.heads * cfg.d, 1, rng);
  }
}

Var cam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab) {
  const Shape& sh = s.shape();
  if (sh.size() != 4) throw ShapeMismatch("cam_forward expects [T,C,H,W]");
  const int64_t T = sh[0], C = sh[1];
  Var f_max = reduce_max(s, {2, 3}, false);  // [T,C]
  Var f_avg = mean(s, {2, 3}, false);        // [T,C]
  Var logits = add(mlp_forward(ctx, prefix + ".mlp", f_max),
                   mlp_forward(ctx, prefix + ".mlp", f_avg));
  if (tab) {
    // the tabular term is frame-independent, computed once and broadcast
    Var e = mlp_forward(ctx, prefix + ".emb", *tab);              // [C]
    Var et = mlp_forward(ctx, prefix + ".mlp", reshape(e, {1, C}));  // [1,C]
    logits = add(logits, et);
  }
  return reshape(sigmoid(logits), {T, C, 1, 1});
}

Var sam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab,
                int kernel) {
  const Shape& sh = s.shape();
  if (sh.size() != 4) throw ShapeMismatch("sam_forward expects [T,C,H,W]");
  const int64_t T = sh[0], H = sh[2], W = sh[3];
  Var f_max = reduce_max(s, {1}, true);  // [T,1,H,W]
  Var f_avg = mean(s, {1}, true);
  std::vector<Var> channels = {f_max, f_avg};
  if (tab) {
    Var e = mlp_forward(ctx, prefix + ".emb", *tab);  // [H*W]
    Var e4 = reshape(e, {1, 1, H, W});
    Var tiled = mul(constant(ctx.tape, Tensor::ones({T, 1, 1, 1})), e4);  // [T,1,H,W]
    channels.push_back(tiled);
  }
  Var stacked = concat(channels, 1);  // [T, 2 or 3, H, W]
  const int pad = (kernel - 1) / 2;
  Var out = conv2d(ctx, prefix + ".conv", stacked, {1, 1}, {pad, pad});
  return sigmoid(out);  // [T,1,H,W]
}

Var mhsa_forward(Ctx& ctx, const std::string& prefix, Var seq, int heads, int d) {
  const Shape& sh = seq.shape();
  if (sh.size() != 2) throw ShapeMismatch("mhsa_forward expects [T,F]");
  Var r = ctx.p(prefix + ".r");  // [T,d]
  std::vector<Var> head_outs;
  for (int h = 0; h < heads; ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    Var q = linear(ctx, hp + ".q", seq);  // [T,d]
    Var k = linear(ctx, hp + ".k", seq);
    Var v = linear(ctx, hp + ".v", seq);
    Var scores = scale(matmul(q, permute(add(k, r), {1, 0})), 1.0 / std::sqrt(double(d)));
    Var attn = softmax_lastaxis(scores);  // [T,T]
    head_outs.push_back(matmul(attn, v));  // [T,d]
  }
  Var merged = heads == 1 ? head_outs[0] : concat(head_outs, 1);  // [T,heads*d]
  return linear(ctx, prefix + ".out", merged);  // [T,1]
}

Var tam_forward(Ctx& ctx, const std::string& prefix, Var s, std::optional<Var> tab,
                int heads, int d) {
  const Shape& sh = s.shape();
  if (sh.size() != 4) throw ShapeMismatch("tam_forward expects [T,C,H,W]");
  const int64_t T = sh[0];
  Var f_max = reshape(reduce_max(s, {1, 2, 3}, false), {T, 1});
  Var f_avg = reshape(mean(s, {1, 2, 3}, false), {T, 1});
  std::vector<Var> cols = {f_max, f_avg};
  if (tab) {
    cols.push_back(reshape(mlp_forward(ctx, prefix + ".emb", *tab), {T, 1}));
  }
  Var seq = concat(cols, 1);  // [T, 2 or 3]
  Var out = mhsa_forward(ctx, prefix, seq, heads, d);  // [T,1]
  return reshape(sigmoid(out), {T, 1, 1, 1});
}

Var tabattention_forward(Ctx& ctx, const std::string& prefix, Var s,
                         std::optional<Var> tab, const ModelConfig& cfg) {
  std::optional<Var> t = cfg.use_tab ? tab : std::nullopt;
  Var cur = s;
  if (cfg.use_cam) cur = mul(cam_forward(ctx, prefix + ".cam", cur, t), cur);
  if (cfg.use_sam) cur = mul(sam_forward(ctx, prefix + ".sam", cur, t, cfg.sam_kernel), cur);
  if (cfg.use_tam) cur = mul(tam_forward(ctx, prefix + ".tam", cur, t, cfg.heads, cfg.d), cur);
  return cur;
}

namespace {

// TabAttention sees each sample as a [T,C,H,W] view of its [C,T,H,W] maps.
Var apply_attention_per_sample(Ctx& ctx, const std::string& prefix, Var h,
                               std::optional<Var> tab_batch, const ModelConfig& cfg) {
  const Shape& sh = h.shape();
  const int64_t N = sh[0], C = sh[1], T = sh[2], H = sh[3], W = sh[4];
  const int64_t D = tab_batch ? tab_batch->shape()[1] : 0;
  std::vector<Var> parts;
  parts.reserve(static_cast<size_t>(N));
  for (int64_t n = 0; n < N; ++n) {
    Var xn = reshape(slice(h, {{n, n + 1}, {0, C}, {0, T}, {0, H}, {0, W}}), {C, T, H, W});
    Var xt = permute(xn, {1, 0, 2, 3});  // [T,C,H,W]
    std::optional<Var> tab_n;
    if (tab_batch) {
      tab_n = reshape(slice(*tab_batch, {{n, n + 1}, {0, D}}), {D});
    }
    Var at = tabattention_forward(ctx, prefix, xt, tab_n, cfg);
    parts.push_back(reshape(permute(at, {1, 0, 2, 3}), {1, C, T, H, W}));
  }
  return N == 1 ? parts[0] : concat(parts, 0);
}

}  // namespace

Var resblock_forward(Ctx& ctx, const std::string& prefix, Var x,
                     std::optional<Var> tab_batch, int stride_hw,
                     const ModelConfig& cfg, const AttnDims& dims, bool use_attention,
                     bool daft_here) {
  const int64_t cin = x.shape()[1];
  const int64_t cout = dims.C;
  Var h = conv3d(ctx, prefix + ".conv1", x, {1, stride_hw, stride_hw}, {1, 1, 1});
  h = batchnorm(ctx, prefix + ".bn1", h);
  h = relu(h);

  if (use_attention) {
    h = apply_attention_per_sample(ctx, prefix + ".attn", h, tab_batch, cfg);
  }
  if (daft_here) {
    // DAFT: per-channel affine (1+gamma) * h + beta from the tabular branch
    const int64_t N = h.shape()[0], C = h.shape()[1];
    Var gb = mlp_forward(ctx, "fusion.daft", *tab_batch);  // [N,2C]
    Var gamma = reshape(slice(gb, {{0, N}, {0, C}}), {N, C, 1, 1, 1});
    Var beta = reshape(slice(gb, {{0, N}, {C, 2 * C}}), {N, C, 1, 1, 1});
    h = add(mul(shift(gamma, 1.0), h), beta);
  }

  h = conv3d(ctx, prefix + ".conv2", h, {1, 1, 1}, {1, 1, 1});
  h = batchnorm(ctx, prefix + ".bn2", h);

  Var skip = x;
  if (stride_hw != 1 || cin != cout) {
    skip = conv3d(ctx, prefix + ".skip.conv", x, {1, stride_hw, stride_hw}, {0, 0, 0});
    skip = batchnorm(ctx, prefix + ".skip.bn", skip);
  }
  return relu(add(h, skip));
}

std::vector<int> stage_spatial_extents(const ModelConfig& cfg) {
  std::vector<int> out;
  int hw = static_cast<int>(conv_out_extent(cfg.input_size, 3, 1, 2));  // stem
  out.push_back(hw);
  for (size_t i = 0; i < cfg.widths.size(); ++i) {
    if (i > 0) hw = static_cast<int>(conv_out_extent(hw, 3, 1, 2));
    out.push_back(hw);
  }
  return out;
}

void init_model_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  const auto spatial = stage_spatial_extents(cfg);
  init_conv3d(ps, "stem.conv", 1, cfg.widths[0], 3, 3, 3, rng);
  init_batchnorm(ps, "stem.bn", cfg.widths[0]);

  int cin = cfg.widths[0];
  for (size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    const int cout = cfg.widths[i];
    const int stride = i == 0 ? 1 : 2;
    init_conv3d(ps, sp + ".conv1", cin, cout, 3, 3, 3, rng);
    init_batchnorm(ps, sp + ".bn1", cout);
    if (cfg.kind == ModelKind::TabAttention) {
      AttnDims dims{cout, cfg.frames, spatial[i + 1], spatial[i + 1], cfg.tab_dim};
      init_tabattention_params(ps, sp + ".attn", dims, cfg, rng);
    }
    init_conv3d(ps, sp + ".conv2", cout, cout, 3, 3, 3, rng);
    init_batchnorm(ps, sp + ".bn2", cout);
    if (stride != 1 || cin != cout) {
      init_conv3d(ps, sp + ".skip.conv", cin, cout, 1, 1, 1, rng);
      init_batchnorm(ps, sp + ".skip.bn", cout);
    }
    if (cfg.kind == ModelKind::Interactive) {
      init_mlp(ps, "fusion." + sp + ".gate", {cfg.tab_dim, bottleneck_dim(cout, 2), cout},
               rng);
    }
    cin = cout;
  }
  if (cfg.kind == ModelKind::Daft) {
    const int c_last = cfg.widths.back();
    init_mlp(ps, "fusion.daft", {cfg.tab_dim, bottleneck_dim(c_last, 2), 2 * c_last}, rng);
  }
  if (cfg.kind == ModelKind::LateConcat) {
    init_linear(ps, "fusion.head", cfg.widths.back() + cfg.tab_dim, 1, rng);
  } else {
    init_linear(ps, "head", cfg.widths.back(), 1, rng);
  }

  // standardization state, fitted per training fold
  ps.add("norm.tab_mean", Tensor::zeros({cfg.tab_dim}), false);
  ps.add("norm.tab_std", Tensor::ones({cfg.tab_dim}), false);
  ps.add("norm.target_mean", Tensor::zeros({1}), false);
  ps.add("norm.target_std", Tensor::ones({1}), false);
}

Var backbone_forward(Ctx& ctx, const ModelConfig& cfg, Var video,
                     std::optional<Var> tab) {
  const Shape& vs = video.shape();
  if (vs.size() != 5 || vs[1] != 1) throw ShapeMismatch("backbone expects [N,1,T,H,W]");
  const int64_t N = vs[0];
  const bool needs_tab = cfg.kind == ModelKind::LateConcat ||
                         cfg.kind == ModelKind::Interactive ||
                         cfg.kind == ModelKind::Daft ||
                         (cfg.kind == ModelKind::TabAttention && cfg.use_tab);
  if (needs_tab && !tab) throw ShapeMismatch("model kind requires tabular input");

  Var h = conv3d(ctx, "stem.conv", video, {1, 2, 2}, {1, 1, 1});
  h = batchnorm(ctx, "stem.bn", h);
  h = relu(h);

  const auto spatial = stage_spatial_extents(cfg);
  for (size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    const int stride = i == 0 ? 1 : 2;
    AttnDims dims{cfg.widths[i], cfg.frames, spatial[i + 1], spatial[i + 1], cfg.tab_dim};
    const bool attn = cfg.kind == ModelKind::TabAttention &&
                      (cfg.use_cam || cfg.use_sam || cfg.use_tam);
    const bool daft_here = cfg.kind == ModelKind::Daft && i + 1 == cfg.widths.size();
    h = resblock_forward(ctx, sp, h, tab, stride, cfg, dims, attn, daft_here);
    if (cfg.kind == ModelKind::Interactive) {
      const int64_t C = h.shape()[1];
      Var gate = mlp_forward(ctx, "fusion." + sp + ".gate", *tab);  // [N,C]
      h = mul(h, reshape(gate, {N, C, 1, 1, 1}));
    }
  }

  Var pooled = mean(h, {2, 3, 4}, false);  // [N,C]
  Var out;
  if (cfg.kind == ModelKind::LateConcat) {
    out = linear(ctx, "fusion.head", concat({pooled, *tab}, 1));
  } else {
    out = linear(ctx, "head", pooled);
  }
  return reshape(out, {N});
}

int64_t backbone_param_count(const ParamStore& ps) {
  int64_t n = 0;
  for (const auto& item : ps.items()) {
    if (!item.trainable) continue;
    if (item.name.find(".attn.") != std::string::npos) continue;
    if (item.name.rfind("fusion.", 0) == 0) continue;
    if (item.name.rfind("head", 0) == 0) continue;
    if (item.name.rfind("norm.", 0) == 0) continue;
    n += item.value.size();
  }
  return n;
}

}  // namespace tabatt
