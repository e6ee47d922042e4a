#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabatt/autograd.hpp"
#include "tabatt/rng.hpp"
#include "tabatt/tensor.hpp"

namespace tabatt {

// Named parameters of one model. Insertion order is the canonical order
// used by the optimizer and the checkpoint format. Non-trainable entries
// hold state such as batchnorm running statistics.
class ParamStore {
 public:
  struct Item {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor value, bool trainable = true);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }
  int64_t scalar_count(bool trainable_only = true) const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-forward-pass context: binds a ParamStore to a Tape, registering each
// parameter as a leaf on first use.
struct Ctx {
  Tape& tape;
  ParamStore& params;
  bool training = false;
  std::unordered_map<std::string, int> node_of;

  Var p(const std::string& name);
  // Gradient of a parameter after tape.backward(); zeros if unused.
  Tensor grad_of(const std::string& name) const;
};

struct MLPSpec {
  int in_dim = 1;
  int hidden_dim = 1;
  int out_dim = 1;
  bool bias = true;
};

// max(1, floor(a / b)) — bottleneck sizes like C/z at desk scale can be < 1.
inline int bottleneck_dim(int64_t a, int64_t b) {
  const int64_t q = a / b;
  return static_cast<int>(q < 1 ? 1 : q);
}

// He-uniform fan-in initialization.
void init_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
void init_mlp(ParamStore& ps, const std::string& prefix, const MLPSpec& spec, Rng& rng);
void init_conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int kh,
                 int kw, Rng& rng);
void init_conv3d(ParamStore& ps, const std::string& prefix, int cin, int cout, int kt,
                 int kh, int kw, Rng& rng);
void init_batchnorm(ParamStore& ps, const std::string& prefix, int channels);

// y = x W^T + b over the last axis; batched over leading axes.
Var linear_apply(Var x, Var w, Var b);
Var linear(Ctx& ctx, const std::string& prefix, Var x);
// linear -> relu -> linear
Var mlp_forward(Ctx& ctx, const std::string& prefix, Var x);

Var conv2d(Var x, Var w, Var b, std::array<int, 2> stride, std::array<int, 2> pad);
Var conv2d(Ctx& ctx, const std::string& prefix, Var x, std::array<int, 2> stride,
           std::array<int, 2> pad);
Var conv3d(Var x, Var w, Var b, std::array<int, 3> stride, std::array<int, 3> pad);
Var conv3d(Ctx& ctx, const std::string& prefix, Var x, std::array<int, 3> stride,
           std::array<int, 3> pad);

// Batch normalization over the channel axis (axis 1). In training mode the
// batch statistics are used and the running statistics in the store are
// updated; in eval mode the running statistics are used.
Var batchnorm(Ctx& ctx, const std::string& prefix, Var x, double momentum = 0.1,
              double eps = 1e-5);

// Output spatial extent of a convolution (floor semantics).
inline int64_t conv_out_extent(int64_t in, int k, int pad, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace tabatt
