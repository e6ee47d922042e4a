// Python bindings for the core numerical operations. Arrays are float64,
// C-contiguous (forcecast handles the rest).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <optional>

#include "tabatt/datagen.hpp"
#include "tabatt/model.hpp"
#include "tabatt/train.hpp"

namespace py = pybind11;
using namespace tabatt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  Tensor t(std::move(shape), 0.0);
  const double* src = a.data();
  for (int64_t i = 0; i < t.size(); ++i) t[i] = src[i];
  return t;
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  double* dst = a.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) dst[i] = t[i];
  return a;
}

// Evaluates a single-op tape expression and returns the value.
template <typename Fn>
Array eval1(const Array& x, Fn&& fn) {
  Tape tape;
  return to_array(fn(tape.leaf(to_tensor(x))).val());
}

ParamStore attn_params(const AttnDims& dims, const ModelConfig& cfg, uint64_t seed) {
  ParamStore ps;
  Rng rng(seed);
  init_tabattention_params(ps, "attn", dims, cfg, rng);
  return ps;
}

ModelConfig attn_cfg(const Array& s, int tab_dim, int z, int heads, int d, int sam_kernel) {
  ModelConfig cfg;
  cfg.frames = static_cast<int>(s.shape(0));
  cfg.input_size = static_cast<int>(s.shape(2));
  cfg.tab_dim = tab_dim;
  cfg.z = z;
  cfg.heads = heads;
  cfg.d = d;
  cfg.sam_kernel = sam_kernel;
  return cfg;
}

AttnDims attn_dims(const Array& s, int tab_dim) {
  return {static_cast<int>(s.shape(1)), static_cast<int>(s.shape(0)),
          static_cast<int>(s.shape(2)), static_cast<int>(s.shape(3)), tab_dim};
}

}  // namespace

PYBIND11_MODULE(_tabatt, m) {
  m.doc() = "Tabular-conditioned attention ops: tensors, attention modules, protocol helpers";

  m.def("matmul", [](const Array& a, const Array& b) {
    return to_array(mm(to_tensor(a), to_tensor(b)));
  });

  m.def("relu", [](const Array& x) { return eval1(x, [](Var v) { return relu(v); }); });
  m.def("sigmoid", [](const Array& x) { return eval1(x, [](Var v) { return sigmoid(v); }); });
  m.def("softmax", [](const Array& x) {
    return eval1(x, [](Var v) { return softmax_lastaxis(v); });
  });

  m.def(
      "conv2d",
      [](const Array& x, const Array& w, const Array& b, std::array<int, 2> stride,
         std::array<int, 2> pad) {
        Tape tape;
        return to_array(conv2d(tape.leaf(to_tensor(x)), tape.leaf(to_tensor(w)),
                               tape.leaf(to_tensor(b)), stride, pad)
                            .val());
      },
      py::arg("x"), py::arg("w"), py::arg("b"),
      py::arg("stride") = std::array<int, 2>{1, 1}, py::arg("pad") = std::array<int, 2>{0, 0});

  m.def(
      "conv3d",
      [](const Array& x, const Array& w, const Array& b, std::array<int, 3> stride,
         std::array<int, 3> pad) {
        Tape tape;
        return to_array(conv3d(tape.leaf(to_tensor(x)), tape.leaf(to_tensor(w)),
                               tape.leaf(to_tensor(b)), stride, pad)
                            .val());
      },
      py::arg("x"), py::arg("w"), py::arg("b"),
      py::arg("stride") = std::array<int, 3>{1, 1, 1},
      py::arg("pad") = std::array<int, 3>{0, 0, 0});

  // Channel/spatial/temporal attention maps for one feature volume [T,C,H,W]
  // and a standardized tabular row [D]; parameters drawn from `seed`.
  m.def(
      "attention_maps",
      [](const Array& s, const Array& tab, uint64_t seed, int z, int heads, int d,
         int sam_kernel) {
        const int D = static_cast<int>(tab.shape(0));
        ModelConfig cfg = attn_cfg(s, D, z, heads, d, sam_kernel);
        ParamStore ps = attn_params(attn_dims(s, D), cfg, seed);
        Tape tape;
        Ctx ctx{tape, ps, false};
        Var sv = tape.leaf(to_tensor(s));
        Var tv = tape.leaf(to_tensor(tab));
        py::dict out;
        out["channel"] = to_array(cam_forward(ctx, "attn.cam", sv, tv).val());
        out["spatial"] = to_array(sam_forward(ctx, "attn.sam", sv, tv, sam_kernel).val());
        out["temporal"] = to_array(tam_forward(ctx, "attn.tam", sv, tv, heads, d).val());
        return out;
      },
      py::arg("s"), py::arg("tab"), py::arg("seed") = 0, py::arg("z") = 4,
      py::arg("heads") = 2, py::arg("d") = 4, py::arg("sam_kernel") = 3);

  // Full channel -> spatial -> temporal refinement; preserves the input shape.
  m.def(
      "tabattention",
      [](const Array& s, const Array& tab, uint64_t seed, int z, int heads, int d,
         int sam_kernel) {
        const int D = static_cast<int>(tab.shape(0));
        ModelConfig cfg = attn_cfg(s, D, z, heads, d, sam_kernel);
        ParamStore ps = attn_params(attn_dims(s, D), cfg, seed);
        Tape tape;
        Ctx ctx{tape, ps, false};
        Var out = tabattention_forward(ctx, "attn", tape.leaf(to_tensor(s)),
                                       tape.leaf(to_tensor(tab)), cfg);
        return to_array(out.val());
      },
      py::arg("s"), py::arg("tab"), py::arg("seed") = 0, py::arg("z") = 4,
      py::arg("heads") = 2, py::arg("d") = 4, py::arg("sam_kernel") = 3);

  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("total_epochs"), py::arg("lr0"),
        py::arg("lr_min") = 0.0);

  m.def("segment_starts", [](int64_t total_frames) { return segment_starts(total_frames); });

  m.def("metrics", [](const std::vector<double>& preds, const std::vector<double>& targets) {
    Metrics mt = compute_metrics(preds, targets);
    py::dict out;
    out["mae"] = mt.mae;
    out["rmse"] = mt.rmse;
    out["mape"] = mt.mape;
    return out;
  });

  m.def(
      "stratified_folds",
      [](const std::vector<double>& targets, int k, uint64_t seed) {
        return stratified_folds(targets, k, tertile_thresholds(targets), seed);
      },
      py::arg("targets"), py::arg("k"), py::arg("seed") = 0);

  m.def(
      "generate_dataset",
      [](int n, uint64_t seed, int size, int frames_min, int frames_max, double redundancy) {
        SyntheticTaskSpec spec;
        spec.n_samples = n;
        spec.height = spec.width = size;
        spec.frames_min = frames_min;
        spec.frames_max = frames_max;
        spec.redundancy = redundancy;
        Dataset ds = generate(spec, seed);
        py::list videos;
        for (const Sample& s : ds.samples) videos.append(to_array(s.video));
        py::dict out;
        out["videos"] = videos;
        out["tab"] = to_array(ds.tab_matrix());
        std::vector<double> t = ds.targets();
        out["targets"] = py::array_t<double>(static_cast<py::ssize_t>(t.size()), t.data());
        return out;
      },
      py::arg("n"), py::arg("seed") = 7, py::arg("size") = 32, py::arg("frames_min") = 16,
      py::arg("frames_max") = 32, py::arg("redundancy") = 0.5);
}
