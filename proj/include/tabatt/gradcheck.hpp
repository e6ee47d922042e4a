#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tabatt/model.hpp"
#include "tabatt/nn.hpp"

namespace tabatt {

// Worst relative error between analytic gradients and central differences
// (h = 1e-6) over every trainable scalar in `params`. The forward closure
// may use ctx.p(...) for inputs registered as trainable store entries.
double module_gradcheck(ParamStore& params, const std::function<Var(Ctx&)>& forward,
                        uint64_t weight_seed, double h = 1e-6);

struct GradcheckEntry {
  std::string name;
  double worst = 0.0;
  double tolerance = 1e-6;
  bool pass = false;
};

// Runs the registered per-op checks plus the tiny full-model check.
// include_fault additionally registers an op with a deliberately wrong
// backward rule, which must be reported as failing.
std::vector<GradcheckEntry> run_gradcheck_suite(bool include_fault = false);

// Tiny full TabAttention model used by the suite (T=4, C=4, H=W=6, D=3).
ModelConfig tiny_model_config();

}  // namespace tabatt
