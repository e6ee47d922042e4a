#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tabatt/datagen.hpp"
#include "tabatt/model.hpp"

namespace tabatt {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double lr_min = 0.0;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  int folds = 5;
  int jobs = 1;
  AugmentFlags augment;
  std::vector<double> bin_thresholds;  // empty -> empirical tertiles
};

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
};

// mae = mean|e|, rmse = sqrt(mean e^2), mape = 100 * mean(|e| / target).
Metrics compute_metrics(const std::vector<double>& preds,
                        const std::vector<double>& targets);

Var mse_loss(Var pred, Var target);

struct AdamState {
  int64_t t = 0;
  std::unordered_map<std::string, Tensor> m;
  std::unordered_map<std::string, Tensor> v;
};

// Coupled L2: the penalty gradient is added to the raw gradient before the
// moment updates.
void adam_step(ParamStore& params, const std::unordered_map<std::string, Tensor>& grads,
               AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8, double l2 = 1e-4);

double cosine_lr(int epoch, int total_epochs, double lr0, double lr_min = 0.0);

std::vector<double> tertile_thresholds(const std::vector<double>& targets);
std::vector<int> assign_bins(const std::vector<double>& targets,
                             const std::vector<double>& thresholds);
// Per-bin balanced (within +/- 1) deterministic fold assignment.
std::vector<int> stratified_folds(const std::vector<double>& targets, int k,
                                  const std::vector<double>& thresholds, uint64_t seed);
uint64_t fold_hash(const std::vector<int>& assignment);

struct Batch {
  Tensor video;   // [B,1,T,H,W]
  Tensor tab;     // [B,D], standardized
  Tensor target;  // [B], scaled
};

// One forward/backward/update step; returns the batch loss before the update.
double train_step(ParamStore& params, const ModelConfig& cfg, const Batch& batch,
                  AdamState& state, double lr, double l2);

// Fits standardizers into the store's norm.* slots and trains in place.
// Returns per-epoch mean training loss.
std::vector<double> train_model(ParamStore& params, const ModelConfig& cfg,
                                const std::vector<const Sample*>& train,
                                const TrainConfig& tc, uint64_t seed);

// Segment-averaged prediction in original target units, eval mode.
double predict_sample(const ModelConfig& cfg, ParamStore& params, const Sample& sample);

struct PredEntry {
  std::string id;
  double pred = 0.0;
  double target = 0.0;
};

struct FoldReport {
  int fold = 0;
  Metrics metrics;
  std::vector<PredEntry> predictions;
  std::vector<double> loss_curve;

  std::string to_json() const;
};

struct CvResult {
  std::vector<FoldReport> folds;
  std::vector<int> fold_assignment;
  Metrics mean;
  Metrics stddev;  // population std across folds
};

CvResult run_cv(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tc,
                const std::filesystem::path* out_dir = nullptr);

std::string format_double(double v);

// Table-style summary: variant,mMAE,stdMAE,mRMSE,stdRMSE,mMAPE,stdMAPE
void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, CvResult>>& rows);

}  // namespace tabatt
