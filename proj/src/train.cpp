#include "tabatt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "tabatt/linreg.hpp"
#include "tabatt/serialize.hpp"

namespace tabatt {

Metrics compute_metrics(const std::vector<double>& preds,
                        const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ShapeMismatch("metrics require equal-length non-empty vectors");
  }
  Metrics m;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (targets[i] <= 0.0) throw NonPositiveTarget("MAPE requires positive targets");
    const double e = preds[i] - targets[i];
    m.mae += std::fabs(e);
    m.rmse += e * e;
    m.mape += std::fabs(e) / targets[i];
  }
  const double n = static_cast<double>(preds.size());
  m.mae /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.mape = 100.0 * m.mape / n;
  return m;
}

Var mse_loss(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    throw ShapeMismatch("mse_loss requires equal shapes");
  }
  Var e = sub(pred, target);
  return mean_all(mul(e, e));
}

void adam_step(ParamStore& params, const std::unordered_map<std::string, Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps,
               double l2) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto& item : params.items()) {
    if (!item.trainable) continue;
    auto git = grads.find(item.name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& p = item.value;
    Tensor& mbuf = state.m.try_emplace(item.name, Tensor(p.shape(), 0.0)).first->second;
    Tensor& vbuf = state.v.try_emplace(item.name, Tensor(p.shape(), 0.0)).first->second;
    for (int64_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + l2 * p[i];
      mbuf[i] = beta1 * mbuf[i] + (1.0 - beta1) * gi;
      vbuf[i] = beta2 * vbuf[i] + (1.0 - beta2) * gi * gi;
      const double mhat = mbuf[i] / bc1;
      const double vhat = vbuf[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double cosine_lr(int epoch, int total_epochs, double lr0, double lr_min) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw InvalidEpoch("epoch " + std::to_string(epoch) + " outside [0, " +
                       std::to_string(total_epochs) + ")");
  }
  if (total_epochs == 1) return lr0;
  const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * frac));
}

std::vector<double> tertile_thresholds(const std::vector<double>& targets) {
  std::vector<double> sorted = targets;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  return {sorted[n / 3], sorted[(2 * n) / 3]};
}

std::vector<int> assign_bins(const std::vector<double>& targets,
                             const std::vector<double>& thresholds) {
  std::vector<int> bins(targets.size(), 0);
  for (size_t i = 0; i < targets.size(); ++i) {
    int b = 0;
    for (double th : thresholds) {
      if (targets[i] >= th) ++b;
    }
    bins[i] = b;
  }
  return bins;
}

std::vector<int> stratified_folds(const std::vector<double>& targets, int k,
                                  const std::vector<double>& thresholds, uint64_t seed) {
  const int n = static_cast<int>(targets.size());
  if (k < 2) throw InvalidSpec("k must be >= 2");
  if (n < k) throw TooFewSamples("need at least k samples");
  const std::vector<int> bins = assign_bins(targets, thresholds);
  const int nbins = static_cast<int>(thresholds.size()) + 1;
  std::vector<int> fold(targets.size(), -1);
  int next_fold = 0;
  for (int b = 0; b < nbins; ++b) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (bins[static_cast<size_t>(i)] == b) members.push_back(i);
    }
    Rng rng(Rng::derive(seed, static_cast<uint64_t>(b) + 101));
    rng.shuffle(members);
    for (int idx : members) {
      fold[static_cast<size_t>(idx)] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return fold;
}

uint64_t fold_hash(const std::vector<int>& assignment) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (int f : assignment) {
    h ^= static_cast<uint64_t>(f) + 0x100;
    h *= 1099511628211ull;
  }
  return h;
}

double train_step(ParamStore& params, const ModelConfig& cfg, const Batch& batch,
                  AdamState& state, double lr, double l2) {
  Tape tape;
  Ctx ctx{tape, params, /*training=*/true};
  Var video = constant(tape, batch.video);
  std::optional<Var> tab;
  if (cfg.kind != ModelKind::ImageOnly) tab = constant(tape, batch.tab);
  Var pred = backbone_forward(ctx, cfg, video, tab);
  Var loss = mse_loss(pred, constant(tape, batch.target));
  const double loss_value = loss.val()[0];
  tape.backward(loss);
  std::unordered_map<std::string, Tensor> grads;
  for (const auto& item : params.items()) {
    if (!item.trainable) continue;
    grads.emplace(item.name, ctx.grad_of(item.name));
  }
  adam_step(params, grads, state, lr, 0.9, 0.999, 1e-8, l2);
  return loss_value;
}

namespace {

struct Example {
  const Sample* sample;
  int64_t seg_start;
};

void fit_norms(ParamStore& params, const std::vector<const Sample*>& train,
               int tab_dim) {
  Tensor rows({static_cast<int64_t>(train.size()), tab_dim}, 0.0);
  for (size_t i = 0; i < train.size(); ++i) {
    for (int64_t j = 0; j < tab_dim; ++j) {
      rows[static_cast<int64_t>(i) * tab_dim + j] = train[i]->tab[j];
    }
  }
  const Standardizer st = standardize_fit(rows);
  params.at("norm.tab_mean") = st.mean;
  params.at("norm.tab_std") = st.std;

  double mu = 0.0;
  for (const Sample* s : train) mu += s->target;
  mu /= static_cast<double>(train.size());
  double var = 0.0;
  for (const Sample* s : train) var += (s->target - mu) * (s->target - mu);
  var /= static_cast<double>(train.size());
  params.at("norm.target_mean") = Tensor({1}, {mu});
  params.at("norm.target_std") = Tensor({1}, {var > 1e-24 ? std::sqrt(var) : 1.0});
}

}  // namespace

std::vector<double> train_model(ParamStore& params, const ModelConfig& cfg,
                                const std::vector<const Sample*>& train,
                                const TrainConfig& tc, uint64_t seed) {
  if (tc.batch_size < 2) throw InvalidSpec("batch_size must be >= 2 (batchnorm)");
  if (tc.epochs < 1) throw InvalidSpec("epochs must be >= 1");
  fit_norms(params, train, cfg.tab_dim);
  const Standardizer st{params.at("norm.tab_mean"), params.at("norm.tab_std")};
  const double tmu = params.at("norm.target_mean")[0];
  const double tsd = params.at("norm.target_std")[0];

  std::vector<Example> examples;
  for (const Sample* s : train) {
    for (int64_t start : segment_starts(s->video.extent(0), cfg.frames)) {
      examples.push_back(Example{s, start});
    }
  }

  AdamState state;
  std::vector<double> curve;
  const int64_t frame = static_cast<int64_t>(cfg.input_size) * cfg.input_size;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.epochs, tc.lr, tc.lr_min);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng erng(Rng::derive(seed, 7000 + static_cast<uint64_t>(epoch)));
    erng.shuffle(order);

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (size_t pos = 0; pos < order.size();) {
      const int64_t bs = std::min<int64_t>(tc.batch_size,
                                           static_cast<int64_t>(order.size() - pos));
      if (bs < 2) break;  // batchnorm train mode needs at least 2
      Batch batch{Tensor({bs, 1, cfg.frames, cfg.input_size, cfg.input_size}, 0.0),
                  Tensor({bs, cfg.tab_dim}, 0.0), Tensor({bs}, 0.0)};
      for (int64_t bi = 0; bi < bs; ++bi) {
        const Example& ex = examples[order[pos + static_cast<size_t>(bi)]];
        Tensor clip({cfg.frames, 1, cfg.input_size, cfg.input_size}, 0.0);
        std::copy(ex.sample->video.data() + ex.seg_start * frame,
                  ex.sample->video.data() + (ex.seg_start + cfg.frames) * frame,
                  clip.data());
        if (tc.augment.hflip || tc.augment.brightness_contrast ||
            tc.augment.gaussian_noise || tc.augment.rotation) {
          Rng arng(Rng::derive(seed, 900000 + static_cast<uint64_t>(epoch) * 4096 +
                                         order[pos + static_cast<size_t>(bi)]));
          clip = augment(clip, arng, tc.augment);
        }
        std::copy(clip.data(), clip.data() + clip.size(),
                  batch.video.data() + bi * clip.size());
        const Tensor trow = st.apply_row(ex.sample->tab);
        std::copy(trow.data(), trow.data() + cfg.tab_dim,
                  batch.tab.data() + bi * cfg.tab_dim);
        batch.target[bi] = (ex.sample->target - tmu) / tsd;
      }
      epoch_loss += train_step(params, cfg, batch, state, lr, tc.weight_decay);
      ++batches;
      pos += static_cast<size_t>(bs);
    }
    curve.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return curve;
}

double predict_sample(const ModelConfig& cfg, ParamStore& params, const Sample& sample) {
  const Standardizer st{params.at("norm.tab_mean"), params.at("norm.tab_std")};
  const double tmu = params.at("norm.target_mean")[0];
  const double tsd = params.at("norm.target_std")[0];
  const Tensor trow = st.apply_row(sample.tab);
  double acc = 0.0;
  int count = 0;
  for (const Tensor& seg : segment(sample.video, cfg.frames)) {
    Tape tape;
    Ctx ctx{tape, params, /*training=*/false};
    Var video = constant(
        tape, Tensor({1, 1, cfg.frames, seg.extent(2), seg.extent(3)}, seg.vec()));
    std::optional<Var> tab;
    if (cfg.kind != ModelKind::ImageOnly) {
      tab = constant(tape, Tensor({1, cfg.tab_dim}, trow.vec()));
    }
    Var pred = backbone_forward(ctx, cfg, video, tab);
    acc += pred.val()[0];
    ++count;
  }
  return tmu + tsd * (acc / static_cast<double>(count));
}

std::string FoldReport::to_json() const {
  nlohmann::json j;
  j["fold"] = fold;
  j["metrics"] = {{"mae", metrics.mae}, {"rmse", metrics.rmse}, {"mape", metrics.mape}};
  nlohmann::json preds = nlohmann::json::array();
  for (const PredEntry& p : predictions) {
    preds.push_back({{"id", p.id}, {"pred", p.pred}, {"target", p.target}});
  }
  j["predictions"] = std::move(preds);
  j["loss_curve"] = loss_curve;
  return j.dump(2);
}

namespace {

FoldReport run_fold(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tc,
                    const std::vector<int>& assignment, int fold,
                    const std::filesystem::path* out_dir) {
  std::vector<const Sample*> train;
  std::vector<const Sample*> held;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    (assignment[i] == fold ? held : train).push_back(&ds.samples[i]);
  }
  FoldReport report;
  report.fold = fold;

  if (cfg.kind == ModelKind::TabularLinreg) {
    Tensor rows({static_cast<int64_t>(train.size()), cfg.tab_dim}, 0.0);
    Tensor y({static_cast<int64_t>(train.size())}, 0.0);
    for (size_t i = 0; i < train.size(); ++i) {
      for (int64_t j = 0; j < cfg.tab_dim; ++j) {
        rows[static_cast<int64_t>(i) * cfg.tab_dim + j] = train[i]->tab[j];
      }
      y[static_cast<int64_t>(i)] = train[i]->target;
    }
    const Standardizer st = standardize_fit(rows);
    const Tensor w = linreg_fit(st.apply(rows), y, 1e-8);
    for (const Sample* s : held) {
      Tensor row({1, cfg.tab_dim}, st.apply_row(s->tab).vec());
      report.predictions.push_back(PredEntry{s->id, linreg_predict(row, w)[0], s->target});
    }
  } else {
    ParamStore params;
    init_model_params(params, cfg, Rng::derive(tc.seed, 31 + static_cast<uint64_t>(fold)));
    report.loss_curve = train_model(params, cfg, train, tc,
                                    Rng::derive(tc.seed, 57 + static_cast<uint64_t>(fold)));
    for (const Sample* s : held) {
      report.predictions.push_back(
          PredEntry{s->id, predict_sample(cfg, params, *s), s->target});
    }
    if (out_dir) {
      save_checkpoint(*out_dir / ("fold_" + std::to_string(fold) + ".ckpt"), params);
    }
  }

  std::vector<double> preds, targets;
  for (const PredEntry& p : report.predictions) {
    preds.push_back(p.pred);
    targets.push_back(p.target);
  }
  report.metrics = compute_metrics(preds, targets);
  return report;
}

}  // namespace

CvResult run_cv(const Dataset& ds, const ModelConfig& cfg, const TrainConfig& tc,
                const std::filesystem::path* out_dir) {
  const int k = tc.folds;
  if (static_cast<int>(ds.samples.size()) < k) throw TooFewSamples("dataset smaller than k");
  const std::vector<double> targets = ds.targets();
  const std::vector<double> thresholds =
      tc.bin_thresholds.empty() ? tertile_thresholds(targets) : tc.bin_thresholds;

  CvResult result;
  result.fold_assignment = stratified_folds(targets, k, thresholds, tc.seed);
  result.folds.resize(static_cast<size_t>(k));

  const int jobs = std::max(1, std::min(tc.jobs, k));
  if (jobs == 1) {
    for (int f = 0; f < k; ++f) {
      result.folds[static_cast<size_t>(f)] =
          run_fold(ds, cfg, tc, result.fold_assignment, f, out_dir);
    }
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(k));
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        for (int f = w; f < k; f += jobs) {
          try {
            result.folds[static_cast<size_t>(f)] =
                run_fold(ds, cfg, tc, result.fold_assignment, f, out_dir);
          } catch (...) {
            errors[static_cast<size_t>(f)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  auto agg = [&](auto pick) {
    double mu = 0.0;
    for (const FoldReport& fr : result.folds) mu += pick(fr.metrics);
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (const FoldReport& fr : result.folds) {
      var += (pick(fr.metrics) - mu) * (pick(fr.metrics) - mu);
    }
    return std::pair{mu, std::sqrt(var / static_cast<double>(k))};
  };
  std::tie(result.mean.mae, result.stddev.mae) = agg([](const Metrics& m) { return m.mae; });
  std::tie(result.mean.rmse, result.stddev.rmse) =
      agg([](const Metrics& m) { return m.rmse; });
  std::tie(result.mean.mape, result.stddev.mape) =
      agg([](const Metrics& m) { return m.mape; });
  return result;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, CvResult>>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "variant,mMAE,stdMAE,mRMSE,stdRMSE,mMAPE,stdMAPE\n";
  for (const auto& [name, cv] : rows) {
    os << name << "," << format_double(cv.mean.mae) << "," << format_double(cv.stddev.mae)
       << "," << format_double(cv.mean.rmse) << "," << format_double(cv.stddev.rmse)
       << "," << format_double(cv.mean.mape) << "," << format_double(cv.stddev.mape)
       << "\n";
  }
}

}  // namespace tabatt
