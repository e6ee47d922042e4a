#include <cmath>
#include <map>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tabatt/datagen.hpp"
#include "tabatt/errors.hpp"
#include "tabatt/gradcheck.hpp"
#include "tabatt/model.hpp"
#include "tabatt/serialize.hpp"
#include "tabatt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabatt;

#ifndef TABATT_BUILD_ID
#define TABATT_BUILD_ID "dev"
#endif

namespace {

constexpr const char* kBuildId = TABATT_BUILD_ID;

// Model kind string, or a path to a model-config JSON file. Kind names win
// over paths so that a stray file named e.g. "tabattention" is never parsed.
ModelConfig resolve_model(const std::string& spec, const Dataset& ds) {
  ModelConfig cfg;
  try {
    cfg.kind = model_kind_from_string(spec);
  } catch (const InvalidSpec&) {
    if (!fs::exists(spec) || !fs::is_regular_file(spec)) throw;
    std::ifstream is(spec);
    std::stringstream buf;
    buf << is.rdbuf();
    cfg = ModelConfig::from_json(buf.str());
  }
  cfg.input_size = ds.spec.height;
  cfg.tab_dim = ds.spec.tab_dim;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

// Echoed run configuration for provenance. Deliberately free of timestamps
// so reruns are byte-identical.
void echo_config(const fs::path& out_dir, const std::string& command,
                 const ModelConfig& cfg, const TrainConfig& tc,
                 const std::string& data_path, json extra = json::object()) {
  json j;
  j["build"] = kBuildId;
  j["command"] = command;
  j["data"] = data_path;
  j["model"] = json::parse(cfg.to_json());
  j["train"] = {{"epochs", tc.epochs},
                {"batch_size", tc.batch_size},
                {"lr", tc.lr},
                {"lr_min", tc.lr_min},
                {"weight_decay", tc.weight_decay},
                {"seed", tc.seed},
                {"folds", tc.folds},
                {"jobs", tc.jobs},
                {"augment",
                 {{"hflip", tc.augment.hflip},
                  {"brightness_contrast", tc.augment.brightness_contrast},
                  {"gaussian_noise", tc.augment.gaussian_noise},
                  {"rotation", tc.augment.rotation}}}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_text(out_dir / "config.json", j.dump(2) + "\n");
}

void write_fold_reports(const fs::path& out_dir, const CvResult& cv) {
  for (const FoldReport& fr : cv.folds) {
    write_text(out_dir / ("fold_" + std::to_string(fr.fold) + ".json"), fr.to_json() + "\n");
  }
}

int cmd_gen_data(const std::string& out, int n, uint64_t seed, double redundancy,
                 int frames, const std::string& size) {
  SyntheticTaskSpec spec;
  spec.n_samples = n;
  spec.redundancy = redundancy;
  if (frames > 0) {
    spec.frames_min = frames;
    spec.frames_max = std::max(frames, spec.frames_max);
  }
  if (!size.empty()) {
    const auto x = size.find('x');
    if (x == std::string::npos) throw InvalidSpec("--size expects HxW, e.g. 64x64");
    spec.height = std::stoi(size.substr(0, x));
    spec.width = std::stoi(size.substr(x + 1));
  }
  Dataset ds = generate(spec, seed);
  save_dataset(ds, out);
  double tmin = ds.samples.front().target, tmax = tmin;
  for (const Sample& s : ds.samples) {
    tmin = std::min(tmin, s.target);
    tmax = std::max(tmax, s.target);
  }
  std::cout << "wrote " << ds.samples.size() << " samples to " << out << " ("
            << spec.height << "x" << spec.width << ", frames " << spec.frames_min << ".."
            << spec.frames_max << ", target range [" << tmin << ", " << tmax << "])\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& model,
              TrainConfig tc, const std::vector<double>& lr_grid, bool paper_scale,
              bool epochs_set) {
  if (paper_scale && !epochs_set) tc.epochs = 250;
  Dataset ds = load_dataset(data);
  ModelConfig cfg = resolve_model(model, ds);
  fs::create_directories(out);

  std::vector<double> lrs = lr_grid.empty() ? std::vector<double>{tc.lr} : lr_grid;
  std::vector<std::pair<std::string, CvResult>> rows;
  const fs::path out_dir = out;
  size_t best = 0;
  for (size_t i = 0; lr_grid.size() > 1 && i < lrs.size(); ++i) {
    TrainConfig t = tc;
    t.lr = lrs[i];
    CvResult grid_cv = run_cv(ds, cfg, t, nullptr);
    rows.emplace_back(to_string(cfg.kind) + "[lr=" + format_double(lrs[i]) + "]",
                      grid_cv);
    if (grid_cv.mean.mae < rows[best].second.mean.mae) best = i;
  }
  TrainConfig t = tc;
  if (!lrs.empty()) t.lr = lrs[best];
  // The winning configuration gets the checkpoints and fold reports.
  CvResult cv = run_cv(ds, cfg, t, &out_dir);
  if (lr_grid.size() <= 1) rows = {{to_string(cfg.kind), cv}};
  write_fold_reports(out, cv);
  write_summary_csv(fs::path(out) / "summary.csv", rows);
  echo_config(out, "train", cfg, t, data,
              json{{"lr_grid", lrs},
                   {"chosen_lr", lrs[best]},
                   {"fold_hash", fold_hash(cv.fold_assignment)}});
  std::cout << "model=" << to_string(cfg.kind) << " lr=" << lrs[best]
            << " mMAE=" << format_double(cv.mean.mae)
            << " mRMSE=" << format_double(cv.mean.rmse)
            << " mMAPE=" << format_double(cv.mean.mape) << "\n";
  return 0;
}

int cmd_eval(const std::string& data, const std::string& config_path,
             const std::string& checkpoint) {
  Dataset ds = load_dataset(data);
  std::ifstream is(config_path);
  if (!is) throw IoError("cannot read " + config_path);
  std::stringstream buf;
  buf << is.rdbuf();
  ModelConfig cfg = ModelConfig::from_json(buf.str());

  std::vector<double> preds, targets;
  if (cfg.kind == ModelKind::TabularLinreg) {
    throw InvalidSpec("eval expects a neural checkpoint; linreg has none");
  }
  ParamStore params;
  init_model_params(params, cfg, 0);
  load_checkpoint(checkpoint, params);
  for (const Sample& s : ds.samples) {
    preds.push_back(predict_sample(cfg, params, s));
    targets.push_back(s.target);
  }
  const Metrics m = compute_metrics(preds, targets);
  std::cout << "n=" << preds.size() << " MAE=" << format_double(m.mae)
            << " RMSE=" << format_double(m.rmse) << " MAPE=" << format_double(m.mape)
            << "\n";
  return 0;
}

struct AblateVariant {
  std::string name;
  bool cam, sam, tam, tab;
};

// Rows in the order of the component ablation: start from the plain image
// backbone and add temporal attention, tabular conditioning, and the full
// channel/spatial/temporal stack.
const std::vector<AblateVariant> kAblateVariants = {
    {"baseline", false, false, false, false},
    {"+TAM", false, false, true, false},
    {"+CBAM+Tab", true, true, false, true},
    {"+TAM+Tab", false, false, true, true},
    {"TabAttention", true, true, true, true},
};

int cmd_ablate(const std::string& data, const std::string& out,
               const std::vector<uint64_t>& seeds, TrainConfig tc) {
  Dataset ds = load_dataset(data);
  fs::create_directories(out);

  std::vector<std::pair<std::string, CvResult>> rows;
  json report;
  report["build"] = kBuildId;
  report["seeds"] = seeds;
  // Every variant must see the identical partition for a given seed.
  std::map<uint64_t, uint64_t> hash_by_seed;

  for (const AblateVariant& v : kAblateVariants) {
    ModelConfig cfg = resolve_model("tabattention", ds);
    cfg.use_cam = v.cam;
    cfg.use_sam = v.sam;
    cfg.use_tam = v.tam;
    cfg.use_tab = v.tab;

    // Pool the per-fold metrics across seeds; mean and population std.
    std::vector<Metrics> all;
    json variant_json;
    for (uint64_t seed : seeds) {
      TrainConfig t = tc;
      t.seed = seed;
      CvResult cv = run_cv(ds, cfg, t, nullptr);
      const uint64_t h = fold_hash(cv.fold_assignment);
      auto [it, inserted] = hash_by_seed.emplace(seed, h);
      if (!inserted && it->second != h) {
        throw InvalidSpec("fold partitions differ across ablation variants");
      }
      variant_json["seed_" + std::to_string(seed)] = {
          {"fold_hash", h},
          {"mMAE", cv.mean.mae},
          {"mRMSE", cv.mean.rmse},
          {"mMAPE", cv.mean.mape}};
      for (const FoldReport& fr : cv.folds) all.push_back(fr.metrics);
    }
    CvResult pooled;
    for (const Metrics& m : all) {
      FoldReport fr;
      fr.metrics = m;
      pooled.folds.push_back(fr);
    }
    const double n = static_cast<double>(all.size());
    Metrics mean, var;
    for (const Metrics& m : all) {
      mean.mae += m.mae / n;
      mean.rmse += m.rmse / n;
      mean.mape += m.mape / n;
    }
    for (const Metrics& m : all) {
      var.mae += (m.mae - mean.mae) * (m.mae - mean.mae) / n;
      var.rmse += (m.rmse - mean.rmse) * (m.rmse - mean.rmse) / n;
      var.mape += (m.mape - mean.mape) * (m.mape - mean.mape) / n;
    }
    pooled.mean = mean;
    pooled.stddev = {std::sqrt(var.mae), std::sqrt(var.rmse), std::sqrt(var.mape)};
    rows.emplace_back(v.name, pooled);
    report["variants"][v.name] = variant_json;
    std::cout << v.name << " mMAPE=" << format_double(mean.mape) << "\n";
  }
  json hashes = json::object();
  for (const auto& [s, h] : hash_by_seed) hashes[std::to_string(s)] = h;
  report["fold_hash_by_seed"] = hashes;
  write_summary_csv(fs::path(out) / "summary.csv", rows);
  write_text(fs::path(out) / "ablate_report.json", report.dump(2) + "\n");
  {
    ModelConfig cfg = resolve_model("tabattention", ds);
    echo_config(out, "ablate", cfg, tc, data, json{{"fold_hash_by_seed", hashes}});
  }
  return 0;
}

int cmd_gradcheck(bool inject_fault) {
  const auto entries = run_gradcheck_suite(inject_fault);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-34s worst=%.3e tol=%.0e %s\n", e.name.c_str(), e.worst, e.tolerance,
                e.pass ? "PASS" : "FAIL");
    ok = ok && e.pass;
  }
  if (!ok) {
    std::cout << "gradcheck: FAIL\n";
    return 3;
  }
  std::cout << "gradcheck: PASS (" << entries.size() << " checks)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TabAttention reference implementation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kBuildId));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  int gen_n = 96;
  uint64_t gen_seed = 7;
  double gen_rho = 0.5;
  int gen_frames = 0;
  std::string gen_size;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Number of samples");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--redundancy", gen_rho, "Tabular/image redundancy rho in [0,1]");
  gen->add_option("--frames", gen_frames, "Minimum clip length in frames");
  gen->add_option("--size", gen_size, "Frame size HxW, e.g. 64x64");

  // shared train-ish options
  TrainConfig tc;
  std::string data, out, model = "tabattention";
  std::vector<double> lr_grid;
  bool paper_scale = false, aug = false;
  std::vector<uint64_t> seeds = {0, 1, 2};

  auto add_train_opts = [&](CLI::App* sub, bool with_model) {
    sub->add_option("--data", data, "Dataset directory")->required();
    sub->add_option("--out", out, "Output directory")->required();
    if (with_model) sub->add_option("--model", model, "Model kind or config JSON path");
    sub->add_option("--epochs", tc.epochs, "Training epochs");
    sub->add_option("--batch", tc.batch_size, "Batch size");
    sub->add_option("--lr", tc.lr, "Peak learning rate");
    sub->add_option("--lr-min", tc.lr_min, "Final learning rate");
    sub->add_option("--weight-decay", tc.weight_decay, "Coupled L2 strength");
    sub->add_option("--folds", tc.folds, "Cross-validation folds");
    sub->add_option("--jobs", tc.jobs, "Fold-level parallelism");
    sub->add_flag("--augment", aug, "Enable training-time augmentation");
  };

  auto* train = app.add_subcommand("train", "Cross-validated training");
  add_train_opts(train, true);
  auto* epochs_opt = train->get_option("--epochs");
  train->add_option("--seed", tc.seed, "Master seed");
  train->add_option("--lr-grid", lr_grid, "Learning-rate grid (overrides --lr)");
  train->add_flag("--paper-scale", paper_scale, "Paper-scale defaults (250 epochs)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_cfg;
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--config", eval_cfg, "Model config JSON")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "Component ablation grid");
  add_train_opts(ablate, false);
  ablate->add_option("--seeds", seeds, "Seeds to pool over");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  bool inject_fault = false;
  gc->add_flag("--inject-fault", inject_fault,
               "Also run a deliberately broken backward rule (must FAIL)")
      ->group("");  // hidden: test fixture

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  tc.augment = AugmentFlags{aug, aug, aug, aug};

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_n, gen_seed, gen_rho, gen_frames, gen_size);
    if (train->parsed())
      return cmd_train(data, out, model, tc, lr_grid, paper_scale, epochs_opt->count() > 0);
    if (eval->parsed()) return cmd_eval(data, eval_cfg, eval_ckpt);
    if (ablate->parsed()) return cmd_ablate(data, out, seeds, tc);
    if (gc->parsed()) return cmd_gradcheck(inject_fault);
  } catch (const GradcheckFailure& e) {
    std::cerr << "numerical check failed: " << e.what() << "\n";
    return 3;
  } catch (const SingularSystem& e) {
    std::cerr << "numerical check failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
