// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "retinev/checkpoint.hpp"
#include "retinev/config.hpp"
#include "retinev/dataset.hpp"
#include "retinev/losses.hpp"
#include "retinev/model.hpp"
#include "retinev/optim.hpp"

// Two-phase training: denoiser pretraining on degraded vs. clean illumination
// maps, then joint training of the whole network.

namespace retinev {

/// Timestamps are normalized with beta = 0 during training.
inline constexpr double kTrainBeta = 0.0;

inline constexpr std::uint64_t kTrainLowLightPurpose = 31;

struct TrainingImages {
  std::vector<std::string> names;
  std::vector<EncodedRaster> high;
  std::vector<EncodedRaster> low;  // empty in synthetic mode
};

inline TrainingImages load_training_images(const RunConfig& cfg) {
  TrainingImages d;
  if (cfg.data.root.empty()) throw ConfigError("data.root: no training data directory configured");
  if (cfg.data.mode == DataMode::kPaired) {
    const PairedDataset ds = load_paired_dataset(cfg.data.root, cfg.data.low_dir, cfg.data.high_dir, "train");
    for (const auto& p : ds.pairs) {
      d.names.push_back(p.name);
      d.high.push_back(load_image(p.high, cfg.model.gamma));
      d.low.push_back(load_image(p.low, cfg.model.gamma));
    }
  } else {
    fs::path dir = cfg.data.root;
    for (const auto& name : detail::list_images(dir)) {
      d.names.push_back(name);
      d.high.push_back(load_image(dir / name, cfg.model.gamma));
    }
  }
  if (d.high.empty()) throw TrainingError("training dataset is empty: " + cfg.data.root.string());
  for (std::size_t i = 0; i < d.high.size(); ++i) {
    if (d.high[i].channels() != 3) throw TrainingError("training image is not RGB: " + d.names[i]);
    if (d.high[i].width() < cfg.train.patch_size || d.high[i].height() < cfg.train.patch_size) {
      throw TrainingError("training image " + d.names[i] + " is smaller than train.patch_size");
    }
  }
  return d;
}

/// Flip and rotate a raster in place of the tensor transform used by the network.
template <class Tag>
BasicRaster<Tag> augment(const BasicRaster<Tag>& r, bool flip, int rot90) {
  Tensor<double> t = ag::geometric_transform(to_tensor<double>(r), flip, rot90);
  return {t.w(), t.h(), t.c(), std::vector<double>(t.vec())};
}

inline EncodedRaster augment(const EncodedRaster& r, bool flip, int rot90) {
  const BasicRaster<EncodedTag>& base = r;
  auto a = augment(base, flip, rot90);
  return {a.width(), a.height(), a.channels(), a.data(), r.gamma()};
}

/// Random crop position and geometric augmentation, drawn from the master stream.
struct PatchDraw {
  std::size_t image = 0;
  int x0 = 0;
  int y0 = 0;
  bool flip = false;
  int rot90 = 0;
};

inline PatchDraw draw_patch(const TrainingImages& d, int patch, Rng& rng) {
  PatchDraw p;
  p.image = std::uniform_int_distribution<std::size_t>(0, d.high.size() - 1)(rng);
  const auto& img = d.high[p.image];
  p.x0 = std::uniform_int_distribution<int>(0, img.width() - patch)(rng);
  p.y0 = std::uniform_int_distribution<int>(0, img.height() - patch)(rng);
  p.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  p.rot90 = std::uniform_int_distribution<int>(0, 3)(rng);
  return p;
}

/// Rescaled illuminance input E / max E for one FPE map.
template <class T>
Tensor<T> fpe_input(const FpeMap& m, const SensorConstants& sensor) {
  return illumination_input<T>(beta_normalize(m, kTrainBeta), sensor.k());
}

template <class T>
struct MainBatch {
  Tensor<T> e;         // [B,1,P,P]
  Tensor<T> s_low;     // [B,3,P,P] linear
  Tensor<T> s_normal;  // [B,3,P,P] linear
};

template <class T>
MainBatch<T> make_main_batch(const TrainingImages& d, const RunConfig& cfg, std::uint64_t iteration, Rng& master) {
  const int B = cfg.train.batch_size;
  const int P = cfg.train.patch_size;
  MainBatch<T> b{Tensor<T>({B, 1, P, P}), Tensor<T>({B, 3, P, P}), Tensor<T>({B, 3, P, P})};
  for (int i = 0; i < B; ++i) {
    const PatchDraw pd = draw_patch(d, P, master);
    const std::uint64_t index = iteration * static_cast<std::uint64_t>(B) + static_cast<std::uint64_t>(i);
    const EncodedRaster gt = augment(crop(d.high[pd.image], pd.x0, pd.y0, P, P), pd.flip, pd.rot90);
    const TrainingSample s = synthesize_training_sample(gt, cfg.sensor, cfg.lldm, index);
    LinearRaster low;
    if (d.low.empty()) {
      Rng rng = derive_stream(cfg.lldm.seed, index, kTrainLowLightPurpose);
      low = synthesize_low_light(s.gt_linear, cfg.data.exposure, cfg.lldm, rng);
    } else {
      low = gamma_decode(augment(crop(d.low[pd.image], pd.x0, pd.y0, P, P), pd.flip, pd.rot90));
    }
    const Tensor<T> e = fpe_input<T>(s.fpe, cfg.sensor);
    std::copy(e.vec().begin(), e.vec().end(), b.e.plane(i, 0));
    write_to_tensor(low, b.s_low, i);
    write_to_tensor(s.gt_linear, b.s_normal, i);
  }
  return b;
}

template <class T>
struct PretrainBatch {
  Tensor<T> degraded;  // [B,1,P,P]
  Tensor<T> clean;     // [B,1,P,P]
};

template <class T>
PretrainBatch<T> make_pretrain_batch(const TrainingImages& d, const RunConfig& cfg, std::uint64_t iteration,
                                     Rng& master) {
  const int B = cfg.train.batch_size;
  const int P = cfg.train.patch_size;
  PretrainBatch<T> b{Tensor<T>({B, 1, P, P}), Tensor<T>({B, 1, P, P})};
  for (int i = 0; i < B; ++i) {
    const PatchDraw pd = draw_patch(d, P, master);
    const std::uint64_t index = iteration * static_cast<std::uint64_t>(B) + static_cast<std::uint64_t>(i);
    const EncodedRaster gt = augment(crop(d.high[pd.image], pd.x0, pd.y0, P, P), pd.flip, pd.rot90);
    const TrainingSample s = synthesize_training_sample(gt, cfg.sensor, cfg.lldm, index);
    const Tensor<T> deg = fpe_input<T>(s.fpe, cfg.sensor);
    const Tensor<T> cln = fpe_input<T>(clean_fpe_map(s.gt_linear, cfg.sensor, cfg.lldm.threshold_mu), cfg.sensor);
    std::copy(deg.vec().begin(), deg.vec().end(), b.degraded.plane(i, 0));
    std::copy(cln.vec().begin(), cln.vec().end(), b.clean.plane(i, 0));
  }
  return b;
}

/// One row of a loss curve. Pretraining fills only `recon` (its L1 loss) and `total`.
struct LossRow {
  std::uint64_t iteration = 0;
  LossReport loss;
  double lr = 0;
  double grad_norm = 0;
};

struct TrainOptions {
  fs::path out_dir;                             // checkpoints and loss log; empty = keep in memory only
  std::function<void(const LossRow&)> on_step;  // progress hook
  std::uint64_t stop_after = 0;                 // stop early after this iteration (0 = run to the end)
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRow> curve;
};

inline std::string rng_state(const Rng& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

inline Rng rng_from_state(const std::string& s) {
  Rng rng;
  std::istringstream in(s);
  in >> rng;
  if (!in) throw CorruptFileError("checkpoint: unreadable RNG state");
  return rng;
}

inline Rng master_rng(const RunConfig& cfg, std::uint64_t phase_purpose) { return derive_stream(cfg.train.seed, 0, phase_purpose); }

inline constexpr std::uint64_t kPretrainPurpose = 41;
inline constexpr std::uint64_t kMainPurpose = 42;

namespace detail {

inline void check_finite(const LossRow& row, const char* phase) {
  const auto& l = row.loss;
  if (std::isfinite(l.total) && std::isfinite(l.recon) && std::isfinite(l.reflectance) && std::isfinite(l.perceptual)) {
    return;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s: non-finite loss at iteration %llu (recon=%g reflectance=%g perceptual=%g total=%g lr=%g)", phase,
                static_cast<unsigned long long>(row.iteration), l.recon, l.reflectance, l.perceptual, l.total, row.lr);
  throw TrainingError(buf);
}

class LossLog {
 public:
  LossLog(const fs::path& dir, const std::string& phase, bool append) {
    if (dir.empty()) return;
    const fs::path path = dir / (phase + "_loss.tsv");
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw IoError("cannot write loss log " + path.string());
    if (fresh) out_ << "iteration\trecon\treflectance\tperceptual\ttotal\tlr\tgrad_norm\n";
  }
  void write(const LossRow& r) {
    if (!out_.is_open()) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.6g\t%.6g\n",
                  static_cast<unsigned long long>(r.iteration), r.loss.recon, r.loss.reflectance, r.loss.perceptual,
                  r.loss.total, r.lr, r.grad_norm);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline fs::path checkpoint_path(const fs::path& dir, const std::string& phase, std::uint64_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%07llu.rvck", phase.c_str(), static_cast<unsigned long long>(iteration));
  return dir / buf;
}

/// Shared loop: `step(iteration)` computes gradients and returns the loss row.
template <class StepFn>
TrainResult run_loop(const RunConfig& cfg, const std::string& phase, RetinexModel<float>& model, Adam<float>& opt,
                     Rng& master, std::uint64_t start, std::uint64_t total, const TrainOptions& opts, StepFn step) {
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
  LossLog log(opts.out_dir, phase, start > 0);
  const std::uint64_t hash = config_hash(cfg);
  auto snapshot = [&](std::uint64_t it) {
    Checkpoint c;
    c.config_hash = hash;
    c.phase = phase;
    c.model = model.config();
    c.iteration = it;
    c.rng_state = rng_state(master);
    c.params = snapshot_params(model.parameters());
    c.optimizer = snapshot_optimizer(opt);
    return c;
  };
  TrainResult result;
  const auto params = model.parameters();
  for (std::uint64_t it = start; it < total; ++it) {
    const double lr = cosine_lr(static_cast<long>(it), static_cast<long>(total), cfg.train.lr_main, cfg.train.lr_min);
    opt.zero_grad();
    LossRow row = step(it);
    row.iteration = it + 1;
    row.lr = lr;
    check_finite(row, phase.c_str());
    row.grad_norm = clip_grad_norm(params, cfg.train.grad_clip);
    if (!std::isfinite(row.grad_norm)) {
      throw TrainingError(phase + ": non-finite gradient norm at iteration " + std::to_string(it + 1));
    }
    opt.step(lr);
    log.write(row);
    if (opts.on_step) opts.on_step(row);
    result.curve.push_back(row);
    const bool last = it + 1 == total || (opts.stop_after != 0 && it + 1 == opts.stop_after);
    if (!opts.out_dir.empty() && ((it + 1) % static_cast<std::uint64_t>(cfg.train.checkpoint_every) == 0 || last)) {
      save_checkpoint(snapshot(it + 1), checkpoint_path(opts.out_dir, phase, it + 1));
    }
    if (last) break;
  }
  result.checkpoint = snapshot(result.curve.empty() ? start : result.curve.back().iteration);
  if (!opts.out_dir.empty()) save_checkpoint(result.checkpoint, opts.out_dir / (phase + "_final.rvck"));
  return result;
}

}  // namespace detail

/// Checkpoint of a freshly initialized model, no optimizer state.
inline Checkpoint initial_checkpoint(const RunConfig& cfg) {
  RetinexModel<float> model(cfg.model);
  Checkpoint c;
  c.config_hash = config_hash(cfg);
  c.phase = "init";
  c.model = cfg.model;
  c.params = snapshot_params(model.parameters());
  return c;
}

/// Denoiser-only L1 training under the full degradation model. Other modules
/// keep their initial values; their learning rate is zero.
inline TrainResult pretrain_denoiser(const RunConfig& cfg, const TrainOptions& opts = {},
                                     const std::optional<Checkpoint>& resume = std::nullopt) {
  cfg.validate();
  const TrainingImages data = load_training_images(cfg);
  RetinexModel<float> model(cfg.model);
  const auto params = model.parameters();
  std::vector<double> scale;
  for (const auto& p : params) scale.push_back(RetinexModel<float>::is_denoiser_param(p.name) ? 1.0 : 0.0);
  Adam<float> opt(params, scale);
  Rng master = master_rng(cfg, kPretrainPurpose);
  std::uint64_t start = 0;
  if (resume) {
    require_config_hash(*resume, config_hash(cfg), "resume");
    if (resume->phase != "pretrain") throw TrainingError("resume: checkpoint phase is '" + resume->phase + "', expected 'pretrain'");
    restore_params(*resume, params);
    if (!resume->optimizer) throw TrainingError("resume: checkpoint carries no optimizer state");
    restore_optimizer(*resume->optimizer, opt);
    master = rng_from_state(resume->rng_state);
    start = resume->iteration;
  }
  const auto& denoiser = model.t2i().denoiser();
  return detail::run_loop(cfg, "pretrain", model, opt, master, start, static_cast<std::uint64_t>(cfg.train.iters_pretrain),
                          opts, [&](std::uint64_t it) {
                            const PretrainBatch<float> b = make_pretrain_batch<float>(data, cfg, it, master);
                            ag::Var<float> loss =
                                ag::l1_mean(denoiser(ag::Var<float>(b.degraded)), ag::Var<float>(b.clean));
                            ag::backward(loss);
                            LossRow row;
                            row.loss.recon = loss.item();
                            row.loss.total = loss.item();
                            return row;
                          });
}

/// Joint training. `init` supplies starting weights (for example a pretrained
/// denoiser); `resume` continues an interrupted run of the same config.
inline TrainResult train_main(const RunConfig& cfg, const std::optional<Checkpoint>& init = std::nullopt,
                              const TrainOptions& opts = {}, const std::optional<Checkpoint>& resume = std::nullopt) {
  cfg.validate();
  const TrainingImages data = load_training_images(cfg);
  RetinexModel<float> model(cfg.model);
  const auto params = model.parameters();
  std::vector<double> scale;
  for (const auto& p : params) {
    scale.push_back(RetinexModel<float>::is_denoiser_param(p.name) ? cfg.train.lr_denoiser_scale : 1.0);
  }
  Adam<float> opt(params, scale);
  Rng master = master_rng(cfg, kMainPurpose);
  std::uint64_t start = 0;
  if (resume) {
    require_config_hash(*resume, config_hash(cfg), "resume");
    if (resume->phase != "main") throw TrainingError("resume: checkpoint phase is '" + resume->phase + "', expected 'main'");
    restore_params(*resume, params);
    if (!resume->optimizer) throw TrainingError("resume: checkpoint carries no optimizer state");
    restore_optimizer(*resume->optimizer, opt);
    master = rng_from_state(resume->rng_state);
    start = resume->iteration;
  } else if (init) {
    if (!(init->model == cfg.model)) {
      // Only the architecture must agree; fusion mode and seed may differ.
      ModelConfig a = init->model;
      ModelConfig b = cfg.model;
      a.seed = b.seed = 0;
      a.fusion = b.fusion = Fusion::kCrossAttention;
      if (!(a == b)) throw TrainingError("init: checkpoint architecture does not match model config");
    }
    restore_params(*init, params);
  }
  const PerceptualExtractor<float> extractor(cfg.extractor_seed);
  return detail::run_loop(cfg, "main", model, opt, master, start, static_cast<std::uint64_t>(cfg.train.iters_main), opts,
                          [&](std::uint64_t it) {
                            const MainBatch<float> b = make_main_batch<float>(data, cfg, it, master);
                            const ag::Var<float> e(b.e);
                            const ag::Var<float> s_low(b.s_low);
                            const ag::Var<float> s_normal(b.s_normal);
                            const ForwardResult<float> f = model.forward_train(e, s_low, s_normal);
                            const auto rec = recon_loss(f.illumination, f.r_hat, f.r_normal, s_normal);
                            const auto refl = reflectance_loss(f.r_low, f.r_hat, f.r_normal);
                            const auto perc = perceptual_loss(f.enhanced, s_normal, extractor);
                            const auto total = weighted_total(rec, refl, perc, cfg.loss);
                            ag::backward(total);
                            LossRow row;
                            row.loss = total_loss({rec.item(), refl.item(), perc.item(), 0}, cfg.loss);
                            return row;
                          });
}

}  // namespace retinev
