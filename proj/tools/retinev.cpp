// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: synth, make-benchmark, pretrain, train, enhance,
// evaluate and bench.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "retinev/checkpoint.hpp"
#include "retinev/config.hpp"
#include "retinev/dataset.hpp"
#include "retinev/eval.hpp"
#include "retinev/event_io.hpp"
#include "retinev/image_io.hpp"
#include "retinev/train.hpp"

namespace fs = std::filesystem;
using namespace retinev;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("RETINEV_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const char* end = s + std::strlen(s);
  auto [ptr, ec] = std::from_chars(s, end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("RETINEV_SEED: not an unsigned integer: '" + std::string(s) + "'");
  return v;
}

/// Precedence: --seed, then the config file, then RETINEV_SEED.
RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& cli_seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path, env_seed());
  if (path.empty()) {
    if (auto s = env_seed()) apply_seed(cfg, *s);
  }
  if (cli_seed) apply_seed(cfg, *cli_seed);
  cfg.validate();
  return cfg;
}

/// Runs `fill(stage)` into a fresh sibling directory and renames it to `out`
/// only if it succeeds.
template <class F>
void atomic_directory(const fs::path& out, F fill) {
  if (fs::exists(out)) throw IoError("output already exists: " + out.string());
  fs::path stage = out;
  stage += ".partial";
  fs::remove_all(stage);
  fs::create_directories(stage);
  try {
    fill(stage);
  } catch (...) {
    fs::remove_all(stage);
    throw;
  }
  fs::rename(stage, out);
}

EncodedRaster preview_of(const FpeMap& m, const SensorConstants& sensor) {
  const Tensor<double> e = illumination_input<double>(beta_normalize(m, 0.0), sensor.k());
  return {m.width(), m.height(), 1, e.vec()};
}

int cmd_synth(const std::string& gt_dir, const std::string& out, const std::string& config,
              const std::optional<std::uint64_t>& seed) {
  const RunConfig cfg = resolve_config(config, seed);
  const auto names = detail::list_images(gt_dir);
  if (names.empty()) throw IoError("no PNG images in " + gt_dir);
  atomic_directory(out, [&](const fs::path& stage) {
    fs::create_directories(stage / "fpe");
    fs::create_directories(stage / "preview");
    nlohmann::ordered_json manifest;
    manifest["format"] = "retinev-synth-1";
    manifest["seed"] = cfg.lldm.seed;
    manifest["config_hash"] = config_hash(cfg);
    manifest["items"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const EncodedRaster gt = load_image(fs::path(gt_dir) / names[i], cfg.model.gamma);
      const TrainingSample s = synthesize_training_sample(gt, cfg.sensor, cfg.lldm, i);
      const std::string stem = fs::path(names[i]).stem().string();
      write_fpe1(s.fpe, stage / "fpe" / (stem + ".fpe"));
      save_image(preview_of(s.fpe, cfg.sensor), stage / "preview" / (stem + ".png"), 8);
      manifest["items"].push_back({{"gt", names[i]}, {"index", i}, {"fpe", "fpe/" + stem + ".fpe"},
                                   {"missing", s.fpe.size() - s.fpe.valid_count()}});
    }
    std::ofstream(stage / "manifest.json") << manifest.dump(2) << '\n';
  });
  std::cout << "wrote " << names.size() << " FPE maps to " << out << '\n';
  return 0;
}

int cmd_make_benchmark(const std::string& out, int count, int size, const std::optional<std::uint64_t>& seed) {
  BenchmarkSpec spec;
  spec.count = count;
  spec.size = size;
  if (seed) {
    spec.seed = *seed;
  } else if (auto s = env_seed()) {
    spec.seed = *s;
  }
  build_synthetic_benchmark(spec, out);
  std::cout << "wrote " << count << " scenes (" << size << "x" << size << ", seed " << spec.seed << ") to " << out
            << '\n';
  return 0;
}

void print_row(const char* phase, const LossRow& r, std::uint64_t total) {
  if (r.iteration % 100 != 0 && r.iteration != total && r.iteration != 1) return;
  std::cerr << phase << " iter " << r.iteration << "/" << total << " recon " << r.loss.recon << " refl "
            << r.loss.reflectance << " percep " << r.loss.perceptual << " total " << r.loss.total << " lr " << r.lr
            << '\n';
}

int cmd_pretrain(const std::string& config, const std::string& out, const std::string& resume,
                 const std::optional<std::uint64_t>& seed) {
  const RunConfig cfg = resolve_config(config, seed);
  std::optional<Checkpoint> res;
  if (!resume.empty()) res = load_checkpoint(resume);
  TrainOptions opts;
  opts.out_dir = out;
  const auto total = static_cast<std::uint64_t>(cfg.train.iters_pretrain);
  opts.on_step = [total](const LossRow& r) { print_row("pretrain", r, total); };
  const TrainResult r = pretrain_denoiser(cfg, opts, res);
  std::cout << "pretraining finished at iteration " << r.checkpoint.iteration << "; checkpoint "
            << (fs::path(out) / "pretrain_final.rvck").string() << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::string& out, const std::string& init, const std::string& resume,
              const std::optional<std::uint64_t>& seed) {
  const RunConfig cfg = resolve_config(config, seed);
  std::optional<Checkpoint> ini;
  std::optional<Checkpoint> res;
  if (!init.empty()) ini = load_checkpoint(init);
  if (!resume.empty()) res = load_checkpoint(resume);
  TrainOptions opts;
  opts.out_dir = out;
  const auto total = static_cast<std::uint64_t>(cfg.train.iters_main);
  opts.on_step = [total](const LossRow& r) { print_row("main", r, total); };
  const TrainResult r = train_main(cfg, ini, opts, res);
  std::cout << "training finished at iteration " << r.checkpoint.iteration << "; checkpoint "
            << (fs::path(out) / "main_final.rvck").string() << '\n';
  return 0;
}

FpeMap load_fpe_source(const std::string& events, const std::string& fpe, int width, int height) {
  if (!fpe.empty()) return read_fpe1(fpe);
  const fs::path p(events);
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const EventStream s = ext == ".csv" ? read_events_csv(p, width, height) : read_evtm(p);
  return extract_fpe(s);
}

int cmd_enhance(const std::string& ckpt, const std::string& low_path, const std::string& events,
                const std::string& fpe, double beta, const std::string& out, const std::string& dump,
                const std::string& config) {
  const RunConfig cfg = resolve_config(config, std::nullopt);
  const Checkpoint c = load_checkpoint(ckpt);
  const RetinexModel<float> model = model_from_checkpoint(c);
  const EncodedRaster low = load_image(low_path, c.model.gamma);
  if (low.channels() != 3) throw ValidationError("enhance: " + low_path + " is not an RGB image");
  const FpeMap m = load_fpe_source(events, fpe, low.width(), low.height());
  if (m.width() != low.width() || m.height() != low.height()) {
    throw ValidationError("enhance: events are " + std::to_string(m.width()) + "x" + std::to_string(m.height()) +
                          " but the image is " + std::to_string(low.width()) + "x" + std::to_string(low.height()));
  }
  const auto result = enhance(model, gamma_decode(low), m, beta, cfg.sensor);
  if (!dump.empty()) {
    fs::create_directories(dump);
    save_image(result.illumination.as_raster(), fs::path(dump) / "illumination.png", 16);
    save_image(result.r_low.raster(), fs::path(dump) / "reflectance_low.png", 16);
    save_image(result.r_hat.raster(), fs::path(dump) / "reflectance_enhanced.png", 16);
    const NormalizedFpeMap t = beta_normalize(m, beta);
    write_fpe1(FpeMap(t.width(), t.height(), t.values()), fs::path(dump) / "t_norm.fpe");
  }
  save_image(gamma_encode(result.enhanced, c.model.gamma), out, 16);
  std::cout << "wrote " << out << " (" << low.width() << "x" << low.height() << ", beta " << beta << ")\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data, const std::string& report, double beta,
                 const std::string& config) {
  const RunConfig cfg = resolve_config(config, std::nullopt);
  const Checkpoint c = load_checkpoint(ckpt);
  const RetinexModel<float> model = model_from_checkpoint(c);
  const MetricReport r = evaluate(model, data, beta, cfg.sensor);
  write_report(r, report);
  std::cout << format_report(r);
  return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& size, int iters, int warmup) {
  int w = 0;
  int h = 0;
  char x = 0;
  std::istringstream ss(size);
  if (!(ss >> w >> x >> h) || (x != 'x' && x != 'X') || w < 4 || h < 4) {
    throw ValidationError("bench: --size must look like 640x480");
  }
  if (iters < 1) throw ValidationError("bench: --iters must be >= 1");
  const Checkpoint c = ckpt.empty() ? initial_checkpoint(RunConfig{}) : load_checkpoint(ckpt);
  const RetinexModel<float> model = model_from_checkpoint(c);
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(w) * h);
  std::vector<double> img(3 * t.size());
  for (auto& v : t) v = 1.0 + 1000.0 * u(rng);
  for (auto& v : img) v = 0.1 * u(rng);
  const FpeMap m(w, h, t);
  const LinearRaster low(w, h, 3, img);
  const SensorConstants sensor;
  std::vector<double> ms;
  for (int i = 0; i < warmup + iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = enhance(model, low, m, 0.0, sensor);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double mean = 0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  std::printf("resolution %dx%d\niterations %d\nwarmup %d\nmean_latency_ms %.3f\nmedian_latency_ms %.3f\nfps %.3f\n", w,
              h, iters, warmup, mean, median, 1000.0 / mean);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retinev: event-guided low-light image enhancement"};
  app.require_subcommand(1);

  std::string gt, out, config, ckpt, low, events, fpe, dump, data, report, init, resume, size = "640x480";
  std::optional<std::uint64_t> seed;
  double beta = 0.0;
  int count = 4, img_size = 64, iters = 20, warmup = 2;

  auto* synth = app.add_subcommand("synth", "Synthesize degraded FPE maps from ground-truth images");
  synth->add_option("--gt", gt, "Directory of ground-truth PNG images")->required();
  synth->add_option("--out", out, "Output directory (must not exist)")->required();
  synth->add_option("--config", config, "Run configuration (INI)");
  synth->add_option("--seed", seed, "Seed for every random stream");

  auto* bench_data = app.add_subcommand("make-benchmark", "Build the procedural paired benchmark");
  bench_data->add_option("--out", out, "Output directory (must not exist)")->required();
  bench_data->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  bench_data->add_option("--size", img_size, "Scene width and height in pixels")->check(CLI::Range(16, 4096));
  bench_data->add_option("--seed", seed, "Benchmark seed");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the illumination denoiser");
  pretrain->add_option("--config", config, "Run configuration (INI)")->required();
  pretrain->add_option("--out", out, "Directory for checkpoints and the loss log")->required();
  pretrain->add_option("--resume", resume, "Continue from a pretraining checkpoint");
  pretrain->add_option("--seed", seed, "Seed for every random stream");

  auto* train = app.add_subcommand("train", "Train the full network");
  train->add_option("--config", config, "Run configuration (INI)")->required();
  train->add_option("--out", out, "Directory for checkpoints and the loss log")->required();
  auto* init_opt = train->add_option("--init", init, "Initial weights, e.g. a pretraining checkpoint");
  train->add_option("--resume", resume, "Continue from a training checkpoint")->excludes(init_opt);
  train->add_option("--seed", seed, "Seed for every random stream");

  auto* enh = app.add_subcommand("enhance", "Enhance one low-light image");
  enh->add_option("--ckpt", ckpt, "Checkpoint")->required();
  enh->add_option("--low", low, "Low-light PNG image")->required();
  auto* ev_opt = enh->add_option("--events", events, "Event file (EVTM or x,y,t,p CSV)");
  auto* fpe_opt = enh->add_option("--fpe", fpe, "First-positive-event map (FPE1)");
  ev_opt->excludes(fpe_opt);
  enh->add_option("--beta", beta, "Brightness coefficient (>= 0; larger is brighter)")->check(CLI::NonNegativeNumber);
  enh->add_option("--out", out, "Output PNG")->required();
  enh->add_option("--dump-intermediates", dump, "Directory for illumination and reflectance dumps");
  enh->add_option("--config", config, "Run configuration (INI) supplying sensor constants");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a paired dataset with FPE maps");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset root with low/, high/ and fpe/")->required();
  ev->add_option("--report", report, "Report file (TSV)")->required();
  ev->add_option("--beta", beta, "Brightness coefficient")->check(CLI::NonNegativeNumber);
  ev->add_option("--config", config, "Run configuration (INI) supplying sensor constants");

  auto* bn = app.add_subcommand("bench", "Measure inference throughput");
  bn->add_option("--ckpt", ckpt, "Checkpoint (default: freshly initialized weights)");
  bn->add_option("--size", size, "Resolution WxH");
  bn->add_option("--iters", iters, "Timed iterations")->check(CLI::PositiveNumber);
  bn->add_option("--warmup", warmup, "Untimed warm-up iterations")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(gt, out, config, seed);
    if (*bench_data) return cmd_make_benchmark(out, count, img_size, seed);
    if (*pretrain) return cmd_pretrain(config, out, resume, seed);
    if (*train) return cmd_train(config, out, init, resume, seed);
    if (*enh) {
      if (events.empty() && fpe.empty()) throw ValidationError("enhance: one of --events or --fpe is required");
      return cmd_enhance(ckpt, low, events, fpe, beta, out, dump, config);
    }
    if (*ev) return cmd_evaluate(ckpt, data, report, beta, config);
    if (*bn) return cmd_bench(ckpt, size, iters, warmup);
  } catch (const std::exception& e) {
    std::cerr << "retinev: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
