// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retinev/checkpoint.hpp"
#include "retinev/dataset.hpp"
#include "retinev/train.hpp"
#include "test_util.hpp"

namespace retinev {
namespace {

using testing::TempDir;

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 2e-4, 1e-7), 2e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 2e-4, 1e-7), 1e-7);
  EXPECT_DOUBLE_EQ(cosine_lr(250, 100, 2e-4, 1e-7), 1e-7);
  EXPECT_NEAR(cosine_lr(50, 100, 2e-4, 1e-7), 0.5 * (2e-4 + 1e-7), 1e-18);
  double prev = 1;
  for (long s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 2e-4, 1e-7);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  nn::ParamList<double> params;
  ag::Var<double> a(Tensor<double>({1, 1, 1, 2}), true);
  ag::Var<double> b(Tensor<double>({1, 1, 1, 1}), true);
  params.push_back({"a", a});
  params.push_back({"b", b});
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(params, 2.0), 1.0, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateTimesScale) {
  nn::ParamList<double> params;
  ag::Var<double> a(Tensor<double>({1, 1, 1, 2}, 1.0), true);
  ag::Var<double> frozen(Tensor<double>({1, 1, 1, 1}, 1.0), true);
  params.push_back({"a", a});
  params.push_back({"frozen", frozen});
  Adam<double> opt(params, {1.0, 0.0});
  a.mutable_grad()[0] = 0.5;
  a.mutable_grad()[1] = -2.0;
  frozen.mutable_grad()[0] = 1.0;
  opt.step(0.1);
  // Bias-corrected first step: m_hat / sqrt(v_hat) = sign(g).
  EXPECT_NEAR(a.value()[0], 0.9, 1e-7);
  EXPECT_NEAR(a.value()[1], 1.1, 1e-7);
  EXPECT_EQ(frozen.value()[0], 1.0);
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_THROW(Adam<double>(params, {1.0}), ValidationError);
}

RunConfig tiny_config(const fs::path& root, std::uint64_t seed = 5) {
  RunConfig c;
  c.data.root = root;
  c.model.denoiser_width = 2;
  c.model.mlp_hidden = 4;
  c.model.decom_width = 4;
  c.model.decom_layers = 3;
  c.model.ire_channels = 4;
  c.model.ire_heads = 2;
  c.model.ire_blocks = 1;
  c.model.ire_expansion = 1;
  c.train.patch_size = 16;
  c.train.batch_size = 2;
  c.train.iters_pretrain = 4;
  c.train.iters_main = 6;
  c.train.checkpoint_every = 3;
  apply_seed(c, seed);
  return c;
}

class TrainingFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::create_directories(dir_ / "gt");
    for (int i = 0; i < 3; ++i) {
      Rng rng = derive_stream(17, i, kScenePurpose);
      save_image(render_scene(24, rng), dir_ / "gt" / ("img" + std::to_string(i) + ".png"), 16);
    }
  }
  TempDir dir_{"train"};
};

TEST(CheckpointFormat, RoundTripAndCorruption) {
  Checkpoint c;
  c.config_hash = 0x1234;
  c.phase = "main";
  c.iteration = 42;
  c.rng_state = "1 2 3";
  c.params.push_back({"w", {1, 2, 1, 1}, {0.5f, -1.25f}});
  c.optimizer = OptimizerRecord{7, {{0.1f, 0.2f}}, {{0.3f, 0.4f}}};
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(decode_checkpoint(bytes), c);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  try {
    decode_checkpoint(truncated);
    FAIL() << "expected CorruptFileError";
  } catch (const CorruptFileError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum mismatch"), std::string::npos);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), CorruptFileError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CorruptFileError);
  EXPECT_THROW(decode_checkpoint({}), CorruptFileError);
}

TEST(CheckpointFormat, HashMismatchIsTrainingError) {
  Checkpoint c;
  c.config_hash = 1;
  EXPECT_THROW(require_config_hash(c, 2, "resume"), TrainingError);
  EXPECT_NO_THROW(require_config_hash(c, 1, "resume"));
}

TEST(CheckpointFormat, ModelRestoreRejectsShapeMismatch) {
  const RetinexModel<float> m(ModelConfig{});
  Checkpoint c;
  c.model = m.config();
  c.params = snapshot_params(m.parameters());
  c.params[0].shape.n += 1;
  c.params[0].values.resize(c.params[0].shape.numel());
  EXPECT_THROW(model_from_checkpoint(c), CorruptFileError);
  c.params.erase(c.params.begin());
  EXPECT_THROW(model_from_checkpoint(c), CorruptFileError);
}

TEST_F(TrainingFixture, PretrainTouchesOnlyDenoiser) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  const TrainResult r = pretrain_denoiser(cfg);
  const Checkpoint init = initial_checkpoint(cfg);
  ASSERT_EQ(r.checkpoint.params.size(), init.params.size());
  bool denoiser_moved = false;
  for (std::size_t i = 0; i < init.params.size(); ++i) {
    const bool same = r.checkpoint.params[i].values == init.params[i].values;
    if (RetinexModel<float>::is_denoiser_param(init.params[i].name)) {
      denoiser_moved = denoiser_moved || !same;
    } else {
      EXPECT_TRUE(same) << init.params[i].name;
    }
  }
  EXPECT_TRUE(denoiser_moved);
  EXPECT_EQ(r.curve.size(), 4u);
  EXPECT_EQ(r.checkpoint.phase, "pretrain");
}

TEST_F(TrainingFixture, SameSeedRunsAreBitIdentical) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  const auto a = train_main(cfg);
  const auto b = train_main(cfg);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  const auto c = train_main(tiny_config(dir_ / "gt", 6));
  EXPECT_NE(encode_checkpoint(a.checkpoint), encode_checkpoint(c.checkpoint));
}

TEST_F(TrainingFixture, ResumeContinuesExactly) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  TrainOptions straight_opts;
  straight_opts.out_dir = dir_ / "straight";
  const auto straight = train_main(cfg, std::nullopt, straight_opts);

  TrainOptions first_opts;
  first_opts.out_dir = dir_ / "split";
  first_opts.stop_after = 3;
  const auto first = train_main(cfg, std::nullopt, first_opts);
  EXPECT_EQ(first.checkpoint.iteration, 3u);
  const Checkpoint saved = load_checkpoint(detail::checkpoint_path(dir_ / "split", "main", 3));
  EXPECT_EQ(saved, first.checkpoint);
  TrainOptions second_opts;
  second_opts.out_dir = dir_ / "split";
  const auto resumed = train_main(cfg, std::nullopt, second_opts, saved);
  EXPECT_EQ(resumed.checkpoint.iteration, 6u);
  EXPECT_EQ(encode_checkpoint(resumed.checkpoint), encode_checkpoint(straight.checkpoint));
  // The next step after resuming reports the same loss as the uninterrupted run.
  EXPECT_EQ(resumed.curve.front().loss.total, straight.curve[3].loss.total);
}

TEST_F(TrainingFixture, ResumeRejectsOtherConfigOrPhase) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  TrainOptions opts;
  opts.stop_after = 2;
  const auto part = train_main(cfg, std::nullopt, opts);
  RunConfig other = cfg;
  other.loss.perceptual = 0.2;
  EXPECT_THROW(train_main(other, std::nullopt, {}, part.checkpoint), TrainingError);
  EXPECT_THROW(pretrain_denoiser(cfg, {}, part.checkpoint), TrainingError);
}

TEST_F(TrainingFixture, InitRequiresMatchingArchitecture) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  Checkpoint init = initial_checkpoint(cfg);
  RunConfig wide = cfg;
  wide.model.decom_width = 8;
  EXPECT_THROW(train_main(wide, init), TrainingError);
  RunConfig no_fusion = cfg;
  no_fusion.model.fusion = Fusion::kNone;
  no_fusion.train.iters_main = 1;
  EXPECT_NO_THROW(train_main(no_fusion, init));
}

TEST_F(TrainingFixture, WritesLossLogAndCheckpoints) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  TrainOptions opts;
  opts.out_dir = dir_ / "run";
  train_main(cfg, std::nullopt, opts);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "main_0000003.rvck"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "main_0000006.rvck"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "main_final.rvck"));
  std::ifstream log(dir_ / "run" / "main_loss.tsv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "iteration\trecon\treflectance\tperceptual\ttotal\tlr\tgrad_norm");
  int rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST_F(TrainingFixture, BatchesFollowSeedAndAugmentationKeepsPixels) {
  const RunConfig cfg = tiny_config(dir_ / "gt");
  const TrainingImages data = load_training_images(cfg);
  Rng m1 = master_rng(cfg, kMainPurpose);
  Rng m2 = master_rng(cfg, kMainPurpose);
  const auto b1 = make_main_batch<float>(data, cfg, 0, m1);
  const auto b2 = make_main_batch<float>(data, cfg, 0, m2);
  EXPECT_EQ(b1.e.vec(), b2.e.vec());
  EXPECT_EQ(b1.s_low.vec(), b2.s_low.vec());
  float emax = 0;
  for (float v : b1.e.vec()) emax = std::max(emax, v);
  EXPECT_EQ(emax, 1.0f);
  const EncodedRaster img = data.high[0];
  const EncodedRaster rot = augment(img, true, 3);
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(sorted(rot.data()), sorted(img.data()));
}

TEST_F(TrainingFixture, RejectsPatchLargerThanImages) {
  RunConfig cfg = tiny_config(dir_ / "gt");
  cfg.train.patch_size = 32;
  EXPECT_THROW(load_training_images(cfg), TrainingError);
  cfg.data.root = dir_ / "missing";
  EXPECT_THROW(load_training_images(cfg), IoError);
}

}  // namespace
}  // namespace retinev
