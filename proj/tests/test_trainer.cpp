#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "petsgan/errors.hpp"
#include "petsgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace petsgan;

namespace {

RunConfig tiny_config(std::int64_t epochs = 6) {
  auto cfg = RunConfig::desk();
  cfg.max_side = 32;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 2;
  cfg.batch_prior = 4;
  cfg.noise_channels = 4;
  cfg.pe_channels = 4;
  cfg.g_width = 8;
  cfg.dg_width = 8;
  cfg.ir_width = 8;
  cfg.ir_blocks = 1;
  cfg.embed_features = 8;
  cfg.d_width = 8;
  cfg.d_layers = 2;
  cfg.internal_steps = 1;
  cfg.prior_cache = 16;
  cfg.checkpoint_every = 2;
  cfg.seed = 5;
  return cfg;
}

struct Fixture {
  Preprocessed pre;
  std::unique_ptr<PriorProvider> provider;

  explicit Fixture(const RunConfig& cfg) {
    Rng rng(77, "img");
    auto raw = ImageTensor(rng.uniform({3, 32, 32}), ValueRange::Unit);
    auto p = preprocess(raw, cfg.max_side, cfg.down_factor);
    pre = {p.image.to_signed(), p.low.to_signed()};
    provider = make_provider(cfg, pre.image, pre.low);
  }
};

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("petsgan_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<EpochMetrics> train_fresh(const RunConfig& cfg) {
  Fixture fx(cfg);
  Trainer t(cfg, fx.pre.image, fx.pre.low, *fx.provider);
  return t.run();
}

}  // namespace

TEST(Ablation, EveryRowMapsToOneValue) {
  std::set<Ablation> seen;
  for (auto name : {"full", "cascaded", "no_patch_adv", "no_external", "no_internal"}) {
    auto a = parse_ablation(name);
    EXPECT_EQ(to_string(a), name);
    seen.insert(a);
  }
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_THROW(parse_ablation("w/o"), ArgumentError);
}

TEST(RunConfig, PresetsAndValidation) {
  auto paper = RunConfig::paper();
  EXPECT_EQ(paper.epochs, 5000);
  EXPECT_EQ(paper.batch_adv, 1);
  EXPECT_EQ(paper.batch_prior, 32);
  EXPECT_EQ(paper.s, 7);
  EXPECT_EQ(paper.down_factor, 8);
  EXPECT_EQ(paper.max_side, 256);
  EXPECT_DOUBLE_EQ(paper.sigma_z, 0.5);
  EXPECT_EQ(paper.effective_warmup(), 500);
  auto desk = RunConfig::from_preset("desk");
  EXPECT_EQ(desk.max_side, 64);
  EXPECT_EQ(desk.epochs, 500);
  EXPECT_THROW(RunConfig::from_preset("huge"), ArgumentError);
  auto bad = desk;
  bad.lr_g = 0.0;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = desk;
  bad.down_factor = 6;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = desk;
  bad.s_star = 9;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(RunConfig, JsonRoundTripCoversEveryKey) {
  auto cfg = tiny_config();
  cfg.ablation = Ablation::NoInternal;
  cfg.d_dilations = {1, 3};
  auto j = to_json(cfg);
  EXPECT_EQ(j.size(), config_keys().size());
  auto back = apply_json(j, RunConfig::paper());
  EXPECT_EQ(to_json(back), j);
  EXPECT_THROW(apply_json(nlohmann::json{{"learning_rate", 1.0}}, cfg), ArgumentError);
  auto partial = apply_json(nlohmann::json{{"epochs", 3}}, cfg);
  EXPECT_EQ(partial.epochs, 3);
  EXPECT_EQ(partial.seed, cfg.seed);
}

TEST(Trainer, ZeroEpochsReturnsInitializedModel) {
  auto cfg = tiny_config(0);
  Fixture fx(cfg);
  auto result = train(fx.pre.image, fx.pre.low, cfg, *fx.provider);
  EXPECT_TRUE(result.metrics.empty());
  EXPECT_EQ(result.checkpoint.epoch(), 0);
  auto fresh = ModelBundle::create(cfg, fx.pre.image, fx.pre.low);
  auto loaded = bundle_from_checkpoint(result.checkpoint);
  for (auto net : {"g", "dg", "f", "d"}) EXPECT_EQ(fresh.parameter_hash(net), loaded.parameter_hash(net));
}

TEST(Trainer, WarmupRunsNoDiscriminatorSteps) {
  auto cfg = tiny_config(5);
  auto metrics = train_fresh(cfg);
  ASSERT_EQ(metrics.size(), 5u);
  for (const auto& m : metrics) {
    if (m.epoch < cfg.warmup_epochs) {
      EXPECT_TRUE(m.warmup);
      EXPECT_EQ(m.steps_d, 0) << "epoch " << m.epoch;
    }
  }
  EXPECT_GT(metrics.back().steps_d, 0);
  EXPECT_GT(metrics.back().steps_f, metrics.back().steps_d);
}

TEST(Trainer, LossBookkeeping) {
  auto cfg = tiny_config(4);
  cfg.lambda_ext = 0.7;
  cfg.lambda_int = 1.3;
  for (const auto& m : train_fresh(cfg)) {
    EXPECT_NEAR(m.loss_total, m.loss_adv + 0.7 * m.loss_ext + 1.3 * m.loss_int, 1e-9);
    EXPECT_TRUE(std::isfinite(m.loss_total));
  }
}

TEST(Trainer, AblationsSkipTheirSteps) {
  auto cfg = tiny_config(4);
  cfg.ablation = Ablation::NoPatchAdv;
  auto m = train_fresh(cfg).back();
  EXPECT_EQ(m.steps_d, 0);
  EXPECT_EQ(m.loss_adv, 0.0);

  cfg.ablation = Ablation::NoExternal;
  m = train_fresh(cfg).back();
  EXPECT_EQ(m.steps_dg, 0);

  cfg.ablation = Ablation::NoInternal;
  m = train_fresh(cfg).back();
  EXPECT_GT(m.steps_dg, 0);
  EXPECT_EQ(m.loss_int, 0.0);
}

TEST(Trainer, CascadedFreezesGeneratorInSecondPhase) {
  auto cfg = tiny_config(6);
  cfg.ablation = Ablation::Cascaded;
  cfg.warmup_epochs = 0;
  Fixture fx(cfg);
  Trainer t(cfg, fx.pre.image, fx.pre.low, *fx.provider);
  auto first = t.run_epochs(3);
  EXPECT_EQ(first.back().steps_f, 0);
  EXPECT_EQ(first.back().steps_d, 0);
  const auto g_hash = t.bundle().parameter_hash("g");
  const auto dg_hash = t.bundle().parameter_hash("dg");
  auto second = t.run_epochs(3);
  EXPECT_EQ(t.bundle().parameter_hash("g"), g_hash);
  EXPECT_EQ(t.bundle().parameter_hash("dg"), dg_hash);
  EXPECT_GT(second.back().steps_f, 0);
  EXPECT_GT(second.back().steps_d, 0);
}

TEST(Trainer, DeterministicMetricStreams) {
  auto cfg = tiny_config(4);
  auto a = train_fresh(cfg);
  auto b = train_fresh(cfg);
  EXPECT_TRUE(same_metrics(a, b));
  cfg.seed = 6;
  EXPECT_FALSE(same_metrics(a, train_fresh(cfg)));
}

TEST(Trainer, ResumeFromCheckpointContinuesIdentically) {
  auto cfg = tiny_config(6);
  auto straight = train_fresh(cfg);

  Fixture fx(cfg);
  Trainer first(cfg, fx.pre.image, fx.pre.low, *fx.provider);
  auto head = first.run_epochs(3);
  auto bytes = serialize_archive(first.checkpoint().archive);
  Checkpoint ckpt{deserialize_archive(bytes)};
  Fixture fx2(cfg);
  Trainer second(ckpt, *fx2.provider);
  auto tail = second.run();
  head.insert(head.end(), tail.begin(), tail.end());
  EXPECT_TRUE(same_metrics(straight, head));
}

TEST(Checkpoint, SaveLoadGenerateIsBitIdentical) {
  auto cfg = tiny_config(3);
  Fixture fx(cfg);
  auto result = train(fx.pre.image, fx.pre.low, cfg, *fx.provider);
  auto dir = temp_dir("ckpt");
  save_checkpoint(result.checkpoint, dir / "c.pkc");
  auto loaded = load_checkpoint(dir / "c.pkc");
  EXPECT_EQ(loaded.epoch(), 3);
  EXPECT_EQ(to_json(loaded.config()), to_json(cfg));
  Rng a(1, "gen");
  Rng b(1, "gen");
  auto before = generate_samples(result.checkpoint, 2, 32, 32, a);
  auto after = generate_samples(loaded, 2, 32, 32, b);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i].data(), after[i].data()));
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  auto cfg = tiny_config(0);
  Fixture fx(cfg);
  auto result = train(fx.pre.image, fx.pre.low, cfg, *fx.provider);
  auto bytes = serialize_archive(result.checkpoint.archive);
  auto dir = temp_dir("trunc_ckpt");
  for (auto cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{20}, std::size_t{3}}) {
    {
      std::ofstream out(dir / "t.pkc", std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(cut));
    }
    EXPECT_THROW(load_checkpoint(dir / "t.pkc"), CorruptArchive) << "cut at " << cut;
  }
  auto flipped = bytes;
  flipped.back() ^= 0x5a;
  EXPECT_THROW(deserialize_archive(flipped), CorruptArchive);
}

TEST(Checkpoint, OtherVersionTagIsRejected) {
  auto cfg = tiny_config(0);
  Fixture fx(cfg);
  auto ckpt = train(fx.pre.image, fx.pre.low, cfg, *fx.provider).checkpoint;
  ckpt.archive.version = "petsgan-ckpt-0";
  auto dir = temp_dir("version");
  save_checkpoint(ckpt, dir / "v.pkc");
  EXPECT_THROW(load_checkpoint(dir / "v.pkc"), VersionMismatch);
}

TEST(Trainer, WritesMetricsLinesAndCheckpoints) {
  auto cfg = tiny_config(4);
  Fixture fx(cfg);
  auto dir = temp_dir("metrics");
  TrainOptions opts;
  opts.metrics_path = dir / "metrics.jsonl";
  opts.checkpoint_dir = dir / "checkpoints";
  int seen = 0;
  opts.on_epoch = [&](const EpochMetrics&) { ++seen; };
  train(fx.pre.image, fx.pre.low, cfg, *fx.provider, opts);
  EXPECT_EQ(seen, 4);
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    for (auto key : {"epoch", "loss_adv", "loss_ext", "loss_int", "wallclock_s"}) EXPECT_TRUE(j.contains(key));
    EXPECT_EQ(j.at("epoch").get<int>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, 4);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "latest.pkc"));
}

TEST(GenerateSamples, ArbitrarySizesAndRounding) {
  auto cfg = tiny_config(0);
  Fixture fx(cfg);
  auto bundle = ModelBundle::create(cfg, fx.pre.image, fx.pre.low);
  Rng rng(2, "gen");
  auto out = generate_samples(bundle, 3, 32, 48, rng);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& img : out) {
    EXPECT_EQ(img.height(), 32);
    EXPECT_EQ(img.width(), 48);
    EXPECT_EQ(img.range(), ValueRange::Unit);
  }
  auto rounded = generate_samples(bundle, 1, 30, 41, rng);
  EXPECT_EQ(rounded[0].height(), 32);
  EXPECT_EQ(rounded[0].width(), 48);
  Rng a(9, "gen");
  Rng b(9, "gen");
  EXPECT_TRUE(torch::equal(generate_samples(bundle, 1, 32, 32, a)[0].data(),
                           generate_samples(bundle, 1, 32, 32, b)[0].data()));
  EXPECT_THROW(generate_samples(bundle, 1, 8, 8, rng), ArgumentError);
}
