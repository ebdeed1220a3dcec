#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "petsgan/checkpoint.hpp"
#include "petsgan/depnet.hpp"
#include "petsgan/dipnet.hpp"
#include "petsgan/external_prior.hpp"
#include "petsgan/imaging.hpp"
#include "petsgan/patch_disc.hpp"

namespace petsgan {

// One value per row of the ablation table.
enum class Ablation {
  Full,
  Cascaded,    // DEPNet trained alone first, then frozen while DIPNet and D train
  NoPatchAdv,  // without the patch adversarial term
  NoExternal,  // without the external-prior regularizer
  NoInternal,  // without the internal-prior regularizer
};

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

// Every hyperparameter of a run. Serialized flat (one JSON key per field).
// Learning rates, loss weights and warm-up length are repository defaults,
// not published values.
struct RunConfig {
  std::string preset = "paper";
  std::int64_t epochs = 5000;
  std::int64_t batch_adv = 1;
  std::int64_t batch_prior = 32;
  std::int64_t internal_steps = 1;  // internal-prior updates per epoch
  double lr_g = 5e-4;
  double lr_f = 5e-4;
  double lr_d = 1e-4;
  double lr_dg = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::int64_t warmup_epochs = -1;  // -1: 10% of epochs
  double lambda_ext = 1.0;
  double lambda_int = 1.0;
  double lambda_div = 1.0;
  double lambda_sparse = 0.01;
  double sigma_z = 0.5;
  double delta_sigma = 0.1;  // fraction of the value-range width
  double temperature = 0.07;
  std::int64_t s = 7;
  std::int64_t s_star = 7;
  std::int64_t pt_window = 7;
  std::int64_t down_factor = 8;
  std::int64_t max_side = 256;
  Ablation ablation = Ablation::Full;
  std::uint64_t seed = 0;
  std::int64_t noise_channels = 16;
  std::int64_t pe_channels = 16;
  std::int64_t g_width = 64;
  std::int64_t dg_width = 64;
  std::int64_t ir_width = 64;
  std::int64_t ir_blocks = 8;
  std::int64_t embed_features = 64;
  std::int64_t d_width = 32;
  std::int64_t d_layers = 4;
  std::vector<std::int64_t> d_dilations = {1, 2, 4};
  std::string prior = "synthetic";  // synthetic | dir:<path> | service:<socket>
  std::string augmentations = "crop,flip,color,affine";
  std::int64_t prior_cache = -1;  // -1: batch_prior * 64
  std::int64_t inversion_steps = 500;
  std::int64_t checkpoint_every = 100;

  static RunConfig paper();
  static RunConfig desk();
  static RunConfig from_preset(std::string_view name);

  void validate() const;
  std::int64_t effective_warmup() const;
  std::int64_t effective_prior_cache() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Overlays the keys of `j` onto `base`; unknown keys throw ArgumentError.
RunConfig apply_json(const nlohmann::json& j, RunConfig base);
std::vector<std::string> config_keys();

// G, D_G, F and D for one exemplar. I and c_I are stored in the signed range.
struct ModelBundle {
  RunConfig config;
  ImageTensor image;
  ImageTensor low;
  DepNetG g{nullptr};
  DepNetD dg{nullptr};
  DipNet f{nullptr};
  MultiScaleD d{nullptr};

  // Parameter initialization is seeded from config.seed.
  static ModelBundle create(const RunConfig& config, const ImageTensor& image, const ImageTensor& low);

  // name -> tensor for every parameter and buffer, prefixed by network.
  std::vector<std::pair<std::string, torch::Tensor>> named_tensors() const;
  // Hash over the parameters of one network ("g", "dg", "f", "d").
  std::uint64_t parameter_hash(std::string_view network) const;
};

struct EpochMetrics {
  std::int64_t epoch = 0;
  double loss_adv = 0.0;   // patch adversarial generator loss
  double loss_ext = 0.0;   // external-prior generator objective
  double loss_int = 0.0;   // internal-prior loss
  double loss_total = 0.0; // loss_adv + lambda_ext * loss_ext + lambda_int * loss_int
  double loss_d = 0.0;     // patch discriminator loss
  double loss_dg = 0.0;    // external-prior discriminator loss
  double phi_ext = 0.0;
  double reconstruction = 0.0;
  double attention_max = 0.0;
  bool warmup = false;
  std::int64_t steps_g = 0;
  std::int64_t steps_f = 0;
  std::int64_t steps_d = 0;
  std::int64_t steps_dg = 0;
  double wallclock_s = 0.0;

  nlohmann::json to_json() const;
};

// Compares two metric streams ignoring wall-clock time.
bool same_metrics(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b);

struct Checkpoint {
  Archive archive;

  RunConfig config() const;
  std::int64_t epoch() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt);

// Builds the prior provider a config asks for (synthetic, directory or service).
std::unique_ptr<PriorProvider> make_provider(const RunConfig& cfg, const ImageTensor& image, const ImageTensor& low);

struct TrainOptions {
  std::optional<std::filesystem::path> metrics_path;   // JSON lines, appended per epoch
  std::optional<std::filesystem::path> checkpoint_dir; // last_good.pkc is written here on divergence
  std::function<void(const EpochMetrics&)> on_epoch;
  int provider_retries = 3;
};

// Joint training of G, F, D_G and D. Each epoch runs (a) the external-prior
// update, (b) the internal-prior update, (c) the patch adversarial update,
// subject to warm-up and the ablation mode.
class Trainer {
 public:
  // `image` and `low` are the preprocessed I and c_I.
  Trainer(const RunConfig& config, const ImageTensor& image, const ImageTensor& low, PriorProvider& provider);
  Trainer(const Checkpoint& ckpt, PriorProvider& provider);

  EpochMetrics run_epoch();
  // Runs until config().epochs; returns the metrics of the epochs it ran.
  std::vector<EpochMetrics> run(const TrainOptions& options = {});
  std::vector<EpochMetrics> run_epochs(std::int64_t count, const TrainOptions& options = {});

  std::int64_t epoch() const { return epoch_; }
  const RunConfig& config() const { return bundle_.config; }
  ModelBundle& bundle() { return bundle_; }
  Checkpoint checkpoint() const;

 private:
  struct Optimizers;

  void step_external(EpochMetrics& m);
  void step_internal(EpochMetrics& m);
  void step_adversarial(EpochMetrics& m, bool update_g);
  torch::Tensor prior_batch(int retries);

  ModelBundle bundle_;
  PriorProvider* provider_;
  std::shared_ptr<Optimizers> optim_;
  Rng noise_rng_;
  Rng prior_rng_;
  Rng internal_rng_;
  std::int64_t epoch_ = 0;
  std::int64_t steps_g_ = 0;
  std::int64_t steps_f_ = 0;
  std::int64_t steps_d_ = 0;
  std::int64_t steps_dg_ = 0;
  double elapsed_s_ = 0.0;
  int provider_retries_ = 3;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// Preprocesses `raw`, builds the configured provider and trains to completion.
TrainResult train(const ImageTensor& raw, const RunConfig& cfg, const TrainOptions& options = {});
TrainResult train(const ImageTensor& image, const ImageTensor& low, const RunConfig& cfg, PriorProvider& provider,
                  const TrainOptions& options = {});

// n syntheses F(G(z)) of size (out_h, out_w) in the unit range. Sizes that are
// not multiples of down_factor are rounded up with a warning.
std::vector<ImageTensor> generate_samples(ModelBundle& bundle, std::int64_t n, std::int64_t out_h,
                                          std::int64_t out_w, Rng& rng);
std::vector<ImageTensor> generate_samples(const Checkpoint& ckpt, std::int64_t n, std::int64_t out_h,
                                          std::int64_t out_w, Rng& rng);

}  // namespace petsgan
