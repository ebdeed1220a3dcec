#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "petsgan/dipnet.hpp"
#include "petsgan/imaging.hpp"
#include "petsgan/trainer.hpp"

namespace petsgan {

enum class ExtractorKind { Pretrained, FixedRandom, Pixels };
std::string_view to_string(ExtractorKind kind);

// Maps an image to per-location features [n_locations, feat_dim].
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual ExtractorKind kind() const = 0;
  virtual torch::Tensor features(const ImageTensor& img) = 0;
};

// Frozen random conv stack: conv3x3 -> lrelu -> conv3x3/2 -> lrelu -> conv3x3.
class RandomConvFeatures final : public FeatureExtractor {
 public:
  explicit RandomConvFeatures(std::uint64_t seed = 0, std::int64_t channels = 3, std::int64_t width = 32);
  ExtractorKind kind() const override { return ExtractorKind::FixedRandom; }
  torch::Tensor features(const ImageTensor& img) override;

 private:
  torch::nn::Sequential net_{nullptr};
};

// Raw pixels, one location per pixel.
class PixelFeatures final : public FeatureExtractor {
 public:
  ExtractorKind kind() const override { return ExtractorKind::Pixels; }
  torch::Tensor features(const ImageTensor& img) override;
};

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2);
// Fits a Gaussian to each feature set (rows are observations, unbiased
// covariance) and returns their Frechet distance. With fewer rows than
// columns the covariances are reduced to their diagonals, with a warning.
double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b);

double sifid(const ImageTensor& real, const ImageTensor& fake, FeatureExtractor& fx);

// Mean over unordered pairs of the per-location mean squared distance
// between unit-normalized feature vectors.
double diversity_from_features(const std::vector<torch::Tensor>& features);
double diversity(const std::vector<ImageTensor>& samples, FeatureExtractor& fx);

struct EvalReport {
  double sifid = 0.0;       // mean over samples of sifid(I, sample)
  double diversity = 0.0;
  double patch_dist = 0.0;  // mean over samples of the patch distance to I, unit range
  double train_seconds = 0.0;
  std::int64_t n_samples = 0;
  std::string extractor;

  nlohmann::json to_json() const;
};

// Scores samples against the exemplar (both in any range). Patch distance uses window s.
EvalReport evaluate(const ImageTensor& image, const std::vector<ImageTensor>& samples, FeatureExtractor& fx,
                    std::int64_t s);

struct HiresOptions {
  std::int64_t steps = 1500;
  double lr = 1e-3;
  std::int64_t crop = 32;  // side of the low-resolution training crop; 0 trains on the whole image
  std::int64_t width = 32;
  std::int64_t blocks = 4;
  std::uint64_t seed = 0;
};

struct HiresResult {
  IrNet ir{nullptr};
  double psnr = 0.0;  // new IR on the base image vs I_hi
  double seconds = 0.0;
  std::int64_t steps = 0;
};

// Trains a fresh IrNet (x factor) with reconstruction loss only, mapping the
// bundle's exemplar to `image_hi`. G, F and both discriminators are left
// untouched. factor must be a power of two; image_hi is resized to factor x the
// base dims if needed.
HiresResult hires_upscale(ModelBundle& bundle, const ImageTensor& image_hi, std::int64_t factor,
                          const HiresOptions& options = {});

// new_IR applied to base syntheses (unit range in and out).
std::vector<ImageTensor> upscale_samples(IrNet& ir, const std::vector<ImageTensor>& samples);

enum class ManipulationTask { Harmonize, StyleTransfer, Edit, Paint2Image };
ManipulationTask parse_manipulation_task(std::string_view name);
std::string_view to_string(ManipulationTask task);

struct ManipulationOptions {
  std::int64_t down_factor = 8;
  std::int64_t pt_window = 3;
  double temperature = 0.07;
  ReconstructionOptions training;  // target is forced to Full
};

struct Manipulator {
  DipNet f{nullptr};
  ImageTensor image;  // signed
  ImageTensor low;    // signed
  std::int64_t down_factor = 8;
  ReconstructionReport training;
};

// A reconstruction-only DIPNet on I (already sized to a multiple of down_factor).
Manipulator train_manipulator(const ImageTensor& image, const ManipulationOptions& options = {});

struct ManipulationResult {
  ImageTensor output;  // in content's range
  AttentionMap attention;
};

// IR(PT(downsample(content))). Content with dims that are not multiples of
// down_factor is resized to the nearest multiple, with a warning.
ManipulationResult manipulate(Manipulator& m, ManipulationTask task, const ImageTensor& content);

}  // namespace petsgan
