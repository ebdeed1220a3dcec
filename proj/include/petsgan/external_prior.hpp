#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "petsgan/imaging.hpp"

namespace petsgan {

struct ImageDims {
  std::int64_t channels = 3;
  std::int64_t height = 0;
  std::int64_t width = 0;

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

std::string to_string(const ImageDims& dims);

struct LatentCode {
  torch::Tensor z;  // [latent_dim]
  std::optional<torch::Tensor> class_embedding;
  double final_loss = 0.0;
  std::int64_t steps = 0;
  bool converged = true;  // false when no step improved on the initial loss
};

// A generator z -> image. Images are [C, H, W] in the signed range.
class GeneratorHandle {
 public:
  virtual ~GeneratorHandle() = default;
  virtual std::int64_t latent_dim() const = 0;
  virtual ImageDims output_dims() const = 0;
  virtual torch::Tensor generate(const torch::Tensor& z) = 0;
  // True when generate() is differentiable through libtorch autograd.
  virtual bool differentiable() const { return false; }
};

// g(z) = W z + b reshaped to `dims`. The toy generator used for oracle checks.
class LinearGenerator final : public GeneratorHandle {
 public:
  LinearGenerator(torch::Tensor weight, torch::Tensor bias, ImageDims dims);
  LinearGenerator(torch::Tensor weight, ImageDims dims);

  std::int64_t latent_dim() const override { return weight_.size(1); }
  ImageDims output_dims() const override { return dims_; }
  torch::Tensor generate(const torch::Tensor& z) override;
  bool differentiable() const override { return true; }

  const torch::Tensor& weight() const { return weight_; }

 private:
  torch::Tensor weight_;
  torch::Tensor bias_;
  ImageDims dims_;
};

// Client for an out-of-process generator on a Unix domain socket.
//
// On connect the server sends a handshake: u32 length, then that many bytes of
// JSON {"latent_dim": n, "channels": c, "height": h, "width": w}.
// Request:  u32 dim, f32[dim] latent.
// Response: u32 c, u32 h, u32 w, f32[c*h*w] image (signed range, CHW order).
// All integers and floats little-endian. Requests on one connection are serialized.
class ServiceGenerator final : public GeneratorHandle {
 public:
  explicit ServiceGenerator(const std::filesystem::path& socket_path);
  ~ServiceGenerator() override;
  ServiceGenerator(const ServiceGenerator&) = delete;
  ServiceGenerator& operator=(const ServiceGenerator&) = delete;

  std::int64_t latent_dim() const override { return latent_dim_; }
  ImageDims output_dims() const override { return dims_; }
  torch::Tensor generate(const torch::Tensor& z) override;

 private:
  int fd_ = -1;
  std::int64_t latent_dim_ = 0;
  ImageDims dims_;
  std::mutex mutex_;
};

// Serves a GeneratorHandle over the protocol above. One thread per connection.
class GeneratorServer {
 public:
  GeneratorServer(std::shared_ptr<GeneratorHandle> handle, std::filesystem::path socket_path);
  ~GeneratorServer();
  GeneratorServer(const GeneratorServer&) = delete;
  GeneratorServer& operator=(const GeneratorServer&) = delete;

  const std::filesystem::path& socket_path() const { return path_; }
  void stop();

 private:
  void accept_loop();
  void serve_connection(int fd);

  std::shared_ptr<GeneratorHandle> handle_;
  std::filesystem::path path_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
  std::vector<int> connections_;
  std::mutex handle_mutex_;
};

struct InversionOptions {
  double lambda_pix = 1.0;   // weight of the L1 pixel term
  double lambda_feat = 1.0;  // weight of the feature-space L2 term
  double lr = 0.1;           // cosine-decayed to zero over the run
  double init_std = 1.0;
  double fd_epsilon = 1e-3;  // central differences for non-differentiable generators
  // Feature map for the second term; identity (pixels) when empty.
  std::function<torch::Tensor(const torch::Tensor&)> features;
};

// Loss minimized by invert(): lambda_pix * |g(z) - t|_1 + lambda_feat * |phi(g(z)) - phi(t)|_2.
torch::Tensor inversion_loss(const torch::Tensor& generated, const torch::Tensor& target,
                             const InversionOptions& options);

LatentCode invert(GeneratorHandle& gen, const ImageTensor& low_target, std::int64_t steps, Rng& rng,
                  const InversionOptions& options = {});

// n images gen(z* + dz), dz ~ N(0, sigma^2 I), each resized to `dims` and
// returned in `range`.
std::vector<ImageTensor> perturb_and_sample(GeneratorHandle& gen, const LatentCode& z_star, double sigma,
                                            std::int64_t n, const ImageDims& dims, Rng& rng,
                                            ValueRange range = ValueRange::Signed);

enum class ProviderKind { PretrainedGenerator, SyntheticAugmentation, ImageDirectory, Cached };

std::string_view to_string(ProviderKind kind);

// Source of low-resolution external-prior samples x ~ P_{G_pre}.
class PriorProvider {
 public:
  virtual ~PriorProvider() = default;
  virtual ProviderKind kind() const = 0;
  virtual ImageDims dims() const = 0;
  virtual ValueRange range() const = 0;
  virtual ImageTensor sample(Rng& rng) = 0;

  // [n, C, H, W] batch; every draw is checked against dims() and range().
  torch::Tensor sample_batch(std::int64_t n, Rng& rng);
};

enum class Augmentation { Identity, Crop, Flip, ColorJitter, Affine };

Augmentation parse_augmentation(std::string_view name);
std::set<Augmentation> parse_augmentations(std::string_view comma_separated);

// Applies a random chain of the enabled augmentations to the exemplar, then
// downsamples to `dims`. Crops and warps happen at full resolution; flips and
// colour jitter after downsampling, so a flip-only spec yields exactly
// {c_I, mirror(c_I)}.
class SyntheticProvider final : public PriorProvider {
 public:
  SyntheticProvider(ImageTensor exemplar, std::int64_t height, std::int64_t width, std::set<Augmentation> spec);

  ProviderKind kind() const override { return ProviderKind::SyntheticAugmentation; }
  ImageDims dims() const override { return dims_; }
  ValueRange range() const override { return exemplar_.range(); }
  ImageTensor sample(Rng& rng) override;

 private:
  ImageTensor exemplar_;
  ImageTensor low_;
  ImageDims dims_;
  std::set<Augmentation> spec_;
};

std::unique_ptr<PriorProvider> synthetic_provider(const ImageTensor& exemplar, std::int64_t height,
                                                  std::int64_t width, std::set<Augmentation> spec);

// Samples gen(z* + dz) on every draw.
class InversionProvider final : public PriorProvider {
 public:
  InversionProvider(std::shared_ptr<GeneratorHandle> gen, LatentCode z_star, double sigma, ImageDims dims,
                    ValueRange range);

  ProviderKind kind() const override { return ProviderKind::PretrainedGenerator; }
  ImageDims dims() const override { return dims_; }
  ValueRange range() const override { return range_; }
  ImageTensor sample(Rng& rng) override;

 private:
  std::shared_ptr<GeneratorHandle> gen_;
  LatentCode z_star_;
  double sigma_;
  ImageDims dims_;
  ValueRange range_;
};

// Pre-generated prior images (PNG/JPEG) from a directory, resized to `dims`.
class DirectoryProvider final : public PriorProvider {
 public:
  DirectoryProvider(const std::filesystem::path& dir, ImageDims dims, ValueRange range);

  ProviderKind kind() const override { return ProviderKind::ImageDirectory; }
  ImageDims dims() const override { return dims_; }
  ValueRange range() const override { return range_; }
  ImageTensor sample(Rng& rng) override;
  std::size_t size() const { return images_.size(); }

 private:
  std::vector<ImageTensor> images_;
  ImageDims dims_;
  ValueRange range_;
};

// Draws `capacity` samples from `inner` on first use and then samples the cache uniformly.
class CachedProvider final : public PriorProvider {
 public:
  CachedProvider(std::unique_ptr<PriorProvider> inner, std::int64_t capacity);

  ProviderKind kind() const override { return ProviderKind::Cached; }
  ImageDims dims() const override { return inner_->dims(); }
  ValueRange range() const override { return inner_->range(); }
  ImageTensor sample(Rng& rng) override;

 private:
  std::unique_ptr<PriorProvider> inner_;
  std::int64_t capacity_;
  std::vector<ImageTensor> cache_;
};

}  // namespace petsgan
