#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "petsgan/imaging.hpp"

namespace petsgan {

// Sinusoidal positional encoding, [channels, h, w]. The first half of the
// channels encodes the row index and the second half the column index; within
// a half, channel 2k holds sin(pos / 10000^(2k / channels)) and 2k + 1 the
// matching cos.
torch::Tensor positional_encoding(std::int64_t h, std::int64_t w, std::int64_t channels);

// Channel-wise feature normalization that does not depend on the batch.
struct PixelNormImpl : torch::nn::Module {
  torch::Tensor forward(const torch::Tensor& x);
};
TORCH_MODULE(PixelNorm);

struct DepNetOptions {
  std::int64_t noise_channels = 16;
  std::int64_t pe_channels = 16;
  std::int64_t width = 64;
  std::int64_t out_channels = 3;
};

// Lightweight fully convolutional generator: noise (+ positional encoding) ->
// image of the same spatial size in the signed range.
class DepNetGImpl : public torch::nn::Module {
 public:
  static constexpr std::int64_t kMinSpatial = 3;

  explicit DepNetGImpl(DepNetOptions options = {});

  // noise: [N, noise_channels, h, w]
  torch::Tensor forward(const torch::Tensor& noise);

  const DepNetOptions& options() const { return options_; }

 private:
  DepNetOptions options_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(DepNetG);

// Discriminator for low-resolution layouts; one raw logit per image. The last
// conv also sees the minibatch standard deviation of the features (zero for a
// batch of one).
class DepNetDImpl : public torch::nn::Module {
 public:
  explicit DepNetDImpl(std::int64_t in_channels = 3, std::int64_t width = 64);
  torch::Tensor forward(const torch::Tensor& x);  // [N]

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Sequential tail_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DepNetD);

torch::Tensor sample_noise(Rng& rng, std::int64_t n, std::int64_t channels, std::int64_t h, std::int64_t w);

// Single-image convenience: generate(g, [noise_channels, h, w]) -> [3, h, w].
ImageTensor generate(DepNetG& g, const torch::Tensor& noise);

// -E|a - b| over paired raw logits; zero iff every pair scores identically.
torch::Tensor collapse_penalty(const torch::Tensor& logits_a, const torch::Tensor& logits_b);

struct ExternalLossTerms {
  torch::Tensor loss_d;    // -E[log D(x)] - E[log(1 - D(G(z)))], generator output detached
  torch::Tensor loss_g;    // -E[log D(G(z))] + lambda_div * collapse_penalty
  torch::Tensor phi;       // E[log D(x) - log D(G(z))] - E|D(G(z1)) - D(G(z2))|, for reporting
  torch::Tensor collapse;  // the collapse penalty alone
};

// Non-saturating split of the external-prior regularizer. Log terms use
// sigmoid(D); the collapse penalty uses raw logits.
ExternalLossTerms external_prior_loss(DepNetG& g, DepNetD& d, const torch::Tensor& real_batch,
                                      const torch::Tensor& z_batch, const torch::Tensor& z1, const torch::Tensor& z2,
                                      double lambda_div = 1.0, std::int64_t step = -1);

}  // namespace petsgan
