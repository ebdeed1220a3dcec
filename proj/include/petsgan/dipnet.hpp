#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "petsgan/imaging.hpp"
#include "petsgan/patchdist.hpp"

namespace petsgan {

// Row-stochastic attention between query patches (of a synthesis c) and key
// patches (of the exemplar c_I).
struct AttentionMap {
  torch::Tensor weights;  // [n_query, n_key]
  torch::Tensor argmax;   // [n_query] int64, ties resolved to the lowest index

  std::int64_t n_query() const { return weights.size(0); }
  std::int64_t n_key() const { return weights.size(1); }
  torch::Tensor frobenius_sq() const { return weights.pow(2).sum(); }
  // mean_i max_j a_ij
  double mean_max() const;
  bool row_stochastic(double tol = 1e-6) const;
};

struct PatchEmbedderOptions {
  std::int64_t in_channels = 3;
  std::int64_t window_h = 7;
  std::int64_t window_w = 7;
  std::int64_t features = 64;
};

// Conv feature map over s x s windows: window conv -> leaky ReLU -> 1x1 conv.
// The window conv starts from an orthogonal projection so that cosine
// similarity initially tracks the raw patch geometry.
class PatchEmbedderImpl : public torch::nn::Module {
 public:
  explicit PatchEmbedderImpl(PatchEmbedderOptions options = {});

  // Embeds flattened patches [n, C * window_h * window_w] (unfold layout) -> [n, features].
  torch::Tensor embed_patches(const torch::Tensor& patches);

  const PatchEmbedderOptions& options() const { return options_; }

 private:
  PatchEmbedderOptions options_;
  torch::nn::Linear window_{nullptr};
  torch::nn::Linear mix_{nullptr};
};
TORCH_MODULE(PatchEmbedder);

// Attention from already-embedded patches. Keys are processed in tiles of at
// most `key_tile` rows; the result is exact.
AttentionMap attention_from_embeddings(const torch::Tensor& query_emb, const torch::Tensor& key_emb,
                                       double temperature, std::int64_t key_tile = 4096);

// b_ij = cos(embed(q_i), embed(k_j)); rows of A = softmax(b_i / temperature).
AttentionMap attention(const PatchSet& query_patches, const PatchSet& key_patches, PatchEmbedder& embedder,
                       double temperature);

enum class TransferMode {
  Soft,  // each patch becomes a_{i,i*} * key_{i*}; differentiable in c
  Hard,  // each patch becomes key_{i*}
};

struct TransferResult {
  torch::Tensor output;                 // [N, C, H, W]
  std::vector<AttentionMap> attention;  // one per batch item
};

// Patch transfer on a batch c [N, C, H, W] against the exemplar c_I [C, H', W'].
// Windows are valid windows of the embedder's size; overlapping contributions
// are averaged by their count at each pixel.
TransferResult patch_transfer(const torch::Tensor& c, const torch::Tensor& c_exemplar, PatchEmbedder& embedder,
                              double temperature, TransferMode mode = TransferMode::Soft);

struct ImageTransfer {
  ImageTensor matched;
  AttentionMap attention;
};

// Image-level patch transfer. c and c_I must share dims; s must match the embedder window.
ImageTransfer patch_transfer(const ImageTensor& c, const ImageTensor& c_exemplar, PatchEmbedder& embedder,
                             std::int64_t s, double temperature, TransferMode mode = TransferMode::Soft);

struct IrNetOptions {
  std::int64_t channels = 3;
  std::int64_t width = 64;
  std::int64_t blocks = 8;
  std::int64_t scale = 8;  // power of two; 1 gives an identity-scale net
  std::int64_t min_width = 16;
};

// Restoration network: residual blocks at input resolution, then learned x2
// stages (conv + pixel shuffle). The output adds a bilinear upsampling of the
// input, so the net learns the residual detail; tanh keeps it in the signed range.
class IrNetImpl : public torch::nn::Module {
 public:
  explicit IrNetImpl(IrNetOptions options = {});
  torch::Tensor forward(const torch::Tensor& x);
  const IrNetOptions& options() const { return options_; }

 private:
  IrNetOptions options_;
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
  torch::nn::Sequential upsample_{nullptr};
  torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(IrNet);

struct DipNetOptions {
  PatchEmbedderOptions embedder;
  IrNetOptions ir;
  double temperature = 0.07;
  TransferMode mode = TransferMode::Soft;
};

struct DipNetOutput {
  torch::Tensor image;                  // [N, C, H * scale, W * scale]
  torch::Tensor transferred;            // PT(c)
  std::vector<AttentionMap> attention;  // per batch item
};

// F = IR o PT. The exemplar c_I is held as a buffer so it travels with checkpoints.
class DipNetImpl : public torch::nn::Module {
 public:
  DipNetImpl(DipNetOptions options, torch::Tensor exemplar_low);

  DipNetOutput forward(const torch::Tensor& c);
  DipNetOutput forward(const torch::Tensor& c, TransferMode mode);

  PatchEmbedder& embedder() { return embedder_; }
  IrNet& ir() { return ir_; }
  const torch::Tensor& exemplar_low() const { return exemplar_low_; }
  const DipNetOptions& options() const { return options_; }

 private:
  DipNetOptions options_;
  PatchEmbedder embedder_{nullptr};
  IrNet ir_{nullptr};
  torch::Tensor exemplar_low_;
};
TORCH_MODULE(DipNet);

// IR applied to a single image; output dims = input dims x scale.
ImageTensor restore(IrNet& ir, const ImageTensor& c);

struct InternalLossTerms {
  torch::Tensor loss;           // reconstruction - lambda_sparse * |A|_F^2
  torch::Tensor reconstruction; // mean absolute error
  torch::Tensor frobenius_sq;   // |A|_F^2, summed over the batch
  double attention_max = 0.0;   // mean_i max_j a_ij
};

// phi(P_F) = |F(c_I + dc) - I|_1 - lambda_sparse * |A|_F^2 with dc ~ N(0, delta_sigma^2)
// per pixel. delta_sigma is in the units of the tensors (signed range in training).
InternalLossTerms internal_prior_loss(DipNet& f, const torch::Tensor& image, const torch::Tensor& exemplar_low,
                                      double delta_sigma, double lambda_sparse, Rng& rng, std::int64_t step = -1);

// Composes the two terms from given pieces; shared by the loss and its tests.
torch::Tensor internal_prior_value(const torch::Tensor& restored, const torch::Tensor& target,
                                   const torch::Tensor& frobenius_sq, double lambda_sparse);

enum class ReconstructionTarget {
  IrOnly,   // IR(c_I + dc) -> I, used by the patch-statistics harness
  Full,     // F(c_I + dc) -> I with the sparsity term
};

struct ReconstructionOptions {
  std::int64_t steps = 1500;
  double lr = 1e-3;
  double delta_sigma = 0.1;
  double lambda_sparse = 0.01;
  double stop_psnr = 0.0;  // stop early once PSNR(restore(c_I), I) reaches this; 0 disables
  std::int64_t check_every = 50;
  std::uint64_t seed = 0;
  ReconstructionTarget target = ReconstructionTarget::Full;
};

struct ReconstructionReport {
  std::int64_t steps = 0;
  double psnr = 0.0;  // of the trained path on the clean c_I
  double seconds = 0.0;
};

// Reconstruction-only training of a DIPNet on (I, c_I) in the signed range.
ReconstructionReport train_reconstruction(DipNet& f, const ImageTensor& image, const ImageTensor& exemplar_low,
                                          const ReconstructionOptions& options);

// PSNR of F (or IR alone) on the clean c_I against I.
double reconstruction_psnr(DipNet& f, const ImageTensor& image, const ImageTensor& exemplar_low,
                           ReconstructionTarget target, TransferMode mode = TransferMode::Soft);

}  // namespace petsgan
