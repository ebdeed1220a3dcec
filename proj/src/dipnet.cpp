#include "petsgan/dipnet.hpp"

#include "petsgan/log.hpp"

#include <bit>
#include <chrono>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

double AttentionMap::mean_max() const {
  return std::get<0>(weights.detach().max(1)).mean().item<double>();
}

bool AttentionMap::row_stochastic(double tol) const {
  auto w = weights.detach();
  if ((w < 0).any().item<bool>()) return false;
  return (w.sum(1) - 1.0).abs().max().item<double>() <= tol;
}

PatchEmbedderImpl::PatchEmbedderImpl(PatchEmbedderOptions options) : options_(options) {
  const auto dim = options_.in_channels * options_.window_h * options_.window_w;
  window_ = register_module("window", nn::Linear(dim, options_.features));
  mix_ = register_module("mix", nn::Linear(options_.features, options_.features));
  torch::NoGradGuard no_grad;
  nn::init::orthogonal_(window_->weight);
  window_->bias.zero_();
  mix_->weight.copy_(torch::eye(options_.features));
  mix_->bias.zero_();
}

torch::Tensor PatchEmbedderImpl::embed_patches(const torch::Tensor& patches) {
  return mix_->forward(F::leaky_relu(window_->forward(patches), F::LeakyReLUFuncOptions().negative_slope(0.2)));
}

AttentionMap attention_from_embeddings(const torch::Tensor& query_emb, const torch::Tensor& key_emb,
                                       double temperature, std::int64_t key_tile) {
  if (temperature <= 0.0) throw ArgumentError("attention temperature must be positive");
  if (query_emb.dim() != 2 || key_emb.dim() != 2 || query_emb.size(1) != key_emb.size(1)) {
    throw ArgumentError("attention: embedding shapes do not match");
  }
  if (key_tile < 1) throw ArgumentError("attention: key tile must be positive");
  constexpr double kEps = 1e-12;
  auto q_norm = query_emb.norm(2, 1, true);
  auto k_norm = key_emb.norm(2, 1, true);
  if ((q_norm.detach() <= kEps).any().item<bool>() || (k_norm.detach() <= kEps).any().item<bool>()) {
    log::debug("attention: zero-norm patch embedding, similarity set to 0");
  }
  // Zero-norm rows become zero vectors, so their cosine similarity is 0.
  auto q = query_emb / q_norm.clamp_min(kEps);
  auto k = key_emb / k_norm.clamp_min(kEps);
  std::vector<torch::Tensor> tiles;
  for (std::int64_t start = 0; start < k.size(0); start += key_tile) {
    tiles.push_back(q.matmul(k.narrow(0, start, std::min(key_tile, k.size(0) - start)).t()));
  }
  auto similarity = tiles.size() == 1 ? tiles.front() : torch::cat(tiles, 1);
  AttentionMap map;
  map.weights = torch::softmax(similarity / temperature, 1);
  map.argmax = map.weights.detach().argmax(1);
  return map;
}

AttentionMap attention(const PatchSet& query_patches, const PatchSet& key_patches, PatchEmbedder& embedder,
                       double temperature) {
  if (query_patches.dim() != key_patches.dim()) throw ArgumentError("attention: patch dimensions differ");
  return attention_from_embeddings(embedder->embed_patches(query_patches.patches),
                                   embedder->embed_patches(key_patches.patches), temperature);
}

TransferResult patch_transfer(const torch::Tensor& c, const torch::Tensor& c_exemplar, PatchEmbedder& embedder,
                              double temperature, TransferMode mode) {
  const auto& eo = embedder->options();
  if (c.dim() != 4 || c_exemplar.dim() != 3) throw ArgumentError("patch_transfer expects c [N,C,H,W], c_I [C,H,W]");
  if (c.size(1) != c_exemplar.size(0) || c.size(1) != eo.in_channels) {
    throw ArgumentError("patch_transfer: channel counts differ");
  }
  const auto h = c.size(2);
  const auto w = c.size(3);
  const auto kh = eo.window_h;
  const auto kw = eo.window_w;
  if (h < kh || w < kw || c_exemplar.size(1) < kh || c_exemplar.size(2) < kw) {
    throw ArgumentError("patch_transfer: window larger than the image");
  }
  auto unfold = F::UnfoldFuncOptions({kh, kw});
  auto keys = F::unfold(c_exemplar.unsqueeze(0).to(c.dtype()), unfold).squeeze(0).t();  // [K, D]
  auto key_emb = embedder->embed_patches(keys);
  auto queries = F::unfold(c, unfold);  // [N, D, L]

  TransferResult result;
  std::vector<torch::Tensor> columns;
  for (std::int64_t n = 0; n < c.size(0); ++n) {
    auto q_rows = queries[n].t();
    auto map = attention_from_embeddings(embedder->embed_patches(q_rows), key_emb, temperature);
    auto chosen = keys.index_select(0, map.argmax);
    if (mode == TransferMode::Soft) chosen = chosen * map.weights.gather(1, map.argmax.unsqueeze(1));
    columns.push_back(chosen.t());
    result.attention.push_back(std::move(map));
  }
  auto fold = F::FoldFuncOptions({h, w}, {kh, kw});
  auto summed = F::fold(torch::stack(columns), fold);
  auto counts = F::fold(torch::ones({1, queries.size(1), queries.size(2)}, c.options()), fold);
  result.output = summed / counts;
  return result;
}

ImageTransfer patch_transfer(const ImageTensor& c, const ImageTensor& c_exemplar, PatchEmbedder& embedder,
                             std::int64_t s, double temperature, TransferMode mode) {
  if (c.channels() != c_exemplar.channels() || c.height() != c_exemplar.height() ||
      c.width() != c_exemplar.width()) {
    throw ArgumentError("patch_transfer: c and c_I differ in dims");
  }
  if (s % 2 == 0 || s != embedder->options().window_w) {
    throw ArgumentError("patch_transfer: window size must be odd and match the embedder");
  }
  auto in = c.to_range(c_exemplar.range());
  auto res = patch_transfer(in.batched(), c_exemplar.data(), embedder, temperature, mode);
  return {ImageTensor::clamped(res.output.detach().squeeze(0), c_exemplar.range()), std::move(res.attention.front())};
}

namespace {

struct ResBlockImpl : nn::Module {
  explicit ResBlockImpl(std::int64_t width)
      : a(register_module("a", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)))),
        b(register_module("b", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    return x + b(F::leaky_relu(a(x), F::LeakyReLUFuncOptions().negative_slope(0.2)));
  }

  nn::Conv2d a;
  nn::Conv2d b;
};
TORCH_MODULE(ResBlock);

}  // namespace

IrNetImpl::IrNetImpl(IrNetOptions options) : options_(options) {
  if (options_.scale < 1 || !std::has_single_bit(static_cast<std::uint64_t>(options_.scale))) {
    throw ArgumentError("IrNet scale must be a power of two, got " + std::to_string(options_.scale));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(options_.channels, options_.width, 3).padding(1)));
  nn::Sequential blocks;
  for (std::int64_t i = 0; i < options_.blocks; ++i) blocks->push_back(ResBlock(options_.width));
  blocks_ = register_module("blocks", blocks);
  nn::Sequential up;
  auto width = options_.width;
  for (auto s = options_.scale; s > 1; s /= 2) {
    const auto next = std::max(width / 2, options_.min_width);
    up->push_back(nn::Conv2d(nn::Conv2dOptions(width, next * 4, 3).padding(1)));
    up->push_back(nn::PixelShuffle(2));
    up->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    width = next;
  }
  upsample_ = register_module("upsample", up);
  tail_ = register_module("tail", nn::Conv2d(nn::Conv2dOptions(width, options_.channels, 3).padding(1)));
}

torch::Tensor IrNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != options_.channels) throw ArgumentError("IrNet expects [N, C, H, W]");
  auto feat = head_(x);
  feat = blocks_->is_empty() ? feat : feat + blocks_->forward(feat);
  if (!upsample_->is_empty()) feat = upsample_->forward(feat);
  auto base = resize_batch(x, x.size(2) * options_.scale, x.size(3) * options_.scale, ResizeMode::Bilinear);
  return torch::tanh(base + tail_(feat));
}

DipNetImpl::DipNetImpl(DipNetOptions options, torch::Tensor exemplar_low) : options_(std::move(options)) {
  if (exemplar_low.dim() != 3) throw ArgumentError("DipNet exemplar must be [C, H, W]");
  embedder_ = register_module("embedder", PatchEmbedder(options_.embedder));
  ir_ = register_module("ir", IrNet(options_.ir));
  exemplar_low_ = register_buffer("exemplar_low", exemplar_low.detach().to(torch::kFloat32).clone());
}

DipNetOutput DipNetImpl::forward(const torch::Tensor& c) { return forward(c, options_.mode); }

DipNetOutput DipNetImpl::forward(const torch::Tensor& c, TransferMode mode) {
  auto pt = patch_transfer(c, exemplar_low_, embedder_, options_.temperature, mode);
  DipNetOutput out;
  out.transferred = pt.output;
  out.image = ir_->forward(pt.output);
  out.attention = std::move(pt.attention);
  return out;
}

ImageTensor restore(IrNet& ir, const ImageTensor& c) {
  torch::NoGradGuard no_grad;
  auto out = ir->forward(c.to_signed().batched()).squeeze(0);
  return ImageTensor::clamped(out, ValueRange::Signed).to_range(c.range());
}

torch::Tensor internal_prior_value(const torch::Tensor& restored, const torch::Tensor& target,
                                   const torch::Tensor& frobenius_sq, double lambda_sparse) {
  return (restored - target).abs().mean() - lambda_sparse * frobenius_sq;
}

InternalLossTerms internal_prior_loss(DipNet& f, const torch::Tensor& image, const torch::Tensor& exemplar_low,
                                      double delta_sigma, double lambda_sparse, Rng& rng, std::int64_t step) {
  if (delta_sigma < 0.0) throw ArgumentError("delta_sigma must be non-negative");
  auto target = image.dim() == 3 ? image.unsqueeze(0) : image;
  auto input = exemplar_low.dim() == 3 ? exemplar_low.unsqueeze(0) : exemplar_low;
  if (delta_sigma > 0.0) input = input + rng.normal(input.sizes()).to(input.dtype()) * delta_sigma;
  auto out = f->forward(input);
  InternalLossTerms terms;
  terms.frobenius_sq = torch::zeros({}, out.image.options());
  double max_sum = 0.0;
  for (const auto& map : out.attention) {
    terms.frobenius_sq = terms.frobenius_sq + map.frobenius_sq();
    max_sum += map.mean_max();
  }
  terms.attention_max = max_sum / static_cast<double>(out.attention.size());
  terms.reconstruction = (out.image - target).abs().mean();
  terms.loss = internal_prior_value(out.image, target, terms.frobenius_sq, lambda_sparse);
  if (!torch::isfinite(terms.loss).item<bool>()) throw TrainingDivergence("non-finite internal-prior loss", step);
  return terms;
}

double reconstruction_psnr(DipNet& f, const ImageTensor& image, const ImageTensor& exemplar_low,
                           ReconstructionTarget target, TransferMode mode) {
  torch::NoGradGuard no_grad;
  auto low = exemplar_low.to_signed().batched();
  auto out = target == ReconstructionTarget::IrOnly ? f->ir()->forward(low) : f->forward(low, mode).image;
  return psnr(ImageTensor::clamped(out.squeeze(0), ValueRange::Signed), image.to_signed());
}

ReconstructionReport train_reconstruction(DipNet& f, const ImageTensor& image, const ImageTensor& exemplar_low,
                                          const ReconstructionOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(options.seed, "reconstruction");
  auto target = image.to_signed().batched();
  auto low = exemplar_low.to_signed().data();
  // delta_sigma is a fraction of the value-range width; the signed range is 2 wide.
  const double sigma = options.delta_sigma * 2.0;
  const bool ir_only = options.target == ReconstructionTarget::IrOnly;
  auto params = ir_only ? f->ir()->parameters() : f->parameters();
  torch::optim::Adam adam(params, torch::optim::AdamOptions(options.lr).betas({0.9, 0.999}));
  f->train();
  ReconstructionReport report;
  for (std::int64_t step = 0; step < options.steps; ++step) {
    adam.zero_grad();
    torch::Tensor loss;
    if (ir_only) {
      auto input = low.unsqueeze(0);
      if (sigma > 0.0) input = input + rng.normal(input.sizes()) * sigma;
      loss = (f->ir()->forward(input) - target).abs().mean();
      if (!torch::isfinite(loss).item<bool>()) throw TrainingDivergence("non-finite reconstruction loss", step);
    } else {
      loss = internal_prior_loss(f, target, low, sigma, options.lambda_sparse, rng, step).loss;
    }
    loss.backward();
    adam.step();
    report.steps = step + 1;
    if (options.stop_psnr > 0.0 && (step + 1) % options.check_every == 0 &&
        reconstruction_psnr(f, image, exemplar_low, options.target) >= options.stop_psnr) {
      break;
    }
  }
  report.psnr = reconstruction_psnr(f, image, exemplar_low, options.target);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace petsgan
