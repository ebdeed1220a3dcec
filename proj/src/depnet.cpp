#include "petsgan/depnet.hpp"

#include <cmath>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor positional_encoding(std::int64_t h, std::int64_t w, std::int64_t channels) {
  if (channels <= 0 || channels % 2 != 0) {
    throw ArgumentError("positional encoding needs a positive even channel count, got " + std::to_string(channels));
  }
  if (h < 1 || w < 1) throw ArgumentError("positional encoding needs positive spatial dims");
  const auto half = channels / 2;
  auto out = torch::empty({channels, h, w}, torch::kFloat32);
  auto encode = [&](std::int64_t j, std::int64_t length) {
    const auto k = j / 2;
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(channels));
    auto pos = torch::arange(length, torch::kFloat64) * freq;
    return (j % 2 == 0 ? pos.sin() : pos.cos()).to(torch::kFloat32);
  };
  for (std::int64_t j = 0; j < half; ++j) {
    out[j] = encode(j, h).unsqueeze(1).expand({h, w});
    out[half + j] = encode(j, w).unsqueeze(0).expand({h, w});
  }
  return out;
}

torch::Tensor PixelNormImpl::forward(const torch::Tensor& x) {
  return x * torch::rsqrt(x.pow(2).mean(1, true) + 1e-8);
}

namespace {

nn::Conv2d conv3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

DepNetGImpl::DepNetGImpl(DepNetOptions options) : options_(options) {
  const auto in = options_.noise_channels + options_.pe_channels;
  const auto wide = options_.width;
  const auto narrow = std::max<std::int64_t>(wide / 2, 8);
  nn::Sequential body;
  const std::int64_t widths[] = {narrow, wide, wide, wide, narrow};
  std::int64_t prev = in;
  for (auto c : widths) {
    body->push_back(conv3(prev, c));
    body->push_back(PixelNorm());
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    prev = c;
  }
  body->push_back(conv3(prev, options_.out_channels));
  body->push_back(nn::Tanh());
  body_ = register_module("body", body);
}

torch::Tensor DepNetGImpl::forward(const torch::Tensor& noise) {
  if (noise.dim() != 4 || noise.size(1) != options_.noise_channels) {
    throw ArgumentError("DepNetG expects noise [N, " + std::to_string(options_.noise_channels) + ", h, w]");
  }
  const auto h = noise.size(2);
  const auto w = noise.size(3);
  if (h < kMinSpatial || w < kMinSpatial) {
    throw ArgumentError("DepNetG needs spatial dims of at least " + std::to_string(kMinSpatial) + ", got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  auto x = noise;
  if (options_.pe_channels > 0) {
    auto pe = positional_encoding(h, w, options_.pe_channels).to(noise.dtype());
    x = torch::cat({noise, pe.unsqueeze(0).expand({noise.size(0), -1, -1, -1})}, 1);
  }
  return body_->forward(x);
}

DepNetDImpl::DepNetDImpl(std::int64_t in_channels, std::int64_t width) {
  const auto narrow = std::max<std::int64_t>(width / 2, 8);
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  features_ = register_module("features",
                              nn::Sequential(conv3(in_channels, narrow), lrelu(), conv3(narrow, width, 2), lrelu()));
  // One extra input channel carries the minibatch standard deviation.
  tail_ = register_module("tail", nn::Sequential(conv3(width + 1, width), lrelu()));
  head_ = register_module("head", nn::Linear(width, 1));
}

torch::Tensor DepNetDImpl::forward(const torch::Tensor& x) {
  auto f = features_->forward(x);
  auto sd = (f.var(0, false) + 1e-8).sqrt().mean();
  f = torch::cat({f, sd.expand({f.size(0), 1, f.size(2), f.size(3)})}, 1);
  f = tail_->forward(f).mean({2, 3});
  return head_->forward(f).squeeze(1);
}

torch::Tensor sample_noise(Rng& rng, std::int64_t n, std::int64_t channels, std::int64_t h, std::int64_t w) {
  return rng.normal({n, channels, h, w});
}

ImageTensor generate(DepNetG& g, const torch::Tensor& noise) {
  if (noise.dim() != 3) throw ArgumentError("generate expects noise [channels, h, w]");
  torch::NoGradGuard no_grad;
  auto out = g->forward(noise.unsqueeze(0)).squeeze(0);
  return ImageTensor::clamped(out, ValueRange::Signed);
}

torch::Tensor collapse_penalty(const torch::Tensor& logits_a, const torch::Tensor& logits_b) {
  return -(logits_a - logits_b).abs().mean();
}

namespace {

void require_finite(const torch::Tensor& t, const char* what, std::int64_t step) {
  if (!torch::isfinite(t).all().item<bool>()) throw TrainingDivergence(std::string("non-finite ") + what, step);
}

}  // namespace

ExternalLossTerms external_prior_loss(DepNetG& g, DepNetD& d, const torch::Tensor& real_batch,
                                      const torch::Tensor& z_batch, const torch::Tensor& z1, const torch::Tensor& z2,
                                      double lambda_div, std::int64_t step) {
  if (z1.size(0) != z2.size(0)) throw ArgumentError("collapse-penalty noise batches differ in size");
  auto fake = g->forward(z_batch);
  auto real_logits = d->forward(real_batch);
  auto fake_logits_detached = d->forward(fake.detach());
  auto fake_logits = d->forward(fake);

  ExternalLossTerms terms;
  terms.loss_d = F::softplus(-real_logits).mean() + F::softplus(fake_logits_detached).mean();
  auto pair_a = d->forward(g->forward(z1));
  auto pair_b = d->forward(g->forward(z2));
  terms.collapse = collapse_penalty(pair_a, pair_b);
  terms.loss_g = F::softplus(-fake_logits).mean() + lambda_div * terms.collapse;
  // log sigmoid(x) = -softplus(-x)
  terms.phi = (-F::softplus(-real_logits).mean() + F::softplus(-fake_logits).mean() + terms.collapse).detach();

  require_finite(terms.loss_d, "external-prior discriminator loss", step);
  require_finite(terms.loss_g, "external-prior generator loss", step);
  return terms;
}

}  // namespace petsgan
