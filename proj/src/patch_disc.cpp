#include "petsgan/patch_disc.hpp"

#include "petsgan/errors.hpp"

namespace petsgan {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::int64_t receptive_field(std::span<const ConvGeometry> layers) {
  std::int64_t rf = 1;
  std::int64_t jump = 1;
  for (const auto& l : layers) {
    rf += (l.kernel - 1) * l.dilation * jump;
    jump *= l.stride;
  }
  return rf;
}

MultiScaleDImpl::MultiScaleDImpl(MultiScaleDOptions options) : options_(std::move(options)) {
  if (options_.layers < 1 || options_.dilations.empty()) throw ArgumentError("MultiScaleD needs layers and branches");
  for (std::size_t b = 0; b < options_.dilations.size(); ++b) {
    const auto d = options_.dilations[b];
    nn::Sequential branch;
    for (std::int64_t l = 0; l < options_.layers; ++l) {
      const auto in = l == 0 ? options_.channels : options_.width;
      const auto out = l + 1 == options_.layers ? 1 : options_.width;
      auto conv = nn::Conv2dOptions(in, out, options_.kernel).dilation(d);
      if (options_.padding == DiscPadding::Circular) {
        conv.padding(d * (options_.kernel - 1) / 2).padding_mode(torch::kCircular);
      }
      branch->push_back(nn::Conv2d(conv));
      if (l + 1 < options_.layers) branch->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    branches_.push_back(register_module("branch" + std::to_string(b), branch));
  }
}

std::vector<torch::Tensor> MultiScaleDImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  out.reserve(branches_.size());
  for (auto& b : branches_) out.push_back(b->forward(x));
  return out;
}

std::vector<ConvGeometry> MultiScaleDImpl::branch_geometry(std::size_t branch) const {
  return std::vector<ConvGeometry>(static_cast<std::size_t>(options_.layers),
                                   ConvGeometry{options_.kernel, options_.dilations.at(branch), 1});
}

std::vector<BranchField> receptive_fields(const MultiScaleD& d) {
  std::vector<BranchField> out;
  for (std::size_t b = 0; b < d->options().dilations.size(); ++b) {
    auto geometry = d->branch_geometry(b);
    out.push_back({b, d->options().dilations[b], receptive_field(geometry)});
  }
  return out;
}

torch::Tensor adversarial_loss_d(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty()) {
    throw ArgumentError("adversarial loss: branch counts differ");
  }
  auto total = torch::zeros({}, real_logits.front().options());
  for (std::size_t b = 0; b < real_logits.size(); ++b) {
    // -log sigmoid(r) - log(1 - sigmoid(f))
    total = total + F::softplus(-real_logits[b]).mean() + F::softplus(fake_logits[b]).mean();
  }
  return total / static_cast<double>(real_logits.size());
}

torch::Tensor adversarial_loss_g(const std::vector<torch::Tensor>& fake_logits) {
  if (fake_logits.empty()) throw ArgumentError("adversarial loss: no branches");
  auto total = torch::zeros({}, fake_logits.front().options());
  for (const auto& f : fake_logits) total = total + F::softplus(-f).mean();
  return total / static_cast<double>(fake_logits.size());
}

AdversarialLoss patch_adv_loss(MultiScaleD& d, const torch::Tensor& real_img, const torch::Tensor& fake_img,
                               std::int64_t step) {
  if (real_img.sizes() != fake_img.sizes()) throw ArgumentError("patch_adv_loss: real and fake dims differ");
  AdversarialLoss loss;
  loss.loss_d = adversarial_loss_d(d->forward(real_img), d->forward(fake_img.detach()));
  loss.loss_g = adversarial_loss_g(d->forward(fake_img));
  if (!torch::isfinite(loss.loss_d).item<bool>() || !torch::isfinite(loss.loss_g).item<bool>()) {
    throw TrainingDivergence("non-finite patch adversarial loss", step);
  }
  return loss;
}

}  // namespace petsgan
