#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

namespace petsgan {

struct ConvGeometry {
  std::int64_t kernel = 3;
  std::int64_t dilation = 1;
  std::int64_t stride = 1;
};

// Effective receptive field of a conv stack: 1 + sum_l (k_l - 1) * d_l * prod_{m<l} stride_m.
std::int64_t receptive_field(std::span<const ConvGeometry> layers);

enum class DiscPadding {
  Valid,     // no padding; logit maps shrink by the receptive field
  Circular,  // same-size logit maps, translation-equivariant on the torus
};

struct MultiScaleDOptions {
  std::int64_t channels = 3;
  std::int64_t width = 32;
  std::int64_t layers = 4;
  std::int64_t kernel = 3;
  std::vector<std::int64_t> dilations = {1, 2, 4};
  DiscPadding padding = DiscPadding::Valid;
};

// Single multi-scale patch discriminator: parallel branches of dilated convs,
// each producing a patch-logit map.
class MultiScaleDImpl : public torch::nn::Module {
 public:
  explicit MultiScaleDImpl(MultiScaleDOptions options = {});

  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  const MultiScaleDOptions& options() const { return options_; }
  std::vector<ConvGeometry> branch_geometry(std::size_t branch) const;

 private:
  MultiScaleDOptions options_;
  std::vector<torch::nn::Sequential> branches_;
};
TORCH_MODULE(MultiScaleD);

struct BranchField {
  std::size_t branch;
  std::int64_t dilation;
  std::int64_t receptive_field;
};

std::vector<BranchField> receptive_fields(const MultiScaleD& d);

struct AdversarialLoss {
  torch::Tensor loss_g;
  torch::Tensor loss_d;
};

// Non-saturating loss from logit maps: each branch's mean over its patch logits,
// then the mean over branches.
torch::Tensor adversarial_loss_d(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits);
torch::Tensor adversarial_loss_g(const std::vector<torch::Tensor>& fake_logits);

// loss_d sees the fake detached; loss_g back-propagates into the fake. No
// gradient regularizer is applied.
AdversarialLoss patch_adv_loss(MultiScaleD& d, const torch::Tensor& real_img, const torch::Tensor& fake_img,
                               std::int64_t step = -1);

}  // namespace petsgan
