#include "petsgan/eval.hpp"

#include <bit>
#include <chrono>
#include <cmath>

#include "petsgan/errors.hpp"
#include "petsgan/log.hpp"
#include "petsgan/patchdist.hpp"

namespace petsgan {

namespace nn = torch::nn;

std::string_view to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::Pretrained: return "pretrained";
    case ExtractorKind::FixedRandom: return "fixed_random";
    case ExtractorKind::Pixels: return "pixels";
  }
  return "pixels";
}

RandomConvFeatures::RandomConvFeatures(std::uint64_t seed, std::int64_t channels, std::int64_t width) {
  torch::manual_seed(derive_seed(seed, "features"));
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  net_ = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, width, 3).padding(1)), lrelu(),
                        nn::Conv2d(nn::Conv2dOptions(width, width, 3).stride(2).padding(1)), lrelu(),
                        nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)));
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

torch::Tensor RandomConvFeatures::features(const ImageTensor& img) {
  torch::NoGradGuard no_grad;
  auto fmap = net_->forward(img.to_signed().batched()).squeeze(0);  // [C, h, w]
  return fmap.flatten(1).t().contiguous();
}

torch::Tensor PixelFeatures::features(const ImageTensor& img) {
  return img.to_signed().data().flatten(1).t().contiguous();
}

double frechet_distance(const torch::Tensor& mu1, const torch::Tensor& cov1, const torch::Tensor& mu2,
                        const torch::Tensor& cov2) {
  auto m1 = mu1.to(torch::kFloat64);
  auto m2 = mu2.to(torch::kFloat64);
  auto s1 = cov1.to(torch::kFloat64);
  auto s2 = cov2.to(torch::kFloat64);
  if (m1.sizes() != m2.sizes() || s1.sizes() != s2.sizes() || s1.dim() != 2 || s1.size(0) != m1.numel()) {
    throw ArgumentError("frechet_distance: mismatched moment shapes");
  }
  auto sym = [](const torch::Tensor& a) { return (a + a.t()) * 0.5; };
  // Tr((S1 S2)^{1/2}) = Tr((S1^{1/2} S2 S1^{1/2})^{1/2}); the inner product is symmetric PSD.
  auto [e1, v1] = torch::linalg_eigh(sym(s1));
  auto root1 = v1.matmul(torch::diag(e1.clamp_min(0.0).sqrt())).matmul(v1.t());
  auto inner = sym(root1.matmul(s2).matmul(root1));
  auto e = torch::linalg_eigvalsh(inner).clamp_min(0.0);
  const double tr_root = e.sqrt().sum().item<double>();
  const double mean_term = (m1 - m2).pow(2).sum().item<double>();
  const double d = mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * tr_root;
  return std::max(d, 0.0);
}

double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b) {
  if (feats_a.dim() != 2 || feats_b.dim() != 2 || feats_a.size(1) != feats_b.size(1)) {
    throw ArgumentError("frechet_distance: feature sets must be [n, d] with equal d");
  }
  if (feats_a.size(0) < 2 || feats_b.size(0) < 2) throw ArgumentError("frechet_distance: need at least 2 locations");
  auto a = feats_a.to(torch::kFloat64);
  auto b = feats_b.to(torch::kFloat64);
  auto mu_a = a.mean(0);
  auto mu_b = b.mean(0);
  auto cov = [](const torch::Tensor& x, const torch::Tensor& mu) {
    auto c = x - mu;
    return c.t().matmul(c) / static_cast<double>(x.size(0) - 1);
  };
  auto cov_a = cov(a, mu_a);
  auto cov_b = cov(b, mu_b);
  const auto d = a.size(1);
  if (a.size(0) < d || b.size(0) < d) {
    log::warn(log::cat("frechet_distance: ", std::min(a.size(0), b.size(0)), " locations for ", d,
                       " features; using diagonal covariances"));
    cov_a = torch::diag(cov_a.diagonal());
    cov_b = torch::diag(cov_b.diagonal());
  }
  return frechet_distance(mu_a, cov_a, mu_b, cov_b);
}

double sifid(const ImageTensor& real, const ImageTensor& fake, FeatureExtractor& fx) {
  if (real.channels() != fake.channels() || real.height() != fake.height() || real.width() != fake.width()) {
    throw ArgumentError("sifid: real and fake dims differ");
  }
  return frechet_distance(fx.features(real), fx.features(fake));
}

double diversity_from_features(const std::vector<torch::Tensor>& features) {
  if (features.size() < 2) throw ArgumentError("diversity needs at least 2 samples");
  std::vector<torch::Tensor> unit;
  for (const auto& f : features) {
    if (f.sizes() != features.front().sizes()) throw ArgumentError("diversity: samples differ in dims");
    auto x = f.to(torch::kFloat64);
    unit.push_back(x / (x.norm(2, {1}, true) + 1e-10));
  }
  double total = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      total += (unit[i] - unit[j]).pow(2).sum(1).mean().item<double>();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double diversity(const std::vector<ImageTensor>& samples, FeatureExtractor& fx) {
  if (samples.size() < 2) throw ArgumentError("diversity needs at least 2 samples");
  std::vector<torch::Tensor> feats;
  for (const auto& s : samples) feats.push_back(fx.features(s));
  return diversity_from_features(feats);
}

nlohmann::json EvalReport::to_json() const {
  return {{"sifid", sifid},
          {"diversity", diversity},
          {"patch_dist", patch_dist},
          {"train_seconds", train_seconds},
          {"n_samples", n_samples},
          {"extractor", extractor}};
}

EvalReport evaluate(const ImageTensor& image, const std::vector<ImageTensor>& samples, FeatureExtractor& fx,
                    std::int64_t s) {
  if (samples.empty()) throw ArgumentError("evaluate needs samples");
  EvalReport r;
  r.n_samples = static_cast<std::int64_t>(samples.size());
  r.extractor = std::string(to_string(fx.kind()));
  const auto ref = image.to_unit();
  for (const auto& x : samples) {
    auto y = x.to_unit();
    if (y.height() != ref.height() || y.width() != ref.width()) y = resize(y, ref.height(), ref.width());
    r.sifid += sifid(ref, y, fx);
    r.patch_dist += image_patch_distance(ref, y, s);
  }
  r.sifid /= static_cast<double>(samples.size());
  r.patch_dist /= static_cast<double>(samples.size());
  r.diversity = samples.size() >= 2 ? diversity(samples, fx) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------

HiresResult hires_upscale(ModelBundle& bundle, const ImageTensor& image_hi, std::int64_t factor,
                          const HiresOptions& options) {
  if (factor < 1 || !std::has_single_bit(static_cast<std::uint64_t>(factor))) {
    throw ArgumentError("upscale factor must be a power of two, got " + std::to_string(factor));
  }
  if (options.steps < 0) throw ArgumentError("steps must be non-negative");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t before[] = {bundle.parameter_hash("g"), bundle.parameter_hash("f"),
                                  bundle.parameter_hash("dg"), bundle.parameter_hash("d")};

  const auto base = bundle.image.to_signed();
  auto hi = image_hi.to_signed();
  const auto th = base.height() * factor;
  const auto tw = base.width() * factor;
  if (hi.height() != th || hi.width() != tw) {
    log::warn(log::cat("high-resolution image is ", hi.height(), "x", hi.width(), "; resizing to ", th, "x", tw));
    hi = resize(hi, th, tw);
  }

  torch::manual_seed(derive_seed(options.seed, "hires-init"));
  HiresResult result;
  result.ir = IrNet(IrNetOptions{base.channels(), options.width, options.blocks, factor, 16});
  Rng rng(options.seed, "hires");
  torch::optim::Adam adam(result.ir->parameters(), torch::optim::AdamOptions(options.lr));
  const auto x_full = base.batched();
  const auto y_full = hi.batched();
  const auto crop_h = options.crop > 0 ? std::min(options.crop, base.height()) : base.height();
  const auto crop_w = options.crop > 0 ? std::min(options.crop, base.width()) : base.width();
  result.ir->train();
  for (std::int64_t step = 0; step < options.steps; ++step) {
    const auto y0 = rng.integer(0, base.height() - crop_h);
    const auto x0 = rng.integer(0, base.width() - crop_w);
    auto x = x_full.slice(2, y0, y0 + crop_h).slice(3, x0, x0 + crop_w);
    auto y = y_full.slice(2, y0 * factor, (y0 + crop_h) * factor).slice(3, x0 * factor, (x0 + crop_w) * factor);
    auto loss = (result.ir->forward(x) - y).abs().mean();
    if (!torch::isfinite(loss).item<bool>()) throw TrainingDivergence("non-finite upscaler loss", step);
    adam.zero_grad();
    loss.backward();
    adam.step();
  }
  result.steps = options.steps;
  result.ir->eval();
  {
    torch::NoGradGuard no_grad;
    auto out = ImageTensor::clamped(result.ir->forward(x_full).squeeze(0), ValueRange::Signed);
    result.psnr = psnr(out, hi);
  }
  const std::uint64_t after[] = {bundle.parameter_hash("g"), bundle.parameter_hash("f"), bundle.parameter_hash("dg"),
                                 bundle.parameter_hash("d")};
  if (!std::equal(std::begin(before), std::end(before), std::begin(after))) {
    throw std::logic_error("hires_upscale modified the base networks");
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<ImageTensor> upscale_samples(IrNet& ir, const std::vector<ImageTensor>& samples) {
  torch::NoGradGuard no_grad;
  ir->eval();
  std::vector<ImageTensor> out;
  for (const auto& s : samples) {
    auto y = ir->forward(s.to_signed().batched()).squeeze(0);
    out.push_back(ImageTensor::clamped(y, ValueRange::Signed).to_unit());
  }
  return out;
}

// ---------------------------------------------------------------------------

ManipulationTask parse_manipulation_task(std::string_view name) {
  if (name == "harmonize") return ManipulationTask::Harmonize;
  if (name == "style_transfer") return ManipulationTask::StyleTransfer;
  if (name == "edit") return ManipulationTask::Edit;
  if (name == "paint2image") return ManipulationTask::Paint2Image;
  throw ArgumentError("unknown task '" + std::string(name) +
                      "' (expected harmonize, style_transfer, edit, paint2image)");
}

std::string_view to_string(ManipulationTask task) {
  switch (task) {
    case ManipulationTask::Harmonize: return "harmonize";
    case ManipulationTask::StyleTransfer: return "style_transfer";
    case ManipulationTask::Edit: return "edit";
    case ManipulationTask::Paint2Image: return "paint2image";
  }
  return "edit";
}

Manipulator train_manipulator(const ImageTensor& image, const ManipulationOptions& options) {
  const auto k = options.down_factor;
  if (image.height() % k != 0 || image.width() % k != 0) {
    throw ArgumentError("manipulation exemplar dims must be multiples of " + std::to_string(k));
  }
  Manipulator m;
  m.down_factor = k;
  m.image = image.to_signed();
  m.low = resize(m.image, image.height() / k, image.width() / k);
  torch::manual_seed(derive_seed(options.training.seed, "manipulator-init"));
  DipNetOptions fo;
  fo.embedder = {image.channels(), options.pt_window, options.pt_window, 64};
  fo.ir = {image.channels(), 64, 8, k, 16};
  fo.temperature = options.temperature;
  m.f = DipNet(fo, m.low.data());
  auto training = options.training;
  training.target = ReconstructionTarget::Full;
  m.training = train_reconstruction(m.f, m.image, m.low, training);
  return m;
}

ManipulationResult manipulate(Manipulator& m, ManipulationTask task, const ImageTensor& content) {
  const auto k = m.down_factor;
  auto c = content.to_signed();
  const auto h = std::max<std::int64_t>((c.height() + k / 2) / k, 1) * k;
  const auto w = std::max<std::int64_t>((c.width() + k / 2) / k, 1) * k;
  if (h != c.height() || w != c.width()) {
    log::warn(log::cat(to_string(task), ": content is ", c.height(), "x", c.width(), "; resizing to ", h, "x", w));
    c = resize(c, h, w);
  }
  auto low = resize(c, h / k, w / k);
  torch::NoGradGuard no_grad;
  m.f->eval();
  auto out = m.f->forward(low.batched());
  ManipulationResult r;
  r.output = ImageTensor::clamped(out.image.squeeze(0), ValueRange::Signed).to_range(content.range());
  r.attention = out.attention.front();
  return r;
}

}  // namespace petsgan
