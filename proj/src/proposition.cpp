#include "petsgan/proposition.hpp"

#include <sstream>

#include "petsgan/errors.hpp"

namespace petsgan {

nlohmann::json Prop1Report::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : samples) {
    per.push_back({{"dist_direct", s.dist_direct}, {"dist_matched", s.dist_matched}, {"dist_low", s.dist_low}});
  }
  return {{"dist_direct", dist_direct},
          {"dist_matched", dist_matched},
          {"reconstruction_psnr", reconstruction_psnr},
          {"holds", holds},
          {"n_samples", samples.size()},
          {"samples", per}};
}

Prop1Report verify_proposition1(const ImageTensor& image, const ImageTensor& exemplar_low, DipNet& f,
                                const std::vector<ImageTensor>& samples, const PatchConfig& cfg,
                                const Prop1Options& options) {
  cfg.validate();
  if (samples.empty()) throw ArgumentError("verify_proposition1 needs at least one sample");
  const auto target = image.to_signed();
  const auto low = exemplar_low.to_signed();

  Prop1Report report;
  report.reconstruction_psnr = reconstruction_psnr(f, target, low, ReconstructionTarget::IrOnly);
  if (report.reconstruction_psnr < options.psnr_floor) {
    std::ostringstream msg;
    msg << "IR reconstructs I at " << report.reconstruction_psnr << " dB, below the " << options.psnr_floor
        << " dB floor; train it first";
    throw PreconditionError(msg.str());
  }

  torch::NoGradGuard no_grad;
  f->eval();
  for (const auto& sample : samples) {
    if (sample.channels() != low.channels() || sample.height() != low.height() || sample.width() != low.width()) {
      throw ArgumentError("proposition sample dims differ from c_I");
    }
    auto c = sample.to_signed();
    auto direct = ImageTensor::clamped(f->ir()->forward(c.batched()).squeeze(0), ValueRange::Signed);
    auto matched = ImageTensor::clamped(f->forward(c.batched(), options.mode).image.squeeze(0), ValueRange::Signed);
    Prop1Sample s;
    s.dist_direct = image_patch_distance(target, direct, cfg.s, cfg.boundary, options.distance);
    s.dist_matched = image_patch_distance(target, matched, cfg.s, cfg.boundary, options.distance);
    s.dist_low = image_patch_distance(low, c, cfg.s_star, cfg.boundary, options.distance);
    report.dist_direct += s.dist_direct;
    report.dist_matched += s.dist_matched;
    report.samples.push_back(s);
  }
  const auto n = static_cast<double>(report.samples.size());
  report.dist_direct /= n;
  report.dist_matched /= n;
  report.holds = report.dist_matched < report.dist_direct;
  return report;
}

std::vector<ImageTensor> noise_samples(const ImageTensor& like, std::int64_t n, Rng& rng) {
  std::vector<ImageTensor> out;
  for (std::int64_t i = 0; i < n; ++i) {
    out.emplace_back(rng.uniform({like.channels(), like.height(), like.width()}, -1.0, 1.0), ValueRange::Signed);
  }
  return out;
}

}  // namespace petsgan
