#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "petsgan/depnet.hpp"
#include "petsgan/dipnet.hpp"
#include "petsgan/errors.hpp"
#include "petsgan/eval.hpp"
#include "petsgan/external_prior.hpp"
#include "petsgan/imaging.hpp"
#include "petsgan/patchdist.hpp"
#include "petsgan/proposition.hpp"
#include "petsgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace petsgan;

namespace {

using Clock = std::chrono::steady_clock;

const fs::path kData = PETSGAN_TEST_DATA;
constexpr const char* kDeskImage = "rocket.png";
constexpr std::uint64_t kSeed = 0;
constexpr std::int64_t kEvalSamples = 10;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Training runs shared between criteria.
struct DeskRun {
  TrainResult result;
  double seconds = 0.0;
  bool diverged = false;
  std::string error;
};

std::map<Ablation, DeskRun>& desk_runs() {
  static std::map<Ablation, DeskRun> runs;
  return runs;
}

ImageTensor desk_raw() { return load_image(kData / kDeskImage); }

DeskRun& desk_run(Ablation ablation) {
  auto& runs = desk_runs();
  auto it = runs.find(ablation);
  if (it != runs.end()) return it->second;
  auto cfg = RunConfig::desk();
  cfg.seed = kSeed;
  cfg.ablation = ablation;
  DeskRun run;
  std::cerr << "training desk run (" << to_string(ablation) << ", " << cfg.epochs << " epochs)\n";
  const auto t0 = Clock::now();
  try {
    run.result = train(desk_raw(), cfg);
  } catch (const TrainingDivergence& e) {
    run.diverged = true;
    run.error = e.what();
  }
  run.seconds = seconds_since(t0);
  std::cerr << "  done in " << fmt(run.seconds) << " s\n";
  return runs.emplace(ablation, std::move(run)).first->second;
}

struct Scores {
  EvalReport samples;
  double noise_patch_dist = 0.0;
};

Scores score(const Checkpoint& ckpt) {
  auto bundle = bundle_from_checkpoint(ckpt);
  const auto h = bundle.image.height();
  const auto w = bundle.image.width();
  Rng rng(kSeed, "acceptance-samples");
  auto samples = generate_samples(bundle, kEvalSamples, h, w, rng);
  RandomConvFeatures fx(0);
  Scores s;
  s.samples = evaluate(bundle.image, samples, fx, bundle.config.s);
  Rng nrng(kSeed, "acceptance-noise");
  std::vector<ImageTensor> noise;
  for (std::int64_t i = 0; i < kEvalSamples; ++i) {
    noise.emplace_back(nrng.uniform({bundle.image.channels(), h, w}), ValueRange::Unit);
  }
  s.noise_patch_dist = evaluate(bundle.image, noise, fx, bundle.config.s).patch_dist;
  return s;
}

std::optional<Verdict> require_run(const DeskRun& run) {
  if (run.diverged) return Verdict{false, "training diverged: " + run.error};
  return std::nullopt;
}

// Max relative error between autograd and central differences of `loss` w.r.t. `param`.
double fd_relative_error(torch::Tensor param, const std::function<torch::Tensor()>& loss, std::int64_t probes,
                         double eps = 1e-6) {
  param.mutable_grad() = torch::Tensor();
  loss().backward();
  auto analytic = param.grad().detach().flatten().clone();
  auto flat = param.detach().view({-1});
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (std::int64_t i = 0; i < std::min<std::int64_t>(probes, flat.numel()); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + eps;
    const double lp = loss().item<double>();
    flat[i] = orig - eps;
    const double lm = loss().item<double>();
    flat[i] = orig;
    const double fd = (lp - lm) / (2 * eps);
    const double an = analytic[i].item<double>();
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / scale);
  }
  return worst;
}

// Rows with exact sample mean `mu` and unbiased sample covariance diag(sigma^2).
torch::Tensor exact_gaussian_rows(std::int64_t n, const torch::Tensor& mu, const torch::Tensor& sigma,
                                  std::uint64_t seed) {
  Rng rng(seed, "rows");
  auto x = rng.normal({n, mu.size(0)}).to(torch::kFloat64);
  x = x - x.mean(0);
  auto cov = x.t().matmul(x) / static_cast<double>(n - 1);
  auto white = torch::linalg_solve_triangular(torch::linalg_cholesky(cov), x.t(), /*upper=*/false).t();
  return white * sigma + mu;
}

class ScriptedFeatures final : public FeatureExtractor {
 public:
  explicit ScriptedFeatures(std::vector<torch::Tensor> feats) : feats_(std::move(feats)) {}
  ExtractorKind kind() const override { return ExtractorKind::Pixels; }
  torch::Tensor features(const ImageTensor&) override { return feats_.at(next_++ % feats_.size()); }

 private:
  std::vector<torch::Tensor> feats_;
  std::size_t next_ = 0;
};

// 1
Verdict matched_patches_move_toward_exemplar() {
  const auto t0 = Clock::now();
  const std::vector<std::string> images = {"chelsea.png", "coffee.png", "rocket.png", "motorcycle_left.png",
                                           "astronaut.png"};
  int holds = 0;
  std::ostringstream detail;
  for (const auto& name : images) {
    auto pre = preprocess(load_image(kData / name), 64, 8);
    torch::manual_seed(derive_seed(kSeed, "prop1-init"));
    DipNetOptions fo;
    fo.embedder = {pre.image.channels(), 3, 3, 64};
    fo.ir.scale = 8;
    DipNet f(fo, pre.low.to_signed().data());
    ReconstructionOptions ro;
    ro.steps = 3000;
    ro.lr = 1e-3;
    ro.delta_sigma = 0.02;
    ro.stop_psnr = 26.0;
    ro.seed = kSeed;
    ro.target = ReconstructionTarget::IrOnly;
    auto rec = train_reconstruction(f, pre.image, pre.low, ro);
    Rng rng(kSeed, "prop1-samples");
    auto samples = noise_samples(pre.low.to_signed(), 20, rng);
    Prop1Options po;
    po.psnr_floor = 25.0;
    detail << name << ": ";
    try {
      auto r = verify_proposition1(pre.image, pre.low, f, samples, PatchConfig{7, 3, Boundary::Valid}, po);
      holds += r.holds ? 1 : 0;
      detail << "psnr " << fmt(r.reconstruction_psnr) << " matched " << fmt(r.dist_matched) << " direct "
             << fmt(r.dist_direct) << (r.holds ? " holds" : " fails");
    } catch (const PreconditionError& e) {
      detail << "IR reached " << fmt(rec.psnr) << " dB only";
    }
    detail << "; ";
  }
  const double secs = seconds_since(t0);
  detail << holds << "/5 hold, " << fmt(secs) << " s";
  return {holds >= 4 && secs <= 15 * 60, detail.str()};
}

// 2
Verdict external_prior_adds_diversity() {
  auto& full = desk_run(Ablation::Full);
  auto& ablated = desk_run(Ablation::NoExternal);
  if (auto v = require_run(full)) return *v;
  if (auto v = require_run(ablated)) return *v;
  const double a = score(full.result.checkpoint).samples.diversity;
  const double b = score(ablated.result.checkpoint).samples.diversity;
  const double secs = full.seconds + ablated.seconds;
  return {a > 1.5 * b && secs <= 40 * 60,
          "diversity full " + fmt(a) + " vs no_external " + fmt(b) + ", " + fmt(secs) + " s"};
}

// 3
Verdict internal_prior_improves_patch_statistics() {
  auto& full = desk_run(Ablation::Full);
  auto& ablated = desk_run(Ablation::NoInternal);
  if (auto v = require_run(full)) return *v;
  if (auto v = require_run(ablated)) return *v;
  const double a = score(full.result.checkpoint).samples.patch_dist;
  const double b = score(ablated.result.checkpoint).samples.patch_dist;
  const double worse = (b - a) / a;
  return {worse >= 0.2,
          "patch_dist full " + fmt(a) + " vs no_internal " + fmt(b) + " (" + fmt(100 * worse, 3) + "% worse)"};
}

// 4
Verdict attention_is_sparse() {
  auto& full = desk_run(Ablation::Full);
  if (auto v = require_run(full)) return *v;
  auto bundle = bundle_from_checkpoint(full.result.checkpoint);
  const auto k = bundle.config.down_factor;
  torch::NoGradGuard no_grad;
  bundle.g->eval();
  bundle.f->eval();
  Rng rng(kSeed, "acceptance-attention");
  double total = 0.0;
  for (std::int64_t i = 0; i < kEvalSamples; ++i) {
    auto z = sample_noise(rng, 1, bundle.config.noise_channels, bundle.image.height() / k, bundle.image.width() / k);
    auto out = bundle.f->forward(bundle.g->forward(z));
    total += out.attention.front().mean_max();
  }
  const double on_samples = total / kEvalSamples;
  const double on_exemplar = full.result.metrics.back().attention_max;
  return {on_samples >= 0.8, "mean max a_ij on syntheses " + fmt(on_samples) + ", on perturbed c_I " +
                                 fmt(on_exemplar)};
}

// 5
Verdict gradients_match_finite_differences() {
  torch::manual_seed(derive_seed(kSeed, "fd"));
  PatchEmbedder emb(PatchEmbedderOptions{3, 3, 3, 16});
  emb->to(torch::kFloat64);
  Rng rng(kSeed, "fd-inputs");
  auto c = rng.uniform({1, 3, 6, 6}, -1, 1).to(torch::kFloat64).requires_grad_(true);
  auto c_i = rng.uniform({3, 6, 6}, -1, 1).to(torch::kFloat64);
  auto probe = rng.normal({1, 3, 6, 6}).to(torch::kFloat64);
  auto pt_loss = [&] { return (patch_transfer(c, c_i, emb, 0.07, TransferMode::Soft).output * probe).sum(); };
  double pt_err = fd_relative_error(c, pt_loss, c.numel());
  for (auto& p : emb->parameters()) pt_err = std::max(pt_err, fd_relative_error(p, pt_loss, 24));

  DepNetG g(DepNetOptions{2, 2, 8, 3});
  DepNetD d(3, 8);
  g->to(torch::kFloat64);
  d->to(torch::kFloat64);
  auto real = rng.uniform({3, 3, 5, 5}, -1, 1).to(torch::kFloat64);
  auto z = rng.normal({3, 2, 5, 5}).to(torch::kFloat64);
  auto z1 = rng.normal({2, 2, 5, 5}).to(torch::kFloat64);
  auto z2 = rng.normal({2, 2, 5, 5}).to(torch::kFloat64);
  auto collapse = [&] { return external_prior_loss(g, d, real, z, z1, z2, 1.0).collapse; };
  double cp_err = 0.0;
  for (auto& p : g->parameters()) cp_err = std::max(cp_err, fd_relative_error(p, collapse, 16));

  return {pt_err <= 1e-4 && cp_err <= 1e-3,
          "patch_transfer max rel err " + fmt(pt_err, 3) + ", collapse penalty " + fmt(cp_err, 3)};
}

// 6
Verdict sifid_matches_closed_form() {
  struct Case {
    std::vector<double> mu1, s1, mu2, s2;
  };
  const std::vector<Case> cases = {
      {{0.0}, {1.0}, {1.0}, {2.0}},
      {{0.0, 1.0, -1.0}, {1.0, 0.5, 2.0}, {0.5, 1.0, 0.0}, {2.0, 0.5, 1.0}},
      {{0.5, -1.0, 2.0, 0.0, 0.3}, {0.3, 1.5, 1.0, 2.0, 0.7}, {-0.5, 0.0, 1.0, 1.0, 0.3}, {1.2, 0.5, 1.0, 0.1, 0.7}},
  };
  auto t = [](const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64); };
  const ImageTensor dummy(torch::zeros({3, 4, 4}), ValueRange::Unit);
  double worst = 0.0;
  double first = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    ScriptedFeatures fx({exact_gaussian_rows(256, t(c.mu1), t(c.s1), 2 * i + 1),
                         exact_gaussian_rows(256, t(c.mu2), t(c.s2), 2 * i + 2)});
    const double expected =
        (t(c.mu1) - t(c.mu2)).pow(2).sum().item<double>() + (t(c.s1) - t(c.s2)).pow(2).sum().item<double>();
    const double got = sifid(dummy, dummy, fx);
    if (i == 0) first = got;
    worst = std::max(worst, std::abs(got - expected));
  }
  worst = std::max(worst, std::abs(first - 2.0));
  return {worst <= 1e-6, "max |sifid - closed form| " + fmt(worst, 3) + ", (0,1) vs (1,2) gives " + fmt(first, 10)};
}

// 7
Verdict arbitrary_output_sizes() {
  auto& full = desk_run(Ablation::Full);
  if (auto v = require_run(full)) return *v;
  bool ok = true;
  std::ostringstream detail;
  Rng rng(kSeed, "acceptance-sizes");
  for (auto [h, w] : std::vector<std::pair<std::int64_t, std::int64_t>>{{64, 64}, {64, 96}, {128, 128}}) {
    auto out = generate_samples(full.result.checkpoint, 2, h, w, rng);
    for (const auto& img : out) {
      const bool dims = img.channels() == 3 && img.height() == h && img.width() == w;
      const bool finite = torch::isfinite(img.data()).all().item<bool>();
      ok = ok && dims && finite;
    }
    detail << h << "x" << w << " -> " << out.front().height() << "x" << out.front().width() << "; ";
  }
  detail << (ok ? "all finite" : "bad output");
  return {ok, detail.str()};
}

// 8
Verdict inversion_recovers_least_squares() {
  constexpr ImageDims dims{3, 2, 2};
  Rng wrng(kSeed, "inversion-weight");
  auto w = (wrng.normal({12, 4}) * 0.3).to(torch::kFloat64);
  LinearGenerator gen(w, dims);
  auto z_true = torch::tensor({0.5, -0.3, 0.8, 0.1}, torch::kFloat64);
  ImageTensor target(w.matmul(z_true).to(torch::kFloat32).reshape({3, 2, 2}), ValueRange::Signed);
  auto t64 = target.data().to(torch::kFloat64).flatten().unsqueeze(1);
  auto z_ls = std::get<0>(torch::linalg_lstsq(w, t64)).squeeze(1);
  Rng rng(kSeed, "inversion");
  auto code = invert(gen, target, 500, rng);
  const double err = (code.z - z_ls).abs().max().item<double>();
  return {err <= 1e-3, "max |z - z_ls| " + fmt(err, 3) + " after " + std::to_string(code.steps) + " steps"};
}

// 9
Verdict desk_run_end_to_end() {
  auto& full = desk_run(Ablation::Full);
  if (auto v = require_run(full)) return *v;
  const auto& metrics = full.result.metrics;
  bool bounded = !metrics.empty();
  bool monotone = !metrics.empty();
  double peak = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& m = metrics[i];
    for (double v : {m.loss_total, m.loss_adv, m.loss_ext, m.loss_int, m.loss_d, m.loss_dg}) {
      bounded = bounded && std::isfinite(v) && std::abs(v) < 1e3;
      peak = std::max(peak, std::abs(v));
    }
    if (i > 0) monotone = monotone && m.epoch == metrics[i - 1].epoch + 1;
  }
  const auto s = score(full.result.checkpoint);
  const double ratio = s.samples.patch_dist / s.noise_patch_dist;
  return {bounded && monotone && ratio <= 0.2 && full.seconds <= 30 * 60,
          std::to_string(metrics.size()) + " epochs in " + fmt(full.seconds) + " s, epochs " +
              (monotone ? "consecutive" : "out of order") + ", max |loss| " + fmt(peak) + ", patch_dist " + fmt(s.samples.patch_dist) + " vs noise " +
              fmt(s.noise_patch_dist) + " (ratio " + fmt(ratio, 3) + ")"};
}

// 10
Verdict deterministic_and_round_trip() {
  auto cfg = RunConfig::desk();
  cfg.seed = kSeed;
  cfg.epochs = 60;
  const auto resolved = to_json(cfg);
  auto raw = desk_raw();
  auto a = train(raw, apply_json(resolved, RunConfig{}));
  auto b = train(raw, apply_json(resolved, RunConfig{}));
  const bool same = same_metrics(a.metrics, b.metrics);

  auto& full = desk_run(Ablation::Full);
  if (auto v = require_run(full)) return *v;
  const auto path = fs::temp_directory_path() / "petsgan_acceptance_roundtrip.pkc";
  save_checkpoint(full.result.checkpoint, path);
  auto loaded = load_checkpoint(path);
  fs::remove(path);
  Rng r1(kSeed, "acceptance-roundtrip");
  Rng r2(kSeed, "acceptance-roundtrip");
  auto x = generate_samples(full.result.checkpoint, 3, 64, 96, r1);
  auto y = generate_samples(loaded, 3, 64, 96, r2);
  bool identical = x.size() == y.size();
  for (std::size_t i = 0; identical && i < x.size(); ++i) identical = torch::equal(x[i].data(), y[i].data());
  return {same && identical, std::string("metric streams ") + (same ? "identical" : "differ") +
                                 ", save-load-generate " + (identical ? "bit-identical" : "differs")};
}

// 11
Verdict hires_plugin() {
  auto& full = desk_run(Ablation::Full);
  if (auto v = require_run(full)) return *v;
  auto bundle = bundle_from_checkpoint(full.result.checkpoint);
  std::map<std::string, std::uint64_t> before;
  for (auto net : {"g", "dg", "f", "d"}) before[net] = bundle.parameter_hash(net);
  auto raw = desk_raw();
  HiresOptions opts;
  opts.seed = kSeed;
  auto r = hires_upscale(bundle, raw, 4, opts);
  bool unchanged = true;
  for (auto& [net, h] : before) unchanged = unchanged && bundle.parameter_hash(net) == h;
  return {r.psnr >= 24.0 && unchanged && r.seconds <= 10 * 60,
          std::to_string(bundle.image.height()) + "->" + std::to_string(4 * bundle.image.height()) + " psnr " +
              fmt(r.psnr) + " dB after " + std::to_string(r.steps) + " steps in " + fmt(r.seconds) +
              " s, hashes " + (unchanged ? "unchanged" : "changed")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, matched_patches_move_toward_exemplar},
      {2, external_prior_adds_diversity},
      {3, internal_prior_improves_patch_statistics},
      {4, attention_is_sparse},
      {5, gradients_match_finite_differences},
      {6, sifid_matches_closed_form},
      {7, arbitrary_output_sizes},
      {8, inversion_recovers_least_squares},
      {9, desk_run_end_to_end},
      {10, deterministic_and_round_trip},
      {11, hires_plugin},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << "criterion " << std::setw(2) << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
              << "  [" << fmt(seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
