#include "petsgan/trainer.hpp"

#include "petsgan/log.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "petsgan/errors.hpp"

namespace petsgan {

using nlohmann::json;

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::Full;
  if (name == "cascaded") return Ablation::Cascaded;
  if (name == "no_patch_adv") return Ablation::NoPatchAdv;
  if (name == "no_external") return Ablation::NoExternal;
  if (name == "no_internal") return Ablation::NoInternal;
  throw ArgumentError("unknown ablation '" + std::string(name) +
                      "' (expected full, cascaded, no_patch_adv, no_external, no_internal)");
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::Full: return "full";
    case Ablation::Cascaded: return "cascaded";
    case Ablation::NoPatchAdv: return "no_patch_adv";
    case Ablation::NoExternal: return "no_external";
    case Ablation::NoInternal: return "no_internal";
  }
  return "full";
}

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::paper() { return RunConfig{}; }

RunConfig RunConfig::desk() {
  RunConfig cfg;
  cfg.preset = "desk";
  cfg.max_side = 64;
  cfg.epochs = 500;
  cfg.pt_window = 3;
  cfg.s_star = 3;
  cfg.lr_g = 2e-4;
  cfg.lr_f = 2e-4;
  cfg.lr_d = 1e-4;
  cfg.lr_dg = 4e-4;
  cfg.lambda_div = 0.3;
  cfg.temperature = 0.015;
  cfg.internal_steps = 3;
  cfg.augmentations = "crop,flip,color,affine";
  cfg.checkpoint_every = 50;
  return cfg;
}

RunConfig RunConfig::from_preset(std::string_view name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ArgumentError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

void RunConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ArgumentError(std::string(what) + " must be positive");
  };
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0)) throw ArgumentError(std::string(what) + " must be non-negative");
  };
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  positive(static_cast<double>(batch_adv), "batch_adv");
  positive(static_cast<double>(batch_prior), "batch_prior");
  positive(static_cast<double>(internal_steps), "internal_steps");
  positive(lr_g, "lr_g");
  positive(lr_f, "lr_f");
  positive(lr_d, "lr_d");
  positive(lr_dg, "lr_dg");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("Adam betas in [0, 1)");
  non_negative(lambda_ext, "lambda_ext");
  non_negative(lambda_int, "lambda_int");
  non_negative(lambda_div, "lambda_div");
  non_negative(lambda_sparse, "lambda_sparse");
  non_negative(sigma_z, "sigma_z");
  non_negative(delta_sigma, "delta_sigma");
  positive(temperature, "temperature");
  PatchConfig{s, s_star, Boundary::Valid}.validate();
  if (pt_window < 1 || pt_window % 2 == 0) throw ArgumentError("pt_window must be odd and positive");
  if (down_factor < 2 || !std::has_single_bit(static_cast<std::uint64_t>(down_factor))) {
    throw ArgumentError("down_factor must be a power of two >= 2");
  }
  if (max_side < down_factor) throw ArgumentError("max_side must be at least down_factor");
  if (noise_channels < 1) throw ArgumentError("noise_channels must be positive");
  if (pe_channels < 0 || pe_channels % 2 != 0) throw ArgumentError("pe_channels must be even");
  for (auto v : {g_width, dg_width, ir_width, embed_features, d_width, d_layers}) {
    positive(static_cast<double>(v), "network widths and depths");
  }
  if (ir_blocks < 0) throw ArgumentError("ir_blocks must be non-negative");
  if (d_dilations.empty()) throw ArgumentError("d_dilations must not be empty");
  if (checkpoint_every < 1) throw ArgumentError("checkpoint_every must be positive");
  if (inversion_steps < 0) throw ArgumentError("inversion_steps must be non-negative");
  if (warmup_epochs < -1) throw ArgumentError("warmup_epochs must be -1 (auto) or non-negative");
}

std::int64_t RunConfig::effective_warmup() const { return warmup_epochs >= 0 ? warmup_epochs : epochs / 10; }

std::int64_t RunConfig::effective_prior_cache() const {
  return prior_cache > 0 ? prior_cache : batch_prior * 64;
}

namespace {

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
Field member(T RunConfig::*ptr) {
  return {[ptr](const RunConfig& c) { return json(c.*ptr); }, [ptr](RunConfig& c, const json& v) { c.*ptr = v.get<T>(); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"preset", member(&RunConfig::preset)},
      {"epochs", member(&RunConfig::epochs)},
      {"batch_adv", member(&RunConfig::batch_adv)},
      {"batch_prior", member(&RunConfig::batch_prior)},
      {"internal_steps", member(&RunConfig::internal_steps)},
      {"lr_g", member(&RunConfig::lr_g)},
      {"lr_f", member(&RunConfig::lr_f)},
      {"lr_d", member(&RunConfig::lr_d)},
      {"lr_dg", member(&RunConfig::lr_dg)},
      {"beta1", member(&RunConfig::beta1)},
      {"beta2", member(&RunConfig::beta2)},
      {"warmup_epochs", member(&RunConfig::warmup_epochs)},
      {"lambda_ext", member(&RunConfig::lambda_ext)},
      {"lambda_int", member(&RunConfig::lambda_int)},
      {"lambda_div", member(&RunConfig::lambda_div)},
      {"lambda_sparse", member(&RunConfig::lambda_sparse)},
      {"sigma_z", member(&RunConfig::sigma_z)},
      {"delta_sigma", member(&RunConfig::delta_sigma)},
      {"temperature", member(&RunConfig::temperature)},
      {"s", member(&RunConfig::s)},
      {"s_star", member(&RunConfig::s_star)},
      {"pt_window", member(&RunConfig::pt_window)},
      {"down_factor", member(&RunConfig::down_factor)},
      {"max_side", member(&RunConfig::max_side)},
      {"ablation",
       {[](const RunConfig& c) { return json(std::string(to_string(c.ablation))); },
        [](RunConfig& c, const json& v) { c.ablation = parse_ablation(v.get<std::string>()); }}},
      {"seed", member(&RunConfig::seed)},
      {"noise_channels", member(&RunConfig::noise_channels)},
      {"pe_channels", member(&RunConfig::pe_channels)},
      {"g_width", member(&RunConfig::g_width)},
      {"dg_width", member(&RunConfig::dg_width)},
      {"ir_width", member(&RunConfig::ir_width)},
      {"ir_blocks", member(&RunConfig::ir_blocks)},
      {"embed_features", member(&RunConfig::embed_features)},
      {"d_width", member(&RunConfig::d_width)},
      {"d_layers", member(&RunConfig::d_layers)},
      {"d_dilations", member(&RunConfig::d_dilations)},
      {"prior", member(&RunConfig::prior)},
      {"augmentations", member(&RunConfig::augmentations)},
      {"prior_cache", member(&RunConfig::prior_cache)},
      {"inversion_steps", member(&RunConfig::inversion_steps)},
      {"checkpoint_every", member(&RunConfig::checkpoint_every)},
  };
  return table;
}

}  // namespace

json to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [name, f] : fields()) j[name] = f.get(cfg);
  return j;
}

RunConfig apply_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw ArgumentError("config must be a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ArgumentError("unknown config key '" + key + "'");
    try {
      it->second.set(base, value);
    } catch (const json::exception& e) {
      throw ArgumentError("config key '" + key + "': " + e.what());
    }
  }
  return base;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [name, f] : fields()) keys.push_back(name);
  return keys;
}

// ---------------------------------------------------------------------------
// ModelBundle

ModelBundle ModelBundle::create(const RunConfig& config, const ImageTensor& image, const ImageTensor& low) {
  config.validate();
  if (image.height() != low.height() * config.down_factor || image.width() != low.width() * config.down_factor) {
    throw ArgumentError("exemplar and its low-resolution code disagree with down_factor");
  }
  torch::manual_seed(derive_seed(config.seed, "init"));
  ModelBundle b;
  b.config = config;
  b.image = image.to_signed();
  b.low = low.to_signed();
  b.g = DepNetG(DepNetOptions{config.noise_channels, config.pe_channels, config.g_width, image.channels()});
  b.dg = DepNetD(image.channels(), config.dg_width);
  DipNetOptions fo;
  fo.embedder = {image.channels(), config.pt_window, config.pt_window, config.embed_features};
  fo.ir = {image.channels(), config.ir_width, config.ir_blocks, config.down_factor, 16};
  fo.temperature = config.temperature;
  fo.mode = TransferMode::Soft;
  b.f = DipNet(fo, b.low.data());
  MultiScaleDOptions dopt;
  dopt.channels = image.channels();
  dopt.width = config.d_width;
  dopt.layers = config.d_layers;
  dopt.dilations = config.d_dilations;
  b.d = MultiScaleD(dopt);
  return b;
}

namespace {

void append_module(std::vector<std::pair<std::string, torch::Tensor>>& out, const std::string& prefix,
                   const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) out.emplace_back(prefix + "/" + p.key(), p.value());
  for (const auto& b : m.named_buffers()) out.emplace_back(prefix + "/" + b.key(), b.value());
}

}  // namespace

std::vector<std::pair<std::string, torch::Tensor>> ModelBundle::named_tensors() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  append_module(out, "g", *g);
  append_module(out, "dg", *dg);
  append_module(out, "f", *f);
  append_module(out, "d", *d);
  return out;
}

std::uint64_t ModelBundle::parameter_hash(std::string_view network) const {
  const torch::nn::Module* m = nullptr;
  if (network == "g") m = g.get();
  if (network == "dg") m = dg.get();
  if (network == "f") m = f.get();
  if (network == "d") m = d.get();
  if (m == nullptr) throw ArgumentError("unknown network '" + std::string(network) + "'");
  std::uint64_t h = 0;
  for (const auto& p : m->parameters()) h = h * 0x100000001b3ULL ^ tensor_hash(p);
  return h;
}

// ---------------------------------------------------------------------------
// Metrics

json EpochMetrics::to_json() const {
  return {{"epoch", epoch},
          {"loss_adv", loss_adv},
          {"loss_ext", loss_ext},
          {"loss_int", loss_int},
          {"loss_total", loss_total},
          {"loss_d", loss_d},
          {"loss_dg", loss_dg},
          {"phi_ext", phi_ext},
          {"reconstruction", reconstruction},
          {"attention_max", attention_max},
          {"warmup", warmup},
          {"steps_g", steps_g},
          {"steps_f", steps_f},
          {"steps_d", steps_d},
          {"steps_dg", steps_dg},
          {"wallclock_s", wallclock_s}};
}

bool same_metrics(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto ja = a[i].to_json();
    auto jb = b[i].to_json();
    ja.erase("wallclock_s");
    jb.erase("wallclock_s");
    if (ja != jb) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints

RunConfig Checkpoint::config() const { return apply_json(archive.meta.at("config"), RunConfig{}); }

std::int64_t Checkpoint::epoch() const { return archive.meta.at("epoch").get<std::int64_t>(); }

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) { write_archive(ckpt.archive, path); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt{read_archive(path)};
  if (!ckpt.archive.meta.contains("config") || !ckpt.archive.meta.contains("epoch")) {
    throw CorruptArchive("checkpoint " + path.string() + " lacks its run config");
  }
  return ckpt;
}

namespace {

void load_bundle_tensors(ModelBundle& b, const Archive& archive) {
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : b.named_tensors()) {
    const auto& stored = archive.blob("model/" + name);
    if (stored.sizes() != t.sizes()) throw CorruptArchive("tensor '" + name + "' has the wrong shape");
    t.copy_(stored);
  }
}

}  // namespace

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
  const auto cfg = ckpt.config();
  auto image = ImageTensor::clamped(ckpt.archive.blob("data/image"), ValueRange::Signed);
  auto low = ImageTensor::clamped(ckpt.archive.blob("data/low"), ValueRange::Signed);
  auto b = ModelBundle::create(cfg, image, low);
  load_bundle_tensors(b, ckpt.archive);
  return b;
}

// ---------------------------------------------------------------------------
// Providers

std::unique_ptr<PriorProvider> make_provider(const RunConfig& cfg, const ImageTensor& image, const ImageTensor& low) {
  const auto& p = cfg.prior;
  if (p == "synthetic") {
    return synthetic_provider(image.to_signed(), low.height(), low.width(), parse_augmentations(cfg.augmentations));
  }
  const ImageDims dims{low.channels(), low.height(), low.width()};
  if (p.starts_with("dir:")) {
    return std::make_unique<DirectoryProvider>(p.substr(4), dims, ValueRange::Signed);
  }
  if (p.starts_with("service:")) {
    auto gen = std::make_shared<ServiceGenerator>(p.substr(8));
    // The service generates at its own resolution; invert against I resized to it.
    const auto out = gen->output_dims();
    auto target = resize(image, out.height, out.width, ResizeMode::Bicubic);
    Rng rng(cfg.seed, "inversion");
    auto z_star = invert(*gen, target, cfg.inversion_steps, rng);
    auto inner = std::make_unique<InversionProvider>(gen, z_star, cfg.sigma_z, dims, ValueRange::Signed);
    return std::make_unique<CachedProvider>(std::move(inner), cfg.effective_prior_cache());
  }
  throw ArgumentError("unknown prior '" + p + "' (expected synthetic, dir:<path> or service:<socket>)");
}

// ---------------------------------------------------------------------------
// Trainer

struct Trainer::Optimizers {
  torch::optim::Adam g;
  torch::optim::Adam f;
  torch::optim::Adam dg;
  torch::optim::Adam d;

  Optimizers(ModelBundle& b)
      : g(b.g->parameters(), options(b.config.lr_g, b.config)),
        f(b.f->parameters(), options(b.config.lr_f, b.config)),
        dg(b.dg->parameters(), options(b.config.lr_dg, b.config)),
        d(b.d->parameters(), options(b.config.lr_d, b.config)) {}

  static torch::optim::AdamOptions options(double lr, const RunConfig& cfg) {
    return torch::optim::AdamOptions(lr).betas({cfg.beta1, cfg.beta2});
  }

  std::vector<std::pair<std::string, torch::optim::Adam*>> all() { return {{"g", &g}, {"f", &f}, {"dg", &dg}, {"d", &d}}; }
};

namespace {

void save_adam(torch::optim::Adam& adam, const std::string& prefix, Archive& archive, json& steps) {
  const auto& params = adam.param_groups().at(0).params();
  auto& state = adam.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
    const auto key = prefix + "/" + std::to_string(i);
    archive.blobs.emplace_back("optim/" + key + "/exp_avg", s.exp_avg());
    archive.blobs.emplace_back("optim/" + key + "/exp_avg_sq", s.exp_avg_sq());
    steps[key] = s.step();
  }
}

void load_adam(torch::optim::Adam& adam, const std::string& prefix, const Archive& archive, const json& steps) {
  const auto& params = adam.param_groups().at(0).params();
  auto& state = adam.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto key = prefix + "/" + std::to_string(i);
    if (!steps.contains(key)) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(steps.at(key).get<std::int64_t>());
    s->exp_avg(archive.blob("optim/" + key + "/exp_avg").clone());
    s->exp_avg_sq(archive.blob("optim/" + key + "/exp_avg_sq").clone());
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

void set_grads(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    p.mutable_grad() = grads[i].defined() ? grads[i].detach() : torch::Tensor();
  }
}

}  // namespace

Trainer::Trainer(const RunConfig& config, const ImageTensor& image, const ImageTensor& low, PriorProvider& provider)
    : bundle_(ModelBundle::create(config, image, low)),
      provider_(&provider),
      noise_rng_(config.seed, "noise"),
      prior_rng_(config.seed, "prior"),
      internal_rng_(config.seed, "internal") {
  const auto dims = provider.dims();
  if (dims.height != low.height() || dims.width != low.width() || dims.channels != low.channels()) {
    throw ArgumentError("prior provider emits " + to_string(dims) + " but c_I is " +
                        to_string(ImageDims{low.channels(), low.height(), low.width()}));
  }
  optim_ = std::make_shared<Optimizers>(bundle_);
}

Trainer::Trainer(const Checkpoint& ckpt, PriorProvider& provider)
    : bundle_(bundle_from_checkpoint(ckpt)),
      provider_(&provider),
      noise_rng_(ckpt.config().seed, "noise"),
      prior_rng_(ckpt.config().seed, "prior"),
      internal_rng_(ckpt.config().seed, "internal") {
  optim_ = std::make_shared<Optimizers>(bundle_);
  const auto& meta = ckpt.archive.meta;
  const auto& steps = meta.at("optimizer_steps");
  for (auto& [name, adam] : optim_->all()) load_adam(*adam, name, ckpt.archive, steps);
  noise_rng_.set_state(ckpt.archive.blob("rng/noise"));
  prior_rng_.set_state(ckpt.archive.blob("rng/prior"));
  internal_rng_.set_state(ckpt.archive.blob("rng/internal"));
  epoch_ = meta.at("epoch").get<std::int64_t>();
  const auto& c = meta.at("counters");
  steps_g_ = c.at("g").get<std::int64_t>();
  steps_f_ = c.at("f").get<std::int64_t>();
  steps_d_ = c.at("d").get<std::int64_t>();
  steps_dg_ = c.at("dg").get<std::int64_t>();
  elapsed_s_ = meta.value("elapsed_s", 0.0);
}

Checkpoint Trainer::checkpoint() const {
  Archive archive;
  archive.meta["config"] = to_json(bundle_.config);
  archive.meta["epoch"] = epoch_;
  archive.meta["counters"] = {{"g", steps_g_}, {"f", steps_f_}, {"d", steps_d_}, {"dg", steps_dg_}};
  archive.meta["elapsed_s"] = elapsed_s_;
  archive.blobs.emplace_back("data/image", bundle_.image.data());
  archive.blobs.emplace_back("data/low", bundle_.low.data());
  for (auto& [name, t] : bundle_.named_tensors()) archive.blobs.emplace_back("model/" + name, t);
  json steps = json::object();
  for (auto& [name, adam] : optim_->all()) save_adam(*adam, name, archive, steps);
  archive.meta["optimizer_steps"] = steps;
  archive.blobs.emplace_back("rng/noise", noise_rng_.state());
  archive.blobs.emplace_back("rng/prior", prior_rng_.state());
  archive.blobs.emplace_back("rng/internal", internal_rng_.state());
  // Tensors are copied into the archive so later training does not alias it.
  for (auto& [name, t] : archive.blobs) t = t.detach().clone();
  return Checkpoint{std::move(archive)};
}

torch::Tensor Trainer::prior_batch(int retries) {
  for (int attempt = 0;; ++attempt) {
    try {
      auto batch = provider_->sample_batch(bundle_.config.batch_prior, prior_rng_);
      return provider_->range() == ValueRange::Unit ? batch * 2.0 - 1.0 : batch;
    } catch (const std::exception& e) {
      if (attempt + 1 >= std::max(retries, 1)) {
        throw ProviderError(std::string("prior provider failed after ") + std::to_string(attempt + 1) +
                            " attempts: " + e.what());
      }
      log::warn(log::cat("prior provider failed (", e.what(), "), retrying"));
    }
  }
}

void Trainer::step_external(EpochMetrics& m) {
  const auto& cfg = bundle_.config;
  auto real = prior_batch(provider_retries_);
  const auto h = bundle_.low.height();
  const auto w = bundle_.low.width();
  const auto nc = cfg.noise_channels;
  auto z = sample_noise(noise_rng_, cfg.batch_prior, nc, h, w);
  const auto pairs = std::max<std::int64_t>(cfg.batch_prior / 2, 1);
  auto z1 = sample_noise(noise_rng_, pairs, nc, h, w);
  auto z2 = sample_noise(noise_rng_, pairs, nc, h, w);
  auto terms = external_prior_loss(bundle_.g, bundle_.dg, real, z, z1, z2, cfg.lambda_div, epoch_);

  auto g_params = bundle_.g->parameters();
  auto g_grads = torch::autograd::grad({terms.loss_g * cfg.lambda_ext}, g_params, {}, /*retain_graph=*/true,
                                       /*create_graph=*/false, /*allow_unused=*/true);
  optim_->dg.zero_grad();
  (terms.loss_d * cfg.lambda_ext).backward();
  optim_->dg.step();
  ++steps_dg_;
  set_grads(g_params, g_grads);
  optim_->g.step();
  ++steps_g_;

  m.loss_ext = terms.loss_g.item<double>();
  m.loss_dg = terms.loss_d.item<double>();
  m.phi_ext = terms.phi.item<double>();
}

void Trainer::step_internal(EpochMetrics& m) {
  const auto& cfg = bundle_.config;
  // delta_sigma is a fraction of the range width; training runs in the signed range.
  auto terms = internal_prior_loss(bundle_.f, bundle_.image.data(), bundle_.low.data(), cfg.delta_sigma * 2.0,
                                   cfg.lambda_sparse, internal_rng_, epoch_);
  optim_->f.zero_grad();
  (terms.loss * cfg.lambda_int).backward();
  optim_->f.step();
  ++steps_f_;
  m.loss_int = terms.loss.item<double>();
  m.reconstruction = terms.reconstruction.item<double>();
  m.attention_max = terms.attention_max;
}

void Trainer::step_adversarial(EpochMetrics& m, bool update_g) {
  const auto& cfg = bundle_.config;
  auto z = sample_noise(noise_rng_, cfg.batch_adv, cfg.noise_channels, bundle_.low.height(), bundle_.low.width());
  auto c = update_g ? bundle_.g->forward(z) : bundle_.g->forward(z).detach();
  auto fake = bundle_.f->forward(c).image;
  auto real = bundle_.image.batched().expand({cfg.batch_adv, -1, -1, -1});
  auto loss = patch_adv_loss(bundle_.d, real, fake, epoch_);

  auto f_params = bundle_.f->parameters();
  auto g_params = update_g ? bundle_.g->parameters() : std::vector<torch::Tensor>{};
  auto params = f_params;
  params.insert(params.end(), g_params.begin(), g_params.end());
  auto grads = torch::autograd::grad({loss.loss_g}, params, {}, /*retain_graph=*/true, /*create_graph=*/false,
                                     /*allow_unused=*/true);
  optim_->d.zero_grad();
  loss.loss_d.backward();
  optim_->d.step();
  ++steps_d_;

  set_grads(f_params, {grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(f_params.size())});
  optim_->f.step();
  ++steps_f_;
  if (update_g) {
    set_grads(g_params, {grads.begin() + static_cast<std::ptrdiff_t>(f_params.size()), grads.end()});
    optim_->g.step();
    ++steps_g_;
  }
  m.loss_adv = loss.loss_g.item<double>();
  m.loss_d = loss.loss_d.item<double>();
}

EpochMetrics Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = bundle_.config;
  EpochMetrics m;
  m.epoch = epoch_;

  bool run_a = cfg.ablation != Ablation::NoExternal;
  bool run_b = cfg.ablation != Ablation::NoInternal;
  bool run_c = cfg.ablation != Ablation::NoPatchAdv;
  bool update_g_adv = true;
  std::int64_t warm_start = 0;
  if (cfg.ablation == Ablation::Cascaded) {
    // Phase 1: G and D_G alone. Phase 2: G frozen, F and D train.
    const auto phase2 = cfg.epochs / 2;
    if (epoch_ < phase2) {
      run_b = false;
      run_c = false;
    } else {
      run_a = false;
      update_g_adv = false;
      warm_start = phase2;
    }
  }
  const auto warm_len = cfg.ablation == Ablation::Cascaded ? (cfg.epochs - cfg.epochs / 2) * cfg.effective_warmup() /
                                                                 std::max<std::int64_t>(cfg.epochs, 1)
                                                           : cfg.effective_warmup();
  m.warmup = epoch_ >= warm_start && epoch_ < warm_start + warm_len;

  bundle_.g->train();
  bundle_.f->train();
  if (run_a) step_external(m);
  if (run_b) {
    for (std::int64_t k = 0; k < cfg.internal_steps; ++k) step_internal(m);
  }
  if (run_c && !m.warmup) step_adversarial(m, update_g_adv);

  m.loss_total = m.loss_adv + cfg.lambda_ext * m.loss_ext + cfg.lambda_int * m.loss_int;
  m.steps_g = steps_g_;
  m.steps_f = steps_f_;
  m.steps_d = steps_d_;
  m.steps_dg = steps_dg_;
  ++epoch_;
  elapsed_s_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.wallclock_s = elapsed_s_;
  return m;
}

std::vector<EpochMetrics> Trainer::run(const TrainOptions& options) {
  return run_epochs(std::max<std::int64_t>(bundle_.config.epochs - epoch_, 0), options);
}

std::vector<EpochMetrics> Trainer::run_epochs(std::int64_t count, const TrainOptions& options) {
  provider_retries_ = options.provider_retries;
  std::vector<EpochMetrics> out;
  std::optional<std::ofstream> metrics;
  if (options.metrics_path) {
    if (options.metrics_path->has_parent_path()) std::filesystem::create_directories(options.metrics_path->parent_path());
    metrics.emplace(*options.metrics_path, std::ios::app);
    if (!*metrics) throw CheckpointError("cannot open metrics file " + options.metrics_path->string());
  }
  auto last_good = checkpoint();
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      out.push_back(run_epoch());
    } catch (const TrainingDivergence&) {
      if (options.checkpoint_dir) {
        const auto path = *options.checkpoint_dir / "last_good.pkc";
        save_checkpoint(last_good, path);
        log::error(log::cat("training diverged at epoch ", epoch_, "; last good checkpoint (epoch ", last_good.epoch(),
                            ") written to ", path.string()));
      }
      throw;
    }
    const auto& m = out.back();
    if (metrics) *metrics << m.to_json().dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(m);
    if (epoch_ % bundle_.config.checkpoint_every == 0) {
      last_good = checkpoint();
      if (options.checkpoint_dir) save_checkpoint(last_good, *options.checkpoint_dir / "latest.pkc");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainResult train(const ImageTensor& image, const ImageTensor& low, const RunConfig& cfg, PriorProvider& provider,
                  const TrainOptions& options) {
  Trainer trainer(cfg, image, low, provider);
  auto metrics = trainer.run(options);
  return {trainer.checkpoint(), std::move(metrics)};
}

TrainResult train(const ImageTensor& raw, const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  auto pre = preprocess(raw, cfg.max_side, cfg.down_factor);
  auto provider = make_provider(cfg, pre.image, pre.low);
  return train(pre.image, pre.low, cfg, *provider, options);
}

std::vector<ImageTensor> generate_samples(ModelBundle& bundle, std::int64_t n, std::int64_t out_h, std::int64_t out_w,
                                          Rng& rng) {
  if (n < 0) throw ArgumentError("sample count must be non-negative");
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("output size must be positive");
  const auto k = bundle.config.down_factor;
  const auto h = (out_h + k - 1) / k * k;
  const auto w = (out_w + k - 1) / k * k;
  if (h != out_h || w != out_w) {
    log::warn(log::cat("output size ", out_h, "x", out_w, " is not a multiple of ", k, "; using ", h, "x", w));
  }
  const auto min_low = std::max(DepNetGImpl::kMinSpatial, bundle.config.pt_window);
  if (h / k < min_low || w / k < min_low) {
    throw ArgumentError("output size too small: each side must be at least " + std::to_string(min_low * k));
  }
  torch::NoGradGuard no_grad;
  bundle.g->eval();
  bundle.f->eval();
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto z = sample_noise(rng, 1, bundle.config.noise_channels, h / k, w / k);
    auto img = bundle.f->forward(bundle.g->forward(z)).image.squeeze(0);
    out.push_back(ImageTensor::clamped(img, ValueRange::Signed).to_unit());
  }
  return out;
}

std::vector<ImageTensor> generate_samples(const Checkpoint& ckpt, std::int64_t n, std::int64_t out_h,
                                          std::int64_t out_w, Rng& rng) {
  auto bundle = bundle_from_checkpoint(ckpt);
  return generate_samples(bundle, n, out_h, out_w, rng);
}

}  // namespace petsgan
