#include "petsgan/external_prior.hpp"

#include "petsgan/log.hpp"
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace F = torch::nn::functional;

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

std::string to_string(const ImageDims& dims) {
  return std::to_string(dims.channels) + "x" + std::to_string(dims.height) + "x" + std::to_string(dims.width);
}

std::string_view to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::PretrainedGenerator: return "pretrained_generator";
    case ProviderKind::SyntheticAugmentation: return "synthetic_augmentation";
    case ProviderKind::ImageDirectory: return "image_directory";
    case ProviderKind::Cached: return "cached";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Generators

LinearGenerator::LinearGenerator(torch::Tensor weight, torch::Tensor bias, ImageDims dims)
    : weight_(std::move(weight)), bias_(std::move(bias)), dims_(dims) {
  if (weight_.dim() != 2) throw ArgumentError("LinearGenerator weight must be [out, latent]");
  if (weight_.size(0) != dims.channels * dims.height * dims.width) {
    throw ArgumentError("LinearGenerator weight rows do not match output dims " + to_string(dims));
  }
  if (bias_.numel() != weight_.size(0)) throw ArgumentError("LinearGenerator bias has the wrong size");
}

LinearGenerator::LinearGenerator(torch::Tensor weight, ImageDims dims)
    : LinearGenerator(weight, torch::zeros({weight.size(0)}, weight.options()), dims) {}

torch::Tensor LinearGenerator::generate(const torch::Tensor& z) {
  if (z.dim() != 1 || z.size(0) != latent_dim()) throw ArgumentError("latent has the wrong dimension");
  return (weight_.matmul(z.to(weight_.dtype())) + bias_).view({dims_.channels, dims_.height, dims_.width});
}

namespace {

void write_all(int fd, const void* data, std::size_t n) {
  const auto* p = static_cast<const char*>(data);
  while (n > 0) {
    auto written = ::send(fd, p, n, MSG_NOSIGNAL);
    if (written <= 0) throw std::runtime_error("generator socket: write failed");
    p += written;
    n -= static_cast<std::size_t>(written);
  }
}

// Returns false on orderly EOF before the first byte.
bool read_all(int fd, void* data, std::size_t n) {
  auto* p = static_cast<char*>(data);
  std::size_t got = 0;
  while (got < n) {
    auto r = ::recv(fd, p + got, n - got, 0);
    if (r == 0 && got == 0) return false;
    if (r <= 0) throw std::runtime_error("generator socket: connection closed mid-message");
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::uint32_t read_u32(int fd) {
  std::uint32_t v = 0;
  if (!read_all(fd, &v, sizeof v)) throw std::runtime_error("generator socket: connection closed");
  return v;
}

sockaddr_un make_address(const std::filesystem::path& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const auto s = path.string();
  if (s.size() >= sizeof(addr.sun_path)) throw ArgumentError("socket path too long: " + s);
  std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
  return addr;
}

}  // namespace

ServiceGenerator::ServiceGenerator(const std::filesystem::path& socket_path) {
  fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("cannot create socket");
  auto addr = make_address(socket_path);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    throw std::runtime_error("cannot connect to generator service at " + socket_path.string());
  }
  const auto len = read_u32(fd_);
  std::string text(len, '\0');
  read_all(fd_, text.data(), len);
  auto hello = nlohmann::json::parse(text);
  latent_dim_ = hello.at("latent_dim").get<std::int64_t>();
  dims_ = {hello.at("channels").get<std::int64_t>(), hello.at("height").get<std::int64_t>(),
           hello.at("width").get<std::int64_t>()};
}

ServiceGenerator::~ServiceGenerator() {
  if (fd_ >= 0) ::close(fd_);
}

torch::Tensor ServiceGenerator::generate(const torch::Tensor& z) {
  if (z.dim() != 1 || z.size(0) != latent_dim_) throw ArgumentError("latent has the wrong dimension");
  auto latent = z.detach().to(torch::kFloat32).contiguous();
  std::lock_guard lock(mutex_);
  const auto dim = static_cast<std::uint32_t>(latent_dim_);
  write_all(fd_, &dim, sizeof dim);
  write_all(fd_, latent.data_ptr<float>(), sizeof(float) * dim);
  const auto c = read_u32(fd_);
  const auto h = read_u32(fd_);
  const auto w = read_u32(fd_);
  auto image = torch::empty({c, h, w}, torch::kFloat32);
  read_all(fd_, image.data_ptr<float>(), sizeof(float) * c * h * w);
  return image;
}

GeneratorServer::GeneratorServer(std::shared_ptr<GeneratorHandle> handle, std::filesystem::path socket_path)
    : handle_(std::move(handle)), path_(std::move(socket_path)) {
  std::filesystem::remove(path_);
  listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("cannot create socket");
  auto addr = make_address(path_);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 8) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("cannot listen on " + path_.string());
  }
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

GeneratorServer::~GeneratorServer() { stop(); }

void GeneratorServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mutex_);
    for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
  std::filesystem::remove(path_);
}

void GeneratorServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    std::lock_guard lock(workers_mutex_);
    connections_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void GeneratorServer::serve_connection(int fd) {
  try {
    const auto dims = handle_->output_dims();
    const nlohmann::json hello = {{"latent_dim", handle_->latent_dim()},
                                  {"channels", dims.channels},
                                  {"height", dims.height},
                                  {"width", dims.width}};
    const auto text = hello.dump();
    const auto len = static_cast<std::uint32_t>(text.size());
    write_all(fd, &len, sizeof len);
    write_all(fd, text.data(), text.size());
    while (running_) {
      std::uint32_t dim = 0;
      if (!read_all(fd, &dim, sizeof dim)) break;
      auto z = torch::empty({static_cast<std::int64_t>(dim)}, torch::kFloat32);
      read_all(fd, z.data_ptr<float>(), sizeof(float) * dim);
      torch::Tensor image;
      {
        std::lock_guard lock(handle_mutex_);
        torch::NoGradGuard no_grad;
        image = handle_->generate(z).to(torch::kFloat32).contiguous();
      }
      const std::uint32_t header[3] = {static_cast<std::uint32_t>(image.size(0)),
                                       static_cast<std::uint32_t>(image.size(1)),
                                       static_cast<std::uint32_t>(image.size(2))};
      write_all(fd, header, sizeof header);
      write_all(fd, image.data_ptr<float>(), sizeof(float) * image.numel());
    }
  } catch (const std::exception& e) {
    log::warn(log::cat("generator service connection ended: ", e.what()));
  }
  std::lock_guard lock(workers_mutex_);
  std::erase(connections_, fd);
  ::close(fd);
}

// ---------------------------------------------------------------------------
// Inversion

torch::Tensor inversion_loss(const torch::Tensor& generated, const torch::Tensor& target,
                             const InversionOptions& options) {
  auto loss = options.lambda_pix * (generated - target).abs().sum();
  if (options.lambda_feat != 0.0) {
    auto fg = options.features ? options.features(generated) : generated;
    auto ft = options.features ? options.features(target) : target;
    // Smoothed norm keeps the gradient finite at an exact fit.
    loss = loss + options.lambda_feat * ((fg - ft).pow(2).sum() + 1e-24).sqrt();
  }
  return loss;
}

namespace {

torch::Tensor finite_difference_gradient(GeneratorHandle& gen, const torch::Tensor& z, const torch::Tensor& target,
                                         const InversionOptions& options) {
  torch::NoGradGuard no_grad;
  auto grad = torch::zeros_like(z);
  for (std::int64_t i = 0; i < z.size(0); ++i) {
    auto plus = z.clone();
    auto minus = z.clone();
    plus[i] += options.fd_epsilon;
    minus[i] -= options.fd_epsilon;
    const double lp = inversion_loss(gen.generate(plus).to(target.dtype()), target, options).item<double>();
    const double lm = inversion_loss(gen.generate(minus).to(target.dtype()), target, options).item<double>();
    grad[i] = (lp - lm) / (2.0 * options.fd_epsilon);
  }
  return grad;
}

}  // namespace

LatentCode invert(GeneratorHandle& gen, const ImageTensor& low_target, std::int64_t steps, Rng& rng,
                  const InversionOptions& options) {
  const ImageDims want{low_target.channels(), low_target.height(), low_target.width()};
  if (gen.output_dims() != want) {
    throw ArgumentError("generator output " + to_string(gen.output_dims()) + " does not match target " +
                        to_string(want));
  }
  if (steps < 0) throw ArgumentError("invert: steps must be non-negative");
  const auto target = low_target.to_signed().data().to(torch::kFloat64);
  auto z = (rng.normal({gen.latent_dim()}) * options.init_std).to(torch::kFloat64);

  auto evaluate = [&](const torch::Tensor& latent) {
    torch::NoGradGuard no_grad;
    return inversion_loss(gen.generate(latent).to(torch::kFloat64), target, options).item<double>();
  };

  LatentCode result;
  result.z = z.clone();
  result.final_loss = evaluate(z);
  result.steps = steps;
  if (steps == 0) return result;

  const double initial_loss = result.final_loss;
  auto param = z.clone().requires_grad_(true);
  torch::optim::Adam adam({param}, torch::optim::AdamOptions(options.lr));
  for (std::int64_t step = 0; step < steps; ++step) {
    const double lr = 0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                         static_cast<double>(steps)));
    static_cast<torch::optim::AdamOptions&>(adam.param_groups()[0].options()).lr(lr);
    adam.zero_grad();
    if (gen.differentiable()) {
      auto loss = inversion_loss(gen.generate(param).to(torch::kFloat64), target, options);
      loss.backward();
    } else {
      param.mutable_grad() = finite_difference_gradient(gen, param.detach(), target, options);
    }
    adam.step();
    const double loss = evaluate(param.detach());
    if (loss < result.final_loss) {
      result.final_loss = loss;
      result.z = param.detach().clone();
    }
  }
  if (!(result.final_loss < initial_loss)) {
    result.converged = false;
    log::warn(log::cat("invert: loss never decreased below its initial value ", initial_loss, " in ", steps, " steps"));
  }
  return result;
}

std::vector<ImageTensor> perturb_and_sample(GeneratorHandle& gen, const LatentCode& z_star, double sigma,
                                            std::int64_t n, const ImageDims& dims, Rng& rng, ValueRange range) {
  if (n < 1) throw ArgumentError("perturb_and_sample: n must be at least 1");
  if (sigma < 0.0) throw ArgumentError("perturb_and_sample: sigma must be non-negative");
  torch::NoGradGuard no_grad;
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto z = z_star.z.to(torch::kFloat64);
    if (sigma > 0.0) z = z + rng.normal({z.size(0)}).to(torch::kFloat64) * sigma;
    torch::Tensor image;
    try {
      image = gen.generate(z).to(torch::kFloat32);
    } catch (const std::exception& e) {
      throw ProviderError("generator failed on sample " + std::to_string(i) + ": " + e.what());
    }
    auto low = resize_batch(image.unsqueeze(0), dims.height, dims.width, ResizeMode::Bicubic).squeeze(0);
    out.push_back(ImageTensor::clamped(low, ValueRange::Signed).to_range(range));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Providers

torch::Tensor PriorProvider::sample_batch(std::int64_t n, Rng& rng) {
  const auto want = dims();
  std::vector<torch::Tensor> items;
  items.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto img = sample(rng);
    const ImageDims got{img.channels(), img.height(), img.width()};
    if (got != want || img.range() != range()) {
      throw ProviderError(std::string(to_string(kind())) + " provider emitted " + to_string(got) + " " +
                          std::string(petsgan::to_string(img.range())) + ", expected " + to_string(want));
    }
    items.push_back(img.data());
  }
  return torch::stack(items);
}

Augmentation parse_augmentation(std::string_view name) {
  if (name == "identity") return Augmentation::Identity;
  if (name == "crop") return Augmentation::Crop;
  if (name == "flip") return Augmentation::Flip;
  if (name == "color" || name == "color_jitter") return Augmentation::ColorJitter;
  if (name == "affine") return Augmentation::Affine;
  throw ArgumentError("unknown augmentation '" + std::string(name) + "'");
}

std::set<Augmentation> parse_augmentations(std::string_view comma_separated) {
  std::set<Augmentation> out;
  std::size_t start = 0;
  while (start <= comma_separated.size()) {
    auto end = comma_separated.find(',', start);
    if (end == std::string_view::npos) end = comma_separated.size();
    auto item = comma_separated.substr(start, end - start);
    if (!item.empty()) out.insert(parse_augmentation(item));
    start = end + 1;
  }
  return out;
}

SyntheticProvider::SyntheticProvider(ImageTensor exemplar, std::int64_t height, std::int64_t width,
                                     std::set<Augmentation> spec)
    : exemplar_(std::move(exemplar)), dims_{exemplar_.channels(), height, width}, spec_(std::move(spec)) {
  if (spec_.empty()) throw ArgumentError("synthetic provider needs at least one augmentation");
  low_ = resize(exemplar_, height, width, ResizeMode::Bicubic);
}

ImageTensor SyntheticProvider::sample(Rng& rng) {
  torch::NoGradGuard no_grad;
  const bool crop = spec_.contains(Augmentation::Crop);
  const bool affine = spec_.contains(Augmentation::Affine);
  torch::Tensor low;
  if (!crop && !affine) {
    low = low_.data();
  } else {
    auto full = exemplar_.data();
    const auto h = full.size(1);
    const auto w = full.size(2);
    if (crop) {
      // Random resized crop: 50-100% of the area, aspect ratio in [3/4, 4/3].
      const double area = rng.uniform_real(0.5, 1.0) * static_cast<double>(h * w);
      const double aspect = std::exp(rng.uniform_real(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
      auto ch = std::clamp<std::int64_t>(std::llround(std::sqrt(area / aspect)), 1, h);
      auto cw = std::clamp<std::int64_t>(std::llround(std::sqrt(area * aspect)), 1, w);
      const auto y = rng.integer(0, h - ch);
      const auto x = rng.integer(0, w - cw);
      full = full.slice(1, y, y + ch).slice(2, x, x + cw);
    }
    auto batch = full.unsqueeze(0);
    if (affine) {
      const double angle = rng.uniform_real(-10.0, 10.0) * std::numbers::pi / 180.0;
      const double scale = rng.uniform_real(0.9, 1.1);
      const double tx = rng.uniform_real(-0.05, 0.05) * 2.0;
      const double ty = rng.uniform_real(-0.05, 0.05) * 2.0;
      auto theta = torch::tensor({{std::cos(angle) / scale, -std::sin(angle) / scale, tx},
                                  {std::sin(angle) / scale, std::cos(angle) / scale, ty}},
                                 torch::kFloat32)
                       .unsqueeze(0);
      auto grid = F::affine_grid(theta, {1, batch.size(1), batch.size(2), batch.size(3)}, false);
      batch = F::grid_sample(batch, grid,
                             F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kReflection)
                                 .align_corners(false));
    }
    low = resize_batch(batch, dims_.height, dims_.width, ResizeMode::Bicubic).squeeze(0);
  }
  if (spec_.contains(Augmentation::Flip) && rng.bernoulli(0.5)) low = low.flip(2);
  if (spec_.contains(Augmentation::ColorJitter)) {
    auto unit = exemplar_.range() == ValueRange::Unit ? low : (low + 1.0) * 0.5;
    const double brightness = rng.uniform_real(-0.1, 0.1);
    const double contrast = rng.uniform_real(0.9, 1.1);
    const double saturation = rng.uniform_real(0.9, 1.1);
    auto gray = unit.mean(0, true);
    unit = gray + (unit - gray) * saturation;
    auto mean = unit.mean();
    unit = (unit - mean) * contrast + mean + brightness;
    low = exemplar_.range() == ValueRange::Unit ? unit : unit * 2.0 - 1.0;
  }
  return ImageTensor::clamped(low, exemplar_.range());
}

std::unique_ptr<PriorProvider> synthetic_provider(const ImageTensor& exemplar, std::int64_t height,
                                                  std::int64_t width, std::set<Augmentation> spec) {
  return std::make_unique<SyntheticProvider>(exemplar, height, width, std::move(spec));
}

InversionProvider::InversionProvider(std::shared_ptr<GeneratorHandle> gen, LatentCode z_star, double sigma,
                                     ImageDims dims, ValueRange range)
    : gen_(std::move(gen)), z_star_(std::move(z_star)), sigma_(sigma), dims_(dims), range_(range) {}

ImageTensor InversionProvider::sample(Rng& rng) {
  return perturb_and_sample(*gen_, z_star_, sigma_, 1, dims_, rng, range_).front();
}

DirectoryProvider::DirectoryProvider(const std::filesystem::path& dir, ImageDims dims, ValueRange range)
    : dims_(dims), range_(range) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ArgumentError("no PNG/JPEG prior images in " + dir.string());
  for (const auto& f : files) {
    images_.push_back(resize(load_image(f), dims.height, dims.width, ResizeMode::Bicubic).to_range(range));
  }
}

ImageTensor DirectoryProvider::sample(Rng& rng) {
  return images_[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(images_.size()) - 1))];
}

CachedProvider::CachedProvider(std::unique_ptr<PriorProvider> inner, std::int64_t capacity)
    : inner_(std::move(inner)), capacity_(capacity) {
  if (capacity_ < 1) throw ArgumentError("cache capacity must be positive");
}

ImageTensor CachedProvider::sample(Rng& rng) {
  if (cache_.empty()) {
    cache_.reserve(static_cast<std::size_t>(capacity_));
    for (std::int64_t i = 0; i < capacity_; ++i) cache_.push_back(inner_->sample(rng));
  }
  return cache_[static_cast<std::size_t>(rng.integer(0, capacity_ - 1))];
}

}  // namespace petsgan
