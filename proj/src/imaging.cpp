#include "petsgan/imaging.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace F = torch::nn::functional;

std::string_view to_string(ValueRange range) {
  return range == ValueRange::Unit ? "unit" : "signed";
}

namespace {

std::pair<double, double> bounds(ValueRange range) {
  return range == ValueRange::Unit ? std::pair{0.0, 1.0} : std::pair{-1.0, 1.0};
}

void check_layout(const torch::Tensor& data) {
  if (!data.defined() || data.dim() != 3) {
    throw ArgumentError("ImageTensor expects a [C, H, W] tensor");
  }
  if (data.size(0) != 1 && data.size(0) != 3) {
    throw ArgumentError("ImageTensor expects 1 or 3 channels, got " + std::to_string(data.size(0)));
  }
  if (data.size(1) < 1 || data.size(2) < 1) {
    throw ArgumentError("ImageTensor has an empty spatial extent");
  }
  if (!torch::isfinite(data).all().item<bool>()) {
    throw ArgumentError("ImageTensor contains non-finite values");
  }
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor data, ValueRange range) : range_(range) {
  check_layout(data);
  auto [lo, hi] = bounds(range);
  constexpr double kSlack = 1e-6;
  if (data.min().item<double>() < lo - kSlack || data.max().item<double>() > hi + kSlack) {
    throw ArgumentError("ImageTensor values fall outside the " + std::string(to_string(range)) + " range");
  }
  data_ = data.detach().to(torch::kFloat32).contiguous();
}

ImageTensor ImageTensor::clamped(torch::Tensor data, ValueRange range) {
  check_layout(data);
  auto [lo, hi] = bounds(range);
  return ImageTensor(data.detach().clamp(lo, hi), range);
}

ImageTensor ImageTensor::to_unit() const {
  if (range_ == ValueRange::Unit) return *this;
  return ImageTensor::clamped((data_ + 1.0) * 0.5, ValueRange::Unit);
}

ImageTensor ImageTensor::to_signed() const {
  if (range_ == ValueRange::Signed) return *this;
  return ImageTensor::clamped(data_ * 2.0 - 1.0, ValueRange::Signed);
}

ImageTensor ImageTensor::to_range(ValueRange range) const {
  return range == ValueRange::Unit ? to_unit() : to_signed();
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::string stream_id)
    : seed_(seed),
      stream_id_(std::move(stream_id)),
      gen_(at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, stream_id_))) {}

torch::Tensor Rng::normal(at::IntArrayRef sizes, double mean, double stddev) {
  return torch::randn(sizes, gen_, torch::kFloat32) * stddev + mean;
}

torch::Tensor Rng::uniform(at::IntArrayRef sizes, double lo, double hi) {
  return torch::rand(sizes, gen_, torch::kFloat32) * (hi - lo) + lo;
}

double Rng::uniform_real(double lo, double hi) {
  auto u = torch::rand({1}, gen_, torch::kFloat64).item<double>();
  return lo + (hi - lo) * u;
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ArgumentError("Rng::integer: empty range");
  return torch::randint(lo, hi + 1, {1}, gen_, torch::kInt64).item<std::int64_t>();
}

bool Rng::bernoulli(double p) { return uniform_real() < p; }

Rng Rng::fork(std::string_view name) const {
  return Rng(seed_, stream_id_ + "/" + std::string(name));
}

torch::Tensor Rng::state() const { return gen_.get_state(); }

void Rng::set_state(const torch::Tensor& state) { gen_.set_state(state); }

ImageTensor load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw DecodeError(path.string(), "no such file");
  }
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw DecodeError(path.string(), "not a decodable PNG or JPEG, or the file is truncated");
  }
  if (!bgr.isContinuous()) bgr = bgr.clone();
  auto hwc = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).clone();
  // OpenCV stores BGR.
  auto chw = hwc.permute({2, 0, 1}).flip(0).to(torch::kFloat32).div(255.0).contiguous();
  return ImageTensor(chw, ValueRange::Unit);
}

void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  auto unit = img.to_unit().data();
  if (unit.size(0) == 1) unit = unit.expand({3, unit.size(1), unit.size(2)});
  auto quantized =
      unit.clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).flip(0).permute({1, 2, 0}).contiguous();
  cv::Mat bgr(static_cast<int>(quantized.size(0)), static_cast<int>(quantized.size(1)), CV_8UC3,
              quantized.data_ptr<std::uint8_t>());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw std::runtime_error("cannot write PNG '" + path.string() + "'");
  }
}

ResizeMode parse_resize_mode(std::string_view name) {
  if (name == "bicubic") return ResizeMode::Bicubic;
  if (name == "bilinear") return ResizeMode::Bilinear;
  if (name == "nearest") return ResizeMode::Nearest;
  throw ArgumentError("unknown resize mode '" + std::string(name) + "'");
}

torch::Tensor resize_batch(const torch::Tensor& batch, std::int64_t target_h, std::int64_t target_w,
                           ResizeMode mode) {
  if (target_h < 1 || target_w < 1) {
    throw ArgumentError("resize target must be positive, got " + std::to_string(target_h) + "x" +
                        std::to_string(target_w));
  }
  if (batch.dim() != 4) throw ArgumentError("resize_batch expects [N, C, H, W]");
  if (batch.size(2) == target_h && batch.size(3) == target_w) return batch;
  const bool shrinking = target_h < batch.size(2) || target_w < batch.size(3);
  auto opts = F::InterpolateFuncOptions().size(std::vector<std::int64_t>{target_h, target_w});
  switch (mode) {
    case ResizeMode::Bicubic:
      opts.mode(torch::kBicubic).align_corners(false).antialias(shrinking);
      break;
    case ResizeMode::Bilinear:
      opts.mode(torch::kBilinear).align_corners(false).antialias(shrinking);
      break;
    case ResizeMode::Nearest:
      opts.mode(torch::kNearest);
      break;
  }
  return F::interpolate(batch, opts);
}

ImageTensor resize(const ImageTensor& img, std::int64_t target_h, std::int64_t target_w, ResizeMode mode) {
  if (target_h < 1 || target_w < 1) {
    throw ArgumentError("resize target must be positive, got " + std::to_string(target_h) + "x" +
                        std::to_string(target_w));
  }
  if (img.height() == target_h && img.width() == target_w) return img;
  auto out = resize_batch(img.batched(), target_h, target_w, mode).squeeze(0);
  // Bicubic overshoots at edges.
  return ImageTensor::clamped(out, img.range());
}

Preprocessed preprocess(const ImageTensor& img, std::int64_t max_side, std::int64_t down_factor) {
  if (down_factor < 2) throw ArgumentError("down_factor must be at least 2");
  if (max_side < down_factor) throw ArgumentError("max_side must be at least down_factor");
  if (img.height() < down_factor || img.width() < down_factor) {
    throw SizeError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                    " is smaller than the downsampling factor " + std::to_string(down_factor));
  }
  const auto longer = std::max(img.height(), img.width());
  const double scale = longer > max_side ? static_cast<double>(max_side) / static_cast<double>(longer) : 1.0;
  auto round_to_factor = [&](std::int64_t side) {
    const double scaled = static_cast<double>(side) * scale;
    auto k = static_cast<std::int64_t>(std::llround(scaled / static_cast<double>(down_factor)));
    k = std::max<std::int64_t>(k, 1);
    // Rounding up must not break the max_side bound.
    while (k * down_factor > max_side && k > 1) --k;
    return k * down_factor;
  };
  const auto h = round_to_factor(img.height());
  const auto w = round_to_factor(img.width());
  auto image = resize(img, h, w, ResizeMode::Bicubic);
  auto low = resize(image, h / down_factor, w / down_factor, ResizeMode::Bicubic);
  return {std::move(image), std::move(low)};
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
  const auto x = a.to_unit().data();
  const auto y = b.to_unit().data();
  if (x.sizes() != y.sizes()) throw ArgumentError("psnr: image shapes differ");
  const double mse = (x.to(torch::kFloat64) - y.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::uint64_t tensor_hash(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
  const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace petsgan
