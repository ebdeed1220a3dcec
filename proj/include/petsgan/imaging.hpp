#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace petsgan {

enum class ValueRange {
  Unit,    // [0, 1]
  Signed,  // [-1, 1]
};

std::string_view to_string(ValueRange range);

// A single image as a float32 [channels, height, width] tensor. The value
// range is part of the type: the constructor rejects non-finite entries and
// entries outside the declared range.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(torch::Tensor data, ValueRange range);

  // Clamps into `range` instead of rejecting. Non-finite entries still throw.
  static ImageTensor clamped(torch::Tensor data, ValueRange range);

  const torch::Tensor& data() const { return data_; }
  ValueRange range() const { return range_; }
  bool empty() const { return !data_.defined(); }

  std::int64_t channels() const { return data_.size(0); }
  std::int64_t height() const { return data_.size(1); }
  std::int64_t width() const { return data_.size(2); }

  ImageTensor to_unit() const;
  ImageTensor to_signed() const;
  ImageTensor to_range(ValueRange range) const;

  // [1, C, H, W] view of the data, for feeding networks.
  torch::Tensor batched() const { return data_.unsqueeze(0); }

 private:
  torch::Tensor data_;
  ValueRange range_ = ValueRange::Unit;
};

// Deterministic random stream. Two Rng objects built from the same
// (seed, stream_id) produce bit-identical sequences.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string stream_id);

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_id() const { return stream_id_; }

  torch::Tensor normal(at::IntArrayRef sizes, double mean = 0.0, double stddev = 1.0);
  torch::Tensor uniform(at::IntArrayRef sizes, double lo = 0.0, double hi = 1.0);
  double uniform_real(double lo = 0.0, double hi = 1.0);
  // Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);

  // Independent child stream; deterministic in (seed, stream_id, name).
  Rng fork(std::string_view name) const;

  at::Generator& generator() { return gen_; }

  torch::Tensor state() const;
  void set_state(const torch::Tensor& state);

 private:
  std::uint64_t seed_;
  std::string stream_id_;
  at::Generator gen_;
};

// Mixes a seed with a label into a 64-bit stream seed (splitmix64 over FNV-1a).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

ImageTensor load_image(const std::filesystem::path& path);

// 8-bit RGB PNG; values are clamped to the unit range and quantized as round(255 v).
void save_png(const ImageTensor& img, const std::filesystem::path& path);

enum class ResizeMode { Bicubic, Bilinear, Nearest };

ResizeMode parse_resize_mode(std::string_view name);

ImageTensor resize(const ImageTensor& img, std::int64_t target_h, std::int64_t target_w,
                   ResizeMode mode = ResizeMode::Bicubic);

// Differentiable resampling of a [N, C, H, W] batch. Downsampling uses an
// anti-aliased kernel for bicubic and bilinear. Same-size input is returned as is.
torch::Tensor resize_batch(const torch::Tensor& batch, std::int64_t target_h, std::int64_t target_w,
                           ResizeMode mode = ResizeMode::Bicubic);

struct Preprocessed {
  ImageTensor image;  // I
  ImageTensor low;    // c_I
};

// Resizes so the longer side is at most `max_side` (never upscales), rounds both
// sides to the nearest multiple of `down_factor`, then downsamples by `down_factor`.
Preprocessed preprocess(const ImageTensor& img, std::int64_t max_side = 256, std::int64_t down_factor = 8);

// Peak signal-to-noise ratio in dB, computed in the unit range.
double psnr(const ImageTensor& a, const ImageTensor& b);

// FNV-1a over the raw bytes of a contiguous tensor.
std::uint64_t tensor_hash(const torch::Tensor& t);

}  // namespace petsgan
