#include "petsgan/patchdist.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <fstream>

#include "petsgan/errors.hpp"

namespace petsgan {

namespace F = torch::nn::functional;

Boundary parse_boundary(std::string_view name) {
  if (name == "valid") return Boundary::Valid;
  if (name == "circular") return Boundary::Circular;
  throw ArgumentError("unknown boundary '" + std::string(name) + "'");
}

std::string_view to_string(Boundary boundary) {
  return boundary == Boundary::Valid ? "valid" : "circular";
}

void PatchConfig::validate() const {
  if (s < 1 || s % 2 == 0) throw ArgumentError("window size s must be odd and positive");
  if (s_star < 1 || s_star % 2 == 0) throw ArgumentError("window size s_star must be odd and positive");
  if (s_star > s) throw ArgumentError("s_star must not exceed s");
}

PatchDistribution::PatchDistribution(PatchSet set) : support(std::move(set)) {
  if (!support.patches.defined() || support.count() == 0) {
    throw ArgumentError("patch distribution needs a non-empty support");
  }
}

torch::Tensor PatchDistribution::weights() const {
  return torch::full({support.count()}, 1.0 / static_cast<double>(support.count()), torch::kFloat64);
}

PatchSet extract_patches_1d(const torch::Tensor& x, std::int64_t s) {
  if (x.dim() != 1) throw ArgumentError("extract_patches_1d expects a 1-D signal");
  const auto d = x.size(0);
  if (s < 1 || s % 2 == 0) throw ArgumentError("window size must be odd and positive");
  if (s > d) throw ArgumentError("window size exceeds signal length");
  const auto half = s / 2;
  auto offsets = torch::arange(-half, half + 1, torch::kInt64);
  auto centers = torch::arange(d, torch::kInt64).unsqueeze(1);
  auto index = (centers + offsets.unsqueeze(0)).remainder(d);
  return {x.index({index}), {d}};
}

PatchSet extract_patches_2d(const torch::Tensor& chw, std::int64_t s, Boundary boundary) {
  if (chw.dim() != 3) throw ArgumentError("extract_patches_2d expects [C, H, W]");
  const auto h = chw.size(1);
  const auto w = chw.size(2);
  if (s < 1 || s % 2 == 0) throw ArgumentError("window size must be odd and positive");
  if (s > std::min(h, w)) {
    throw ArgumentError("window size " + std::to_string(s) + " exceeds image extent " + std::to_string(h) + "x" +
                        std::to_string(w));
  }
  auto batch = chw.unsqueeze(0);
  if (boundary == Boundary::Circular && s > 1) {
    const auto half = s / 2;
    batch = F::pad(batch, F::PadFuncOptions({half, half, half, half}).mode(torch::kCircular));
  }
  // [1, C*s*s, L] -> [L, C*s*s]
  auto cols = F::unfold(batch, F::UnfoldFuncOptions({s, s}));
  return {cols.squeeze(0).transpose(0, 1).contiguous(), {chw.size(0), h, w}};
}

PatchSet extract_patches_2d(const ImageTensor& img, std::int64_t s, Boundary boundary) {
  return extract_patches_2d(img.data(), s, boundary);
}

torch::Tensor nearest_neighbor_distances(const torch::Tensor& from, const torch::Tensor& to) {
  if (from.dim() != 2 || to.dim() != 2) throw ArgumentError("patch sets must be [count, dim]");
  if (from.size(1) != to.size(1)) {
    throw ArgumentError("patch dimension mismatch: " + std::to_string(from.size(1)) + " vs " +
                        std::to_string(to.size(1)));
  }
  if (from.size(0) == 0 || to.size(0) == 0) throw ArgumentError("empty patch set");
  torch::NoGradGuard no_grad;
  // Candidate search in float32 via the expanded squared distance, then the
  // winner's distance is recomputed exactly so identical patches give exactly 0.
  auto a = from.detach().to(torch::kFloat32);
  auto b = to.detach().to(torch::kFloat32);
  auto b_sq = b.pow(2).sum(1);
  constexpr std::int64_t kTile = 1024;
  std::vector<torch::Tensor> nearest;
  for (std::int64_t start = 0; start < a.size(0); start += kTile) {
    auto tile = a.narrow(0, start, std::min(kTile, a.size(0) - start));
    auto d2 = tile.pow(2).sum(1, true) + b_sq.unsqueeze(0) - 2.0 * tile.matmul(b.t());
    nearest.push_back(d2.argmin(1));
  }
  auto idx = torch::cat(nearest);
  auto diff = from.detach().to(torch::kFloat64) - to.detach().to(torch::kFloat64).index({idx});
  return diff.pow(2).sum(1).sqrt();
}

namespace {

torch::Tensor quantiles(const torch::Tensor& sorted, std::int64_t k) {
  const auto n = sorted.size(0);
  if (n == k) return sorted;
  // Midpoint quantiles (i + 0.5) / k, linearly interpolated.
  auto pos = (torch::arange(k, torch::kFloat64) + 0.5) / static_cast<double>(k) * static_cast<double>(n) - 0.5;
  pos = pos.clamp(0.0, static_cast<double>(n - 1));
  auto lo = pos.floor().to(torch::kInt64);
  auto hi = (lo + 1).clamp_max(n - 1);
  auto frac = (pos - lo.to(torch::kFloat64)).unsqueeze(1);
  return sorted.index({lo}) * (1.0 - frac) + sorted.index({hi}) * frac;
}

double sliced_wasserstein(const torch::Tensor& p, const torch::Tensor& q, const PatchDistanceOptions& options) {
  Rng rng(options.seed, "sliced-wasserstein");
  auto dirs = torch::randn({p.size(1), options.projections}, rng.generator(), torch::kFloat64);
  dirs = dirs / dirs.norm(2, 0, true);
  auto pp = std::get<0>(p.to(torch::kFloat64).matmul(dirs).sort(0));
  auto qq = std::get<0>(q.to(torch::kFloat64).matmul(dirs).sort(0));
  const auto k = std::max(pp.size(0), qq.size(0));
  auto diff = quantiles(pp, k) - quantiles(qq, k);
  return diff.pow(2).mean().sqrt().item<double>();
}

}  // namespace

double patch_distance(const PatchSet& p, const PatchSet& q, const PatchDistanceOptions& options) {
  return patch_distance(PatchDistribution(p), PatchDistribution(q), options);
}

double patch_distance(const PatchDistribution& p, const PatchDistribution& q, const PatchDistanceOptions& options) {
  const auto& a = p.support.patches;
  const auto& b = q.support.patches;
  if (a.size(1) != b.size(1)) {
    throw ArgumentError("patch dimension mismatch: " + std::to_string(a.size(1)) + " vs " + std::to_string(b.size(1)));
  }
  if (options.metric == PatchMetric::SlicedWasserstein) return sliced_wasserstein(a, b, options);
  const double forward = nearest_neighbor_distances(a, b).mean().item<double>();
  const double backward = nearest_neighbor_distances(b, a).mean().item<double>();
  return 0.5 * forward + 0.5 * backward;
}

double image_patch_distance(const ImageTensor& a, const ImageTensor& b, std::int64_t s, Boundary boundary,
                            const PatchDistanceOptions& options) {
  if (a.range() != b.range()) return image_patch_distance(a, b.to_range(a.range()), s, boundary, options);
  return patch_distance(extract_patches_2d(a, s, boundary), extract_patches_2d(b, s, boundary), options);
}

void export_patches(const PatchSet& set, std::int64_t s, Boundary boundary, const std::filesystem::path& prefix) {
  static_assert(std::endian::native == std::endian::little, "patch export assumes a little-endian host");
  auto data = set.patches.detach().to(torch::kFloat32).contiguous();
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  auto bin_path = prefix;
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  bin.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(data.numel() * sizeof(float)));
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  nlohmann::json header = {
      {"dtype", "float32-le"},        {"count", set.count()},
      {"patch_dim", set.dim()},       {"s", s},
      {"boundary", to_string(boundary)}, {"source_dims", set.source_dims},
      {"data", bin_path.filename().string()},
  };
  auto json_path = prefix;
  json_path += ".json";
  std::ofstream(json_path) << header.dump(2) << "\n";
}

}  // namespace petsgan
