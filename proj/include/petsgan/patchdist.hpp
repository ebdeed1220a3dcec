#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "petsgan/imaging.hpp"

namespace petsgan {

enum class Boundary { Valid, Circular };

Boundary parse_boundary(std::string_view name);
std::string_view to_string(Boundary boundary);

struct PatchConfig {
  std::int64_t s = 7;       // window size at full resolution
  std::int64_t s_star = 7;  // window size at low resolution, s_star <= s
  Boundary boundary = Boundary::Valid;

  void validate() const;
};

// Sliding-window patches, one row per patch.
struct PatchSet {
  torch::Tensor patches;  // [count, patch_dim]
  std::vector<std::int64_t> source_dims;

  std::int64_t count() const { return patches.size(0); }
  std::int64_t dim() const { return patches.size(1); }
};

// Empirical distribution over a patch set. Weights are uniform (1 / count).
struct PatchDistribution {
  PatchSet support;

  explicit PatchDistribution(PatchSet set);
  torch::Tensor weights() const;
};

// 1-D circular patches. Patch j (0-based) is x[(j - s/2) mod d] ... x[(j + s/2) mod d].
PatchSet extract_patches_1d(const torch::Tensor& x, std::int64_t s);

// Valid windows come out in row-major order of their top-left corner; circular
// windows are centered on every pixel with toroidal wrap.
PatchSet extract_patches_2d(const torch::Tensor& chw, std::int64_t s, Boundary boundary);
PatchSet extract_patches_2d(const ImageTensor& img, std::int64_t s, Boundary boundary);

enum class PatchMetric {
  MeanNearestNeighbor,  // symmetric mean nearest-neighbour L2
  SlicedWasserstein,
};

struct PatchDistanceOptions {
  PatchMetric metric = PatchMetric::MeanNearestNeighbor;
  std::int64_t projections = 128;  // sliced Wasserstein only
  std::uint64_t seed = 0;          // sliced Wasserstein only
};

// For every row of `from`, the L2 distance to its nearest row of `to`.
torch::Tensor nearest_neighbor_distances(const torch::Tensor& from, const torch::Tensor& to);

double patch_distance(const PatchDistribution& p, const PatchDistribution& q,
                      const PatchDistanceOptions& options = {});
double patch_distance(const PatchSet& p, const PatchSet& q, const PatchDistanceOptions& options = {});

// Patch distance between two images at window size s (both in the same range).
double image_patch_distance(const ImageTensor& a, const ImageTensor& b, std::int64_t s,
                            Boundary boundary = Boundary::Valid, const PatchDistanceOptions& options = {});

// Writes <prefix>.bin (little-endian float32, row-major [count, patch_dim]) and
// <prefix>.json with the shape, window size and boundary.
void export_patches(const PatchSet& set, std::int64_t s, Boundary boundary, const std::filesystem::path& prefix);

}  // namespace petsgan
