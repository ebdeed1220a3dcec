#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <set>

#include "petsgan/errors.hpp"
#include "petsgan/external_prior.hpp"

namespace fs = std::filesystem;
using namespace petsgan;

namespace {

constexpr ImageDims kDims{3, 2, 2};

torch::Tensor toy_weight(std::uint64_t seed, std::int64_t out, std::int64_t latent, double scale) {
  Rng rng(seed, "weight");
  return (rng.normal({out, latent}) * scale).to(torch::kFloat64);
}

ImageTensor as_image(const torch::Tensor& flat, const ImageDims& dims) {
  return ImageTensor(flat.to(torch::kFloat32).reshape({dims.channels, dims.height, dims.width}), ValueRange::Signed);
}

}  // namespace

TEST(Invert, RecoversLeastSquaresLatent) {
  auto w = toy_weight(1, 12, 4, 0.3);
  LinearGenerator gen(w, kDims);
  auto z0 = torch::tensor({0.5, -0.3, 0.8, 0.1}, torch::kFloat64);
  auto target = as_image(w.matmul(z0), kDims);
  auto t64 = target.data().to(torch::kFloat64).flatten();
  auto z_ls = std::get<0>(torch::linalg_lstsq(w, t64.unsqueeze(1))).squeeze(1);
  Rng rng(0, "invert");
  auto code = invert(gen, target, 500, rng);
  EXPECT_TRUE(code.converged);
  EXPECT_LT((code.z - z_ls).abs().max().item<double>(), 1e-3);
}

TEST(Invert, ZeroStepsReturnsInitialLatent) {
  LinearGenerator gen(toy_weight(2, 12, 4, 0.3), kDims);
  auto target = as_image(torch::zeros({12}), kDims);
  Rng a(9, "invert");
  Rng b(9, "invert");
  auto code = invert(gen, target, 0, a);
  EXPECT_TRUE(torch::equal(code.z, b.normal({4}).to(torch::kFloat64)));
  EXPECT_EQ(code.steps, 0);
}

TEST(Invert, PlateausAtProjectionResidual) {
  auto w = toy_weight(3, 12, 4, 0.3);
  LinearGenerator gen(w, kDims);
  InversionOptions opts;
  opts.lambda_pix = 0.0;
  opts.lambda_feat = 1.0;
  Rng trng(4, "target");
  auto raw = (trng.normal({12}) * 0.3).to(torch::kFloat64);
  auto proj = w.matmul(torch::linalg_pinv(w));
  auto orth = raw - proj.matmul(raw);
  for (const auto& t : {orth, raw}) {
    auto target = as_image(t.clamp(-1, 1), kDims);
    auto t64 = target.data().to(torch::kFloat64).flatten();
    const double residual = (t64 - proj.matmul(t64)).norm().item<double>();
    Rng rng(5, "invert");
    auto code = invert(gen, target, 500, rng, opts);
    EXPECT_NEAR(code.final_loss, residual, 1e-4 * std::max(1.0, residual));
  }
}

TEST(Invert, RejectsMismatchedDims) {
  LinearGenerator gen(toy_weight(2, 12, 4, 0.3), kDims);
  Rng rng(0, "x");
  EXPECT_THROW(invert(gen, ImageTensor(torch::zeros({3, 4, 4}), ValueRange::Signed), 5, rng), ArgumentError);
}

TEST(Invert, Deterministic) {
  LinearGenerator gen(toy_weight(6, 12, 4, 0.3), kDims);
  auto target = as_image(torch::full({12}, 0.2), kDims);
  Rng a(1, "invert");
  Rng b(1, "invert");
  EXPECT_TRUE(torch::equal(invert(gen, target, 50, a).z, invert(gen, target, 50, b).z));
}

TEST(PerturbAndSample, ZeroSigmaCopies) {
  auto w = toy_weight(7, 12, 4, 0.3);
  LinearGenerator gen(w, kDims);
  LatentCode z{torch::tensor({0.1, 0.2, -0.4, 0.3}, torch::kFloat64)};
  Rng rng(0, "p");
  auto out = perturb_and_sample(gen, z, 0.0, 5, kDims, rng);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& img : out) EXPECT_TRUE(torch::equal(img.data(), out.front().data()));
  EXPECT_TRUE(torch::allclose(out.front().data().flatten().to(torch::kFloat64), w.matmul(z.z), 0, 1e-6));
}

TEST(PerturbAndSample, MonteCarloMeanMatchesLinearity) {
  auto w = toy_weight(8, 12, 4, 0.05);
  LinearGenerator gen(w, kDims);
  LatentCode z{torch::tensor({0.5, -1.0, 0.2, 0.7}, torch::kFloat64)};
  Rng rng(0, "mc");
  constexpr std::int64_t n = 10000;
  auto out = perturb_and_sample(gen, z, 1.0, n, kDims, rng);
  std::vector<torch::Tensor> flat;
  for (const auto& img : out) flat.push_back(img.data().flatten().to(torch::kFloat64));
  auto stacked = torch::stack(flat);
  auto mean = stacked.mean(0);
  auto se = stacked.std(0) / std::sqrt(static_cast<double>(n));
  auto expected = w.matmul(z.z);
  EXPECT_TRUE(((mean - expected).abs() <= 3.0 * se).all().item<bool>())
      << "max |dev|/se = " << ((mean - expected).abs() / se).max().item<double>();
}

TEST(PerturbAndSample, SingleSampleHasRequestedDims) {
  LinearGenerator gen(toy_weight(9, 3 * 8 * 8, 4, 0.05), ImageDims{3, 8, 8});
  LatentCode z{torch::zeros({4}, torch::kFloat64)};
  Rng rng(0, "p");
  auto out = perturb_and_sample(gen, z, 0.5, 1, ImageDims{3, 4, 4}, rng, ValueRange::Unit);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].height(), 4);
  EXPECT_EQ(out[0].width(), 4);
  EXPECT_EQ(out[0].range(), ValueRange::Unit);
  EXPECT_THROW(perturb_and_sample(gen, z, -1.0, 1, kDims, rng), ArgumentError);
  EXPECT_THROW(perturb_and_sample(gen, z, 0.5, 0, kDims, rng), ArgumentError);
}

class SyntheticProviderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(21, "exemplar");
    exemplar = ImageTensor(rng.uniform({3, 32, 32}, -1, 1), ValueRange::Signed);
    low = resize(exemplar, 4, 4);
  }
  ImageTensor exemplar;
  ImageTensor low;
};

TEST_F(SyntheticProviderTest, IdentityReturnsExemplarLow) {
  auto p = synthetic_provider(exemplar, 4, 4, {Augmentation::Identity});
  Rng rng(0, "s");
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(torch::equal(p->sample(rng).data(), low.data()));
}

TEST_F(SyntheticProviderTest, FlipOnlyHasTwoElementSupport) {
  auto p = synthetic_provider(exemplar, 4, 4, parse_augmentations("flip"));
  auto mirror = low.data().flip(2);
  Rng rng(0, "s");
  int plain = 0;
  int flipped = 0;
  for (int i = 0; i < 50; ++i) {
    auto s = p->sample(rng).data();
    if (torch::equal(s, low.data())) ++plain;
    else if (torch::equal(s, mirror)) ++flipped;
    else ADD_FAILURE() << "sample " << i << " is neither c_I nor its mirror";
  }
  EXPECT_GT(plain, 0);
  EXPECT_GT(flipped, 0);
}

TEST_F(SyntheticProviderTest, CropFlipYieldsManyDistinctSamples) {
  auto p = synthetic_provider(exemplar, 4, 4, parse_augmentations("crop,flip"));
  Rng rng(0, "s");
  std::set<std::uint64_t> hashes;
  for (int i = 0; i < 1000; ++i) {
    auto s = p->sample(rng);
    EXPECT_EQ(s.height(), 4);
    EXPECT_EQ(s.range(), ValueRange::Signed);
    hashes.insert(tensor_hash(s.data()));
  }
  EXPECT_GE(hashes.size(), 50u);
}

TEST_F(SyntheticProviderTest, FullChainKeepsDimsAndRange) {
  auto p = synthetic_provider(exemplar, 4, 4, parse_augmentations("crop,flip,color,affine"));
  Rng rng(0, "s");
  auto batch = p->sample_batch(16, rng);
  EXPECT_EQ(batch.sizes(), (std::vector<std::int64_t>{16, 3, 4, 4}));
  EXPECT_LE(batch.abs().max().item<float>(), 1.0f);
}

TEST_F(SyntheticProviderTest, EmptySpecRejected) {
  EXPECT_THROW(synthetic_provider(exemplar, 4, 4, parse_augmentations("")), ArgumentError);
  EXPECT_THROW(parse_augmentations("crop,zoom"), ArgumentError);
}

TEST(CachedProvider, ServesFromFixedPool) {
  Rng erng(1, "e");
  ImageTensor exemplar(erng.uniform({3, 16, 16}, -1, 1), ValueRange::Signed);
  CachedProvider cached(synthetic_provider(exemplar, 2, 2, parse_augmentations("crop,flip")), 4);
  Rng rng(0, "c");
  std::set<std::uint64_t> hashes;
  for (int i = 0; i < 100; ++i) hashes.insert(tensor_hash(cached.sample(rng).data()));
  EXPECT_LE(hashes.size(), 4u);
}

TEST(GeneratorService, SocketRoundTripMatchesInProcess) {
  auto w = toy_weight(10, 12, 4, 0.3);
  auto local = std::make_shared<LinearGenerator>(w, kDims);
  auto socket = fs::temp_directory_path() / ("petsgan_gen_" + std::to_string(::getpid()) + ".sock");
  GeneratorServer server(local, socket);
  ServiceGenerator remote(socket);
  EXPECT_EQ(remote.latent_dim(), 4);
  EXPECT_EQ(remote.output_dims(), kDims);
  auto z = torch::tensor({0.1, -0.2, 0.3, 0.4}, torch::kFloat64);
  auto a = remote.generate(z);
  auto b = local->generate(z).to(torch::kFloat32);
  EXPECT_TRUE(torch::allclose(a.to(torch::kFloat32).reshape(b.sizes()), b, 0, 1e-6));

  // The remote handle is not differentiable, so invert falls back to finite differences.
  auto target = as_image(w.matmul(torch::tensor({0.4, 0.1, -0.5, 0.2}, torch::kFloat64)), kDims);
  Rng rng(3, "invert");
  auto code = invert(remote, target, 300, rng);
  auto z_ls = std::get<0>(torch::linalg_lstsq(w, target.data().to(torch::kFloat64).flatten().unsqueeze(1))).squeeze(1);
  EXPECT_LT((code.z - z_ls).abs().max().item<double>(), 1e-2);
  server.stop();
}

TEST(GeneratorService, MissingSocketThrows) {
  EXPECT_THROW(ServiceGenerator(fs::temp_directory_path() / "petsgan_no_such.sock"), std::runtime_error);
}
