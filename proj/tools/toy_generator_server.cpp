// Serves a seeded random linear generator over the generator socket protocol,
// for exercising the service prior and `petsgan invert` without a real model.
#include <torch/torch.h>

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <thread>

#include "petsgan/external_prior.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy linear generator service"};
  std::string socket;
  std::int64_t latent = 64, channels = 3, height = 8, width = 8;
  std::uint64_t seed = 0;
  app.add_option("--socket", socket, "Unix socket path")->required();
  app.add_option("--latent-dim", latent);
  app.add_option("--channels", channels);
  app.add_option("--height", height);
  app.add_option("--width", width);
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  petsgan::Rng rng(seed, "toy-generator");
  const auto out = channels * height * width;
  auto weight = rng.normal({out, latent}) / std::sqrt(static_cast<double>(latent));
  auto gen = std::make_shared<petsgan::LinearGenerator>(weight, petsgan::ImageDims{channels, height, width});
  petsgan::GeneratorServer server(gen, socket);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on " << socket << std::endl;
  while (g_stop == 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}
