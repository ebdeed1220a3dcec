#include <torch/torch.h>

#include "petsgan/cli.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  return petsgan::cli::run(argc, argv);
}
