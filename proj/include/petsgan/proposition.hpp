#pragma once

#include <nlohmann/json.hpp>

#include <vector>

#include "petsgan/dipnet.hpp"
#include "petsgan/imaging.hpp"
#include "petsgan/patchdist.hpp"

namespace petsgan {

// Checks that matching low-resolution patches to the exemplar before
// restoration pulls the restored patch distribution toward I's.
struct Prop1Options {
  double psnr_floor = 25.0;  // IR(c_I) must reconstruct I at least this well
  TransferMode mode = TransferMode::Hard;
  PatchDistanceOptions distance;
};

struct Prop1Sample {
  double dist_direct = 0.0;   // rho(P^s_I, P^s_{IR(c)})
  double dist_matched = 0.0;  // rho(P^s_I, P^s_{IR(PT(c))})
  double dist_low = 0.0;      // rho(P^{s*}_{c_I}, P^{s*}_c)
};

struct Prop1Report {
  std::vector<Prop1Sample> samples;
  double dist_direct = 0.0;  // means over samples
  double dist_matched = 0.0;
  double reconstruction_psnr = 0.0;
  bool holds = false;  // dist_matched < dist_direct

  nlohmann::json to_json() const;
};

// `f` supplies both IR and the patch transfer. Samples must share c_I's dims.
// Throws PreconditionError when PSNR(IR(c_I), I) is below the floor.
Prop1Report verify_proposition1(const ImageTensor& image, const ImageTensor& exemplar_low, DipNet& f,
                                const std::vector<ImageTensor>& samples, const PatchConfig& cfg,
                                const Prop1Options& options = {});

// n images of c_I's dims with i.i.d. uniform pixels in the signed range.
std::vector<ImageTensor> noise_samples(const ImageTensor& like, std::int64_t n, Rng& rng);

}  // namespace petsgan
