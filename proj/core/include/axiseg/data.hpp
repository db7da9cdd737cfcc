#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "axiseg/tensor.hpp"

namespace axiseg {

/// Parameters of the synthetic small-lesion generator. Images are dark
/// speckled backgrounds with low-contrast diagonal occluder bands and bright
/// ellipsoidal lesions; masks are the exact lesion support.
struct SynthConfig {
  int count = 8;
  int size = 32;  // square H = W
  double lesion_radius_min = 2.5;
  double lesion_radius_max = 5.0;
  int lesion_count_max = 2;  // lesions per image drawn from [1, lesion_count_max]
  double noise_sigma = 0.03;
  int occluder_count = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Tensor image;  // [1 x H x W], grayscale in [0, 1]
  Tensor mask;   // [1 x H x W], values exactly 0 or 1
  std::string id;
};

/// Deterministic under config.seed. The mask pixel count of every sample is
/// bounded by pi * r_max^2 * lesion_count_max by construction.
std::vector<Sample> generate(const SynthConfig& config);

/// Loads `<id>.pgm` + `<id>_mask.pgm` pairs from a flat directory. Orphan
/// files and masks with bytes other than 0/255 are errors naming the file.
std::vector<Sample> load_dataset(const std::string& dir);

/// Deterministic seeded shuffle, then prefix cut at round(train_fraction * n).
std::pair<std::vector<Sample>, std::vector<Sample>> split(std::vector<Sample> samples,
                                                          double train_fraction,
                                                          std::uint64_t seed);

}  // namespace axiseg
