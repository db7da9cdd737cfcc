#include "axiseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "axiseg/pgm.hpp"

namespace axiseg {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (count < 1) throw std::invalid_argument("SynthConfig: count must be >= 1");
  if (size < 16) throw std::invalid_argument("SynthConfig: size must be >= 16");
  if (lesion_radius_min <= 0.0 || lesion_radius_min > lesion_radius_max) {
    throw std::invalid_argument("SynthConfig: empty lesion radius range");
  }
  if (lesion_radius_max >= size / 4.0) {
    throw std::invalid_argument("SynthConfig: lesion_radius_max must be < size/4");
  }
  if (lesion_count_max < 1) throw std::invalid_argument("SynthConfig: empty lesion count range");
  if (noise_sigma < 0.0) throw std::invalid_argument("SynthConfig: noise_sigma must be >= 0");
  if (occluder_count < 0) throw std::invalid_argument("SynthConfig: occluder_count must be >= 0");
}

namespace {

constexpr double kBackgroundLevel = 0.12;

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

}  // namespace

std::vector<Sample> generate(const SynthConfig& config) {
  config.validate();
  const int n = config.size;
  Rng rng(config.seed);
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(config.count));

  for (int s = 0; s < config.count; ++s) {
    std::vector<double> img(static_cast<size_t>(n) * n, kBackgroundLevel);
    std::vector<double> mask(static_cast<size_t>(n) * n, 0.0);

    // low-contrast diagonal bands (occlusion interference)
    for (int o = 0; o < config.occluder_count; ++o) {
      double theta = rng.uniform(0.15 * M_PI, 0.35 * M_PI);
      if (rng.uniform() < 0.5) theta = -theta;
      double nx = std::cos(theta), ny = std::sin(theta);
      double offset = rng.uniform(0.0, static_cast<double>(n));
      double halfwidth = rng.uniform(1.5, n / 10.0);
      double amp = rng.uniform(0.04, 0.10);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double dist = std::abs(nx * x + ny * y - offset);
          if (dist < halfwidth) img[static_cast<size_t>(y) * n + x] += amp;
        }
    }

    if (config.noise_sigma > 0.0) {
      for (double& v : img) v += rng.normal(0.0, config.noise_sigma);
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);

    // bright ellipsoidal lesions; the mask is their exact support. Rasterizing
    // the ellipse scaled by (1 - sqrt(2)/2 / b_minor) keeps every pixel's unit
    // square inside the true ellipse, so the pixel count is bounded by the
    // ellipse area pi*a*b <= pi*r_max^2.
    const double margin = config.lesion_radius_max + 1.0;
    const int lesions = rng.uniform_int(1, config.lesion_count_max);
    for (int li = 0; li < lesions; ++li) {
      double a = rng.uniform(config.lesion_radius_min, config.lesion_radius_max);
      double b = rng.uniform(config.lesion_radius_min, a);
      double phi = rng.uniform(0.0, M_PI);
      double cx = rng.uniform(margin, n - margin);
      double cy = rng.uniform(margin, n - margin);
      double peak = rng.uniform(0.75, 0.95);
      double shrink = 1.0 - (std::sqrt(2.0) / 2.0) / b;
      if (shrink <= 0.0) continue;  // sub-pixel lesion, nothing to rasterize
      double sa = shrink * a, sb = shrink * b;
      double cphi = std::cos(phi), sphi = std::sin(phi);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double dx = x - cx, dy = y - cy;
          double u = dx * cphi + dy * sphi;
          double v = -dx * sphi + dy * cphi;
          double rho2 = (u / sa) * (u / sa) + (v / sb) * (v / sb);
          if (rho2 <= 1.0) {
            size_t p = static_cast<size_t>(y) * n + x;
            mask[p] = 1.0;
            img[p] = std::max(img[p], peak * (1.0 - 0.4 * rho2));
          }
        }
    }

    Sample sample;
    sample.image = Tensor::from_values(Shape{1, n, n}, std::move(img));
    sample.mask = Tensor::from_values(Shape{1, n, n}, std::move(mask));
    sample.id = sample_id(s);
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<Sample> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("load_dataset: no such directory " + dir);
  std::map<std::string, bool> images, masks;  // id -> seen
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    std::string stem = entry.path().stem().string();
    constexpr std::string_view kMaskSuffix = "_mask";
    if (stem.size() > kMaskSuffix.size() &&
        stem.compare(stem.size() - kMaskSuffix.size(), kMaskSuffix.size(), kMaskSuffix) == 0) {
      masks[stem.substr(0, stem.size() - kMaskSuffix.size())] = true;
    } else {
      images[stem] = true;
    }
  }
  for (const auto& [id, _] : images) {
    if (!masks.count(id)) throw std::runtime_error("load_dataset: image " + id + ".pgm has no mask");
  }
  for (const auto& [id, _] : masks) {
    if (!images.count(id)) {
      throw std::runtime_error("load_dataset: mask " + id + "_mask.pgm has no image");
    }
  }
  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (const auto& [id, _] : images) {  // std::map iteration: sorted, deterministic
    Sample s;
    s.id = id;
    s.image = read_pgm((fs::path(dir) / (id + ".pgm")).string());
    std::string mask_path = (fs::path(dir) / (id + "_mask.pgm")).string();
    s.mask = read_pgm(mask_path);
    if (!(s.image.shape() == s.mask.shape())) {
      throw std::runtime_error("load_dataset: " + id + " image/mask shapes differ");
    }
    for (double v : s.mask.values()) {
      if (v != 0.0 && v != 1.0) {
        throw std::runtime_error("load_dataset: non-binary mask byte in " + mask_path);
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split(std::vector<Sample> samples,
                                                          double train_fraction,
                                                          std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("split: train_fraction must be in [0, 1]");
  }
  Rng rng(seed);
  for (size_t i = samples.size(); i > 1; --i) {  // Fisher-Yates
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(samples[i - 1], samples[j]);
  }
  size_t n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(samples.size())));
  n_train = std::min(n_train, samples.size());
  std::vector<Sample> train(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Sample> val(samples.begin() + static_cast<std::ptrdiff_t>(n_train), samples.end());
  return {std::move(train), std::move(val)};
}

}  // namespace axiseg
