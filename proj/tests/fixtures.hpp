// Synthetic training fixtures shared by the unit, CLI and acceptance suites.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "onet/image.hpp"
#include "onet/optim.hpp"

namespace fixtures {

// One soft-edged bright blob on a dark noisy background plus its binary
// mask; deterministic per (seed, index).
inline std::pair<onet::Image, onet::Image> blob_image(std::uint64_t seed,
                                                      int index,
                                                      std::int64_t size = 64) {
  std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double cx = size * (0.3 + 0.4 * unit(rng));
  const double cy = size * (0.3 + 0.4 * unit(rng));
  const double r = size * (0.12 + 0.12 * unit(rng));

  onet::Image img;
  img.width = size;
  img.height = size;
  img.depth = 8;
  img.pixels.resize(static_cast<std::size_t>(size * size));
  onet::Image mask = img;
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx,
                                  static_cast<double>(y) - cy);
      const double fg = 1.0 / (1.0 + std::exp((d - r) * 1.5));
      const double noise = 0.1 * unit(rng);
      const double v = std::min(1.0, 0.15 + 0.7 * fg + noise);
      img.at(y, x) = static_cast<std::uint16_t>(std::llround(v * 255.0));
      mask.at(y, x) = d <= r ? 1 : 0;
    }
  }
  return {img, mask};
}

template <typename T>
std::vector<onet::TrainSample<T>> blob_dataset(std::uint64_t seed, int count,
                                               std::int64_t size = 64) {
  std::vector<onet::TrainSample<T>> ds;
  for (int i = 0; i < count; ++i) {
    auto [img, mask] = blob_image(seed, i, size);
    onet::TrainSample<T> s;
    s.id = "blob" + std::to_string(i);
    s.abn_type = i % 2 ? "mass" : "calc";
    s.input = onet::to_tensor<T>(img);
    s.target = onet::mask_to_tensor<T>(mask);
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace fixtures
