#pragma once

#include <cstdint>
#include <random>

#include "dreammatcher/tensors.hpp"

namespace dm::testkit {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return uniform() < p; }

  TensorGrid grid(std::size_t h, std::size_t w, std::size_t c, double scale = 1.0) {
    TensorGrid g(h, w, c);
    for (auto& v : g.data()) v = scale * normal();
    return g;
  }

  // Values exactly representable as f32.
  TensorGrid float_grid(std::size_t h, std::size_t w, std::size_t c) {
    TensorGrid g(h, w, c);
    for (auto& v : g.data()) v = static_cast<double>(static_cast<float>(normal()));
    return g;
  }

  MaskGrid binary_mask(std::size_t h, std::size_t w, double p) {
    MaskGrid m(h, w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) m.set(y, x, coin(p) ? 1.0 : 0.0);
    return m;
  }

  // Integer flow whose targets stay inside the grid.
  FlowField integer_flow(std::size_t h, std::size_t w) {
    FlowField f(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        f.dx(y, x) = static_cast<double>(index(0, w - 1)) - static_cast<double>(x);
        f.dy(y, x) = static_cast<double>(index(0, h - 1)) - static_cast<double>(y);
      }
    }
    return f;
  }

  FlowField real_flow(std::size_t h, std::size_t w, double scale) {
    FlowField f(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        f.dx(y, x) = uniform(-scale, scale);
        f.dy(y, x) = uniform(-scale, scale);
      }
    }
    return f;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace dm::testkit
