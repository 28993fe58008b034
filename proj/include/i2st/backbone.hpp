#pragma once

#include <string>
#include <utility>
#include <vector>

#include "i2st/rng.hpp"
#include "i2st/tensor.hpp"

namespace i2st {

// Small trainable per-frame feature extractor. Three 3x3 convolutions
// (stride 1, 2, 2), each followed by ReLU; no pooling at the end, so the
// output keeps a spatial grid: [T x 3 x S x S] -> [T x C x S/4 x S/4].
struct Backbone {
  int in_channels = 3;
  int channels = 16;
  int img_size = 32;

  Tensor w1, b1, w2, b2, w3, b3;

  static Backbone init(int in_channels, int channels, int img_size, Rng& rng);

  // frames: [T x in_channels x img_size x img_size], values in [0, 1].
  Tensor forward(const Tensor& frames) const;

  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

}  // namespace i2st
