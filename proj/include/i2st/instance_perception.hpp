#pragma once

#include <string>
#include <utility>
#include <vector>

#include "i2st/rng.hpp"
#include "i2st/tensor.hpp"

namespace i2st {

// Encoder-decoder that turns image features into instance embeddings and,
// during training, reconstructs the foreground mask from them. The decoder
// only feeds the mask loss, so inference can skip it entirely.
struct InstancePerception {
  int channels = 16;

  // Encoder: two 3x3 convolutions (C -> C -> C), ReLU after each; the
  // embedding keeps the feature volume's shape.
  Tensor ew1, eb1, ew2, eb2;
  // Decoder: conv+ReLU, 2x upsample, conv+ReLU, 2x upsample, conv to one
  // channel, sigmoid. 8 -> 16 -> 32 for the default feature grid.
  Tensor dw1, db1, dw2, db2, dw3, db3;

  static InstancePerception init(int channels, Rng& rng);

  // [T x C x h x w] -> [T x C x h x w]
  Tensor encode(const Tensor& f_img) const;
  // [T x C x h x w] -> [T x 1 x 4h x 4w], values strictly in (0, 1)
  Tensor decode(const Tensor& f_ins) const;

  void register_params(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out);
};

// Mean squared error over all pixels and frames; shapes must agree.
Tensor mask_loss(const Tensor& target, const Tensor& pred);

}  // namespace i2st
