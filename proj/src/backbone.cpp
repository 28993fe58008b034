#include "i2st/backbone.hpp"

#include <cmath>

namespace i2st {

namespace {

Tensor he_conv(int cout, int cin, int k, Rng& rng) {
  const double scale = std::sqrt(2.0 / (cin * k * k));
  return Tensor::randn({cout, cin, k, k}, rng, scale);
}

}  // namespace

Backbone Backbone::init(int in_channels, int channels, int img_size,
                        Rng& rng) {
  Backbone b;
  b.in_channels = in_channels;
  b.channels = channels;
  b.img_size = img_size;
  b.w1 = he_conv(channels, in_channels, 3, rng);
  b.b1 = Tensor::zeros({channels});
  b.w2 = he_conv(channels, channels, 3, rng);
  b.b2 = Tensor::zeros({channels});
  b.w3 = he_conv(channels, channels, 3, rng);
  b.b3 = Tensor::zeros({channels});
  return b;
}

Tensor Backbone::forward(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.extent(1) != in_channels ||
      frames.extent(2) != img_size || frames.extent(3) != img_size)
    throw DimensionError("backbone expects [T x " +
                         std::to_string(in_channels) + " x " +
                         std::to_string(img_size) + " x " +
                         std::to_string(img_size) + "], got " +
                         shape_str(frames.shape()));
  Tensor x = relu(bias_channel(conv2d(frames, w1, 1, 1), b1));
  x = relu(bias_channel(conv2d(x, w2, 2, 1), b2));
  x = relu(bias_channel(conv2d(x, w3, 2, 1), b3));
  return x;
}

void Backbone::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".conv1.w", w1);
  out.emplace_back(prefix + ".conv1.b", b1);
  out.emplace_back(prefix + ".conv2.w", w2);
  out.emplace_back(prefix + ".conv2.b", b2);
  out.emplace_back(prefix + ".conv3.w", w3);
  out.emplace_back(prefix + ".conv3.b", b3);
}

}  // namespace i2st
