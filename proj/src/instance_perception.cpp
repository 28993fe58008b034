#include "i2st/instance_perception.hpp"

#include <cmath>

namespace i2st {

namespace {

Tensor he_conv(int cout, int cin, int k, Rng& rng) {
  const double scale = std::sqrt(2.0 / (cin * k * k));
  return Tensor::randn({cout, cin, k, k}, rng, scale);
}

}  // namespace

InstancePerception InstancePerception::init(int channels, Rng& rng) {
  InstancePerception m;
  m.channels = channels;
  m.ew1 = he_conv(channels, channels, 3, rng);
  m.eb1 = Tensor::zeros({channels});
  m.ew2 = he_conv(channels, channels, 3, rng);
  m.eb2 = Tensor::zeros({channels});
  m.dw1 = he_conv(channels, channels, 3, rng);
  m.db1 = Tensor::zeros({channels});
  m.dw2 = he_conv(channels, channels, 3, rng);
  m.db2 = Tensor::zeros({channels});
  m.dw3 = he_conv(1, channels, 3, rng);
  m.db3 = Tensor::zeros({1});
  return m;
}

Tensor InstancePerception::encode(const Tensor& f_img) const {
  if (f_img.rank() != 4 || f_img.extent(1) != channels)
    throw DimensionError("instance encoder expects [T x " +
                         std::to_string(channels) + " x h x w], got " +
                         shape_str(f_img.shape()));
  Tensor x = relu(bias_channel(conv2d(f_img, ew1, 1, 1), eb1));
  return relu(bias_channel(conv2d(x, ew2, 1, 1), eb2));
}

Tensor InstancePerception::decode(const Tensor& f_ins) const {
  Tensor x = relu(bias_channel(conv2d(f_ins, dw1, 1, 1), db1));
  x = upsample2x(x);
  x = relu(bias_channel(conv2d(x, dw2, 1, 1), db2));
  x = upsample2x(x);
  return sigmoid(bias_channel(conv2d(x, dw3, 1, 1), db3));
}

void InstancePerception::register_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".enc1.w", ew1);
  out.emplace_back(prefix + ".enc1.b", eb1);
  out.emplace_back(prefix + ".enc2.w", ew2);
  out.emplace_back(prefix + ".enc2.b", eb2);
  out.emplace_back(prefix + ".dec1.w", dw1);
  out.emplace_back(prefix + ".dec1.b", db1);
  out.emplace_back(prefix + ".dec2.w", dw2);
  out.emplace_back(prefix + ".dec2.b", db2);
  out.emplace_back(prefix + ".dec3.w", dw3);
  out.emplace_back(prefix + ".dec3.b", db3);
}

Tensor mask_loss(const Tensor& target, const Tensor& pred) {
  if (target.shape() != pred.shape())
    throw DimensionError("mask_loss: target " + shape_str(target.shape()) +
                         " vs prediction " + shape_str(pred.shape()));
  Tensor d = sub(pred, target);
  return mean_all(mul(d, d));
}

}  // namespace i2st
