#pragma once

#include <string>
#include <utility>
#include <vector>

#include "i2st/attention.hpp"
#include "i2st/backbone.hpp"
#include "i2st/config.hpp"
#include "i2st/dataset.hpp"
#include "i2st/instance_perception.hpp"
#include "i2st/matching.hpp"

namespace i2st {

struct ModelConfig {
  int img_size = 32;
  int in_channels = 3;
  int channels = 16;
  int heads = 4;
  int ffn_hidden = 32;
  int t_max = 16;
  bool use_instance = true;
  bool use_spatial = true;
  bool use_temporal = true;
  bool cross_attention = false;
  MatchConfig match;

  static ModelConfig derive(const TrainConfig& train,
                            const DatasetManifest& manifest);
  void validate() const;
};

// The full network: backbone -> instance perception -> spatial/temporal
// attention fusion -> global fusion prototype. All parameters are always
// materialized so checkpoints stay layout-compatible across toggles;
// disabled streams are simply never evaluated.
struct Model {
  ModelConfig cfg;
  Backbone backbone;
  InstancePerception ipm;
  BranchParams spatial;
  BranchParams temporal;
  GlobalFusionParams fusion;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named_params();
  void set_trainable(bool on);

  struct VideoForward {
    Prototype proto;
    Tensor mask_pred;  // defined iff run_decoder
  };
  // frames: [T x 3 x img x img].
  VideoForward forward_video(const Tensor& frames, bool run_decoder) const;
};

struct EpisodeOutcome {
  Tensor loss;  // scalar graph root: mean CE + lambda * mean mask MSE
  double ce = 0.0;
  double mask = 0.0;
  double total = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<double>> scores;  // per query, length = way
  std::vector<int> predictions;
};

// Runs the whole pipeline on one episode. frame_mode controls sparse frame
// picking (random-in-segment vs segment center); the decoder and mask term
// run only when with_mask_loss is set (and the instance stream is enabled).
EpisodeOutcome episode_forward(const Model& model, const Episode& episode,
                               int frames, double lambda,
                               SampleMode frame_mode, Rng& rng,
                               bool with_mask_loss);

}  // namespace i2st
