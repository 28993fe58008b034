#include "i2st/model.hpp"

#include <algorithm>
#include <cmath>

namespace i2st {

ModelConfig ModelConfig::derive(const TrainConfig& train,
                                const DatasetManifest& manifest) {
  ModelConfig m;
  m.img_size = manifest.spec.crop_size;
  m.in_channels = 3;
  m.channels = train.channels;
  m.heads = train.heads;
  m.ffn_hidden = 2 * train.channels;
  m.t_max = manifest.spec.t_raw;
  m.use_instance = train.use_instance;
  m.use_spatial = train.use_spatial;
  m.use_temporal = train.use_temporal;
  m.cross_attention = train.cross_attention;
  m.match.w_global = train.w_global;
  m.match.w_local = train.w_local;
  m.validate();
  return m;
}

void ModelConfig::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0)
    throw ConfigError("channels must be a positive multiple of heads");
  if (img_size % 4 != 0)
    throw ConfigError("img_size must be divisible by 4 (two stride-2 stages)");
  if (!use_spatial && !use_temporal)
    throw ConfigError("at least one attention branch must stay enabled");
  if (cross_attention && !use_instance)
    throw ConfigError("cross_attention needs the instance stream");
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  match.validate();
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(splitmix64(seed ^ 0x6d6f64656cull));  // "model"
  Model m;
  m.cfg = cfg;
  m.backbone = Backbone::init(cfg.in_channels, cfg.channels, cfg.img_size, rng);
  m.ipm = InstancePerception::init(cfg.channels, rng);
  m.spatial = BranchParams::init(cfg.channels, cfg.heads, cfg.ffn_hidden, rng);
  m.temporal = BranchParams::init(cfg.channels, cfg.heads, cfg.ffn_hidden, rng);
  m.fusion = GlobalFusionParams::init(cfg.channels, cfg.heads, cfg.t_max, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  backbone.register_params("backbone", out);
  ipm.register_params("ipm", out);
  spatial.register_params("sam.spatial", out);
  temporal.register_params("sam.temporal", out);
  fusion.register_params("fusion", out);
  return out;
}

void Model::set_trainable(bool on) {
  for (auto& [name, p] : named_params()) p.set_requires_grad(on);
}

Model::VideoForward Model::forward_video(const Tensor& frames,
                                         bool run_decoder) const {
  VideoForward out;
  Tensor f_img = backbone.forward(frames);
  Tensor f_ins;
  const bool has_ins = cfg.use_instance;
  if (has_ins) f_ins = ipm.encode(f_img);
  if (run_decoder) {
    if (!has_ins)
      throw ContractError("mask decoding needs the instance stream enabled");
    out.mask_pred = ipm.decode(f_ins);
  }
  Tensor f_s, f_t;
  if (cfg.use_spatial)
    f_s = spatial_attention(f_img, has_ins ? &f_ins : nullptr, spatial,
                            cfg.cross_attention);
  if (cfg.use_temporal)
    f_t = temporal_attention(f_img, has_ins ? &f_ins : nullptr, temporal,
                             cfg.cross_attention);
  out.proto = global_fusion(cfg.use_spatial ? &f_s : nullptr,
                            cfg.use_temporal ? &f_t : nullptr, fusion);
  return out;
}

EpisodeOutcome episode_forward(const Model& model, const Episode& episode,
                               int frames, double lambda,
                               SampleMode frame_mode, Rng& rng,
                               bool with_mask_loss) {
  const bool run_decoder = with_mask_loss && model.cfg.use_instance;
  const int way = episode.way;

  std::vector<Tensor> mask_terms;
  auto run_video = [&](const VideoSample& video) {
    SampledFrames sf = sparse_sample_frames(video, frames, frame_mode, rng);
    Model::VideoForward f = model.forward_video(sf.frames, run_decoder);
    if (run_decoder) mask_terms.push_back(mask_loss(sf.masks, f.mask_pred));
    return f.proto;
  };

  std::vector<std::vector<Prototype>> per_class(
      static_cast<std::size_t>(way));
  for (std::size_t i = 0; i < episode.support.size(); ++i) {
    const int label = episode.support_labels[i];
    per_class[static_cast<std::size_t>(label)].push_back(
        run_video(episode.support[i]));
  }
  std::vector<Prototype> query_protos;
  query_protos.reserve(episode.query.size());
  for (const VideoSample& video : episode.query)
    query_protos.push_back(run_video(video));

  std::vector<Prototype> class_protos;
  class_protos.reserve(static_cast<std::size_t>(way));
  for (auto& group : per_class)
    class_protos.push_back(average_prototypes(group));

  EpisodeOutcome out;
  Tensor ce_sum;
  int correct = 0;
  for (std::size_t q = 0; q < query_protos.size(); ++q) {
    Tensor logits = classify(query_protos[q], class_protos, model.cfg.match);
    const int label = episode.query_labels[q];
    Tensor ce = cross_entropy_logits(logits, label);
    ce_sum = q == 0 ? ce : add(ce_sum, ce);

    std::vector<double> svals(static_cast<std::size_t>(way));
    int best = 0;
    for (int i = 0; i < way; ++i) {
      svals[static_cast<std::size_t>(i)] = logits.data()(i);
      if (logits.data()(i) > logits.data()(best)) best = i;
    }
    out.scores.push_back(std::move(svals));
    out.predictions.push_back(best);
    if (best == label) ++correct;
  }

  const double n_query = static_cast<double>(query_protos.size());
  Tensor loss = scale(ce_sum, 1.0 / n_query);
  out.ce = loss.item();
  if (!mask_terms.empty()) {
    Tensor mask_sum = mask_terms[0];
    for (std::size_t i = 1; i < mask_terms.size(); ++i)
      mask_sum = add(mask_sum, mask_terms[i]);
    Tensor mask_mean =
        scale(mask_sum, 1.0 / static_cast<double>(mask_terms.size()));
    out.mask = mask_mean.item();
    loss = add(loss, scale(mask_mean, lambda));
  }
  out.loss = loss;
  out.total = loss.item();
  out.accuracy = correct / n_query;
  return out;
}

}  // namespace i2st
