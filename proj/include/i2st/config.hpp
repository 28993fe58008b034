#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "i2st/errors.hpp"

namespace i2st {

// Plain-text "key = value" pairs, one per line, '#' starts a comment.
// Typed getters mark keys as consumed; finish() rejects anything left over,
// so misspelled keys fail loudly instead of silently using a default.
class KeyValueFile {
 public:
  static KeyValueFile parse_file(const std::string& path);
  static KeyValueFile parse_string(const std::string& text,
                                   const std::string& origin = "<string>");

  bool has(const std::string& key) const { return pairs_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  long long get_int(const std::string& key, long long fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Throws ConfigError naming every unconsumed key.
  void finish() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> pairs_;
  std::set<std::string> consumed_;

  const std::string* lookup(const std::string& key);
};

// Episode shapes, optimization hyperparameters, and architecture toggles for
// one training or evaluation run.
struct TrainConfig {
  int way = 3;
  int shot = 1;
  int query = 2;
  int frames = 4;  // frames sampled per video

  double lambda = 1.0;  // mask-loss weight
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int train_episodes = 2000;
  int eval_episodes = 300;
  int episodes_per_step = 1;
  int checkpoint_interval = 500;

  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 7;

  // Architecture.
  int channels = 16;
  int heads = 4;
  bool use_instance = true;
  bool use_spatial = true;
  bool use_temporal = true;
  bool cross_attention = false;

  // Matching.
  double w_global = 1.0;
  double w_local = 1.0;

  std::string dataset;

  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_kv(KeyValueFile kv);
  void validate() const;
};

}  // namespace i2st
