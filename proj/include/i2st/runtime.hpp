#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "i2st/gradcheck.hpp"
#include "i2st/model.hpp"

namespace i2st {

class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, double lr,
       double beta1, double beta2, double eps);

  // One update from the accumulated gradients; grad_scale is applied first
  // (used when several episodes contribute to one step).
  void step(double grad_scale = 1.0);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<Eigen::ArrayXd> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

struct MetricsRecord {
  long long episode = 0;
  std::string split;
  double acc = 0.0;
  double ce = 0.0;
  double mask_loss = 0.0;
  double total_loss = 0.0;

  std::string to_json_line() const;
};

struct EvalSummary {
  int episodes = 0;
  double mean_acc = 0.0;
  double ci95 = 0.0;  // 1.96 * sigma / sqrt(E)
  double mean_ce = 0.0;
  std::vector<double> per_episode_acc;

  std::string to_json_line(const std::string& split) const;
};

// --- checkpoints -----------------------------------------------------------

struct Checkpoint {
  int version = 1;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  long long episode = 0;
  std::string rng_state;
  Model model;
};

// Binary format: "I2ST" magic, u32 version, u32 JSON-blob length + blob
// (configs, episode counter, rng state), then one section per named tensor:
// u32 name length, name, u32 rank, u32 extents, f64 little-endian data.
void save_checkpoint(const std::string& path, Model& model,
                     const TrainConfig& train_cfg, long long episode,
                     const std::string& rng_state);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the raw bytes of every parameter, in registry order.
std::uint64_t param_checksum(Model& model);

// --- training and evaluation ------------------------------------------------

struct TrainOutcome {
  Model model;
  long long episodes = 0;
};

// Episodic training on the meta-train split. Writes one metrics line per
// episode to `metrics`; when out_dir is nonempty, writes interval checkpoints
// and a final checkpoint.i2st there. Aborts (ContractError) on NaN loss,
// naming the episode.
TrainOutcome train(const TrainConfig& cfg, std::ostream& metrics,
                   const std::string& out_dir);

struct EvalOptions {
  std::string split = "meta-test";
  int way = 3;
  int shot = 1;
  int query = 2;
  int episodes = 300;
  int frames = 4;
  std::uint64_t seed = 7;
};

// Deterministic many-episode evaluation; never touches parameters. Writes
// per-episode metric lines plus one summary line when `metrics` is given.
EvalSummary evaluate(const Model& model, const DatasetManifest& manifest,
                     SampleSource& source, const EvalOptions& opt,
                     std::ostream* metrics);

// --- gradcheck driver --------------------------------------------------------

struct GradcheckOutcome {
  double worst_op = 0.0;     // primitive ops, threshold 1e-6
  double worst_model = 0.0;  // parameter groups through the episode loss, 1e-4
  bool ok() const { return worst_op < 1e-6 && worst_model < 1e-4; }
};

// `module`: all | backbone | ipm | sam | match. Builds a small in-memory
// episode and checks tape gradients of every selected parameter group against
// central differences; also runs per-op primitive checks.
GradcheckOutcome run_gradcheck(const std::string& module, std::ostream& out);

// Writes an 8-bit binary PGM (P5).
void write_pgm(const std::string& path, int width, int height,
               const std::vector<unsigned char>& pixels);

}  // namespace i2st
