#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "i2st/config.hpp"
#include "i2st/rng.hpp"
#include "i2st/tensor.hpp"

namespace i2st {

enum class ShapeKind { disc, square, triangle, bar };
enum class TrajectoryKind {
  left_right,
  up_down,
  diagonal,
  circular,
  zigzag,
  shrink_grow,
  bounce,
  spiral
};

constexpr int kShapeKinds = 4;
constexpr int kTrajectoryKinds = 8;

std::string to_string(ShapeKind k);
std::string to_string(TrajectoryKind k);
ShapeKind shape_from_string(const std::string& s);
TrajectoryKind trajectory_from_string(const std::string& s);

// How the confusable background clutter of one class is built. Classes with
// equal policies have indistinguishable backgrounds, which is what makes
// image-only features ambiguous.
struct DistractorPolicy {
  int count = 2;
  bool share_shape = false;       // reuse the class's foreground shape
  bool share_trajectory = false;  // reuse the class's trajectory
  ShapeKind shape = ShapeKind::disc;
  TrajectoryKind trajectory = TrajectoryKind::circular;

  bool operator==(const DistractorPolicy&) const = default;
};

// A class is the (shape, trajectory) pair of its foreground.
struct ClassSpec {
  int class_id = 0;
  std::string split;  // "meta-train" | "meta-test"
  ShapeKind shape = ShapeKind::disc;
  TrajectoryKind trajectory = TrajectoryKind::left_right;
  DistractorPolicy distractors;
  std::vector<int> sample_ids;
};

// Generation parameters, parsed from a key=value spec file.
struct GenSpec {
  int train_classes = 12;
  int test_classes = 6;
  int samples_per_class = 40;
  int t_raw = 16;
  int render_size = 40;  // videos are rendered at this square extent
  int crop_size = 32;    // episodes crop to this extent
  int distractors = 2;
  int distractor_configs = 4;
  bool distractors_share_shape = false;
  bool distractors_share_trajectory = false;
  double mask_noise = 0.0;  // i.i.d. pixel-flip probability on teacher masks

  static GenSpec from_file(const std::string& path);
  static GenSpec from_kv(KeyValueFile kv);
  void validate() const;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  GenSpec spec;
  std::vector<ClassSpec> classes;

  std::vector<const ClassSpec*> split_classes(const std::string& split) const;
  const ClassSpec& class_by_id(int class_id) const;
};

// One rendered video as stored on disk: full render extent, float frames.
struct RawVideo {
  int class_id = -1;
  int sample_id = -1;
  int t_raw = 0;
  int height = 0;
  int width = 0;
  std::vector<float> frames;        // [t][3][h][w], values in [0,1]
  std::vector<std::uint8_t> masks;  // [t][h][w], 0/1
};

// One video as consumed by episodes: cropped (and in training jittered).
struct VideoSample {
  int class_id = -1;
  int sample_id = -1;
  int t_raw = 0;
  int height = 0;
  int width = 0;
  std::vector<double> frames;       // [t][3][h][w], values in [0,1]
  std::vector<std::uint8_t> masks;  // [t][h][w], 0/1
};

struct Episode {
  int way = 0;
  int shot = 0;
  int query_count = 0;
  std::vector<VideoSample> support;  // way*shot, grouped by class
  std::vector<int> support_labels;
  std::vector<VideoSample> query;  // way*query_count, grouped by class
  std::vector<int> query_labels;
};

// Foreground state at one frame, exposed so tests can re-rasterize.
struct FrameState {
  double cx = 0.0;
  double cy = 0.0;
  double size = 0.0;
};

// True iff the pixel with integer coordinates (ix, iy) — tested at its
// center — is covered by the shape.
bool shape_covers(ShapeKind kind, const FrameState& st, int ix, int iy);

// Per-frame foreground track of one sample; a pure function of
// (spec, class, dataset seed, sample id).
std::vector<FrameState> foreground_track(const GenSpec& spec,
                                         const ClassSpec& cls,
                                         std::uint64_t dataset_seed,
                                         int sample_id);

RawVideo render_sample(const GenSpec& spec, const ClassSpec& cls,
                       std::uint64_t dataset_seed, int sample_id);

// Builds the class list for a spec: unique (shape, trajectory) pairs, first
// train_classes tagged meta-train, the rest meta-test, distractor policies
// cycled over distractor_configs distinct configurations.
std::vector<ClassSpec> build_classes(const GenSpec& spec);

// Renders every sample and writes manifest.json plus one
// <class_id>_<sample_id>.bin per sample. Deterministic in (spec, seed).
void generate_dataset(const GenSpec& spec, std::uint64_t seed,
                      const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
RawVideo load_raw_video(const std::string& dir, int class_id, int sample_id);

// Provides raw videos during episode assembly.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual const RawVideo& get(int class_id, int sample_id) = 0;
};

// Disk-backed source; keeps everything it has loaded.
class DatasetCache : public SampleSource {
 public:
  explicit DatasetCache(std::string dir) : dir_(std::move(dir)) {}
  const RawVideo& get(int class_id, int sample_id) override;

 private:
  std::string dir_;
  std::map<std::pair<int, int>, RawVideo> cache_;
};

// Fully in-memory source (used by gradcheck and tests).
class InMemorySource : public SampleSource {
 public:
  void add(RawVideo v);
  const RawVideo& get(int class_id, int sample_id) override;

 private:
  std::map<std::pair<int, int>, RawVideo> store_;
};

enum class SampleMode { train, eval };

// Crop to crop_size (random origin in training, centered in evaluation) and,
// in training, apply per-video channel gain/bias color jitter.
VideoSample augment(const RawVideo& raw, int crop_size, SampleMode mode,
                    Rng& rng);

// N classes drawn uniformly without replacement from the split, K+Q distinct
// samples per class; episode-local labels follow class draw order.
Episode sample_episode(const DatasetManifest& manifest, SampleSource& source,
                       const std::string& split, int way, int shot, int query,
                       SampleMode mode, Rng& rng);

struct SampledFrames {
  Tensor frames;             // [T x 3 x H x W]
  Tensor masks;              // [T x 1 x H x W]
  std::vector<int> indices;  // chosen raw-frame indices, one per segment
};

// Splits the video into T contiguous segments (remainder spread over the
// leading segments) and takes one frame per segment: the segment center in
// eval mode, a uniformly random in-segment frame in train mode.
SampledFrames sparse_sample_frames(const VideoSample& video, int frames,
                                   SampleMode mode, Rng& rng);

}  // namespace i2st
