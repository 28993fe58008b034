#include "i2st/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace i2st {

namespace {

constexpr std::array<const char*, kShapeKinds> kShapeNames = {
    "disc", "square", "triangle", "bar"};
constexpr std::array<const char*, kTrajectoryKinds> kTrajectoryNames = {
    "left_right", "up_down",     "diagonal", "circular",
    "zigzag",     "shrink_grow", "bounce",   "spiral"};

// Background palette: dark, low-saturation tones. Foreground/distractor
// palette: bright tones shared by both, so color alone never identifies the
// action-defining shape.
constexpr std::array<std::array<double, 3>, 6> kBackgroundPalette = {{
    {0.10, 0.10, 0.12},
    {0.18, 0.14, 0.10},
    {0.08, 0.16, 0.12},
    {0.14, 0.10, 0.18},
    {0.20, 0.20, 0.16},
    {0.06, 0.12, 0.20},
}};
constexpr std::array<std::array<double, 3>, 8> kForegroundPalette = {{
    {0.95, 0.30, 0.25},
    {0.25, 0.85, 0.35},
    {0.30, 0.45, 0.95},
    {0.95, 0.85, 0.25},
    {0.85, 0.35, 0.90},
    {0.30, 0.90, 0.90},
    {0.95, 0.60, 0.20},
    {0.90, 0.90, 0.90},
}};

double triangle_wave(double x) {  // period 1, range [-1, 1]
  const double f = x - std::floor(x);
  return 2.0 * std::abs(2.0 * f - 1.0) - 1.0;
}

struct TrackParams {
  double phase = 0.0;
  double dir = 1.0;
  double jx = 0.0;
  double jy = 0.0;
  double size = 5.0;
};

TrackParams draw_track_params(Rng& rng, double size_lo, double size_hi) {
  TrackParams p;
  p.phase = rng.uniform();
  p.dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
  p.jx = rng.uniform(-3.0, 3.0);
  p.jy = rng.uniform(-3.0, 3.0);
  p.size = rng.uniform(size_lo, size_hi);
  return p;
}

// Half-extents of a shape along x and y, used to keep it fully on canvas.
void shape_half_extents(ShapeKind kind, double s, double& hx, double& hy) {
  switch (kind) {
    case ShapeKind::disc: hx = hy = s; break;
    case ShapeKind::square: hx = hy = 0.9 * s; break;
    case ShapeKind::triangle: hx = 0.95 * s; hy = s; break;
    case ShapeKind::bar: hx = 1.6 * s; hy = 0.5 * s; break;
  }
}

FrameState track_state(ShapeKind shape, TrajectoryKind traj,
                       const TrackParams& p, double phi, int extent) {
  const double s = extent;
  const double mid = s / 2.0;
  const double amp = s * 0.30;
  const double u = phi + p.phase;
  constexpr double tau = 2.0 * std::numbers::pi;
  FrameState st;
  st.size = p.size;
  switch (traj) {
    case TrajectoryKind::left_right:
      st.cx = mid + p.jx * 0.4 + amp * std::sin(tau * u) * p.dir;
      st.cy = mid + p.jy;
      break;
    case TrajectoryKind::up_down:
      st.cx = mid + p.jx;
      st.cy = mid + p.jy * 0.4 + amp * std::sin(tau * u) * p.dir;
      break;
    case TrajectoryKind::diagonal:
      st.cx = mid + p.jx * 0.4 + amp * std::sin(tau * u) * p.dir;
      st.cy = mid + p.jy * 0.4 + amp * std::sin(tau * u) * p.dir;
      break;
    case TrajectoryKind::circular: {
      const double r = s * 0.25;
      st.cx = mid + p.jx * 0.3 + r * std::cos(tau * u * p.dir);
      st.cy = mid + p.jy * 0.3 + r * std::sin(tau * u * p.dir);
      break;
    }
    case TrajectoryKind::zigzag:
      st.cx = mid + p.jx * 0.3 + amp * triangle_wave(u) * p.dir;
      st.cy = mid + p.jy * 0.3 + amp * 0.6 * triangle_wave(3.0 * u);
      break;
    case TrajectoryKind::shrink_grow:
      st.cx = mid + p.jx;
      st.cy = mid + p.jy;
      st.size = p.size * (0.75 + 0.35 * std::sin(tau * u));
      break;
    case TrajectoryKind::bounce:
      st.cx = mid + p.jx * 0.4 + amp * triangle_wave(u) * p.dir;
      st.cy = (s - 0.22 * s) - 0.42 * s * std::abs(std::sin(tau * 2.0 * u));
      break;
    case TrajectoryKind::spiral: {
      const double frac = u - std::floor(u);
      const double r = 2.0 + (s * 0.28 - 2.0) * frac;
      const double ang = 2.0 * tau * u * p.dir;
      st.cx = mid + r * std::cos(ang);
      st.cy = mid + r * std::sin(ang);
      break;
    }
  }
  // Keep the whole shape on canvas so footprints are never clipped.
  double hx = 0.0, hy = 0.0;
  shape_half_extents(shape, st.size, hx, hy);
  st.cx = std::clamp(st.cx, hx + 1.0, s - hx - 1.0);
  st.cy = std::clamp(st.cy, hy + 1.0, s - hy - 1.0);
  return st;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, int class_id,
                          int sample_id) {
  const std::uint64_t key = (static_cast<std::uint64_t>(class_id) << 32) |
                            static_cast<std::uint32_t>(sample_id);
  return splitmix64(dataset_seed ^ splitmix64(key));
}

// --- little-endian binary helpers ---

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated file while reading u32");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string sample_filename(int class_id, int sample_id) {
  return std::to_string(class_id) + "_" + std::to_string(sample_id) + ".bin";
}

}  // namespace

std::string to_string(ShapeKind k) {
  return kShapeNames[static_cast<std::size_t>(k)];
}
std::string to_string(TrajectoryKind k) {
  return kTrajectoryNames[static_cast<std::size_t>(k)];
}

ShapeKind shape_from_string(const std::string& s) {
  for (int i = 0; i < kShapeKinds; ++i)
    if (s == kShapeNames[static_cast<std::size_t>(i)])
      return static_cast<ShapeKind>(i);
  throw ConfigError("unknown shape kind: " + s);
}

TrajectoryKind trajectory_from_string(const std::string& s) {
  for (int i = 0; i < kTrajectoryKinds; ++i)
    if (s == kTrajectoryNames[static_cast<std::size_t>(i)])
      return static_cast<TrajectoryKind>(i);
  throw ConfigError("unknown trajectory kind: " + s);
}

GenSpec GenSpec::from_file(const std::string& path) {
  return from_kv(KeyValueFile::parse_file(path));
}

GenSpec GenSpec::from_kv(KeyValueFile kv) {
  GenSpec s;
  s.train_classes = static_cast<int>(kv.get_int("train_classes", s.train_classes));
  s.test_classes = static_cast<int>(kv.get_int("test_classes", s.test_classes));
  s.samples_per_class =
      static_cast<int>(kv.get_int("samples_per_class", s.samples_per_class));
  s.t_raw = static_cast<int>(kv.get_int("t_raw", s.t_raw));
  s.render_size = static_cast<int>(kv.get_int("render_size", s.render_size));
  s.crop_size = static_cast<int>(kv.get_int("crop_size", s.crop_size));
  s.distractors = static_cast<int>(kv.get_int("distractors", s.distractors));
  s.distractor_configs =
      static_cast<int>(kv.get_int("distractor_configs", s.distractor_configs));
  s.distractors_share_shape =
      kv.get_bool("distractors_share_shape", s.distractors_share_shape);
  s.distractors_share_trajectory = kv.get_bool(
      "distractors_share_trajectory", s.distractors_share_trajectory);
  s.mask_noise = kv.get_double("mask_noise", s.mask_noise);
  kv.finish();
  s.validate();
  return s;
}

void GenSpec::validate() const {
  if (train_classes < 2 || test_classes < 2)
    throw ConfigError("both splits need at least 2 classes");
  if (train_classes + test_classes > kShapeKinds * kTrajectoryKinds)
    throw ConfigError("at most " +
                      std::to_string(kShapeKinds * kTrajectoryKinds) +
                      " distinct (shape, trajectory) classes exist");
  if (samples_per_class < 2)
    throw ConfigError("need at least 2 samples per class");
  if (t_raw < 1) throw ConfigError("t_raw must be >= 1");
  if (render_size < 8 || crop_size < 8)
    throw ConfigError("render_size and crop_size must be >= 8");
  if (crop_size > render_size)
    throw ConfigError("crop_size exceeds render_size");
  if (distractors < 0) throw ConfigError("distractors must be >= 0");
  if (distractor_configs < 1)
    throw ConfigError("distractor_configs must be >= 1");
  if (mask_noise < 0.0 || mask_noise >= 0.5)
    throw ConfigError("mask_noise must be in [0, 0.5)");
}

std::vector<const ClassSpec*> DatasetManifest::split_classes(
    const std::string& split) const {
  std::vector<const ClassSpec*> out;
  for (const auto& c : classes)
    if (c.split == split) out.push_back(&c);
  return out;
}

const ClassSpec& DatasetManifest::class_by_id(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c;
  throw ConfigError("unknown class id " + std::to_string(class_id));
}

bool shape_covers(ShapeKind kind, const FrameState& st, int ix, int iy) {
  const double px = ix + 0.5, py = iy + 0.5;
  const double dx = px - st.cx, dy = py - st.cy;
  const double s = st.size;
  switch (kind) {
    case ShapeKind::disc:
      return dx * dx + dy * dy <= s * s;
    case ShapeKind::square:
      return std::abs(dx) <= 0.9 * s && std::abs(dy) <= 0.9 * s;
    case ShapeKind::triangle: {
      // Vertices: apex up, base down.
      const double ax = st.cx, ay = st.cy - s;
      const double bx = st.cx - 0.95 * s, by = st.cy + 0.75 * s;
      const double cx = st.cx + 0.95 * s, cy = st.cy + 0.75 * s;
      auto side = [&](double x1, double y1, double x2, double y2) {
        return (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2);
      };
      const double d1 = side(ax, ay, bx, by);
      const double d2 = side(bx, by, cx, cy);
      const double d3 = side(cx, cy, ax, ay);
      const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(has_neg && has_pos);
    }
    case ShapeKind::bar:
      return std::abs(dx) <= 1.6 * s && std::abs(dy) <= 0.5 * s;
  }
  return false;
}

namespace {

struct ActorParams {
  ShapeKind shape;
  TrajectoryKind trajectory;
  TrackParams track;
  std::array<double, 3> color;
};

// Parameter draws happen in a fixed order so tests can reproduce the
// foreground track by replaying the same stream.
struct SampleParams {
  std::array<double, 3> background;
  ActorParams foreground;
  std::vector<ActorParams> distractors;
};

SampleParams draw_sample_params(const GenSpec& spec, const ClassSpec& cls,
                                Rng& rng) {
  SampleParams p;
  p.background =
      kBackgroundPalette[static_cast<std::size_t>(rng.uniform_int(6))];
  p.foreground.shape = cls.shape;
  p.foreground.trajectory = cls.trajectory;
  p.foreground.color =
      kForegroundPalette[static_cast<std::size_t>(rng.uniform_int(8))];
  p.foreground.track = draw_track_params(rng, 5.5, 8.0);
  for (int i = 0; i < cls.distractors.count; ++i) {
    ActorParams d;
    d.shape =
        cls.distractors.share_shape ? cls.shape : cls.distractors.shape;
    d.trajectory = cls.distractors.share_trajectory
                       ? cls.trajectory
                       : cls.distractors.trajectory;
    d.color = kForegroundPalette[static_cast<std::size_t>(rng.uniform_int(8))];
    d.track = draw_track_params(rng, 3.5, 5.0);
    p.distractors.push_back(d);
  }
  (void)spec;
  return p;
}

}  // namespace

std::vector<FrameState> foreground_track(const GenSpec& spec,
                                         const ClassSpec& cls,
                                         std::uint64_t dataset_seed,
                                         int sample_id) {
  Rng rng(sample_seed(dataset_seed, cls.class_id, sample_id));
  const SampleParams p = draw_sample_params(spec, cls, rng);
  std::vector<FrameState> track;
  track.reserve(static_cast<std::size_t>(spec.t_raw));
  for (int t = 0; t < spec.t_raw; ++t) {
    const double phi = static_cast<double>(t) / spec.t_raw;
    track.push_back(track_state(p.foreground.shape, p.foreground.trajectory,
                                p.foreground.track, phi, spec.render_size));
  }
  return track;
}

RawVideo render_sample(const GenSpec& spec, const ClassSpec& cls,
                       std::uint64_t dataset_seed, int sample_id) {
  Rng rng(sample_seed(dataset_seed, cls.class_id, sample_id));
  const SampleParams p = draw_sample_params(spec, cls, rng);
  const int s = spec.render_size;
  const int t_raw = spec.t_raw;

  RawVideo v;
  v.class_id = cls.class_id;
  v.sample_id = sample_id;
  v.t_raw = t_raw;
  v.height = s;
  v.width = s;
  v.frames.assign(static_cast<std::size_t>(t_raw) * 3 * s * s, 0.0f);
  v.masks.assign(static_cast<std::size_t>(t_raw) * s * s, 0);

  for (int t = 0; t < t_raw; ++t) {
    const double phi = static_cast<double>(t) / t_raw;
    const FrameState fg = track_state(p.foreground.shape,
                                      p.foreground.trajectory,
                                      p.foreground.track, phi, s);
    std::vector<FrameState> dstates;
    dstates.reserve(p.distractors.size());
    for (const auto& d : p.distractors)
      dstates.push_back(track_state(d.shape, d.trajectory, d.track, phi, s));

    float* frame = v.frames.data() + static_cast<std::size_t>(t) * 3 * s * s;
    std::uint8_t* mask = v.masks.data() + static_cast<std::size_t>(t) * s * s;
    for (int iy = 0; iy < s; ++iy) {
      for (int ix = 0; ix < s; ++ix) {
        const std::array<double, 3>* color = &p.background;
        // Later distractors sit on top of earlier ones; foreground on top.
        for (std::size_t di = 0; di < dstates.size(); ++di) {
          if (shape_covers(p.distractors[di].shape, dstates[di], ix, iy))
            color = &p.distractors[di].color;
        }
        if (shape_covers(p.foreground.shape, fg, ix, iy)) {
          color = &p.foreground.color;
          mask[iy * s + ix] = 1;
        }
        for (int c = 0; c < 3; ++c)
          frame[(c * s + iy) * s + ix] = static_cast<float>((*color)[c]);
      }
    }
  }

  if (spec.mask_noise > 0.0) {
    for (auto& m : v.masks)
      if (rng.uniform() < spec.mask_noise) m ^= 1;
  }
  return v;
}

std::vector<ClassSpec> build_classes(const GenSpec& spec) {
  const int total = spec.train_classes + spec.test_classes;
  std::vector<ClassSpec> classes;
  classes.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    ClassSpec c;
    c.class_id = i;
    c.split = i < spec.train_classes ? "meta-train" : "meta-test";
    // Walks distinct (shape, trajectory) pairs while cycling both factors.
    c.shape = static_cast<ShapeKind>(i % kShapeKinds);
    c.trajectory =
        static_cast<TrajectoryKind>((i + i / kShapeKinds) % kTrajectoryKinds);
    const int cfg = i % spec.distractor_configs;
    c.distractors.count = spec.distractors;
    c.distractors.share_shape = spec.distractors_share_shape;
    c.distractors.share_trajectory = spec.distractors_share_trajectory;
    c.distractors.shape = static_cast<ShapeKind>((cfg + 1) % kShapeKinds);
    c.distractors.trajectory =
        static_cast<TrajectoryKind>((cfg * 3 + 1) % kTrajectoryKinds);
    c.sample_ids.resize(static_cast<std::size_t>(spec.samples_per_class));
    for (int j = 0; j < spec.samples_per_class; ++j)
      c.sample_ids[static_cast<std::size_t>(j)] = j;
    classes.push_back(std::move(c));
  }
  // Uniqueness of (shape, trajectory) pairs.
  for (std::size_t a = 0; a < classes.size(); ++a)
    for (std::size_t b = a + 1; b < classes.size(); ++b)
      if (classes[a].shape == classes[b].shape &&
          classes[a].trajectory == classes[b].trajectory)
        throw ConfigError("internal: duplicate class definition");
  return classes;
}

namespace {

json policy_to_json(const DistractorPolicy& p) {
  return json{{"count", p.count},
              {"share_shape", p.share_shape},
              {"share_trajectory", p.share_trajectory},
              {"shape", to_string(p.shape)},
              {"trajectory", to_string(p.trajectory)}};
}

DistractorPolicy policy_from_json(const json& j) {
  DistractorPolicy p;
  p.count = j.at("count").get<int>();
  p.share_shape = j.at("share_shape").get<bool>();
  p.share_trajectory = j.at("share_trajectory").get<bool>();
  p.shape = shape_from_string(j.at("shape").get<std::string>());
  p.trajectory = trajectory_from_string(j.at("trajectory").get<std::string>());
  return p;
}

}  // namespace

void generate_dataset(const GenSpec& spec, std::uint64_t seed,
                      const std::string& out_dir) {
  spec.validate();
  auto classes = build_classes(spec);

  // With more classes than distractor configurations, at least two classes
  // are guaranteed to share one; the dataset depends on that ambiguity.
  if (static_cast<int>(classes.size()) > spec.distractor_configs) {
    bool shared = false;
    for (std::size_t a = 0; a < classes.size() && !shared; ++a)
      for (std::size_t b = a + 1; b < classes.size() && !shared; ++b)
        shared = classes[a].distractors == classes[b].distractors;
    if (!shared)
      throw ConfigError("internal: no two classes share a distractor config");
  }

  fs::create_directories(out_dir);

  json manifest;
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["spec"] = {
      {"train_classes", spec.train_classes},
      {"test_classes", spec.test_classes},
      {"samples_per_class", spec.samples_per_class},
      {"t_raw", spec.t_raw},
      {"render_size", spec.render_size},
      {"crop_size", spec.crop_size},
      {"distractors", spec.distractors},
      {"distractor_configs", spec.distractor_configs},
      {"distractors_share_shape", spec.distractors_share_shape},
      {"distractors_share_trajectory", spec.distractors_share_trajectory},
      {"mask_noise", spec.mask_noise},
  };
  json jclasses = json::array();
  for (const auto& c : classes) {
    jclasses.push_back(json{{"class_id", c.class_id},
                            {"split", c.split},
                            {"shape", to_string(c.shape)},
                            {"trajectory", to_string(c.trajectory)},
                            {"distractors", policy_to_json(c.distractors)},
                            {"sample_ids", c.sample_ids}});
  }
  manifest["classes"] = std::move(jclasses);

  {
    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
  }

  for (const auto& c : classes) {
    for (int sid : c.sample_ids) {
      const RawVideo v = render_sample(spec, c, seed, sid);
      std::string blob;
      blob.reserve(16 + v.frames.size() * 4 + v.masks.size());
      put_u32(blob, static_cast<std::uint32_t>(v.t_raw));
      put_u32(blob, 3);
      put_u32(blob, static_cast<std::uint32_t>(v.height));
      put_u32(blob, static_cast<std::uint32_t>(v.width));
      for (float f : v.frames) put_f32(blob, f);
      blob.append(reinterpret_cast<const char*>(v.masks.data()),
                  v.masks.size());
      std::ofstream out(fs::path(out_dir) / sample_filename(c.class_id, sid),
                        std::ios::binary);
      if (!out) throw IoError("cannot write sample file in " + out_dir);
      out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
  }
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot open manifest.json in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest.json: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != 1)
    throw VersionError("unsupported manifest version " +
                       std::to_string(m.version));
  m.seed = j.at("seed").get<std::uint64_t>();
  const json& s = j.at("spec");
  m.spec.train_classes = s.at("train_classes").get<int>();
  m.spec.test_classes = s.at("test_classes").get<int>();
  m.spec.samples_per_class = s.at("samples_per_class").get<int>();
  m.spec.t_raw = s.at("t_raw").get<int>();
  m.spec.render_size = s.at("render_size").get<int>();
  m.spec.crop_size = s.at("crop_size").get<int>();
  m.spec.distractors = s.at("distractors").get<int>();
  m.spec.distractor_configs = s.at("distractor_configs").get<int>();
  m.spec.distractors_share_shape = s.at("distractors_share_shape").get<bool>();
  m.spec.distractors_share_trajectory =
      s.at("distractors_share_trajectory").get<bool>();
  m.spec.mask_noise = s.at("mask_noise").get<double>();
  for (const auto& jc : j.at("classes")) {
    ClassSpec c;
    c.class_id = jc.at("class_id").get<int>();
    c.split = jc.at("split").get<std::string>();
    c.shape = shape_from_string(jc.at("shape").get<std::string>());
    c.trajectory =
        trajectory_from_string(jc.at("trajectory").get<std::string>());
    c.distractors = policy_from_json(jc.at("distractors"));
    c.sample_ids = jc.at("sample_ids").get<std::vector<int>>();
    m.classes.push_back(std::move(c));
  }
  // Meta-train and meta-test class sets must be disjoint; with unique ids
  // per entry this reduces to id uniqueness.
  std::set<int> ids;
  for (const auto& c : m.classes)
    if (!ids.insert(c.class_id).second)
      throw IoError("manifest has duplicate class id " +
                    std::to_string(c.class_id));
  return m;
}

RawVideo load_raw_video(const std::string& dir, int class_id, int sample_id) {
  const fs::path path = fs::path(dir) / sample_filename(class_id, sample_id);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sample file " + path.string());
  RawVideo v;
  v.class_id = class_id;
  v.sample_id = sample_id;
  v.t_raw = static_cast<int>(read_u32(in));
  const int channels = static_cast<int>(read_u32(in));
  v.height = static_cast<int>(read_u32(in));
  v.width = static_cast<int>(read_u32(in));
  if (channels != 3 || v.t_raw < 1 || v.height < 1 || v.width < 1)
    throw IoError("corrupt sample header in " + path.string());
  const std::size_t n_frames =
      static_cast<std::size_t>(v.t_raw) * 3 * v.height * v.width;
  const std::size_t n_mask =
      static_cast<std::size_t>(v.t_raw) * v.height * v.width;
  v.frames.resize(n_frames);
  in.read(reinterpret_cast<char*>(v.frames.data()),
          static_cast<std::streamsize>(n_frames * 4));
  v.masks.resize(n_mask);
  in.read(reinterpret_cast<char*>(v.masks.data()),
          static_cast<std::streamsize>(n_mask));
  if (!in) throw IoError("truncated sample file " + path.string());
  return v;
}

const RawVideo& DatasetCache::get(int class_id, int sample_id) {
  const auto key = std::make_pair(class_id, sample_id);
  auto it = cache_.find(key);
  if (it == cache_.end())
    it = cache_.emplace(key, load_raw_video(dir_, class_id, sample_id)).first;
  return it->second;
}

void InMemorySource::add(RawVideo v) {
  const auto key = std::make_pair(v.class_id, v.sample_id);
  store_[key] = std::move(v);
}

const RawVideo& InMemorySource::get(int class_id, int sample_id) {
  auto it = store_.find(std::make_pair(class_id, sample_id));
  if (it == store_.end())
    throw IoError("in-memory source has no sample " +
                  std::to_string(class_id) + "_" + std::to_string(sample_id));
  return it->second;
}

VideoSample augment(const RawVideo& raw, int crop_size, SampleMode mode,
                    Rng& rng) {
  if (crop_size > raw.height || crop_size > raw.width)
    throw ConfigError("crop size exceeds raw video extent");
  const int max_off_y = raw.height - crop_size;
  const int max_off_x = raw.width - crop_size;
  int oy = max_off_y / 2, ox = max_off_x / 2;
  double gain[3] = {1.0, 1.0, 1.0};
  double bias[3] = {0.0, 0.0, 0.0};
  if (mode == SampleMode::train) {
    oy = max_off_y > 0 ? rng.uniform_int(max_off_y + 1) : 0;
    ox = max_off_x > 0 ? rng.uniform_int(max_off_x + 1) : 0;
    for (int c = 0; c < 3; ++c) {
      gain[c] = rng.uniform(0.8, 1.2);
      bias[c] = rng.uniform(-0.1, 0.1);
    }
  }

  VideoSample v;
  v.class_id = raw.class_id;
  v.sample_id = raw.sample_id;
  v.t_raw = raw.t_raw;
  v.height = crop_size;
  v.width = crop_size;
  v.frames.resize(static_cast<std::size_t>(raw.t_raw) * 3 * crop_size *
                  crop_size);
  v.masks.resize(static_cast<std::size_t>(raw.t_raw) * crop_size * crop_size);
  for (int t = 0; t < raw.t_raw; ++t) {
    for (int c = 0; c < 3; ++c) {
      const float* src = raw.frames.data() +
                         (static_cast<std::size_t>(t) * 3 + c) * raw.height *
                             raw.width;
      double* dst = v.frames.data() +
                    (static_cast<std::size_t>(t) * 3 + c) * crop_size *
                        crop_size;
      for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x) {
          const double px = src[(y + oy) * raw.width + (x + ox)];
          dst[y * crop_size + x] =
              std::clamp(px * gain[c] + bias[c], 0.0, 1.0);
        }
    }
    const std::uint8_t* msrc =
        raw.masks.data() + static_cast<std::size_t>(t) * raw.height * raw.width;
    std::uint8_t* mdst =
        v.masks.data() + static_cast<std::size_t>(t) * crop_size * crop_size;
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x)
        mdst[y * crop_size + x] = msrc[(y + oy) * raw.width + (x + ox)];
  }
  return v;
}

Episode sample_episode(const DatasetManifest& manifest, SampleSource& source,
                       const std::string& split, int way, int shot, int query,
                       SampleMode mode, Rng& rng) {
  if (way < 2) throw ConfigError("episodes need way >= 2");
  if (shot < 1 || query < 1)
    throw ConfigError("episodes need shot >= 1 and query >= 1");
  auto classes = manifest.split_classes(split);
  if (static_cast<int>(classes.size()) < way)
    throw ConfigError("split '" + split + "' has " +
                      std::to_string(classes.size()) + " classes, need " +
                      std::to_string(way));
  for (const auto* c : classes)
    if (static_cast<int>(c->sample_ids.size()) < shot + query)
      throw ConfigError("class " + std::to_string(c->class_id) + " has " +
                        std::to_string(c->sample_ids.size()) +
                        " samples, need " + std::to_string(shot + query));

  std::vector<int> order(classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query_count = query;

  struct Draw {
    int class_id;
    std::vector<int> samples;
  };
  std::vector<Draw> draws;
  for (int c = 0; c < way; ++c) {
    const ClassSpec& cls = *classes[static_cast<std::size_t>(order[static_cast<std::size_t>(c)])];
    std::vector<int> ids = cls.sample_ids;
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(shot + query));
    draws.push_back({cls.class_id, std::move(ids)});
  }

  const int crop = manifest.spec.crop_size;
  for (int c = 0; c < way; ++c) {
    for (int k = 0; k < shot; ++k) {
      const int sid = draws[static_cast<std::size_t>(c)].samples[static_cast<std::size_t>(k)];
      ep.support.push_back(
          augment(source.get(draws[static_cast<std::size_t>(c)].class_id, sid),
                  crop, mode, rng));
      ep.support_labels.push_back(c);
    }
  }
  for (int c = 0; c < way; ++c) {
    for (int q = 0; q < query; ++q) {
      const int sid =
          draws[static_cast<std::size_t>(c)].samples[static_cast<std::size_t>(shot + q)];
      ep.query.push_back(
          augment(source.get(draws[static_cast<std::size_t>(c)].class_id, sid),
                  crop, mode, rng));
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

SampledFrames sparse_sample_frames(const VideoSample& video, int frames,
                                   SampleMode mode, Rng& rng) {
  const int t_raw = video.t_raw;
  if (frames < 1 || frames > t_raw)
    throw ConfigError("cannot sample " + std::to_string(frames) +
                      " frames from a " + std::to_string(t_raw) +
                      "-frame video");
  const int base = t_raw / frames;
  const int rem = t_raw % frames;

  SampledFrames out;
  out.indices.reserve(static_cast<std::size_t>(frames));
  int start = 0;
  for (int s = 0; s < frames; ++s) {
    const int len = base + (s < rem ? 1 : 0);
    const int idx = mode == SampleMode::eval ? start + len / 2
                                             : start + rng.uniform_int(len);
    out.indices.push_back(idx);
    start += len;
  }

  const int h = video.height, w = video.width;
  out.frames = Tensor::zeros({frames, 3, h, w});
  out.masks = Tensor::zeros({frames, 1, h, w});
  for (int s = 0; s < frames; ++s) {
    const int t = out.indices[static_cast<std::size_t>(s)];
    const double* src =
        video.frames.data() + static_cast<std::size_t>(t) * 3 * h * w;
    std::copy(src, src + 3 * h * w,
              out.frames.data().data() + static_cast<std::size_t>(s) * 3 * h * w);
    const std::uint8_t* msrc =
        video.masks.data() + static_cast<std::size_t>(t) * h * w;
    double* mdst =
        out.masks.data().data() + static_cast<std::size_t>(s) * h * w;
    for (int i = 0; i < h * w; ++i) mdst[i] = msrc[i];
  }
  return out;
}

}  // namespace i2st
