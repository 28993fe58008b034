#include "i2st/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace i2st {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double lr,
           double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (auto& [name, p] : params_) {
    m_.push_back(Eigen::ArrayXd::Zero(p.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
}

void Adam::step(double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (p.grad().size() == 0) continue;
    const Eigen::ArrayXd g = p.grad() * grad_scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    p.data() -= lr_ * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::string MetricsRecord::to_json_line() const {
  json j{{"episode", episode}, {"split", split},       {"acc", acc},
         {"ce", ce},           {"mask_loss", mask_loss}, {"total_loss", total_loss}};
  return j.dump();
}

std::string EvalSummary::to_json_line(const std::string& split) const {
  json j{{"episodes", episodes},
         {"split", split},
         {"mean_acc", mean_acc},
         {"ci95", ci95},
         {"mean_ce", mean_ce}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'I', '2', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t take_u32(const std::string& buf, std::size_t& off) {
  if (off + 4 > buf.size()) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i]))
         << (8 * i);
  off += 4;
  return v;
}

double take_f64(const std::string& buf, std::size_t& off) {
  if (off + 8 > buf.size()) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i]))
         << (8 * i);
  off += 8;
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

json model_cfg_to_json(const ModelConfig& m) {
  return json{{"img_size", m.img_size},
              {"in_channels", m.in_channels},
              {"channels", m.channels},
              {"heads", m.heads},
              {"ffn_hidden", m.ffn_hidden},
              {"t_max", m.t_max},
              {"use_instance", m.use_instance},
              {"use_spatial", m.use_spatial},
              {"use_temporal", m.use_temporal},
              {"cross_attention", m.cross_attention},
              {"w_global", m.match.w_global},
              {"w_local", m.match.w_local}};
}

ModelConfig model_cfg_from_json(const json& j) {
  ModelConfig m;
  m.img_size = j.at("img_size").get<int>();
  m.in_channels = j.at("in_channels").get<int>();
  m.channels = j.at("channels").get<int>();
  m.heads = j.at("heads").get<int>();
  m.ffn_hidden = j.at("ffn_hidden").get<int>();
  m.t_max = j.at("t_max").get<int>();
  m.use_instance = j.at("use_instance").get<bool>();
  m.use_spatial = j.at("use_spatial").get<bool>();
  m.use_temporal = j.at("use_temporal").get<bool>();
  m.cross_attention = j.at("cross_attention").get<bool>();
  m.match.w_global = j.at("w_global").get<double>();
  m.match.w_local = j.at("w_local").get<double>();
  return m;
}

json train_cfg_to_json(const TrainConfig& c) {
  return json{{"way", c.way},
              {"shot", c.shot},
              {"query", c.query},
              {"frames", c.frames},
              {"lambda", c.lambda},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"train_episodes", c.train_episodes},
              {"eval_episodes", c.eval_episodes},
              {"episodes_per_step", c.episodes_per_step},
              {"checkpoint_interval", c.checkpoint_interval},
              {"seed", c.seed},
              {"eval_seed", c.eval_seed},
              {"channels", c.channels},
              {"heads", c.heads},
              {"use_instance", c.use_instance},
              {"use_spatial", c.use_spatial},
              {"use_temporal", c.use_temporal},
              {"cross_attention", c.cross_attention},
              {"w_global", c.w_global},
              {"w_local", c.w_local},
              {"dataset", c.dataset}};
}

TrainConfig train_cfg_from_json(const json& j) {
  TrainConfig c;
  c.way = j.at("way").get<int>();
  c.shot = j.at("shot").get<int>();
  c.query = j.at("query").get<int>();
  c.frames = j.at("frames").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.train_episodes = j.at("train_episodes").get<int>();
  c.eval_episodes = j.at("eval_episodes").get<int>();
  c.episodes_per_step = j.at("episodes_per_step").get<int>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
  c.channels = j.at("channels").get<int>();
  c.heads = j.at("heads").get<int>();
  c.use_instance = j.at("use_instance").get<bool>();
  c.use_spatial = j.at("use_spatial").get<bool>();
  c.use_temporal = j.at("use_temporal").get<bool>();
  c.cross_attention = j.at("cross_attention").get<bool>();
  c.w_global = j.at("w_global").get<double>();
  c.w_local = j.at("w_local").get<double>();
  c.dataset = j.at("dataset").get<std::string>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model,
                     const TrainConfig& train_cfg, long long episode,
                     const std::string& rng_state) {
  json blob{{"model", model_cfg_to_json(model.cfg)},
            {"train", train_cfg_to_json(train_cfg)},
            {"episode", episode},
            {"rng_state", rng_state}};
  const std::string blob_text = blob.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blob_text.size()));
  out += blob_text;
  for (auto& [name, p] : model.named_params()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(p.rank()));
    for (int e : p.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (long long i = 0; i < p.size(); ++i) put_f64(out, p.data()(i));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  std::size_t off = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw VersionError("not a checkpoint file (bad magic): " + path);
  off = 4;
  const std::uint32_t version = take_u32(buf, off);
  if (version != kVersion)
    throw VersionError("unsupported checkpoint version " +
                       std::to_string(version));
  const std::uint32_t blob_len = take_u32(buf, off);
  if (off + blob_len > buf.size()) throw IoError("checkpoint truncated");
  json blob;
  try {
    blob = json::parse(buf.substr(off, blob_len));
  } catch (const json::exception& e) {
    throw IoError("checkpoint config blob is malformed: " +
                  std::string(e.what()));
  }
  off += blob_len;

  Checkpoint ck;
  ck.version = static_cast<int>(version);
  ck.model_cfg = model_cfg_from_json(blob.at("model"));
  ck.train_cfg = train_cfg_from_json(blob.at("train"));
  ck.episode = blob.at("episode").get<long long>();
  ck.rng_state = blob.at("rng_state").get<std::string>();

  // Read all sections first; only a fully consistent file yields a model.
  struct Section {
    Shape shape;
    std::vector<double> data;
  };
  std::map<std::string, Section> sections;
  while (off < buf.size()) {
    const std::uint32_t name_len = take_u32(buf, off);
    if (off + name_len > buf.size()) throw IoError("checkpoint truncated");
    const std::string name = buf.substr(off, name_len);
    off += name_len;
    const std::uint32_t rank = take_u32(buf, off);
    Section s;
    long long count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t e = take_u32(buf, off);
      s.shape.push_back(static_cast<int>(e));
      count *= e;
    }
    s.data.resize(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i)
      s.data[static_cast<std::size_t>(i)] = take_f64(buf, off);
    if (!sections.emplace(name, std::move(s)).second)
      throw IoError("checkpoint has duplicate tensor section: " + name);
  }

  ck.model = Model::init(ck.model_cfg, 0);
  auto params = ck.model.named_params();
  if (params.size() != sections.size())
    throw IoError("checkpoint holds " + std::to_string(sections.size()) +
                  " tensors, model expects " + std::to_string(params.size()));
  for (auto& [name, p] : params) {
    auto it = sections.find(name);
    if (it == sections.end())
      throw IoError("checkpoint is missing tensor: " + name);
    if (it->second.shape != p.shape())
      throw IoError("checkpoint tensor " + name + " has shape " +
                    shape_str(it->second.shape) + ", model expects " +
                    shape_str(p.shape()));
    for (long long i = 0; i < p.size(); ++i)
      p.data()(i) = it->second.data[static_cast<std::size_t>(i)];
  }
  return ck;
}

std::uint64_t param_checksum(Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, p] : model.named_params()) {
    for (long long i = 0; i < p.size(); ++i) {
      std::uint64_t bits;
      const double d = p.data()(i);
      std::memcpy(&bits, &d, 8);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainOutcome train(const TrainConfig& cfg, std::ostream& metrics,
                   const std::string& out_dir) {
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("train: dataset path is empty");
  const DatasetManifest manifest = load_manifest(cfg.dataset);
  DatasetCache cache(cfg.dataset);
  if (cfg.frames > manifest.spec.t_raw)
    throw ConfigError("frames exceeds dataset t_raw");

  const ModelConfig mcfg = ModelConfig::derive(cfg, manifest);
  Model model = Model::init(mcfg, cfg.seed);
  model.set_trainable(true);

  Adam adam(model.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng rng(splitmix64(cfg.seed ^ 0x747261696eull));  // "train"

  const bool with_mask = cfg.use_instance && cfg.lambda > 0.0;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  for (long long ep = 1; ep <= cfg.train_episodes; ++ep) {
    Episode episode =
        sample_episode(manifest, cache, "meta-train", cfg.way, cfg.shot,
                       cfg.query, SampleMode::train, rng);
    Tape tape;
    EpisodeOutcome out;
    {
      TapeScope scope(tape);
      out = episode_forward(model, episode, cfg.frames, cfg.lambda,
                            SampleMode::train, rng, with_mask);
    }
    if (!std::isfinite(out.total))
      throw ContractError("non-finite loss at training episode " +
                          std::to_string(ep) + " (seed " +
                          std::to_string(cfg.seed) + ")");
    tape.backward(out.loss);
    if (ep % cfg.episodes_per_step == 0) {
      adam.step(1.0 / cfg.episodes_per_step);
      adam.zero_grad();
    }

    MetricsRecord rec;
    rec.episode = ep;
    rec.split = "meta-train";
    rec.acc = out.accuracy;
    rec.ce = out.ce;
    rec.mask_loss = out.mask;
    rec.total_loss = out.total;
    metrics << rec.to_json_line() << "\n";

    if (!out_dir.empty() && cfg.checkpoint_interval > 0 &&
        ep % cfg.checkpoint_interval == 0 && ep != cfg.train_episodes) {
      save_checkpoint(
          (fs::path(out_dir) / ("checkpoint_" + std::to_string(ep) + ".i2st"))
              .string(),
          model, cfg, ep, rng.state());
    }
  }
  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "checkpoint.i2st").string(), model,
                    cfg, cfg.train_episodes, rng.state());
  }
  return {std::move(model), cfg.train_episodes};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalSummary evaluate(const Model& model, const DatasetManifest& manifest,
                     SampleSource& source, const EvalOptions& opt,
                     std::ostream* metrics) {
  if (opt.way < 2) throw ConfigError("evaluate: way must be >= 2");
  if (opt.episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  if (opt.frames > manifest.spec.t_raw)
    throw ConfigError("evaluate: frames exceeds dataset t_raw");

  Rng rng(splitmix64(opt.seed ^ 0x6576616cull));  // "eval"
  EvalSummary summary;
  summary.episodes = opt.episodes;
  double acc_sum = 0.0, ce_sum = 0.0;
  for (int e = 1; e <= opt.episodes; ++e) {
    Episode episode = sample_episode(manifest, source, opt.split, opt.way,
                                     opt.shot, opt.query, SampleMode::eval,
                                     rng);
    EpisodeOutcome out = episode_forward(model, episode, opt.frames,
                                         /*lambda=*/0.0, SampleMode::eval, rng,
                                         /*with_mask_loss=*/false);
    acc_sum += out.accuracy;
    ce_sum += out.ce;
    summary.per_episode_acc.push_back(out.accuracy);
    if (metrics != nullptr) {
      MetricsRecord rec;
      rec.episode = e;
      rec.split = opt.split;
      rec.acc = out.accuracy;
      rec.ce = out.ce;
      rec.mask_loss = 0.0;
      rec.total_loss = out.ce;
      *metrics << rec.to_json_line() << "\n";
    }
  }
  summary.mean_acc = acc_sum / opt.episodes;
  summary.mean_ce = ce_sum / opt.episodes;
  double var = 0.0;
  for (double a : summary.per_episode_acc) {
    const double d = a - summary.mean_acc;
    var += d * d;
  }
  var = opt.episodes > 1 ? var / (opt.episodes - 1) : 0.0;
  summary.ci95 = 1.96 * std::sqrt(var / opt.episodes);
  if (metrics != nullptr)
    *metrics << summary.to_json_line(opt.split) << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// Gradcheck driver
// ---------------------------------------------------------------------------

namespace {

// Small fully in-memory setup: a handful of low-resolution videos and a
// reduced model, big enough to exercise every stage of the pipeline.
struct ToyWorld {
  DatasetManifest manifest;
  std::unique_ptr<InMemorySource> source;
  Model model;
  Episode episode;
  int frames = 2;
  double lambda = 0.5;
};

ToyWorld build_toy_world() {
  GenSpec spec;
  spec.train_classes = 3;
  spec.test_classes = 2;
  spec.samples_per_class = 3;
  spec.t_raw = 4;
  spec.render_size = 12;
  spec.crop_size = 8;
  spec.distractors = 1;
  spec.distractor_configs = 2;
  spec.validate();

  ToyWorld w{.manifest = {}, .source = std::make_unique<InMemorySource>(),
             .model = {}, .episode = {}};
  w.manifest.version = 1;
  w.manifest.seed = 77;
  w.manifest.spec = spec;
  w.manifest.classes = build_classes(spec);
  for (const auto& cls : w.manifest.classes)
    for (int sid : cls.sample_ids)
      w.source->add(render_sample(spec, cls, w.manifest.seed, sid));

  ModelConfig mcfg;
  mcfg.img_size = 8;
  mcfg.channels = 4;
  mcfg.heads = 2;
  mcfg.ffn_hidden = 8;
  mcfg.t_max = spec.t_raw;
  // Evaluation point chosen (seed-scanned) so no ReLU pre-activation sits
  // within the finite-difference step of its kink. The extra perturbation
  // moves zero-initialized projections and biases to a generic point, where
  // every parameter has a live gradient.
  w.model = Model::init(mcfg, 14);
  Rng jitter(271828);
  for (auto& [name, p] : w.model.named_params())
    for (long long i = 0; i < p.size(); ++i)
      p.data()(i) += 0.15 * jitter.normal();
  w.model.set_trainable(true);

  Rng rng(9);
  w.episode = sample_episode(w.manifest, *w.source, "meta-train", 2, 1, 1,
                             SampleMode::eval, rng);
  // Break up the renderer's flat color regions: coincident pre-activations
  // sit exactly on ReLU kinks where central differences disagree with the
  // subgradient. Keeps values inside [0, 1).
  Rng noise(31337);
  auto roughen = [&](VideoSample& v) {
    for (double& x : v.frames) x = 0.94 * x + noise.uniform(0.0, 0.05);
  };
  for (auto& v : w.episode.support) roughen(v);
  for (auto& v : w.episode.query) roughen(v);
  return w;
}

double check_primitive_ops(std::ostream& out) {
  Rng rng(4242);
  double worst = 0.0;
  auto run = [&](const char* name, const std::function<Tensor()>& fwd,
                 std::vector<std::pair<std::string, Tensor>> params) {
    const double err = gradcheck(fwd, params, 1e-5).max_rel_err();
    worst = std::max(worst, err);
    out << "  op " << name << ": max rel err " << err << "\n";
  };

  {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 3}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor w = Tensor::randn({3, 3}, rng);
    run("matmul", [&]() { return sum_all(mul(matmul(a, b), w)); },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor x = Tensor::randn({2, 3, 5, 5}, rng);
    Tensor k = Tensor::randn({4, 3, 3, 3}, rng);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    Tensor w = Tensor::randn({2, 4, 3, 3}, rng);
    run("conv2d", [&]() { return sum_all(mul(conv2d(x, k, 2, 1), w)); },
        {{"x", x}, {"k", k}});
  }
  {
    Tensor x = Tensor::randn({4, 6}, rng, 2.0);
    x.set_requires_grad(true);
    Tensor w = Tensor::randn({4, 6}, rng);
    run("softmax", [&]() { return sum_all(mul(softmax(x, 1), w)); },
        {{"x", x}});
    run("sigmoid", [&]() { return sum_all(mul(sigmoid(x), w)); }, {{"x", x}});
    run("relu", [&]() { return sum_all(mul(relu(x), w)); }, {{"x", x}});
  }
  {
    Tensor x = Tensor::randn({3, 8}, rng);
    Tensor g = Tensor::constant({8}, 1.2);
    Tensor b = Tensor::constant({8}, -0.1);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor w = Tensor::randn({3, 8}, rng);
    run("layer_norm",
        [&]() { return sum_all(mul(layer_norm(x, g, b), w)); },
        {{"x", x}, {"g", g}, {"b", b}});
  }
  {
    Tensor l = Tensor::randn({5}, rng, 2.0);
    l.set_requires_grad(true);
    run("cross_entropy", [&]() { return cross_entropy_logits(l, 2); },
        {{"logits", l}});
  }
  {
    Tensor a = Tensor::randn({4, 6}, rng);
    Tensor b = Tensor::randn({4, 6}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    run("bi_mhm", [&]() { return bi_mhm(a, b); }, {{"a", a}, {"b", b}});
    Tensor u = Tensor::randn({6}, rng);
    Tensor v = Tensor::randn({6}, rng);
    u.set_requires_grad(true);
    v.set_requires_grad(true);
    run("cosine_sim", [&]() { return cosine_sim(u, v); },
        {{"u", u}, {"v", v}});
  }
  return worst;
}

}  // namespace

GradcheckOutcome run_gradcheck(const std::string& module, std::ostream& out) {
  if (module != "all" && module != "backbone" && module != "ipm" &&
      module != "sam" && module != "match")
    throw ConfigError("gradcheck module must be one of: all backbone ipm sam "
                      "match, got '" + module + "'");

  GradcheckOutcome outcome;
  out << "primitive op checks (tolerance 1e-6):\n";
  outcome.worst_op = check_primitive_ops(out);
  out << "  worst op error: " << outcome.worst_op << "\n";

  ToyWorld w = build_toy_world();
  Rng unused(0);
  auto forward = [&]() {
    EpisodeOutcome r =
        episode_forward(w.model, w.episode, w.frames, w.lambda,
                        SampleMode::eval, unused, /*with_mask_loss=*/true);
    return r.loss;
  };

  // match = the parameters feeding prototype matching (global fusion stage);
  // matching itself is parameter-free.
  const std::map<std::string, std::string> prefixes = {
      {"backbone", "backbone."},
      {"ipm", "ipm."},
      {"sam", "sam."},
      {"match", "fusion."}};

  std::vector<std::pair<std::string, Tensor>> selected;
  for (auto& [name, p] : w.model.named_params()) {
    if (module == "all") {
      selected.emplace_back(name, p);
      continue;
    }
    const std::string& prefix = prefixes.at(module);
    if (name.rfind(prefix, 0) == 0) selected.emplace_back(name, p);
  }

  out << "episode-loss parameter checks, module=" << module
      << " (tolerance 1e-4):\n";
  GradCheckReport report = gradcheck(forward, selected, 1e-5);
  std::map<std::string, const ParamCheck*> group_worst;
  for (const auto& pc : report.params) {
    const std::string group = pc.name.substr(0, pc.name.find('.'));
    auto it = group_worst.find(group);
    if (it == group_worst.end() || pc.max_rel_err > it->second->max_rel_err)
      group_worst[group] = &pc;
  }
  for (const auto& [group, pc] : group_worst)
    out << "  group " << group << ": max rel err " << pc->max_rel_err
        << " (param " << pc->name << ", analytic " << pc->worst_analytic
        << ", numeric " << pc->worst_numeric << ")\n";
  outcome.worst_model = report.max_rel_err();
  out << "  worst parameter error: " << outcome.worst_model << "\n";
  return outcome;
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<unsigned char>& pixels) {
  if (static_cast<int>(pixels.size()) != width * height)
    throw ContractError("write_pgm: pixel count does not match extents");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()),
          static_cast<std::streamsize>(pixels.size()));
}

}  // namespace i2st
