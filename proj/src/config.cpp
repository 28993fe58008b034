#include "i2st/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace i2st {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

KeyValueFile KeyValueFile::parse_string(const std::string& text,
                                        const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.pairs_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    kv.pairs_[key] = value;
  }
  return kv;
}

const std::string* KeyValueFile::lookup(const std::string& key) {
  auto it = pairs_.find(key);
  if (it == pairs_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string KeyValueFile::get_string(const std::string& key,
                                     const std::string& fallback) {
  const std::string* v = lookup(key);
  return v ? *v : fallback;
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const long long r = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" +
                      *v + "'");
  }
}

std::uint64_t KeyValueFile::get_u64(const std::string& key,
                                    std::uint64_t fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const unsigned long long r = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key +
                      "' is not an unsigned integer: '" + *v + "'");
  }
}

double KeyValueFile::get_double(const std::string& key, double fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double r = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + *v +
                      "'");
  }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError(origin_ + ": key '" + key +
                    "' expects true/false/1/0, got '" + *v + "'");
}

void KeyValueFile::finish() const {
  std::string unknown;
  for (const auto& [k, v] : pairs_) {
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty())
    throw ConfigError(origin_ + ": unknown keys: " + unknown);
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  return from_kv(KeyValueFile::parse_file(path));
}

TrainConfig TrainConfig::from_kv(KeyValueFile kv) {
  TrainConfig c;
  c.way = static_cast<int>(kv.get_int("way", c.way));
  c.shot = static_cast<int>(kv.get_int("shot", c.shot));
  c.query = static_cast<int>(kv.get_int("query", c.query));
  c.frames = static_cast<int>(kv.get_int("frames", c.frames));
  c.lambda = kv.get_double("lambda", c.lambda);
  c.lr = kv.get_double("lr", c.lr);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.train_episodes =
      static_cast<int>(kv.get_int("train_episodes", c.train_episodes));
  c.eval_episodes =
      static_cast<int>(kv.get_int("eval_episodes", c.eval_episodes));
  c.episodes_per_step =
      static_cast<int>(kv.get_int("episodes_per_step", c.episodes_per_step));
  c.checkpoint_interval = static_cast<int>(
      kv.get_int("checkpoint_interval", c.checkpoint_interval));
  c.seed = kv.get_u64("seed", c.seed);
  c.eval_seed = kv.get_u64("eval_seed", c.eval_seed);
  c.channels = static_cast<int>(kv.get_int("channels", c.channels));
  c.heads = static_cast<int>(kv.get_int("heads", c.heads));
  c.use_instance = kv.get_bool("use_instance", c.use_instance);
  c.use_spatial = kv.get_bool("use_spatial", c.use_spatial);
  c.use_temporal = kv.get_bool("use_temporal", c.use_temporal);
  c.cross_attention = kv.get_bool("cross_attention", c.cross_attention);
  c.w_global = kv.get_double("w_global", c.w_global);
  c.w_local = kv.get_double("w_local", c.w_local);
  c.dataset = kv.get_string("dataset", c.dataset);
  kv.finish();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (way < 2) throw ConfigError("way must be >= 2");
  if (shot < 1 || query < 1) throw ConfigError("shot and query must be >= 1");
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (lr <= 0.0) throw ConfigError("lr must be > 0");
  if (train_episodes < 0 || eval_episodes < 1)
    throw ConfigError("episode counts invalid");
  if (episodes_per_step < 1) throw ConfigError("episodes_per_step must be >= 1");
  if (channels < 1 || heads < 1 || channels % heads != 0)
    throw ConfigError("channels must be a positive multiple of heads");
  if (!use_spatial && !use_temporal)
    throw ConfigError(
        "at least one of use_spatial/use_temporal must stay enabled; "
        "disabling both leaves no fusion path");
  if (w_global < 0.0 || w_local < 0.0)
    throw ConfigError("matching weights must be >= 0");
  if (w_global == 0.0 && w_local == 0.0)
    throw ConfigError("at least one of w_global/w_local must be positive");
}

}  // namespace i2st
