#include "volnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace volnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& value) {
  int64_t out = 0;
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size()) {
    throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + value + "'");
}

}  // namespace

PhantomSpec RunConfig::phantom_spec() const {
  PhantomSpec spec;
  spec.depth = phantom_depth > 0 ? phantom_depth : (tiny ? 20 : 60);
  spec.height = phantom_height > 0 ? phantom_height : (tiny ? 40 : 128);
  spec.width = phantom_width > 0 ? phantom_width : (tiny ? 40 : 128);
  spec.noise = static_cast<float>(noise);
  spec.min_lesions = lesion_min;
  spec.max_lesions = lesion_max;
  spec.seed = seed;
  spec.train_per_class = n_train_per_class;
  spec.val_per_class = n_val_per_class;
  return spec;
}

void RunConfig::validate() const {
  hp.validate();
  if (workers < 0) throw ConfigError("workers must be >= 0");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  if (!(pos_weight > 0)) throw ConfigError("pos_weight must be > 0");
  if (threshold < 0 || threshold > 1) throw ConfigError("threshold must lie in [0,1]");
  if (eval_split != "train" && eval_split != "val") throw ConfigError("eval_split must be train or val");
  if (n_train_per_class < 0 || n_val_per_class < 0) throw ConfigError("per-class counts must be >= 0");
  model_config().validate();
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  RunConfig cfg;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"variant", [&](const std::string&, const std::string& v) { cfg.variant = parse_variant(v); }},
      {"tiny", [&](const std::string& k, const std::string& v) { cfg.tiny = to_bool(k, v); }},
      {"seed", [&](const std::string& k, const std::string& v) { cfg.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"workers", [&](const std::string& k, const std::string& v) { cfg.workers = static_cast<int>(to_int(k, v)); }},
      {"lr", [&](const std::string& k, const std::string& v) { cfg.hp.lr = to_double(k, v); }},
      {"beta1", [&](const std::string& k, const std::string& v) { cfg.hp.beta1 = to_double(k, v); }},
      {"beta2", [&](const std::string& k, const std::string& v) { cfg.hp.beta2 = to_double(k, v); }},
      {"eps", [&](const std::string& k, const std::string& v) { cfg.hp.eps = to_double(k, v); }},
      {"batch_size", [&](const std::string& k, const std::string& v) { cfg.hp.batch_size = to_int(k, v); }},
      {"epochs", [&](const std::string& k, const std::string& v) { cfg.hp.epochs = to_int(k, v); }},
      {"checkpoint_interval",
       [&](const std::string& k, const std::string& v) { cfg.checkpoint_interval = to_int(k, v); }},
      {"early_stop_macro_f1",
       [&](const std::string& k, const std::string& v) { cfg.early_stop_macro_f1 = to_double(k, v); }},
      {"pos_weight", [&](const std::string& k, const std::string& v) { cfg.pos_weight = to_double(k, v); }},
      {"threshold", [&](const std::string& k, const std::string& v) { cfg.threshold = to_double(k, v); }},
      {"manifest", [&](const std::string&, const std::string& v) { cfg.manifest = v; }},
      {"out_dir", [&](const std::string&, const std::string& v) { cfg.out_dir = v; }},
      {"resume", [&](const std::string&, const std::string& v) { cfg.resume = v; }},
      {"checkpoint", [&](const std::string&, const std::string& v) { cfg.checkpoint = v; }},
      {"input", [&](const std::string&, const std::string& v) { cfg.input = v; }},
      {"eval_split", [&](const std::string&, const std::string& v) { cfg.eval_split = v; }},
      {"clamp_lo", [&](const std::string& k, const std::string& v) { cfg.clamp_lo = to_double(k, v); }},
      {"clamp_hi", [&](const std::string& k, const std::string& v) { cfg.clamp_hi = to_double(k, v); }},
      {"scope", [&](const std::string&, const std::string& v) { cfg.scope = v; }},
      {"synth_dir", [&](const std::string&, const std::string& v) { cfg.synth_dir = v; }},
      {"n_train_per_class",
       [&](const std::string& k, const std::string& v) { cfg.n_train_per_class = to_int(k, v); }},
      {"n_val_per_class", [&](const std::string& k, const std::string& v) { cfg.n_val_per_class = to_int(k, v); }},
      {"phantom_depth", [&](const std::string& k, const std::string& v) { cfg.phantom_depth = to_int(k, v); }},
      {"phantom_height", [&](const std::string& k, const std::string& v) { cfg.phantom_height = to_int(k, v); }},
      {"phantom_width", [&](const std::string& k, const std::string& v) { cfg.phantom_width = to_int(k, v); }},
      {"noise", [&](const std::string& k, const std::string& v) { cfg.noise = to_double(k, v); }},
      {"lesion_min", [&](const std::string& k, const std::string& v) { cfg.lesion_min = to_int(k, v); }},
      {"lesion_max", [&](const std::string& k, const std::string& v) { cfg.lesion_max = to_int(k, v); }},
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
    it->second(key, value);
  }
  return cfg;
}

std::string default_config_text() {
  return R"(# volnet run configuration (defaults shown)
variant = plain            # plain | with_mha
tiny = false               # reduced channels + 16x32x32 inputs
seed = 0
workers = 0                # data-loading threads (0 = single-threaded)

# training
lr = 0.0001
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
batch_size = 4
epochs = 50
checkpoint_interval = 1
early_stop_macro_f1 = 2.0  # stop once val macro F1 reaches this; >1 disables
pos_weight = 1.0
threshold = 0.5

# data
manifest = data/phantom/manifest.csv
out_dir = runs/default
resume =
checkpoint =
input =
eval_split = val
clamp_lo = 0
clamp_hi = 0               # clamp active only when lo < hi

# gradcheck
scope = all

# synth
synth_dir = data/phantom
n_train_per_class = 100
n_val_per_class = 30
phantom_depth = 0          # 0 = default geometry (60x128x128; tiny 20x40x40)
phantom_height = 0
phantom_width = 0
noise = 0.1
lesion_min = 1
lesion_max = 4
)";
}

}  // namespace volnet
