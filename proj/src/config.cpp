#include "occfill/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "occfill/errors.hpp"
#include "occfill/image.hpp"

namespace occfill {

namespace {

using K = Config::Kind;

std::vector<Config::KeyInfo> build_schema() {
  return {
      // data
      {"manifest", K::Path, "", {}, "dataset manifest (JSON Lines)"},
      {"data_dir", K::Path, "data/toy", {}, "output directory for generated or prepared data"},
      {"out_dir", K::Path, "runs/default", {}, "output directory for checkpoints and reports"},
      {"image_size", K::Integer, "64", {}, "aligned square image size"},
      {"seed", K::Integer, "0", {}, "global seed"},
      {"threads", K::Integer, "0", {}, "intra-op threads (0 keeps the library default)"},
      {"toy_identities", K::Integer, "10", {}, "toy dataset identity count"},
      {"toy_images_per_identity", K::Integer, "20", {}, "toy dataset images per identity"},
      {"landmarks_csv", K::Path, "", {}, "landmark CSV for prepare-data"},
      {"source_root", K::Path, "", {}, "base directory of image paths in landmarks_csv"},
      {"mask_top", K::Real, "0.25", {}, "occlusion box top edge (fraction)"},
      {"mask_bottom", K::Real, "0.6", {}, "occlusion box bottom edge (fraction)"},
      {"mask_left", K::Real, "0.15", {}, "occlusion box left edge (fraction)"},
      {"mask_right", K::Real, "0.85", {}, "occlusion box right edge (fraction)"},
      {"mask_jitter", K::Real, "0.05", {}, "per-edge jitter during training (fraction)"},
      // networks
      {"gen_base_width", K::Integer, "32", {}, "generator filters at the first level"},
      {"gen_depth", K::Integer, "0", {}, "generator levels (0 = log2(size) - 2)"},
      {"disc_layers", K::Integer, "3", {}, "stride-2 layers in each patch discriminator"},
      {"disc_base_width", K::Integer, "32", {}, "discriminator filters at the first layer"},
      {"global_condition", K::Choice, "masked", {"masked", "target"}, "conditioning of the global discriminator"},
      {"embed_dim", K::Integer, "128", {}, "identity embedding dimension"},
      // identity embedder
      {"embedder", K::Path, "", {}, "identity embedder file"},
      {"embedder_epochs", K::Integer, "30", {}, "embedder pretraining epochs"},
      {"embedder_batch_size", K::Integer, "32", {}, "embedder pretraining batch size"},
      {"embedder_learning_rate", K::Real, "0.001", {}, "embedder pretraining learning rate"},
      // pose regressor
      {"pose_regressor", K::Path, "", {}, "pose regressor file"},
      {"pose_epochs", K::Integer, "30", {}, "pose regressor training epochs"},
      {"pose_batch_size", K::Integer, "32", {}, "pose regressor batch size"},
      {"pose_learning_rate", K::Real, "0.001", {}, "pose regressor learning rate"},
      // training
      {"epochs", K::Integer, "100", {}, "training epochs"},
      {"batch_size", K::Integer, "16", {}, "training batch size"},
      {"learning_rate", K::Real, "0.0002", {}, "Adam learning rate"},
      {"adam_beta1", K::Real, "0.5", {}, "Adam first-moment decay"},
      {"adam_beta2", K::Real, "0.999", {}, "Adam second-moment decay"},
      {"lambda_r", K::Real, "1", {}, "reconstruction weight"},
      {"mu_id", K::Real, "100", {}, "identity weight"},
      {"alpha_global", K::Real, "100", {}, "global adversarial weight"},
      {"gamma_pose", K::Real, "70", {}, "pose adversarial weight"},
      {"checkpoint_every", K::Integer, "500", {}, "checkpoint interval in steps"},
      {"variant", K::Choice, "full", {"full", "l1_gan", "l1_gan_id"}, "loss combination"},
      {"resume", K::Boolean, "false", {}, "resume from the latest checkpoint in out_dir"},
      {"max_steps", K::Integer, "0", {}, "stop after this many total steps (0 = no limit)"},
      // evaluation and inference
      {"checkpoint", K::Path, "", {}, "generator checkpoint"},
      {"hole_only", K::Boolean, "false", {}, "compute image metrics on the hole only"},
      {"input_image", K::Path, "", {}, "single-image inference input"},
      {"reference_image", K::Path, "", {}, "reference identity image"},
      {"output_image", K::Path, "", {}, "single-image inference output"},
      {"pose", K::Text, "0,0,0", {}, "pitch,yaw,roll in degrees"},
      {"frame_dir", K::Path, "", {}, "directory of numbered input frames"},
      {"ground_truth_dir", K::Path, "", {}, "optional directory of ground-truth frames"},
      {"pose_source", K::Choice, "fixed", {"fixed", "per_frame_file", "regressor"}, "per-frame pose source"},
      {"pose_file", K::Path, "", {}, "per-frame pose CSV (frame,pitch,yaw,roll)"},
      {"poses", K::Text, "15,20,0;15,40,0", {}, "pose list for pose-sweep"},
      {"sample_index", K::Integer, "0", {}, "test record used by pose-sweep"},
      {"bench_size", K::Integer, "128", {}, "benchmark image size"},
      {"bench_iters", K::Integer, "20", {}, "benchmark timed iterations"},
      {"ablation_seeds", K::Text, "0", {}, "comma-separated seeds for the ablation runner"},
  };
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

}  // namespace

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

const std::vector<Config::KeyInfo>& Config::schema() {
  static const std::vector<KeyInfo> s = build_schema();
  return s;
}

Config::Config() {
  for (const auto& k : schema()) values_[k.key] = k.default_value;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Config c;
  c.merge_text(ss.str(), path.string());
  return c;
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const Config::KeyInfo& Config::info(const std::string& key) const {
  for (const auto& k : schema()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown key '" + key + "'");
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& ki = info(key);
  switch (ki.kind) {
    case K::Integer: {
      int64_t v{};
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
      }
      break;
    }
    case K::Real: {
      try {
        size_t used = 0;
        (void)std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a real number, got '" + value + "'");
      }
      break;
    }
    case K::Boolean: {
      bool b{};
      if (!parse_bool(value, b)) throw ConfigError("key '" + key + "' expects a boolean, got '" + value + "'");
      break;
    }
    case K::Choice: {
      if (std::find(ki.choices.begin(), ki.choices.end(), value) == ki.choices.end()) {
        throw ConfigError("key '" + key + "' does not accept '" + value + "'");
      }
      break;
    }
    case K::Text:
    case K::Path:
      break;
  }
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
  (void)info(key);
  return values_.at(key);
}

int64_t Config::get_int(const std::string& key) const { return std::stoll(get(key)); }
double Config::get_real(const std::string& key) const { return std::stod(get(key)); }

bool Config::get_bool(const std::string& key) const {
  bool b{};
  parse_bool(get(key), b);
  return b;
}

std::filesystem::path Config::get_path(const std::string& key) const { return get(key); }

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

uint64_t Config::hash() const {
  const auto d = dump();
  return fnv1a(d.data(), d.size());
}

void Config::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved_config");
  if (!out) throw IoError("cannot write " + (dir / "resolved_config").string());
  out << dump();
}

}  // namespace occfill
