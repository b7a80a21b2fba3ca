#include "occfill/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "occfill/checkpoint.hpp"
#include "occfill/errors.hpp"
#include "occfill/eval.hpp"

namespace occfill {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::L1Gan: return "l1_gan";
    case Variant::L1GanId: return "l1_gan_id";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "l1_gan") return Variant::L1Gan;
  if (s == "l1_gan_id") return Variant::L1GanId;
  throw ConfigError("unknown variant '" + s + "'");
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (variant == Variant::L1Gan) w.mu_id = w.gamma_pose = 0.0;
  if (variant == Variant::L1GanId) w.gamma_pose = 0.0;
  return w;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw SpecError("learning_rate must be positive");
  if (epochs < 1) throw SpecError("epochs must be at least 1");
  if (batch_size < 1) throw SpecError("batch_size must be at least 1");
  if (checkpoint_every < 1) throw SpecError("checkpoint_every must be at least 1");
  if (generator.image_size != image_size) throw SpecError("generator size differs from image_size");
  effective_weights().validate();
  generator.validate();
  discriminator.validate();
  mask.validate_for_training();
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.epochs = c.get_int("epochs");
  t.batch_size = c.get_int("batch_size");
  t.learning_rate = c.get_real("learning_rate");
  t.adam_beta1 = c.get_real("adam_beta1");
  t.adam_beta2 = c.get_real("adam_beta2");
  t.weights = {c.get_real("lambda_r"), c.get_real("mu_id"), c.get_real("alpha_global"), c.get_real("gamma_pose")};
  t.seed = static_cast<uint64_t>(c.get_int("seed"));
  t.image_size = c.get_int("image_size");
  t.checkpoint_every = c.get_int("checkpoint_every");
  t.variant = parse_variant(c.get("variant"));
  t.generator = {t.image_size, 9, 3, c.get_int("gen_base_width"), c.get_int("gen_depth")};
  t.discriminator = {6, c.get_int("disc_layers"), c.get_int("disc_base_width")};
  t.global_condition_on_target = c.get("global_condition") == "target";
  t.mask = {c.get_real("mask_top"), c.get_real("mask_bottom"), c.get_real("mask_left"), c.get_real("mask_right"),
            c.get_real("mask_jitter")};
  t.max_steps = c.get_int("max_steps");
  t.config_hash = c.hash();
  return t;
}

namespace {

torch::optim::AdamOptions adam_options(const TrainConfig& c) {
  return torch::optim::AdamOptions(c.learning_rate).betas({c.adam_beta1, c.adam_beta2});
}

void set_trainable(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

nlohmann::json generator_json(const GeneratorSpec& s) {
  return {{"image_size", s.image_size}, {"in_channels", s.in_channels}, {"out_channels", s.out_channels},
          {"base_width", s.base_width}, {"depth", s.depth}};
}

GeneratorSpec generator_from_json(const nlohmann::json& j) {
  return {j.at("image_size").get<int64_t>(), j.at("in_channels").get<int64_t>(), j.at("out_channels").get<int64_t>(),
          j.at("base_width").get<int64_t>(), j.at("depth").get<int64_t>()};
}

nlohmann::json discriminator_json(const DiscriminatorSpec& s) {
  return {{"in_channels", s.in_channels}, {"n_layers", s.n_layers}, {"base_width", s.base_width}};
}

DiscriminatorSpec discriminator_from_json(const nlohmann::json& j) {
  return {j.at("in_channels").get<int64_t>(), j.at("n_layers").get<int64_t>(), j.at("base_width").get<int64_t>()};
}

struct OptimizerSlot {
  const char* name;
  torch::nn::Module* module;
  torch::optim::Adam* opt;
};

std::vector<OptimizerSlot> optimizer_slots(const TrainState& s) {
  return {{"generator", s.generator.ptr().get(), s.opt_generator.get()},
          {"disc_global", s.disc_global.ptr().get(), s.opt_disc_global.get()},
          {"disc_pose", s.disc_pose.ptr().get(), s.opt_disc_pose.get()}};
}

void check_finite(const LossReport& r, int64_t step) {
  const double vals[] = {r.l_r, r.l_id, r.l_adv_global_g, r.l_adv_pose_g, r.l_total_g, r.l_d_global, r.l_d_pose};
  for (double v : vals) {
    if (!std::isfinite(v)) {
      throw NumericsError("non-finite loss at step " + std::to_string(step) + ": " + LossReport::csv_header() +
                          " = " + r.csv_row(step));
    }
  }
}

double item(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

}  // namespace

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.generator = build_generator(config.generator, derive_seed(config.seed, 101));
  s.disc_global = build_patch_discriminator(config.discriminator, derive_seed(config.seed, 102));
  s.disc_pose = build_patch_discriminator(config.discriminator, derive_seed(config.seed, 103));
  s.opt_generator = std::make_unique<torch::optim::Adam>(s.generator->parameters(), adam_options(config));
  s.opt_disc_global = std::make_unique<torch::optim::Adam>(s.disc_global->parameters(), adam_options(config));
  s.opt_disc_pose = std::make_unique<torch::optim::Adam>(s.disc_pose->parameters(), adam_options(config));
  s.rng.seed(derive_seed(config.seed, 104));
  return s;
}

LossReport train_step(TrainState& state, const std::vector<TrainingSample>& batch, const TrainConfig& config,
                      const IdentityEmbedder* embedder, const std::function<void(TrainPhase)>& on_phase) {
  if (batch.empty()) throw ShapeError("empty training batch");
  const auto b = collate(batch);
  if (b.target.size(2) != config.image_size) throw ShapeError("batch size does not match image_size");
  const auto w = config.effective_weights();
  if (w.mu_id > 0.0 && embedder == nullptr) throw SpecError("identity loss enabled without an embedder");
  auto notify = [&](TrainPhase p) {
    if (on_phase) on_phase(p);
  };

  LossReport report;
  state.generator->train();
  auto fake = state.generator->forward(b.masked, b.reference, b.pose_map);
  const auto& global_condition = config.global_condition_on_target ? b.target : b.masked;

  // (1) global discriminator
  if (w.alpha_global > 0.0) {
    state.opt_disc_global->zero_grad();
    auto loss = adversarial_d_loss(state.disc_global, b.target, fake, global_condition);
    report.l_d_global = loss.item<double>();
    if (!std::isfinite(report.l_d_global)) check_finite(report, state.step);
    loss.backward();
    state.opt_disc_global->step();
  }
  notify(TrainPhase::GlobalDiscriminatorUpdated);

  // (2) pose discriminator
  if (w.gamma_pose > 0.0) {
    state.opt_disc_pose->zero_grad();
    auto loss = adversarial_d_loss(state.disc_pose, b.target, fake, b.pose_map);
    report.l_d_pose = loss.item<double>();
    if (!std::isfinite(report.l_d_pose)) check_finite(report, state.step);
    loss.backward();
    state.opt_disc_pose->step();
  }
  notify(TrainPhase::PoseDiscriminatorUpdated);

  // (3) generator
  set_trainable(*state.disc_global, false);
  set_trainable(*state.disc_pose, false);
  GeneratorTerms terms;
  terms.l_r = reconstruction_loss(fake, b.target);
  if (w.mu_id > 0.0) terms.l_id = identity_loss(fake, b.reference, *embedder);
  if (w.alpha_global > 0.0) terms.l_adv_global_g = adversarial_g_loss(state.disc_global, fake, global_condition);
  if (w.gamma_pose > 0.0) {
    terms.l_adv_pose_g = adversarial_g_loss(state.disc_pose, gate_pose_gradient(fake, b.mask), b.pose_map);
  }
  report.l_r = item(terms.l_r);
  report.l_id = item(terms.l_id);
  report.l_adv_global_g = item(terms.l_adv_global_g);
  report.l_adv_pose_g = item(terms.l_adv_pose_g);
  report.l_total_g = total_generator_loss(LossTerms{report.l_r, report.l_id, report.l_adv_global_g,
                                                    report.l_adv_pose_g},
                                          w);
  try {
    check_finite(report, state.step);
  } catch (...) {
    set_trainable(*state.disc_global, true);
    set_trainable(*state.disc_pose, true);
    throw;
  }
  state.opt_generator->zero_grad();
  total_generator_loss(terms, w).backward();
  state.opt_generator->step();
  set_trainable(*state.disc_global, true);
  set_trainable(*state.disc_pose, true);
  notify(TrainPhase::GeneratorUpdated);

  ++state.step;
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["kind"] = "train_state";
  meta["step"] = state.step;
  meta["epoch"] = state.epoch;
  meta["config_hash"] = config.config_hash;
  meta["generator"] = generator_json(state.generator->spec());
  meta["discriminator"] = discriminator_json(state.disc_global->spec());
  meta["weights"] = {{"lambda_r", config.weights.lambda_r},
                     {"mu_id", config.weights.mu_id},
                     {"alpha_global", config.weights.alpha_global},
                     {"gamma_pose", config.weights.gamma_pose}};
  meta["variant"] = to_string(config.variant);
  meta["global_condition"] = config.global_condition_on_target ? "target" : "masked";
  meta["adam"] = {{"learning_rate", config.learning_rate},
                  {"beta1", config.adam_beta1},
                  {"beta2", config.adam_beta2}};
  std::ostringstream rng;
  rng << state.rng;
  meta["rng"] = rng.str();

  std::vector<NamedTensor> tensors;
  for (const auto& slot : optimizer_slots(state)) {
    auto mt = module_tensors(*slot.module, std::string(slot.name) + ".");
    tensors.insert(tensors.end(), mt.begin(), mt.end());
  }
  nlohmann::json steps;
  for (const auto& slot : optimizer_slots(state)) {
    auto params = slot.module->parameters();
    auto& st = slot.opt->state();
    std::vector<int64_t> counts;
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = st.find(params[i].unsafeGetTensorImpl());
      if (it == st.end()) {
        counts.push_back(-1);
        continue;
      }
      const auto& a = static_cast<const torch::optim::AdamParamState&>(*it->second);
      counts.push_back(a.step());
      const std::string base = std::string("adam.") + slot.name + "." + std::to_string(i);
      tensors.push_back({base + ".exp_avg", a.exp_avg()});
      tensors.push_back({base + ".exp_avg_sq", a.exp_avg_sq()});
    }
    steps[slot.name] = counts;
  }
  meta["adam"]["steps"] = steps;
  write_container(path, meta, tensors);
}

void load_checkpoint_into(TrainState& state, const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "train_state") throw CheckpointError(path.string() + " is not a training checkpoint");

  // Validate everything before mutating the state.
  std::vector<std::string> diff;
  for (const auto& slot : optimizer_slots(state)) {
    auto d = module_shape_diff(*slot.module, c, std::string(slot.name) + ".");
    diff.insert(diff.end(), d.begin(), d.end());
  }
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the network:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw SpecError(msg);
  }
  std::mt19937_64 rng;
  std::map<std::string, std::vector<int64_t>> steps;
  try {
    std::istringstream in(c.meta.at("rng").get<std::string>());
    in >> rng;
    if (!in) throw CheckpointError(path.string() + ": bad rng state");
    for (const auto& slot : optimizer_slots(state)) {
      steps[slot.name] = c.meta.at("adam").at("steps").at(slot.name).get<std::vector<int64_t>>();
      const auto params = slot.module->parameters();
      if (steps[slot.name].size() != params.size()) throw CheckpointError(path.string() + ": optimizer table size");
      for (size_t i = 0; i < params.size(); ++i) {
        if (steps[slot.name][i] < 0) continue;
        const std::string base = std::string("adam.") + slot.name + "." + std::to_string(i);
        const auto* m = c.find(base + ".exp_avg");
        const auto* v = c.find(base + ".exp_avg_sq");
        if (!m || !v || m->sizes() != params[i].sizes() || v->sizes() != params[i].sizes()) {
          throw CheckpointError(path.string() + ": optimizer moments for " + base + " missing or mis-shaped");
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }

  for (const auto& slot : optimizer_slots(state)) {
    load_module_tensors(*slot.module, c, std::string(slot.name) + ".");
    auto params = slot.module->parameters();
    auto& st = slot.opt->state();
    for (size_t i = 0; i < params.size(); ++i) {
      const auto key = params[i].unsafeGetTensorImpl();
      const auto count = steps[slot.name][i];
      if (count < 0) {
        st.erase(key);
        continue;
      }
      const std::string base = std::string("adam.") + slot.name + "." + std::to_string(i);
      auto a = std::make_unique<torch::optim::AdamParamState>();
      a->step(count);
      a->exp_avg(c.find(base + ".exp_avg")->clone());
      a->exp_avg_sq(c.find(base + ".exp_avg_sq")->clone());
      st[key] = std::move(a);
    }
  }
  state.step = c.meta.at("step").get<int64_t>();
  state.epoch = c.meta.at("epoch").get<int64_t>();
  state.rng = rng;
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "train_state") throw CheckpointError(path.string() + " is not a training checkpoint");
  TrainConfig cfg;
  try {
    cfg.generator = generator_from_json(c.meta.at("generator"));
    cfg.discriminator = discriminator_from_json(c.meta.at("discriminator"));
    cfg.image_size = cfg.generator.image_size;
    cfg.learning_rate = c.meta.at("adam").at("learning_rate").get<double>();
    cfg.adam_beta1 = c.meta.at("adam").at("beta1").get<double>();
    cfg.adam_beta2 = c.meta.at("adam").at("beta2").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  auto state = TrainState::create(cfg);
  load_checkpoint_into(state, path);
  return state;
}

Generator load_generator(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "train_state") throw CheckpointError(path.string() + " is not a training checkpoint");
  GeneratorSpec spec;
  try {
    spec = generator_from_json(c.meta.at("generator"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  Generator g(spec);
  load_module_tensors(*g, c, "generator.");
  g->eval();
  return g;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  const auto ckdir = dir / "checkpoints";
  if (!std::filesystem::is_directory(ckdir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  for (const auto& e : std::filesystem::directory_iterator(ckdir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || e.path().extension() != ".bin") continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int64_t step) {
  char name[64];
  std::snprintf(name, sizeof(name), "ckpt_%08lld.bin", static_cast<long long>(step));
  return out_dir / "checkpoints" / name;
}

// Keeps the header and rows with step < `keep_below`.
void truncate_loss_csv(const std::filesystem::path& path, int64_t keep_below) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("step", 0) == 0 || std::stoll(line.substr(0, line.find(','))) < keep_below) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

std::filesystem::path train(const TrainConfig& config, const DatasetManifest& manifest,
                            const IdentityEmbedder* embedder, const TrainOptions& options) {
  config.validate();
  const auto train_idx = manifest.indices(Split::Train);
  if (train_idx.empty()) throw TrainingError("manifest has no train split");
  if (manifest.image_size() != config.image_size) throw SpecError("manifest image size differs from image_size");
  if (embedder && !embedder->frozen()) throw TrainingError("identity embedder must be frozen");

  SampleBuilder builder(manifest, config.mask);
  auto state = TrainState::create(config);
  std::filesystem::create_directories(options.out_dir / "checkpoints");
  const auto csv_path = options.out_dir / "losses.csv";
  if (options.resume) {
    if (auto latest = latest_checkpoint(options.out_dir)) {
      load_checkpoint_into(state, *latest);
      truncate_loss_csv(csv_path, state.step);
    }
  }
  if (!options.resume || !std::filesystem::exists(csv_path)) {
    std::ofstream(csv_path, std::ios::trunc) << LossReport::csv_header() << '\n';
  }
  std::ofstream csv(csv_path, std::ios::app);

  const auto n = static_cast<int64_t>(train_idx.size());
  const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = steps_per_epoch * config.epochs;
  std::filesystem::path last = latest_checkpoint(options.out_dir).value_or(std::filesystem::path{});

  while (state.step < total_steps && (config.max_steps == 0 || state.step < config.max_steps)) {
    const int64_t epoch = state.step / steps_per_epoch;
    const int64_t pos = state.step % steps_per_epoch;
    state.epoch = epoch;
    std::vector<size_t> order = train_idx;
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0x5EED0000ULL + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const auto begin = pos * config.batch_size;
    const auto end = std::min(n, begin + config.batch_size);
    std::vector<TrainingSample> batch;
    for (int64_t k = begin; k < end; ++k) batch.push_back(builder.build(order[static_cast<size_t>(k)], state.rng()));

    const int64_t step = state.step;
    const auto report = train_step(state, batch, config, embedder);
    csv << report.csv_row(step) << '\n';
    csv.flush();
    if (options.on_step) options.on_step(step, report);

    const bool epoch_end = state.step % steps_per_epoch == 0;
    if (epoch_end) state.epoch = state.step / steps_per_epoch;
    if (epoch_end || state.step % config.checkpoint_every == 0) {
      last = checkpoint_path(options.out_dir, state.step);
      save_checkpoint(state, config, last);
    }
  }
  if (last.empty()) {
    last = checkpoint_path(options.out_dir, state.step);
    save_checkpoint(state, config, last);
  }
  return last;
}

// ---------------------------------------------------------------------------
// Ablation

std::string AblationReport::to_csv() const {
  std::string out = "variant,seed,psnr,ssim,verification,error\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f,%.6f,", to_string(r.variant).c_str(),
                  static_cast<unsigned long long>(r.seed), r.psnr, r.ssim, r.verification);
    out += buf + r.error + "\n";
  }
  return out;
}

std::string AblationReport::to_table() const {
  std::string out = "variant      seed       PSNR     SSIM    verif\n";
  char buf[256];
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      std::snprintf(buf, sizeof(buf), "%-10s %6llu   failed: %s\n", to_string(r.variant).c_str(),
                    static_cast<unsigned long long>(r.seed), r.error.c_str());
    } else {
      std::snprintf(buf, sizeof(buf), "%-10s %6llu   %7.3f  %7.4f  %7.4f\n", to_string(r.variant).c_str(),
                    static_cast<unsigned long long>(r.seed), r.psnr, r.ssim, r.verification);
    }
    out += buf;
  }
  return out;
}

AblationReport run_ablation(const TrainConfig& base, const DatasetManifest& manifest,
                            const IdentityEmbedder& embedder, const std::filesystem::path& out_dir,
                            const std::vector<uint64_t>& seeds) {
  AblationReport report;
  for (uint64_t seed : seeds) {
    for (Variant v : {Variant::L1Gan, Variant::L1GanId, Variant::Full}) {
      AblationRow row;
      row.variant = v;
      row.seed = seed;
      try {
        TrainConfig cfg = base;
        cfg.seed = seed;
        cfg.variant = v;
        const auto run_dir = out_dir / ("seed_" + std::to_string(seed)) / to_string(v);
        std::filesystem::remove_all(run_dir);
        const auto ckpt = train(cfg, manifest, &embedder, TrainOptions{run_dir, false, nullptr});
        auto g = load_generator(ckpt);
        EvalOptions eo;
        eo.mask = cfg.mask;
        eo.seed = seed;
        const auto m = evaluate(g, manifest, embedder, eo);
        row.psnr = m.psnr_mean;
        row.ssim = m.ssim_mean;
        row.verification = m.verif_vs_groundtruth;
      } catch (const std::exception& e) {
        row.error = e.what();
        std::cerr << "ablation: variant " << to_string(v) << " seed " << seed << " failed: " << e.what() << '\n';
      }
      report.rows.push_back(row);
    }
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir / "ablation.csv") << report.to_csv();
  std::ofstream(out_dir / "ablation.txt") << report.to_table();
  return report;
}

}  // namespace occfill
