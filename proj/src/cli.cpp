#include "occfill/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include "occfill/config.hpp"
#include "occfill/datagen.hpp"
#include "occfill/errors.hpp"
#include "occfill/eval.hpp"
#include "occfill/networks.hpp"
#include "occfill/pipeline.hpp"
#include "occfill/toy_faces.hpp"
#include "occfill/trainer.hpp"

namespace occfill {

namespace {

namespace fs = std::filesystem;

struct Invocation {
  std::string config_file;
  std::vector<std::string> overrides;
  // Shortcut flags, each mapped onto a config key.
  std::map<std::string, std::string> shortcuts;
};

MaskSpec mask_from(const Config& c) {
  return {c.get_real("mask_top"), c.get_real("mask_bottom"), c.get_real("mask_left"), c.get_real("mask_right"),
          c.get_real("mask_jitter")};
}

fs::path manifest_path(const Config& c) {
  auto p = c.get_path("manifest");
  return p.empty() ? c.get_path("data_dir") / "manifest.jsonl" : p;
}

DatasetManifest load_manifest(const Config& c) { return DatasetManifest::load(manifest_path(c), c.get_int("image_size")); }

fs::path embedder_path(const Config& c) {
  auto p = c.get_path("embedder");
  return p.empty() ? c.get_path("out_dir") / "embedder.bin" : p;
}

fs::path regressor_path(const Config& c) {
  auto p = c.get_path("pose_regressor");
  return p.empty() ? c.get_path("out_dir") / "pose_regressor.bin" : p;
}

fs::path checkpoint_path(const Config& c) {
  auto p = c.get_path("checkpoint");
  if (!p.empty()) return p;
  if (auto latest = latest_checkpoint(c.get_path("out_dir"))) return *latest;
  throw IoError("no checkpoint given and none found under " + c.get_path("out_dir").string());
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
  std::vector<uint64_t> seeds;
  for (const auto& f : split(text, ',')) {
    const auto t = trim(f);
    if (t.empty()) continue;
    try {
      seeds.push_back(std::stoull(t));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + t + "' in ablation_seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("ablation_seeds is empty");
  return seeds;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_toy_data(const Config& c) {
  const auto dir = c.get_path("data_dir");
  const auto m = generate_toy_dataset(c.get_int("toy_identities"), c.get_int("toy_images_per_identity"),
                                      c.get_int("image_size"), static_cast<uint64_t>(c.get_int("seed")), dir);
  c.write_resolved(dir);
  std::cout << "wrote " << m.records().size() << " images (" << m.identities().size() << " identities, "
            << m.indices(Split::Train).size() << " train / " << m.indices(Split::Test).size() << " test) to "
            << dir.string() << '\n';
}

void cmd_prepare_data(const Config& c) {
  const auto csv = c.get_path("landmarks_csv");
  if (csv.empty()) throw ConfigError("prepare-data needs landmarks_csv");
  auto root = c.get_path("source_root");
  if (root.empty()) root = csv.parent_path();
  auto records = import_landmark_csv(csv);
  for (auto& r : records) {
    fs::path p = r.image_path;
    if (!p.is_absolute()) r.image_path = fs::absolute(root / p).string();
  }
  const auto dir = c.get_path("data_dir");
  DatasetManifest m(std::move(records), c.get_int("image_size"), dir);
  // Fail early on unreadable images or bad landmarks.
  SampleBuilder builder(m, mask_from(c));
  for (size_t i = 0; i < m.records().size(); ++i) builder.aligned(i);
  m.save(dir / "manifest.jsonl");
  c.write_resolved(dir);
  std::cout << "manifest with " << m.records().size() << " records written to " << (dir / "manifest.jsonl").string()
            << '\n';
}

void cmd_pretrain_embedder(const Config& c) {
  const auto manifest = load_manifest(c);
  EmbedderTrainConfig ec;
  ec.dim = c.get_int("embed_dim");
  ec.input_size = c.get_int("image_size");
  ec.epochs = c.get_int("embedder_epochs");
  ec.batch_size = c.get_int("embedder_batch_size");
  ec.learning_rate = c.get_real("embedder_learning_rate");
  ec.seed = static_cast<uint64_t>(c.get_int("seed"));
  const auto result = pretrain_identity_embedder(manifest, ec);
  const auto path = embedder_path(c);
  result.embedder->save(path);
  c.write_resolved(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::printf("embedder: train accuracy %.3f, test accuracy %.3f -> %s\n", result.train_accuracy,
              result.test_accuracy, path.string().c_str());
}

std::shared_ptr<IdentityEmbedder> embedder_for(const Config& c, bool required) {
  const auto path = embedder_path(c);
  if (!required && !fs::exists(path)) return nullptr;
  return load_identity_embedder(path);
}

void cmd_train(const Config& c) {
  const auto manifest = load_manifest(c);
  const auto tc = TrainConfig::from_config(c);
  const auto embedder = embedder_for(c, tc.effective_weights().mu_id > 0.0);
  const auto out = c.get_path("out_dir");
  fs::create_directories(out);
  c.write_resolved(out);
  TrainOptions opts{out, c.get_bool("resume"), [](int64_t step, const LossReport& r) {
                      if (step % 50 == 0) {
                        std::printf("step %6lld  l_r %.4f  l_id %.4f  g_global %.4f  g_pose %.4f  d_global %.4f  "
                                    "d_pose %.4f\n",
                                    static_cast<long long>(step), r.l_r, r.l_id, r.l_adv_global_g, r.l_adv_pose_g,
                                    r.l_d_global, r.l_d_pose);
                        std::fflush(stdout);
                      }
                    }};
  const auto final_path = train(tc, manifest, embedder.get(), opts);
  std::cout << "final checkpoint: " << final_path.string() << '\n';
}

void cmd_train_pose_regressor(const Config& c) {
  const auto manifest = load_manifest(c);
  PoseTrainConfig pc;
  pc.input_size = c.get_int("image_size");
  pc.epochs = c.get_int("pose_epochs");
  pc.batch_size = c.get_int("pose_batch_size");
  pc.learning_rate = c.get_real("pose_learning_rate");
  pc.seed = static_cast<uint64_t>(c.get_int("seed"));
  pc.mask = mask_from(c);
  const auto r = train_pose_regressor(manifest, pc);
  const auto path = regressor_path(c);
  save_pose_regressor(r.regressor, path);
  c.write_resolved(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::printf("pose regressor: test MAE pitch %.2f yaw %.2f roll %.2f deg -> %s\n", r.test_mae_pitch, r.test_mae_yaw,
              r.test_mae_roll, path.string().c_str());
}

void cmd_evaluate(const Config& c) {
  const auto manifest = load_manifest(c);
  auto g = load_generator(checkpoint_path(c));
  const auto embedder = embedder_for(c, true);
  EvalOptions eo;
  eo.mask = mask_from(c);
  eo.seed = static_cast<uint64_t>(c.get_int("seed"));
  eo.hole_only = c.get_bool("hole_only");
  const auto report = evaluate(g, manifest, *embedder, eo);
  const auto out = c.get_path("out_dir");
  fs::create_directories(out);
  std::ofstream(out / "metrics.json") << report.to_json() << '\n';
  std::ofstream(out / "metrics.txt") << report.to_table();
  c.write_resolved(out);
  std::cout << report.to_table();
}

void cmd_infer(const Config& c) {
  const auto input = c.get_path("input_image"), reference = c.get_path("reference_image");
  const auto output = c.get_path("output_image");
  if (input.empty() || reference.empty() || output.empty()) {
    throw ConfigError("infer needs input_image, reference_image and output_image");
  }
  auto g = load_generator(checkpoint_path(c));
  const int64_t size = g->spec().image_size;
  MaskSpec spec = mask_from(c);
  spec.jitter = 0.0;
  const auto occ = apply_occlusion(resize_image(load_png(input), size, size), spec, 0);
  const auto out = infer_single(g, occ.masked, occ.mask, resize_image(load_png(reference), size, size),
                                parse_pose(c.get("pose")));
  save_png(output, out);
  c.write_resolved(output.parent_path().empty() ? fs::path(".") : output.parent_path());
  std::cout << "wrote " << output.string() << '\n';
}

void cmd_infer_video(const Config& c) {
  VideoJob job;
  job.frame_dir = c.get_path("frame_dir");
  job.reference_image = c.get_path("reference_image");
  if (job.frame_dir.empty() || job.reference_image.empty()) {
    throw ConfigError("infer-video needs frame_dir and reference_image");
  }
  const auto kind = c.get("pose_source");
  if (kind == "fixed") {
    job.pose_source = {PoseSource::Kind::Fixed, parse_pose(c.get("pose")), std::nullopt};
  } else if (kind == "per_frame_file") {
    job.pose_source = {PoseSource::Kind::PerFrameFile, std::nullopt, c.get_path("pose_file")};
    if (job.pose_source.file->empty()) throw ConfigError("pose_source per_frame_file needs pose_file");
  } else {
    job.pose_source = {PoseSource::Kind::Regressor, std::nullopt, regressor_path(c)};
  }
  job.mask_spec = mask_from(c);
  job.checkpoint = checkpoint_path(c);
  job.out_dir = c.get_path("out_dir");
  if (auto gt = c.get_path("ground_truth_dir"); !gt.empty()) job.ground_truth_dir = gt;
  const auto r = infer_video(job);
  c.write_resolved(job.out_dir);
  std::printf("wrote %zu frames to %s (mean temporal L1 %.5f)\n", r.frames.size(), job.out_dir.string().c_str(),
              r.mean_temporal_l1);
}

void cmd_pose_sweep(const Config& c) {
  const auto manifest = load_manifest(c);
  auto g = load_generator(checkpoint_path(c));
  const auto test = manifest.indices(Split::Test);
  const auto k = c.get_int("sample_index");
  if (test.empty() || k < 0 || k >= static_cast<int64_t>(test.size())) {
    throw ConfigError("sample_index out of range for the test split");
  }
  MaskSpec spec = mask_from(c);
  spec.jitter = 0.0;
  SampleBuilder builder(manifest, spec);
  const auto idx = test[static_cast<size_t>(k)];
  const auto sample = builder.build(idx, derive_seed(static_cast<uint64_t>(c.get_int("seed")), idx));
  const auto sweep = pose_sweep(g, sample, parse_pose_list(c.get("poses")));
  const auto out = c.get_path("out_dir");
  save_png(out / "pose_sweep.png", sweep.sheet);
  c.write_resolved(out);
  std::cout << "wrote " << (out / "pose_sweep.png").string() << " with " << sweep.cells.size() << " cells\n";
}

void cmd_ablation(const Config& c) {
  const auto manifest = load_manifest(c);
  const auto tc = TrainConfig::from_config(c);
  const auto embedder = embedder_for(c, true);
  const auto out = c.get_path("out_dir");
  fs::create_directories(out);
  c.write_resolved(out);
  const auto report = run_ablation(tc, manifest, *embedder, out, parse_seeds(c.get("ablation_seeds")));
  std::cout << report.to_table();

  // Directional comparison across seeds, for information only.
  std::map<uint64_t, std::map<Variant, double>> psnr_by_seed;
  for (const auto& r : report.rows) {
    if (r.error.empty()) psnr_by_seed[r.seed][r.variant] = r.psnr;
  }
  int wins = 0, compared = 0;
  for (auto& [seed, m] : psnr_by_seed) {
    if (m.count(Variant::Full) && m.count(Variant::L1Gan)) {
      ++compared;
      wins += m[Variant::Full] >= m[Variant::L1Gan];
    }
  }
  std::printf("full >= l1_gan on PSNR in %d of %d seeds (informational)\n", wins, compared);
}

void cmd_benchmark(const Config& c) {
  const int64_t size = c.get_int("bench_size");
  const int64_t iters = c.get_int("bench_iters");
  if (iters < 1) throw ConfigError("bench_iters must be at least 1");
  GeneratorSpec spec{size, 9, 3, c.get_int("gen_base_width"), c.get_int("gen_depth")};
  Generator g{nullptr};
  std::string origin = "untrained weights";
  const auto ck = c.get_path("checkpoint");
  if (!ck.empty()) {
    g = load_generator(ck);
    origin = ck.string();
    if (g->spec().image_size != size) {
      // Same architecture at the requested resolution; weights do not affect timing.
      spec = g->spec();
      spec.image_size = size;
      spec.depth = 0;
      g = build_generator(spec, 0);
      origin += " (architecture only, resized)";
    }
  } else {
    g = build_generator(spec, 0);
  }
  g->eval();
  const auto frame = ImageBuffer::zeros(size, size);
  const auto mask = Mask::ones(size, size);
  infer_single(g, frame, mask, frame, {});  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t i = 0; i < iters; ++i) infer_single(g, frame, mask, frame, {0.0, static_cast<double>(i), 0.0});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("benchmark: %lldx%lld, %lld frames, %.3f s, %.2f frames/s (%s, %d threads)\n",
              static_cast<long long>(size), static_cast<long long>(size), static_cast<long long>(iters), secs,
              static_cast<double>(iters) / secs, origin.c_str(), torch::get_num_threads());
  std::printf("reference: about 20 frames/s at 128x128 on a 2017 desktop GPU (context only)\n");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Identity-preserving, pose-conditioned face inpainting", "occfill"};
  app.require_subcommand(1);
  Invocation inv;

  struct Command {
    const char* name;
    const char* help;
    std::function<void(const Config&)> run;
  };
  const std::vector<Command> commands = {
      {"gen-toy-data", "render the procedural toy face dataset", cmd_gen_toy_data},
      {"prepare-data", "build a manifest from a landmark CSV", cmd_prepare_data},
      {"pretrain-embedder", "train and freeze the identity embedder", cmd_pretrain_embedder},
      {"train", "train the inpainting network", cmd_train},
      {"train-pose-regressor", "train the head-pose regressor", cmd_train_pose_regressor},
      {"evaluate", "PSNR/SSIM/verification on the test split", cmd_evaluate},
      {"infer", "inpaint one image", cmd_infer},
      {"infer-video", "inpaint a directory of numbered frames", cmd_infer_video},
      {"pose-sweep", "render one test sample under several poses", cmd_pose_sweep},
      {"ablation", "train and score the three loss variants", cmd_ablation},
      {"benchmark", "measure inference throughput", cmd_benchmark},
  };
  std::map<std::string, std::string> shortcut_values;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", inv.config_file, "config file (key = value lines)");
    sub->add_option("--set", inv.overrides, "override a setting, key=value (repeatable)");
    const std::string size_key = std::string(cmd.name) == "benchmark" ? "bench_size" : "image_size";
    const std::vector<std::pair<std::string, std::string>> shortcuts = {
        {"--checkpoint", "checkpoint"}, {"--poses", "poses"},       {"--size", size_key},
        {"--out", "out_dir"},           {"--data", "data_dir"},     {"--manifest", "manifest"},
        {"--embedder", "embedder"},     {"--seed", "seed"},         {"--epochs", "epochs"}};
    for (const auto& [flag, key] : shortcuts) {
      sub->add_option_function<std::string>(
          flag, [&inv, key = key](const std::string& v) { inv.shortcuts[key] = v; }, "sets " + key);
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    Config config = inv.config_file.empty() ? Config{} : Config::from_file(inv.config_file);
    for (const auto& [key, value] : inv.shortcuts) config.set(key, value);
    for (const auto& o : inv.overrides) config.apply_override(o);
    if (const auto threads = config.get_int("threads"); threads > 0) torch::set_num_threads(static_cast<int>(threads));
    for (const auto& cmd : commands) {
      if (app.got_subcommand(cmd.name)) cmd.run(config);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace occfill
