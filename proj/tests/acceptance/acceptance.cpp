// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "occfill/checkpoint.hpp"
#include "occfill/eval.hpp"
#include "occfill/losses.hpp"
#include "occfill/pipeline.hpp"
#include "occfill/trainer.hpp"

using namespace occfill;
using namespace occfill::testing;

namespace {

// Tolerances and budgets.
constexpr double kPsnrTol = 1e-9;           // dB
constexpr double kSsimTol = 1e-6;
constexpr double kLossRelTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kGateTol = 1e-7;
constexpr double kOverfitTarget = 0.05;
constexpr int kOverfitMaxSteps = 2000;
constexpr double kVerifyTarget = 0.90;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::shared_ptr<ConvIdentityEmbedder> toy_embedder() {
  static std::shared_ptr<ConvIdentityEmbedder> cached;
  if (!cached) cached = pretrain_identity_embedder(toy_manifest(), EmbedderTrainConfig{}).embedder;
  return cached;
}

TrainConfig toy_train_config(int64_t epochs, uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  c.image_size = 64;
  c.generator.image_size = 64;
  return c;
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

double brute_psnr(const ImageBuffer& a, const ImageBuffer& b) {
  double se = 0.0;
  int64_t n = 0;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < a.height(); ++y)
      for (int64_t x = 0; x < a.width(); ++x) {
        const double d = (a.at(c, y, x) + 1.0) / 2.0 - (b.at(c, y, x) + 1.0) / 2.0;
        se += d * d;
        ++n;
      }
  const double mse = se / static_cast<double>(n);
  return mse == 0.0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

// Direct windowed SSIM: every statistic summed explicitly over the 2-D window.
double direct_ssim(const ImageBuffer& a, const ImageBuffer& b) {
  const int64_t h = a.height(), w = a.width();
  auto lum = [](const ImageBuffer& im, int64_t y, int64_t x) {
    return 0.299 * (im.at(0, y, x) + 1.0) / 2.0 + 0.587 * (im.at(1, y, x) + 1.0) / 2.0 +
           0.114 * (im.at(2, y, x) + 1.0) / 2.0;
  };
  double win[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += win[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t y0 = 0; y0 + 11 <= h; ++y0)
    for (int64_t x0 = 0; x0 + 11 <= w; ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += win[i][j] / total * lum(a, y0 + i, x0 + j);
          my += win[i][j] / total * lum(b, y0 + i, x0 + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = lum(a, y0 + i, x0 + j) - mx, dy = lum(b, y0 + i, x0 + j) - my;
          vx += win[i][j] / total * dx * dx;
          vy += win[i][j] / total * dy * dy;
          cov += win[i][j] / total * dx * dy;
        }
      sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / static_cast<double>(count);
}

Outcome metric_oracles() {
  std::mt19937_64 rng(11);
  double worst_p = 0.0, worst_s = 0.0;
  for (int k = 0; k < 20; ++k) {
    const auto a = random_image(rng, 64, 64);
    ImageBuffer b;
    if (k % 2 == 0) {
      b = random_image(rng, 64, 64);
    } else {
      // Correlated pair so SSIM is far from zero.
      b = to_image(a.tensor() + 0.2 * random_image(rng, 64, 64).tensor());
    }
    worst_p = std::max(worst_p, std::abs(psnr(a, b) - brute_psnr(a, b)));
    worst_s = std::max(worst_s, std::abs(ssim(a, b) - direct_ssim(a, b)));
  }
  return {worst_p <= kPsnrTol && worst_s <= kSsimTol,
          fmt("max |dPSNR| %.2e dB (tol %.0e), max |dSSIM| %.2e (tol %.0e)", worst_p, kPsnrTol, worst_s, kSsimTol)};
}

// ---------------------------------------------------------------------------
// 2. Loss arithmetic

Outcome loss_arithmetic() {
  // Term tuples and their weighted sums under (1, 100, 100, 70), computed
  // in exact decimal arithmetic.
  const double table[10][5] = {
      {0.1, 0.02, 0.6931, 0.6931, 119.9270},     {0.9402, 1.4565, 0.6075, 1.7746, 331.5622},
      {0.8202, 1.4332, 0.5304, 0.4903, 231.5012}, {1.6252, 0.9966, 0.8317, 1.4555, 286.3402},
      {1.9265, 0.6191, 1.4081, 1.0387, 277.3555}, {1.4627, 1.9993, 0.4128, 1.5052, 348.0367},
      {0.9371, 1.4181, 1.7438, 0.2967, 337.8961}, {0.4252, 0.8238, 0.117, 0.6989, 143.4282},
      {0.8331, 0.2484, 1.487, 1.5256, 281.1651},  {0.7806, 0.6906, 0.4023, 0.8536, 169.8226},
  };
  const LossWeights w{1.0, 100.0, 100.0, 70.0};
  double worst = 0.0;
  for (const auto& r : table) {
    const double got = total_generator_loss(LossTerms{r[0], r[1], r[2], r[3]}, w);
    GeneratorTerms t{torch::tensor(r[0], torch::kFloat64), torch::tensor(r[1], torch::kFloat64),
                     torch::tensor(r[2], torch::kFloat64), torch::tensor(r[3], torch::kFloat64)};
    const double got_t = total_generator_loss(t, w).item<double>();
    worst = std::max({worst, std::abs(got - r[4]) / r[4], std::abs(got_t - r[4]) / r[4]});
  }
  return {worst <= kLossRelTol, fmt("max relative error %.2e over 10 tuples (tol %.0e)", worst, kLossRelTol)};
}

// ---------------------------------------------------------------------------
// 3. Gradient check

Outcome gradient_check() {
  torch::manual_seed(3);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto y = torch::rand({1, 3, 4, 4}, opts) * 1.6 - 0.8;
  const auto target = torch::rand({1, 3, 4, 4}, opts) * 2 - 1;
  const auto reference = torch::rand({1, 3, 4, 4}, opts) * 2 - 1;
  const auto cond_m = torch::rand({1, 3, 4, 4}, opts) * 2 - 1;
  const auto cond_l = torch::full({1, 3, 4, 4}, 0.3, opts);
  const auto mask = (torch::rand({1, 1, 4, 4}, opts) > 0.5).to(torch::kFloat64);

  auto dg = build_patch_discriminator({6, 0, 8}, 1);
  auto dp = build_patch_discriminator({6, 0, 8}, 2);
  dg->to(torch::kFloat64);
  dp->to(torch::kFloat64);
  ConvEmbedder net(16, 8, 2);
  init_weights(*net, 4);
  ConvIdentityEmbedder embedder(net);
  embedder.freeze();
  embedder.net()->to(torch::kFloat64);
  const LossWeights w{1.0, 100.0, 100.0, 70.0};

  using Term = std::function<torch::Tensor(const torch::Tensor&)>;
  const std::vector<std::pair<std::string, Term>> terms = {
      {"L_r", [&](const torch::Tensor& x) { return reconstruction_loss(x, target); }},
      {"L_id", [&](const torch::Tensor& x) { return identity_loss(x, reference, embedder); }},
      {"L_adv_global", [&](const torch::Tensor& x) { return adversarial_g_loss(dg, x, cond_m); }},
      {"L_adv_pose", [&](const torch::Tensor& x) { return adversarial_g_loss(dp, x, cond_l); }},
  };
  std::string detail;
  bool pass = true;
  std::vector<torch::Tensor> numeric;
  for (const auto& [name, f] : terms) {
    auto x = y.clone().requires_grad_(true);
    f(x).backward();
    auto fd = finite_difference([&](const torch::Tensor& v) { return f(v).item<double>(); }, y, kFdStep);
    numeric.push_back(fd);
    const double err = max_relative_error(x.grad(), fd);
    pass = pass && err < kGradRelTol;
    detail += fmt("%s %.1e, ", name.c_str(), err);
  }
  // Composite with the gated pose term: its numerical gradient is the
  // weighted sum of the per-term differences with the pose part masked.
  auto x = y.clone().requires_grad_(true);
  GeneratorTerms gt{terms[0].second(x), terms[1].second(x), terms[2].second(x),
                    adversarial_g_loss(dp, gate_pose_gradient(x, mask), cond_l)};
  total_generator_loss(gt, w).backward();
  const auto expected = w.lambda_r * numeric[0] + w.mu_id * numeric[1] + w.alpha_global * numeric[2] +
                        w.gamma_pose * numeric[3] * mask.expand_as(y);
  const double err = max_relative_error(x.grad(), expected);
  pass = pass && err < kGradRelTol;
  detail += fmt("composite %.1e (tol %.0e, h=%.0e)", err, kGradRelTol, kFdStep);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 4. Pose-gradient gating

Outcome pose_gating() {
  auto dp = build_patch_discriminator({6, 1, 16}, 9);
  dp->to(torch::kFloat64);
  std::mt19937_64 rng(4);
  double worst_inside = 0.0, worst_outside = 0.0;
  for (int k = 0; k < 5; ++k) {
    torch::manual_seed(100 + k);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    const auto y = torch::rand({2, 3, 16, 16}, opts) * 2 - 1;
    const auto cond = torch::rand({2, 3, 1, 1}, opts).expand({2, 3, 16, 16}).contiguous() * 2 - 1;
    const auto mask = (torch::rand({2, 1, 16, 16}, opts) < 0.3 + 0.1 * k).to(torch::kFloat64);

    auto xg = y.clone().requires_grad_(true);
    adversarial_g_loss(dp, gate_pose_gradient(xg, mask), cond).backward();
    auto xu = y.clone().requires_grad_(true);
    adversarial_g_loss(dp, xu, cond).backward();
    const auto m = mask.expand_as(y) > 0.5;
    worst_outside = std::max(worst_outside, xg.grad().masked_select(~m).abs().max().item<double>());
    worst_inside =
        std::max(worst_inside, (xg.grad() - xu.grad()).masked_select(m).abs().max().item<double>());
  }
  return {worst_outside == 0.0 && worst_inside <= kGateTol,
          fmt("max |grad| outside mask %.1e (must be 0), max in-mask deviation %.1e (tol %.0e), 5 masks",
              worst_outside, worst_inside, kGateTol)};
}

// ---------------------------------------------------------------------------
// 5. Overfit oracle

Outcome overfit() {
  const auto manifest = toy_manifest();
  auto config = toy_train_config(1);
  config.mask.jitter = 0.0;
  SampleBuilder builder(manifest, config.mask);
  const auto train_idx = manifest.indices(Split::Train);
  std::vector<TrainingSample> batch;
  for (size_t k = 0; k < 16; ++k) batch.push_back(builder.build(train_idx[k], derive_seed(5, k)));
  auto embedder = toy_embedder();
  auto state = TrainState::create(config);

  int steps = 0;
  double first = 0.0, last = 0.0;
  while (steps < kOverfitMaxSteps) {
    const auto r = train_step(state, batch, config, embedder.get());
    if (steps == 0) first = r.l_r;
    ++steps;
    last = r.l_r;
    if (r.l_r < kOverfitTarget) break;
  }
  // Confirm on the final parameters.
  const auto b = collate(batch);
  double final_lr;
  {
    torch::NoGradGuard guard;
    final_lr = reconstruction_loss(state.generator->forward(b.masked, b.reference, b.pose_map), b.target)
                   .item<double>();
  }
  return {final_lr < kOverfitTarget,
          fmt("L_r %.4f -> %.4f after %d steps (target < %.2f, <= %d steps, weights 1/100/100/70)", first,
              final_lr, steps, kOverfitTarget, kOverfitMaxSteps)};
  (void)last;
}

// ---------------------------------------------------------------------------
// 6. Pose-conditioning effect

Outcome pose_effect() {
  const auto manifest = toy_manifest();
  auto embedder = toy_embedder();
  const auto dir = scratch_dir("accept_pose");
  const auto ckpt = train(toy_train_config(5), manifest, embedder.get(), TrainOptions{dir, false, nullptr});
  auto g = load_generator(ckpt);
  MaskSpec spec;
  SampleBuilder builder(manifest, spec);
  const auto idx = manifest.indices(Split::Test).front();
  const auto sample = builder.build(idx, 6);
  const auto sweep = pose_sweep(g, sample, {{0, -45, 0}, {0, 45, 0}, {0, 0, 0}, {0, 1, 0}});
  const double far = masked_l1(sweep.cells[0], sweep.cells[1], sample.mask);
  const double near = masked_l1(sweep.cells[2], sweep.cells[3], sample.mask);
  const auto outside = sample.mask.tensor().expand({3, 64, 64}) < 0.5;
  bool background_equal = true;
  for (const auto& cell : sweep.cells) {
    background_equal = background_equal &&
                       torch::equal(cell.tensor().masked_select(outside), sample.masked.tensor().masked_select(outside));
  }
  return {far > near && far > 0.0 && background_equal,
          fmt("in-mask L1 yaw -45 vs +45: %.5f, yaw 0 vs 1: %.5f; backgrounds bit-identical: %s", far, near,
              background_equal ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 7. Alternation and freeze invariants

Outcome alternation() {
  const auto manifest = toy_manifest();
  auto embedder = toy_embedder();
  auto config = toy_train_config(1);
  SampleBuilder builder(manifest, config.mask);
  auto state = TrainState::create(config);
  const auto train_idx = manifest.indices(Split::Train);
  const uint64_t emb0 = embedder->checksum();
  int violations = 0, g_moves = 0;
  for (int step = 0; step < 50; ++step) {
    std::vector<TrainingSample> batch;
    for (size_t k = 0; k < 16; ++k) {
      const size_t i = train_idx[(static_cast<size_t>(step) * 16 + k) % train_idx.size()];
      batch.push_back(builder.build(i, derive_seed(7, static_cast<uint64_t>(step * 16) + k)));
    }
    uint64_t g = parameter_checksum(*state.generator), dg = parameter_checksum(*state.disc_global),
             dp = parameter_checksum(*state.disc_pose);
    train_step(state, batch, config, embedder.get(), [&](TrainPhase phase) {
      const uint64_t g2 = parameter_checksum(*state.generator), dg2 = parameter_checksum(*state.disc_global),
                     dp2 = parameter_checksum(*state.disc_pose);
      switch (phase) {
        case TrainPhase::GlobalDiscriminatorUpdated:
        case TrainPhase::PoseDiscriminatorUpdated:
          violations += g2 != g;
          violations += phase == TrainPhase::GlobalDiscriminatorUpdated ? dp2 != dp : dg2 != dg;
          break;
        case TrainPhase::GeneratorUpdated:
          violations += dg2 != dg || dp2 != dp;
          g_moves += g2 != g;
          break;
      }
      g = g2;
      dg = dg2;
      dp = dp2;
      violations += embedder->checksum() != emb0;
    });
  }
  return {violations == 0 && g_moves == 50,
          fmt("50 steps: %d checksum violations, generator changed in %d generator phases", violations, g_moves)};
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto manifest = toy_manifest();
  auto embedder = toy_embedder();
  auto run = [&](const std::string& name, int64_t max_steps, bool resume, bool fresh) {
    const fs::path dir = fs::path(OCCFILL_TEST_TMP) / name;
    if (fresh) fs::remove_all(dir);
    auto c = toy_train_config(10);
    c.max_steps = max_steps;
    c.checkpoint_every = 10;
    return train(c, manifest, embedder.get(), TrainOptions{dir, resume, nullptr});
  };
  const auto a = run("accept_det_a", 10, false, true);
  const auto b = run("accept_det_b", 10, false, true);
  const bool trace_equal = slurp(a.parent_path().parent_path() / "losses.csv") ==
                           slurp(b.parent_path().parent_path() / "losses.csv");
  const bool ckpt_equal = slurp(a) == slurp(b);

  // 20 uninterrupted steps vs 10 + save/load + 10.
  const auto full = run("accept_det_full", 20, false, true);
  run("accept_det_split", 10, false, true);
  const auto resumed = run("accept_det_split", 20, true, false);
  const bool resume_equal = slurp(full.parent_path().parent_path() / "losses.csv") ==
                            slurp(resumed.parent_path().parent_path() / "losses.csv");
  const bool resume_ckpt_equal = slurp(full) == slurp(resumed);
  return {trace_equal && ckpt_equal && resume_equal && resume_ckpt_equal,
          fmt("10-step traces equal: %s, checkpoints bit-identical: %s, resumed 10+10 trace equal: %s, "
              "final checkpoints equal: %s",
              trace_equal ? "yes" : "no", ckpt_equal ? "yes" : "no", resume_equal ? "yes" : "no",
              resume_ckpt_equal ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 9. Verification harness

Outcome verification() {
  const auto manifest = toy_manifest();
  auto embedder = toy_embedder();
  const double threshold = calibrate_threshold(*embedder, manifest);
  SampleBuilder builder(manifest, MaskSpec{});
  const auto test = manifest.indices(Split::Test);
  int same = 0, accepted = 0;
  for (size_t i = 0; i < test.size(); ++i)
    for (size_t j = i + 1; j < test.size(); ++j) {
      if (manifest.records()[test[i]].identity_id != manifest.records()[test[j]].identity_id) continue;
      ++same;
      accepted += verify_identity(*embedder, builder.aligned(test[i]), builder.aligned(test[j]), threshold).same;
    }
  const double rate = same ? static_cast<double>(accepted) / same : 0.0;
  return {rate >= kVerifyTarget, fmt("%d/%d same-identity held-out pairs verified (%.3f, target >= %.2f) at EER "
                                     "threshold %.4f",
                                     accepted, same, rate, kVerifyTarget, threshold)};
}

// ---------------------------------------------------------------------------
// 10. Ablation runner

Outcome ablation() {
  const auto manifest = toy_manifest();
  auto embedder = toy_embedder();
  const auto dir = scratch_dir("accept_ablation");
  const auto report = run_ablation(toy_train_config(5), manifest, *embedder, dir, {0, 1, 2});
  bool finite = report.rows.size() == 9;
  std::map<uint64_t, std::map<Variant, double>> psnr;
  for (const auto& r : report.rows) {
    finite = finite && r.error.empty() && std::isfinite(r.psnr) && std::isfinite(r.ssim) &&
             std::isfinite(r.verification);
    psnr[r.seed][r.variant] = r.psnr;
  }
  int wins = 0;
  for (auto& [seed, m] : psnr) wins += m[Variant::Full] >= m[Variant::L1Gan];
  std::cout << report.to_table();
  const bool table_written = fs::exists(dir / "ablation.csv") && fs::exists(dir / "ablation.txt");
  return {finite && table_written,
          fmt("%zu rows (3 variants x 3 seeds), all finite: %s; full >= l1_gan PSNR in %d/3 seeds (informational)",
              report.rows.size(), finite ? "yes" : "no", wins)};
}

// ---------------------------------------------------------------------------
// 11. End-to-end CLI smoke

int sh(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome end_to_end() {
  const auto dir = scratch_dir("accept_e2e");
  const std::string cli = OCCFILL_CLI;
  const std::string common = " --set data_dir=" + (dir / "data").string() + " --set out_dir=" + (dir / "run").string();

  // Thirty numbered frames of one toy identity turning its head, plus a
  // frontal reference.
  const auto frames = dir / "frames";
  const auto id = sample_toy_identity(42);
  for (int i = 0; i < 30; ++i) {
    ToyShot shot;
    shot.pose = {0.0, -30.0 + 2.0 * i, 0.0};
    save_png(frames / fmt("%06d.png", i), render_toy_face(id, shot, 64).image);
  }
  save_png(dir / "reference.png", render_toy_face(id, ToyShot{}, 64).image);

  std::vector<std::pair<std::string, int>> steps = {
      {"gen-toy-data", sh(cli + " gen-toy-data" + common)},
      {"pretrain-embedder", sh(cli + " pretrain-embedder" + common)},
      {"train", sh(cli + " train --set epochs=2" + common)},
      {"evaluate", sh(cli + " evaluate" + common)},
      {"infer-video", sh(cli + " infer-video" + common + " --set frame_dir=" + frames.string() +
                             " --set reference_image=" + (dir / "reference.png").string() +
                             " --set pose_source=fixed --set pose=0,0,0 --set out_dir=" + (dir / "video").string() +
                             " --set checkpoint=" + latest_checkpoint(dir / "run").value_or("missing").string())},
  };
  std::string detail;
  bool ok = true;
  for (const auto& [name, rc] : steps) {
    ok = ok && rc == 0;
    if (rc != 0) detail += name + " exited " + std::to_string(rc) + "; ";
  }
  int n_out = 0, background_ok = 0;
  const auto box = resolve_mask_box(MaskSpec{}, 64, 0);
  for (int i = 0; i < 30 && ok; ++i) {
    const auto out_path = dir / "video" / fmt("%06d.png", i);
    if (!fs::exists(out_path)) continue;
    ++n_out;
    const auto in = load_png(frames / fmt("%06d.png", i)).tensor();
    const auto out = load_png(out_path).tensor();
    auto outside = torch::ones({3, 64, 64}, torch::kBool);
    outside.slice(1, box.top, box.bottom).slice(2, box.left, box.right).fill_(false);
    background_ok += torch::equal(in.masked_select(outside), out.masked_select(outside));
  }
  ok = ok && n_out == 30 && background_ok == 30;
  detail += fmt("5 commands exit 0: %s, %d/30 frames written, %d/30 with background equal to input",
                ok ? "yes" : "no", n_out, background_ok);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 12. Throughput report

Outcome throughput() {
  const std::string cmd = std::string(OCCFILL_CLI) + " benchmark --size 128 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {false, "could not run benchmark"};
  std::string out;
  char buf[256];
  while (fgets(buf, sizeof(buf), p)) out += buf;
  const int rc = pclose(p);
  double fps = 0.0;
  const auto pos = out.find(" frames/s (");
  if (pos != std::string::npos) {
    const auto start = out.rfind(' ', pos - 1);
    fps = std::atof(out.substr(start + 1, pos - start - 1).c_str());
  }
  const bool reference_line = out.find("20 frames/s") != std::string::npos;
  // Report only: the number itself is not gated.
  return {rc == 0 && fps > 0.0 && reference_line,
          fmt("128x128 inference %.2f frames/s on this machine; reference line printed: %s", fps,
              reference_line ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<Criterion> criteria = {
      {1, "metric oracles", 10, metric_oracles},
      {2, "loss arithmetic", 1, loss_arithmetic},
      {3, "gradient check", 30, gradient_check},
      {4, "pose-gradient gating", 30, pose_gating},
      {5, "overfit oracle", 3600, overfit},
      {6, "pose-conditioning effect", 1800, pose_effect},
      {7, "alternation/freeze invariants", 300, alternation},
      {8, "determinism", 300, determinism},
      {9, "verification harness", 600, verification},
      {10, "ablation runner", 5400, ablation},
      {11, "end-to-end smoke", 1800, end_to_end},
      {12, "throughput report", 600, throughput},
  };
  // Shared fixtures are built up front so their cost is not billed to
  // whichever criterion happens to run first.
  const bool needs_fixture = only.empty() || std::any_of(only.begin(), only.end(), [](int i) { return i >= 5 && i <= 10; });
  if (needs_fixture) {
    const auto t0 = std::chrono::steady_clock::now();
    toy_embedder();
    std::printf("fixture: toy dataset + embedder pretraining %.1f s\n",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::printf("[%s] %2d %s: %s (%.1f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_s, in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
