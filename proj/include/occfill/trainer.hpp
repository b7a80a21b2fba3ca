#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "occfill/config.hpp"
#include "occfill/datagen.hpp"
#include "occfill/losses.hpp"
#include "occfill/networks.hpp"

namespace occfill {

/// Loss combination. l1_gan drops the identity and pose terms, l1_gan_id
/// drops the pose term.
enum class Variant { Full, L1Gan, L1GanId };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 16;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  LossWeights weights{};
  uint64_t seed = 0;
  int64_t image_size = 64;
  int64_t checkpoint_every = 500;
  Variant variant = Variant::Full;
  GeneratorSpec generator{};
  DiscriminatorSpec discriminator{};
  /// Conditions the global discriminator on the ground truth instead of the
  /// masked input.
  bool global_condition_on_target = false;
  MaskSpec mask{0.25, 0.6, 0.15, 0.85, 0.05};
  int64_t max_steps = 0;  // 0 = no limit
  uint64_t config_hash = 0;

  /// Weights after the variant has zeroed its disabled terms.
  LossWeights effective_weights() const;
  void validate() const;
  static TrainConfig from_config(const Config& config);
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  int64_t step = 0;
  int64_t epoch = 0;
  Generator generator{nullptr};
  PatchDiscriminator disc_global{nullptr};
  PatchDiscriminator disc_pose{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_generator;
  std::unique_ptr<torch::optim::Adam> opt_disc_global;
  std::unique_ptr<torch::optim::Adam> opt_disc_pose;
  std::mt19937_64 rng;

  static TrainState create(const TrainConfig& config);
};

enum class TrainPhase { GlobalDiscriminatorUpdated, PoseDiscriminatorUpdated, GeneratorUpdated };

/// One alternating update: global discriminator, pose discriminator, then the
/// generator. `embedder` may be null only when the identity weight is zero.
/// Throws NumericsError on a non-finite loss.
LossReport train_step(TrainState& state, const std::vector<TrainingSample>& batch, const TrainConfig& config,
                      const IdentityEmbedder* embedder,
                      const std::function<void(TrainPhase)>& on_phase = nullptr);

/// Checkpoint I/O. Parameters, optimizer moments and RNG state are restored
/// bit-exactly.
void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path);
/// Builds a fresh state from the specs stored in the file.
TrainState load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing state. All shapes are checked first (SpecError with
/// a diff listing); a malformed file raises CheckpointError. On error the
/// state is left untouched.
void load_checkpoint_into(TrainState& state, const std::filesystem::path& path);
/// Generator only, for inference.
Generator load_generator(const std::filesystem::path& path);

/// Latest `ckpt_*.bin` under `<dir>/checkpoints`, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  /// Called after every step with the step index and its report.
  std::function<void(int64_t, const LossReport&)> on_step;
};

/// Epoch loop over the shuffled train split. Writes checkpoints every
/// `checkpoint_every` steps and at each epoch end, plus `losses.csv`.
/// Returns the final checkpoint path.
std::filesystem::path train(const TrainConfig& config, const DatasetManifest& manifest,
                            const IdentityEmbedder* embedder, const TrainOptions& options);

struct AblationRow {
  Variant variant = Variant::Full;
  uint64_t seed = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double verification = 0.0;  // vs ground truth
  std::string error;          // non-empty when this run failed
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Trains each variant with identical seeds and data order, evaluates it and
/// collects one row per (seed, variant). A failing variant is recorded and
/// the others still run.
AblationReport run_ablation(const TrainConfig& base, const DatasetManifest& manifest,
                            const IdentityEmbedder& embedder, const std::filesystem::path& out_dir,
                            const std::vector<uint64_t>& seeds);

}  // namespace occfill
