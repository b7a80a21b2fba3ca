#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "occfill/datagen.hpp"
#include "occfill/image.hpp"

namespace occfill {

/// Hash of every parameter and buffer value of a module, in registration order.
uint64_t parameter_checksum(const torch::nn::Module& module);

/// Draws conv/linear weights from N(0, 0.02) and norm scales from N(1, 0.02);
/// biases start at zero.
void init_weights(torch::nn::Module& module, uint64_t seed);

// ---------------------------------------------------------------------------
// Generator

struct GeneratorSpec {
  int64_t image_size = 64;
  int64_t in_channels = 9;  // masked | reference | pose map
  int64_t out_channels = 3;
  int64_t base_width = 32;
  int64_t depth = 0;  // 0 selects log2(image_size) - 2

  void validate() const;
  int64_t levels() const;
  /// Encoder filters at a level: base_width * 2^min(level, 3).
  int64_t encoder_width(int64_t level) const;
  bool operator==(const GeneratorSpec&) const = default;
};

/// Channel bookkeeping for one U-Net level.
struct UNetLevel {
  int64_t encoder_channels = 0;     // output of encoder level i
  int64_t upstream_channels = 0;    // decoder input arriving from the level below
  int64_t skip_channels = 0;        // mirrored encoder channels concatenated in
  int64_t decoder_in_channels = 0;  // as built
  int64_t decoder_out_channels = 0;
  int64_t spatial = 0;              // encoder output side length
};

/// U-Net with stride-2 4x4 convolutions. Encoder level i is concatenated onto
/// the decoder input that has the same resolution. Output passes through tanh.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec);

  torch::Tensor forward(const torch::Tensor& masked, const torch::Tensor& reference, const torch::Tensor& pose_map);
  torch::Tensor forward_stacked(const torch::Tensor& input);

  const GeneratorSpec& spec() const { return spec_; }
  const std::vector<UNetLevel>& levels() const { return levels_; }
  torch::nn::ConvTranspose2d output_layer() const { return output_; }

 private:
  GeneratorSpec spec_;
  std::vector<UNetLevel> levels_;
  torch::nn::ModuleList encoder_;
  torch::nn::ModuleList decoder_;  // decoder_[i] produces the resolution of encoder level i-1
  torch::nn::ConvTranspose2d output_{nullptr};
};
TORCH_MODULE(Generator);

Generator build_generator(const GeneratorSpec& spec, uint64_t rng_seed);

/// Single-image forward pass. Throws ShapeError on size mismatch.
ImageBuffer generator_forward(Generator& generator, const ImageBuffer& masked, const ImageBuffer& reference,
                              const ImageBuffer& pose_map);

// ---------------------------------------------------------------------------
// Patch discriminator

struct DiscriminatorSpec {
  int64_t in_channels = 6;  // candidate 3 + condition 3
  int64_t n_layers = 3;
  int64_t base_width = 32;

  void validate() const;
  /// Side of the score grid for a square input, by the layer arithmetic.
  int64_t grid_size(int64_t image_size) const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

/// PatchGAN critic: n_layers stride-2 convs, then two stride-1 convs, leaky
/// ReLU 0.2, instance norm everywhere except the first and last layers.
/// Returns raw scores of shape [N,1,g,g].
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorSpec spec);
  torch::Tensor forward(const torch::Tensor& candidate, const torch::Tensor& condition);
  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(PatchDiscriminator);

PatchDiscriminator build_patch_discriminator(const DiscriminatorSpec& spec, uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Identity embedding

/// Frozen feature extractor used by the identity loss. Implementations must
/// be differentiable w.r.t. the input images and must never update their
/// parameters once frozen.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  /// [N,3,H,W] -> [N,D]. Input may be any size; implementations resize.
  virtual torch::Tensor embed_batch(const torch::Tensor& images) const = 0;
  virtual int64_t dim() const = 0;
  virtual bool frozen() const = 0;
  virtual uint64_t checksum() const = 0;

  std::vector<float> embed(const ImageBuffer& image) const;
};

class ConvEmbedderImpl : public torch::nn::Module {
 public:
  ConvEmbedderImpl(int64_t input_size, int64_t dim, int64_t n_classes);
  /// Penultimate feature.
  torch::Tensor features(const torch::Tensor& images);
  /// Identity logits (training only).
  torch::Tensor logits(const torch::Tensor& features);
  int64_t input_size() const { return input_size_; }
  int64_t dim() const { return dim_; }
  int64_t n_classes() const { return n_classes_; }

 private:
  int64_t input_size_;
  int64_t dim_;
  int64_t n_classes_;
  torch::nn::Sequential trunk_;
  torch::nn::Linear embed_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ConvEmbedder);

/// Default embedder: a small CNN trained as an identity classifier whose head
/// is discarded. Embeddings are L2-normalised.
class ConvIdentityEmbedder final : public IdentityEmbedder {
 public:
  explicit ConvIdentityEmbedder(ConvEmbedder net);
  torch::Tensor embed_batch(const torch::Tensor& images) const override;
  int64_t dim() const override { return net_->dim(); }
  bool frozen() const override { return frozen_; }
  uint64_t checksum() const override { return parameter_checksum(*net_); }

  void freeze();
  ConvEmbedder& net() { return net_; }
  const ConvEmbedder& net() const { return net_; }

  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<ConvIdentityEmbedder> load(const std::filesystem::path& path);

 private:
  ConvEmbedder net_;
  bool frozen_ = false;
};

/// Wraps a user-supplied TorchScript module whose forward maps [N,3,S,S]
/// images in [-1,1] to [N,D] features.
class TorchScriptEmbedder final : public IdentityEmbedder {
 public:
  TorchScriptEmbedder(const std::filesystem::path& path, int64_t input_size);
  torch::Tensor embed_batch(const torch::Tensor& images) const override;
  int64_t dim() const override { return dim_; }
  bool frozen() const override { return true; }
  uint64_t checksum() const override;

 private:
  struct Holder;
  std::shared_ptr<Holder> module_;
  int64_t input_size_;
  int64_t dim_ = 0;
};

/// Loads either a native embedder file or, for a `.pt` path, a TorchScript one.
std::shared_ptr<IdentityEmbedder> load_identity_embedder(const std::filesystem::path& path);

struct EmbedderTrainConfig {
  int64_t dim = 128;
  int64_t input_size = 64;
  int64_t epochs = 30;
  int64_t batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
};

struct EmbedderTrainResult {
  std::shared_ptr<ConvIdentityEmbedder> embedder;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;  // identity classification on the test split
};

/// Trains the classifier on the train split, then freezes the feature trunk.
/// Throws TrainingError for fewer than two identities.
EmbedderTrainResult pretrain_identity_embedder(const DatasetManifest& manifest, const EmbedderTrainConfig& config);

torch::Tensor embed_identity(const IdentityEmbedder& embedder, const ImageBuffer& image);

// ---------------------------------------------------------------------------
// Pose regression

/// Five stride-2 conv stages then two fully connected layers -> 3 outputs in
/// normalised angle units (degrees / 90).
class PoseRegressorImpl : public torch::nn::Module {
 public:
  explicit PoseRegressorImpl(int64_t input_size = 64, int64_t base_width = 16);
  torch::Tensor forward(const torch::Tensor& images);
  int64_t input_size() const { return input_size_; }
  int64_t base_width() const { return base_width_; }
  static constexpr int kConvStages = 5;
  static constexpr int kFullyConnected = 2;

 private:
  int64_t input_size_;
  int64_t base_width_;
  torch::nn::Sequential convs_;
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(PoseRegressor);

/// Degrees, each clamped to [-90, 90].
PoseAngles pose_regress(PoseRegressor& regressor, const ImageBuffer& image);

struct PoseTrainConfig {
  int64_t input_size = 64;
  int64_t epochs = 30;
  int64_t batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
  MaskSpec mask{};
};

struct PoseTrainResult {
  PoseRegressor regressor{nullptr};
  double test_mae_pitch = 0.0;
  double test_mae_yaw = 0.0;
  double test_mae_roll = 0.0;
};

/// Fits the regressor on occluded train-split images with MSE on normalised angles.
PoseTrainResult train_pose_regressor(const DatasetManifest& manifest, const PoseTrainConfig& config);

void save_pose_regressor(const PoseRegressor& regressor, const std::filesystem::path& path);
PoseRegressor load_pose_regressor(const std::filesystem::path& path);

}  // namespace occfill
