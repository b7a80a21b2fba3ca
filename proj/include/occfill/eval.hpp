#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "occfill/datagen.hpp"
#include "occfill/image.hpp"
#include "occfill/networks.hpp"

namespace occfill {

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB on the [0,1]-mapped images: 10 log10(1 / MSE), capped at 99 dB.
/// With `region`, only hole pixels are compared. Throws ShapeError.
double psnr(const ImageBuffer& a, const ImageBuffer& b, const Mask* region = nullptr);

/// Mean SSIM over all valid 11x11 windows (Gaussian sigma 1.5) of the luma
/// (0.299, 0.587, 0.114) of the [0,1]-mapped images, C1 = 0.01^2, C2 = 0.03^2.
/// Throws ShapeError, or SizeError for images smaller than the window.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

struct VerificationResult {
  std::string pair_id;
  double cosine_similarity = 0.0;
  bool same = false;
  double threshold = 0.0;
};

VerificationResult verify_identity(const IdentityEmbedder& embedder, const ImageBuffer& a, const ImageBuffer& b,
                                   double threshold, std::string pair_id = {});

struct ScoredPair {
  double score = 0.0;
  bool same = false;
};

/// Threshold at which false-accept and false-reject rates are closest.
/// Throws CalibrationError without both same and different pairs.
double equal_error_threshold(const std::vector<ScoredPair>& pairs);

/// Equal-error-rate threshold over all pairs of aligned test-split images.
double calibrate_threshold(const IdentityEmbedder& embedder, const DatasetManifest& manifest);

struct MetricReport {
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  double verif_vs_groundtruth = 0.0;
  double verif_vs_reference = 0.0;
  int64_t n_samples = 0;
  int64_t n_skipped = 0;
  double threshold = 0.0;

  std::string to_json() const;
  std::string to_table() const;
};

struct EvalOptions {
  MaskSpec mask{};  // jitter is ignored; evaluation uses the fixed box
  uint64_t seed = 0;
  bool hole_only = false;
  std::optional<double> threshold;  // calibrated from the test split when absent
};

using Predictor = std::function<ImageBuffer(const TrainingSample&)>;

/// Scores `predictor` (which returns a composited frame) on every test record.
/// Samples that fail to build or predict are skipped with a log line; more
/// than 10% skipped is an error.
MetricReport evaluate_predictor(const Predictor& predictor, const DatasetManifest& manifest,
                                const IdentityEmbedder& embedder, const EvalOptions& options);

MetricReport evaluate(Generator& generator, const DatasetManifest& manifest, const IdentityEmbedder& embedder,
                      const EvalOptions& options);

struct PoseSweep {
  std::vector<PoseAngles> poses;
  std::vector<ImageBuffer> cells;  // composited outputs, one per pose
  ImageBuffer sheet;               // captioned contact sheet
};

/// Re-renders the pose map per pose, infers and composites each cell.
PoseSweep pose_sweep(Generator& generator, const TrainingSample& sample, const std::vector<PoseAngles>& poses);

/// Mean absolute difference over the hole pixels (all channels).
double masked_l1(const ImageBuffer& a, const ImageBuffer& b, const Mask& mask);

}  // namespace occfill
