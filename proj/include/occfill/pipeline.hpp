#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "occfill/datagen.hpp"
#include "occfill/networks.hpp"

namespace occfill {

/// mask * G(M, S, L) + (1 - mask) * M; pixels outside the mask are copied
/// from the input bit-for-bit. Throws ShapeError.
ImageBuffer infer_single(Generator& generator, const ImageBuffer& masked, const Mask& mask,
                         const ImageBuffer& reference, const PoseAngles& pose);

struct PoseSource {
  enum class Kind { Fixed, PerFrameFile, Regressor };
  Kind kind = Kind::Fixed;
  std::optional<PoseAngles> fixed_pose;
  std::optional<std::filesystem::path> file;  // pose CSV or regressor file

  /// Exactly the fields needed by `kind` must be set. Throws PoseSourceError.
  void validate() const;
};

struct VideoJob {
  std::filesystem::path frame_dir;
  std::filesystem::path reference_image;
  PoseSource pose_source;
  MaskSpec mask_spec{};
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> ground_truth_dir;
};

struct VideoResult {
  std::vector<std::filesystem::path> frames;
  std::vector<double> temporal_l1;  // per frame; 0 for the first
  double mean_temporal_l1 = 0.0;
  std::optional<std::filesystem::path> metrics_csv;
};

/// PNG frames sorted by the numeric value of their file stem.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
/// Numeric value of a frame file stem ("000012.png" -> 12).
int64_t frame_number(const std::filesystem::path& frame);

/// Reads `frame,pitch,yaw,roll` rows keyed by frame number.
std::map<int64_t, PoseAngles> read_pose_csv(const std::filesystem::path& path);

/// Inpaints every frame with a single reference image. Output frames keep the
/// input names. Writes `metrics.csv` (frame,psnr,ssim,temporal_l1) when
/// ground truth is supplied. Throws PoseSourceError naming a frame that has no
/// pose.
VideoResult infer_video(const VideoJob& job);
VideoResult infer_video(const VideoJob& job, Generator& generator);

}  // namespace occfill
