#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "occfill/image.hpp"

namespace occfill {

/// Head orientation in degrees.
struct PoseAngles {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;

  bool operator==(const PoseAngles&) const = default;
};

/// Parses "pitch,yaw,roll".
PoseAngles parse_pose(const std::string& text);
/// Parses "p,y,r;p,y,r;...".
std::vector<PoseAngles> parse_pose_list(const std::string& text);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Five facial landmarks in pixel coordinates.
struct Landmarks {
  Point2 left_eye;
  Point2 right_eye;
  Point2 nose_tip;
  Point2 mouth_left;
  Point2 mouth_right;

  std::array<Point2, 5> points() const { return {left_eye, right_eye, nose_tip, mouth_left, mouth_right}; }
  bool operator==(const Landmarks&) const = default;
};

/// Fractional occlusion rectangle plus training-time edge jitter.
struct MaskSpec {
  double top = 0.25;
  double bottom = 0.6;
  double left = 0.15;
  double right = 0.85;
  double jitter = 0.0;

  /// Edge ordering and range. Throws MaskError.
  void validate() const;
  /// validate() plus the area cap for training boxes: fraction in (0, 0.75].
  void validate_for_training() const;
  double area_fraction() const { return (bottom - top) * (right - left); }
};

enum class Split { Train, Test };

struct FaceRecord {
  std::string identity_id;
  std::string image_path;  // relative to the manifest directory unless absolute
  Landmarks landmarks;
  PoseAngles pose;
  Split split = Split::Train;
};

/// Identity-grouped index of face images.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<FaceRecord> records, int64_t image_size, std::filesystem::path root);

  const std::vector<FaceRecord>& records() const { return records_; }
  const std::map<std::string, std::vector<size_t>>& identities() const { return identities_; }
  int64_t image_size() const { return image_size_; }
  const std::filesystem::path& root() const { return root_; }

  std::vector<size_t> indices(Split split) const;
  std::vector<std::string> identity_ids() const;
  /// Resolves a record's image path against the manifest root.
  std::filesystem::path image_path(size_t index) const;

  /// JSON Lines, one record per line, fields
  /// identity_id, image_path, landmarks, pose, split.
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path, int64_t image_size);

 private:
  std::vector<FaceRecord> records_;
  std::map<std::string, std::vector<size_t>> identities_;
  int64_t image_size_ = 0;
  std::filesystem::path root_;
};

/// Generator inputs and ground truth for one example.
struct TrainingSample {
  ImageBuffer masked;     // occluded input
  Mask mask;              // 1 = hole
  ImageBuffer reference;  // identity exemplar
  ImageBuffer pose_map;   // constant pose encoding
  ImageBuffer target;     // ground truth
  PoseAngles pose;
  size_t record_index = 0;
  size_t reference_index = 0;
};

struct AlignedFace {
  ImageBuffer image;
  Landmarks landmarks;  // landmarks mapped into the output frame
  double scale = 1.0;
};

/// Pixel position of the canonical nose-tip anchor in an out_size frame.
Point2 canonical_nose_tip(int64_t out_size);

/// Similarity registration (uniform scale out_size / source width, no
/// rotation) that moves the nose tip onto the canonical anchor. Pixels that
/// fall outside the source are filled with 0. Throws AlignmentError.
AlignedFace align_face(const ImageBuffer& image, const Landmarks& landmarks, int64_t out_size);

/// Constant 3-channel encoding; channel c = clamp(angle_c, -90, 90) / 90
/// for (pitch, yaw, roll). Throws EncodingError on non-finite input.
ImageBuffer render_pose_map(const PoseAngles& pose, int64_t size);

struct Occlusion {
  ImageBuffer masked;
  Mask mask;
};

/// Pixel rows/columns [top, bottom) x [left, right) of a box after jitter.
struct PixelBox {
  int64_t top, bottom, left, right;
};
PixelBox resolve_mask_box(const MaskSpec& spec, int64_t size, uint64_t rng_seed);

/// Zeroes a (jittered) rectangle. Deterministic in (image, spec, seed).
Occlusion apply_occlusion(const ImageBuffer& image, const MaskSpec& spec, uint64_t rng_seed);

/// Aligned-image cache plus sample assembly. Alignment is done once per record.
class SampleBuilder {
 public:
  SampleBuilder(const DatasetManifest& manifest, MaskSpec mask);

  const DatasetManifest& manifest() const { return *manifest_; }
  const MaskSpec& mask_spec() const { return mask_; }
  const ImageBuffer& aligned(size_t index) const;

  /// Reference drawn uniformly from the other records of the same identity,
  /// or from `cross_identity` when given. Throws PairingError.
  TrainingSample build(size_t record_index, uint64_t rng_seed,
                       const std::optional<std::string>& cross_identity = std::nullopt) const;

 private:
  const DatasetManifest* manifest_;
  MaskSpec mask_;
  mutable std::vector<std::optional<ImageBuffer>> cache_;
};

TrainingSample sample_training_pair(const DatasetManifest& manifest, size_t record_index, uint64_t rng_seed,
                                    const std::optional<std::string>& cross_identity = std::nullopt,
                                    const MaskSpec& mask = MaskSpec{});

/// Batched view of samples: [N,3,H,W] images and a [N,1,H,W] mask.
struct SampleBatch {
  torch::Tensor masked, mask, reference, pose_map, target;
  int64_t size() const { return masked.size(0); }
};
SampleBatch collate(const std::vector<TrainingSample>& samples);

/// Reads `image_path, lx0, ly0, ..., lx4, ly4, pitch, yaw, roll` rows. The
/// identity of a row is the name of the image's parent directory.
std::vector<FaceRecord> import_landmark_csv(const std::filesystem::path& csv_path);

/// Assigns a stratified 90/10 split: within each identity (in record order)
/// the last round(0.1 * n) records go to test.
void assign_splits(std::vector<FaceRecord>& records);

/// Mixes a global seed with a stream index (splitmix64).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

}  // namespace occfill
