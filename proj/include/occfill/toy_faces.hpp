#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "occfill/datagen.hpp"

namespace occfill {

/// Appearance parameters shared by every image of one toy identity. Lengths
/// are fractions of the image side.
struct ToyIdentity {
  std::array<double, 3> skin{};
  std::array<double, 3> hair{};
  std::array<double, 3> iris{};
  std::array<double, 3> lips{};
  double eye_half_width = 0.07;
  double eye_aspect = 0.55;
  double eye_spacing = 0.15;
  double brow_thickness = 0.02;
  double brow_gap = 0.08;
  double face_half_width = 0.32;
  double face_half_height = 0.40;
  double mouth_half_width = 0.10;
};

/// Per-image nuisance parameters.
struct ToyShot {
  PoseAngles pose;
  double shift_x = 0.0;
  double shift_y = 0.0;
  double brightness = 1.0;
  std::array<double, 3> background{0.5, 0.5, 0.5};
};

struct ToyFace {
  ImageBuffer image;
  Landmarks landmarks;
};

ToyIdentity sample_toy_identity(uint64_t seed);
ToyShot sample_toy_shot(uint64_t seed);

/// Draws a face-like image. Features are anchored on a rigid 3-D frame that is
/// rotated by the pose and projected orthographically, so pose shows up as
/// shift and foreshortening of eyes, brows, nose and mouth.
ToyFace render_toy_face(const ToyIdentity& identity, const ToyShot& shot, int64_t size);

/// Writes `n_identities * images_per_identity` PNGs under out_dir/images and a
/// manifest at out_dir/manifest.jsonl. Deterministic given the seed.
DatasetManifest generate_toy_dataset(int64_t n_identities, int64_t images_per_identity, int64_t size,
                                     uint64_t rng_seed, const std::filesystem::path& out_dir);

}  // namespace occfill
