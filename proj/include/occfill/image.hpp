#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>

namespace occfill {

/// Square-or-rectangular RGB image stored as a contiguous float tensor of
/// shape [3, H, W]. Values are finite and lie in [-1, 1].
class ImageBuffer {
 public:
  ImageBuffer() = default;
  /// Takes ownership of a [3,H,W] tensor; throws ImageError if the shape,
  /// range or finiteness contract is violated.
  explicit ImageBuffer(torch::Tensor chw);

  static ImageBuffer zeros(int64_t height, int64_t width);
  static ImageBuffer filled(int64_t height, int64_t width, std::array<float, 3> rgb);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  bool empty() const { return !data_.defined(); }
  bool is_square() const { return height() == width(); }

  const torch::Tensor& tensor() const { return data_; }
  float at(int64_t c, int64_t y, int64_t x) const;

  ImageBuffer clone() const;
  bool bit_equal(const ImageBuffer& other) const;

 private:
  torch::Tensor data_;
};

/// Binary hole map of shape [1, H, W]; 1 marks an occluded pixel.
class Mask {
 public:
  Mask() = default;
  explicit Mask(torch::Tensor hw1);

  static Mask zeros(int64_t height, int64_t width);
  static Mask ones(int64_t height, int64_t width);

  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  const torch::Tensor& tensor() const { return data_; }
  bool hole(int64_t y, int64_t x) const;
  double hole_fraction() const;

 private:
  torch::Tensor data_;
};

/// Converts an 8-bit value to the working range via v / 127.5 - 1.
inline float byte_to_unit(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
/// Inverse of byte_to_unit with round-half-up and saturation.
uint8_t unit_to_byte(float v);

ImageBuffer load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const ImageBuffer& image);

/// Bilinear resize; returns the input unchanged when sizes already match.
ImageBuffer resize_image(const ImageBuffer& image, int64_t height, int64_t width);

/// Stacks images into a [N,3,H,W] batch.
torch::Tensor stack_images(const std::vector<ImageBuffer>& images);

/// Clamps a tensor into the pixel range and wraps it. Used for network outputs.
ImageBuffer to_image(const torch::Tensor& chw);

/// Pixel-wise compositing: hole pixels from `fill`, the rest from `base`.
ImageBuffer composite(const ImageBuffer& base, const ImageBuffer& fill, const Mask& mask);

/// 64-bit FNV-1a over raw bytes.
uint64_t fnv1a(const void* data, size_t size, uint64_t seed = 1469598103934665603ULL);

}  // namespace occfill
