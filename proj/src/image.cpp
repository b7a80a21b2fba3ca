#include "occfill/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "occfill/errors.hpp"

namespace occfill {

ImageBuffer::ImageBuffer(torch::Tensor chw) {
  if (chw.dim() != 3 || chw.size(0) != 3 || chw.size(1) < 1 || chw.size(2) < 1) {
    throw ImageError("expected a [3,H,W] tensor, got " + c10::str(chw.sizes()));
  }
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (!torch::isfinite(t).all().item<bool>()) throw ImageError("non-finite pixel value");
  if (t.numel() > 0 && (t.min().item<float>() < -1.0f || t.max().item<float>() > 1.0f)) {
    throw ImageError("pixel value outside [-1, 1]");
  }
  data_ = std::move(t);
}

ImageBuffer ImageBuffer::zeros(int64_t height, int64_t width) {
  return ImageBuffer(torch::zeros({3, height, width}));
}

ImageBuffer ImageBuffer::filled(int64_t height, int64_t width, std::array<float, 3> rgb) {
  auto t = torch::empty({3, height, width});
  for (int64_t c = 0; c < 3; ++c) t[c].fill_(rgb[static_cast<size_t>(c)]);
  return ImageBuffer(t);
}

float ImageBuffer::at(int64_t c, int64_t y, int64_t x) const {
  return data_.data_ptr<float>()[(c * height() + y) * width() + x];
}

ImageBuffer ImageBuffer::clone() const {
  ImageBuffer out;
  out.data_ = data_.clone();
  return out;
}

bool ImageBuffer::bit_equal(const ImageBuffer& other) const {
  if (!data_.defined() || !other.data_.defined()) return data_.defined() == other.data_.defined();
  if (data_.sizes() != other.data_.sizes()) return false;
  return std::memcmp(data_.data_ptr<float>(), other.data_.data_ptr<float>(),
                     static_cast<size_t>(data_.numel()) * sizeof(float)) == 0;
}

Mask::Mask(torch::Tensor hw1) {
  if (hw1.dim() == 2) hw1 = hw1.unsqueeze(0);
  if (hw1.dim() != 3 || hw1.size(0) != 1) throw ShapeError("mask must be [1,H,W]");
  auto t = hw1.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (!((t == 0) | (t == 1)).all().item<bool>()) throw ShapeError("mask must be binary");
  data_ = std::move(t);
}

Mask Mask::zeros(int64_t height, int64_t width) { return Mask(torch::zeros({1, height, width})); }
Mask Mask::ones(int64_t height, int64_t width) { return Mask(torch::ones({1, height, width})); }

bool Mask::hole(int64_t y, int64_t x) const {
  return data_.data_ptr<float>()[y * width() + x] != 0.0f;
}

double Mask::hole_fraction() const { return data_.sum().item<double>() / static_cast<double>(data_.numel()); }

uint8_t unit_to_byte(float v) {
  const double scaled = std::floor((static_cast<double>(v) + 1.0) * 127.5 + 0.5);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

ImageBuffer load_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  auto t = torch::empty({3, bgr.rows, bgr.cols});
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      acc[0][y][x] = byte_to_unit(row[x][2]);
      acc[1][y][x] = byte_to_unit(row[x][1]);
      acc[2][y][x] = byte_to_unit(row[x][0]);
    }
  }
  return ImageBuffer(t);
}

void save_png(const std::filesystem::path& path, const ImageBuffer& image) {
  cv::Mat bgr(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3);
  auto acc = image.tensor().accessor<float, 3>();
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      row[x][2] = unit_to_byte(acc[0][y][x]);
      row[x][1] = unit_to_byte(acc[1][y][x]);
      row[x][0] = unit_to_byte(acc[2][y][x]);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

ImageBuffer resize_image(const ImageBuffer& image, int64_t height, int64_t width) {
  if (image.height() == height && image.width() == width) return image;
  auto out = torch::nn::functional::interpolate(
      image.tensor().unsqueeze(0),
      torch::nn::functional::InterpolateFuncOptions()
          .size(std::vector<int64_t>{height, width})
          .mode(torch::kBilinear)
          .align_corners(false)
          .antialias(height < image.height()));
  return to_image(out.squeeze(0));
}

torch::Tensor stack_images(const std::vector<ImageBuffer>& images) {
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) ts.push_back(im.tensor());
  return torch::stack(ts);
}

ImageBuffer to_image(const torch::Tensor& chw) {
  return ImageBuffer(chw.detach().to(torch::kCPU, torch::kFloat32).clamp(-1.0, 1.0));
}

ImageBuffer composite(const ImageBuffer& base, const ImageBuffer& fill, const Mask& mask) {
  if (base.tensor().sizes() != fill.tensor().sizes() || base.height() != mask.height() ||
      base.width() != mask.width()) {
    throw ShapeError("composite: base, fill and mask sizes differ");
  }
  return ImageBuffer(torch::where(mask.tensor().expand_as(base.tensor()) > 0.5f, fill.tensor(), base.tensor()));
}

uint64_t fnv1a(const void* data, size_t size, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace occfill
