#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "occfill/datagen.hpp"
#include "occfill/networks.hpp"
#include "occfill/toy_faces.hpp"

namespace occfill::testing {

namespace fs = std::filesystem;

/// Fresh directory under the build tree.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::path(OCCFILL_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Toy dataset shared between tests; generated once per build tree.
inline DatasetManifest toy_manifest(int64_t ids = 10, int64_t per_id = 20, int64_t size = 64, uint64_t seed = 0) {
  const fs::path dir = fs::path(OCCFILL_TEST_TMP) / ("toy_" + std::to_string(ids) + "x" + std::to_string(per_id) +
                                                     "_" + std::to_string(size) + "_" + std::to_string(seed));
  const auto manifest = dir / "manifest.jsonl";
  if (!fs::exists(manifest)) generate_toy_dataset(ids, per_id, size, seed, dir);
  return DatasetManifest::load(manifest, size);
}

inline ImageBuffer random_image(std::mt19937_64& rng, int64_t h, int64_t w) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto t = torch::empty({3, h, w});
  auto* d = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = u(rng);
  return ImageBuffer(t);
}

/// Central differences of a scalar function of `x` (double precision).
inline torch::Tensor finite_difference(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                       double h) {
  auto base = x.detach().clone();
  auto grad = torch::zeros_like(base);
  auto flat = base.view({-1});
  auto g = grad.view({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double v = flat[i].item<double>();
    flat[i] = v + h;
    const double fp = f(base);
    flat[i] = v - h;
    const double fm = f(base);
    flat[i] = v;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Largest per-element relative error; magnitudes below `floor` are compared
/// against the floor instead.
inline double max_relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric, double floor = 1e-6) {
  auto a = analytic.to(torch::kFloat64).reshape({-1});
  auto n = numeric.to(torch::kFloat64).reshape({-1});
  auto denom = torch::maximum(torch::maximum(a.abs(), n.abs()), torch::full_like(a, floor));
  return ((a - n).abs() / denom).max().item<double>();
}

}  // namespace occfill::testing
