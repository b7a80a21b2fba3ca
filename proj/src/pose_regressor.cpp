#include <ATen/CPUGeneratorImpl.h>

#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "occfill/checkpoint.hpp"
#include "occfill/errors.hpp"
#include "occfill/networks.hpp"

namespace occfill {

PoseTrainResult train_pose_regressor(const DatasetManifest& manifest, const PoseTrainConfig& config) {
  const auto train_idx = manifest.indices(Split::Train);
  if (train_idx.empty()) throw TrainingError("train split is empty");
  SampleBuilder builder(manifest, config.mask);

  auto pose_target = [&](size_t i) {
    const auto& p = manifest.records()[i].pose;
    return torch::tensor({p.pitch / 90.0, p.yaw / 90.0, p.roll / 90.0}, torch::kFloat32);
  };

  PoseRegressor net(config.input_size);
  init_weights(*net, config.seed);
  {
    auto gen = at::detail::createCPUGenerator(derive_seed(config.seed, 7));
    torch::NoGradGuard guard;
    for (auto& p : net->named_parameters()) {
      if (p.key().find("weight") != std::string::npos) {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.value()[0].numel()));
        p.value().uniform_(-bound, bound, gen);
      }
    }
  }
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(derive_seed(config.seed, 13));
  std::vector<size_t> order = train_idx;
  net->train();
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<torch::Tensor> xs, ys;
      for (size_t k = start; k < end; ++k) {
        const size_t i = order[k];
        auto occ = apply_occlusion(builder.aligned(i), config.mask, rng());
        xs.push_back(occ.masked.tensor());
        ys.push_back(pose_target(i));
      }
      auto loss = torch::mse_loss(net->forward(torch::stack(xs)), torch::stack(ys));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  net->eval();

  PoseTrainResult result;
  result.regressor = net;
  const auto test_idx = manifest.indices(Split::Test);
  if (!test_idx.empty()) {
    MaskSpec eval_mask = config.mask;
    eval_mask.jitter = 0.0;
    std::array<double, 3> err{0.0, 0.0, 0.0};
    for (size_t i : test_idx) {
      const auto occ = apply_occlusion(builder.aligned(i), eval_mask, 0);
      const auto p = pose_regress(result.regressor, occ.masked);
      const auto& t = manifest.records()[i].pose;
      err[0] += std::abs(p.pitch - t.pitch);
      err[1] += std::abs(p.yaw - t.yaw);
      err[2] += std::abs(p.roll - t.roll);
    }
    const auto n = static_cast<double>(test_idx.size());
    result.test_mae_pitch = err[0] / n;
    result.test_mae_yaw = err[1] / n;
    result.test_mae_roll = err[2] / n;
  }
  return result;
}

void save_pose_regressor(const PoseRegressor& regressor, const std::filesystem::path& path) {
  nlohmann::json meta{{"kind", "pose_regressor"},
                      {"input_size", regressor->input_size()},
                      {"base_width", regressor->base_width()}};
  write_container(path, meta, module_tensors(*regressor, "pose."));
}

PoseRegressor load_pose_regressor(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "pose_regressor") throw CheckpointError(path.string() + " is not a pose regressor");
  PoseRegressor net(c.meta.at("input_size").get<int64_t>(), c.meta.at("base_width").get<int64_t>());
  load_module_tensors(*net, c, "pose.");
  net->eval();
  return net;
}

}  // namespace occfill
