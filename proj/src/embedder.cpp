#include <torch/script.h>

#include <ATen/CPUGeneratorImpl.h>

#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "occfill/checkpoint.hpp"
#include "occfill/errors.hpp"
#include "occfill/networks.hpp"

namespace occfill {

namespace nn = torch::nn;

namespace {

torch::Tensor resize_batch(const torch::Tensor& images, int64_t size) {
  if (images.size(2) == size && images.size(3) == size) return images;
  return nn::functional::interpolate(images, nn::functional::InterpolateFuncOptions()
                                                 .size(std::vector<int64_t>{size, size})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false));
}

}  // namespace

std::vector<float> IdentityEmbedder::embed(const ImageBuffer& image) const {
  torch::NoGradGuard guard;
  auto e = embed_batch(image.tensor().unsqueeze(0)).squeeze(0).to(torch::kFloat32).contiguous();
  return {e.data_ptr<float>(), e.data_ptr<float>() + e.numel()};
}

torch::Tensor embed_identity(const IdentityEmbedder& embedder, const ImageBuffer& image) {
  torch::NoGradGuard guard;
  return embedder.embed_batch(image.tensor().unsqueeze(0)).squeeze(0);
}

// ---------------------------------------------------------------------------

ConvEmbedderImpl::ConvEmbedderImpl(int64_t input_size, int64_t dim, int64_t n_classes)
    : input_size_(input_size), dim_(dim), n_classes_(n_classes) {
  if (input_size < 16 || !std::has_single_bit(static_cast<uint64_t>(input_size))) {
    throw SpecError("embedder input size must be a power of 2 and at least 16");
  }
  if (dim < 1 || n_classes < 1) throw SpecError("embedder dim and class count must be positive");
  const int stages = std::bit_width(static_cast<uint64_t>(input_size)) - 1 - 2;  // down to 4x4
  int64_t ch = 3;
  for (int k = 0; k < stages; ++k) {
    const int64_t out = int64_t{32} << std::min(k, 2);
    trunk_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, out, 4).stride(2).padding(1)));
    trunk_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    ch = out;
  }
  register_module("trunk", trunk_);
  embed_ = register_module("embed", nn::Linear(ch * 16, dim));
  head_ = register_module("head", nn::Linear(dim, n_classes));
}

torch::Tensor ConvEmbedderImpl::features(const torch::Tensor& images) {
  return embed_->forward(trunk_->forward(resize_batch(images, input_size_)).flatten(1));
}

torch::Tensor ConvEmbedderImpl::logits(const torch::Tensor& features) {
  return head_->forward(torch::leaky_relu(features, 0.2));
}

ConvIdentityEmbedder::ConvIdentityEmbedder(ConvEmbedder net) : net_(std::move(net)) {}

torch::Tensor ConvIdentityEmbedder::embed_batch(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("embedder expects [N,3,H,W] images");
  // Unit-length embeddings keep the identity distance in [0, 2].
  ConvEmbedder net = net_;
  return torch::nn::functional::normalize(net->features(images),
                                          torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-8));
}

void ConvIdentityEmbedder::freeze() {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
  frozen_ = true;
}

void ConvIdentityEmbedder::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"kind", "conv_embedder"},
                      {"input_size", net_->input_size()},
                      {"dim", net_->dim()},
                      {"n_classes", net_->n_classes()}};
  write_container(path, meta, module_tensors(*net_, "embedder."));
}

std::shared_ptr<ConvIdentityEmbedder> ConvIdentityEmbedder::load(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.meta.value("kind", "") != "conv_embedder") throw CheckpointError(path.string() + " is not an embedder file");
  ConvEmbedder net(c.meta.at("input_size").get<int64_t>(), c.meta.at("dim").get<int64_t>(),
                   c.meta.at("n_classes").get<int64_t>());
  load_module_tensors(*net, c, "embedder.");
  auto e = std::make_shared<ConvIdentityEmbedder>(net);
  e->freeze();
  return e;
}

// ---------------------------------------------------------------------------

struct TorchScriptEmbedder::Holder {
  torch::jit::script::Module module;
};

TorchScriptEmbedder::TorchScriptEmbedder(const std::filesystem::path& path, int64_t input_size)
    : module_(std::make_shared<Holder>()), input_size_(input_size) {
  try {
    module_->module = torch::jit::load(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot load TorchScript embedder " + path.string() + ": " + e.what_without_backtrace());
  }
  module_->module.eval();
  for (auto p : module_->module.parameters()) p.set_requires_grad(false);
  torch::NoGradGuard guard;
  const auto probe = embed_batch(torch::zeros({1, 3, input_size_, input_size_}));
  if (probe.dim() != 2 || probe.size(0) != 1) throw SpecError("TorchScript embedder must return [N,D]");
  dim_ = probe.size(1);
}

torch::Tensor TorchScriptEmbedder::embed_batch(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("embedder expects [N,3,H,W] images");
  return module_->module.forward({resize_batch(images, input_size_)}).toTensor();
}

uint64_t TorchScriptEmbedder::checksum() const {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : module_->module.parameters()) {
    auto c = p.detach().to(torch::kFloat32).contiguous();
    h = fnv1a(c.data_ptr<float>(), static_cast<size_t>(c.numel()) * sizeof(float), h);
  }
  return h;
}

std::shared_ptr<IdentityEmbedder> load_identity_embedder(const std::filesystem::path& path) {
  if (path.extension() == ".pt") return std::make_shared<TorchScriptEmbedder>(path, 64);
  return ConvIdentityEmbedder::load(path);
}

// ---------------------------------------------------------------------------

EmbedderTrainResult pretrain_identity_embedder(const DatasetManifest& manifest, const EmbedderTrainConfig& config) {
  const auto ids = manifest.identity_ids();
  if (ids.size() < 2) throw TrainingError("embedder pretraining needs at least two identities");
  std::map<std::string, int64_t> label_of;
  for (size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = static_cast<int64_t>(i);

  SampleBuilder builder(manifest, MaskSpec{});
  auto gather = [&](Split split) {
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    for (size_t i : manifest.indices(split)) {
      images.push_back(builder.aligned(i).tensor());
      labels.push_back(label_of.at(manifest.records()[i].identity_id));
    }
    if (images.empty()) return std::pair{torch::Tensor(), torch::Tensor()};
    return std::pair{torch::stack(images), torch::tensor(labels, torch::kInt64)};
  };
  auto [train_x, train_y] = gather(Split::Train);
  auto [test_x, test_y] = gather(Split::Test);
  if (!train_x.defined()) throw TrainingError("train split is empty");

  ConvEmbedder net(config.input_size, config.dim, static_cast<int64_t>(ids.size()));
  init_weights(*net, config.seed);
  // Classifier weights: fan-in scaled uniform instead of N(0, 0.02).
  {
    auto gen = at::detail::createCPUGenerator(derive_seed(config.seed, 7));
    torch::NoGradGuard guard;
    for (auto& p : net->named_parameters()) {
      if (p.key().find("weight") != std::string::npos) {
        const auto fan_in = static_cast<double>(p.value()[0].numel());
        const double bound = std::sqrt(6.0 / fan_in);
        p.value().uniform_(-bound, bound, gen);
      }
    }
  }
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(derive_seed(config.seed, 11));
  const auto n = train_x.size(0);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  net->train();
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const auto end = std::min(n, start + config.batch_size);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end));
      auto x = train_x.index_select(0, idx);
      // Photometric and small translational jitter.
      std::uniform_real_distribution<double> gain(0.9, 1.1);
      std::uniform_int_distribution<int64_t> shift(-2, 2);
      x = (x * gain(rng)).clamp(-1.0, 1.0);
      x = torch::roll(x, {shift(rng), shift(rng)}, {2, 3});
      auto loss = torch::nn::functional::cross_entropy(net->logits(net->features(x)), train_y.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  auto accuracy = [&](const torch::Tensor& x, const torch::Tensor& y) {
    if (!x.defined()) return 0.0;
    torch::NoGradGuard guard;
    auto pred = net->logits(net->features(x)).argmax(1);
    return pred.eq(y).to(torch::kDouble).mean().item<double>();
  };
  EmbedderTrainResult result;
  result.train_accuracy = accuracy(train_x, train_y);
  result.test_accuracy = accuracy(test_x, test_y);
  result.embedder = std::make_shared<ConvIdentityEmbedder>(net);
  result.embedder->freeze();
  return result;
}

}  // namespace occfill
