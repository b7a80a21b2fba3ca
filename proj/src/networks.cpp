#include "occfill/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <bit>
#include <cmath>

#include "occfill/errors.hpp"

namespace occfill {

namespace nn = torch::nn;

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    h = fnv1a(c.data_ptr<float>(), static_cast<size_t>(c.numel()) * sizeof(float), h);
  };
  for (const auto& p : module.parameters(true)) mix(p);
  for (const auto& b : module.buffers(true)) mix(b);
  return h;
}

void init_weights(torch::nn::Module& module, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      c->weight.normal_(0.0, 0.02, gen);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* t = m->as<nn::ConvTranspose2d>()) {
      t->weight.normal_(0.0, 0.02, gen);
      if (t->bias.defined()) t->bias.zero_();
    } else if (auto* l = m->as<nn::Linear>()) {
      l->weight.normal_(0.0, 0.02, gen);
      if (l->bias.defined()) l->bias.zero_();
    } else if (auto* n = m->as<nn::InstanceNorm2d>()) {
      if (n->weight.defined()) n->weight.normal_(1.0, 0.02, gen);
      if (n->bias.defined()) n->bias.zero_();
    }
  }
}

namespace {

nn::Conv2d conv4(int64_t in, int64_t out, int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(stride).padding(1));
}

nn::ConvTranspose2d up4(int64_t in, int64_t out) {
  return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1));
}

nn::InstanceNorm2d inorm(int64_t ch) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(ch).affine(true)); }

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

void check_batch(const torch::Tensor& t, int64_t channels, int64_t size, const char* what) {
  if (t.dim() != 4 || t.size(1) != channels || t.size(2) != size || t.size(3) != size) {
    throw ShapeError(std::string(what) + ": expected [N," + std::to_string(channels) + "," + std::to_string(size) +
                     "," + std::to_string(size) + "], got " + c10::str(t.sizes()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

void GeneratorSpec::validate() const {
  if (image_size < 32 || !std::has_single_bit(static_cast<uint64_t>(image_size))) {
    throw SpecError("image_size must be a power of 2 and at least 32, got " + std::to_string(image_size));
  }
  if (in_channels < 1 || out_channels < 1 || base_width < 1) throw SpecError("channel counts must be positive");
  const auto max_depth = static_cast<int64_t>(std::bit_width(static_cast<uint64_t>(image_size))) - 1;
  if (depth < 0 || depth > max_depth) {
    throw SpecError("depth must lie in [1, " + std::to_string(max_depth) + "] or be 0 for the default");
  }
}

int64_t GeneratorSpec::levels() const {
  if (depth > 0) return depth;
  return static_cast<int64_t>(std::bit_width(static_cast<uint64_t>(image_size))) - 1 - 2;
}

int64_t GeneratorSpec::encoder_width(int64_t level) const { return base_width << std::min<int64_t>(level, 3); }

GeneratorImpl::GeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  spec_.validate();
  const int64_t d = spec_.levels();
  levels_.resize(static_cast<size_t>(d));
  encoder_ = register_module("encoder", nn::ModuleList());
  decoder_ = register_module("decoder", nn::ModuleList());

  for (int64_t i = 0; i < d; ++i) {
    const int64_t in = i == 0 ? spec_.in_channels : spec_.encoder_width(i - 1);
    const int64_t out = spec_.encoder_width(i);
    nn::Sequential block;
    block->push_back(conv4(in, out, 2));
    if (i > 0 && i < d - 1) block->push_back(inorm(out));
    block->push_back(lrelu());
    encoder_->push_back(block);
    auto& lv = levels_[static_cast<size_t>(i)];
    lv.encoder_channels = out;
    lv.spatial = spec_.image_size >> (i + 1);
  }

  // Decoder, innermost first. Level i's decoder block consumes the upstream
  // feature (same resolution as encoder level i) concatenated with encoder
  // level i, except the innermost which only sees the bottleneck.
  int64_t upstream = levels_.back().encoder_channels;
  for (int64_t i = d - 1; i >= 0; --i) {
    auto& lv = levels_[static_cast<size_t>(i)];
    lv.upstream_channels = upstream;
    lv.skip_channels = (i == d - 1) ? 0 : lv.encoder_channels;
    lv.decoder_in_channels = lv.upstream_channels + lv.skip_channels;
    lv.decoder_out_channels = i == 0 ? spec_.out_channels : spec_.encoder_width(i - 1);
    upstream = lv.decoder_out_channels;
  }
  for (int64_t i = d - 1; i >= 1; --i) {
    const auto& lv = levels_[static_cast<size_t>(i)];
    nn::Sequential block;
    block->push_back(up4(lv.decoder_in_channels, lv.decoder_out_channels));
    block->push_back(inorm(lv.decoder_out_channels));
    block->push_back(nn::ReLU());
    decoder_->push_back(block);
  }
  output_ = register_module("output", up4(levels_[0].decoder_in_channels, spec_.out_channels));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& masked, const torch::Tensor& reference,
                                     const torch::Tensor& pose_map) {
  check_batch(masked, 3, spec_.image_size, "generator masked input");
  check_batch(reference, 3, spec_.image_size, "generator reference input");
  check_batch(pose_map, 3, spec_.image_size, "generator pose map");
  if (masked.size(0) != reference.size(0) || masked.size(0) != pose_map.size(0)) {
    throw ShapeError("generator inputs disagree on batch size");
  }
  return forward_stacked(torch::cat({masked, reference, pose_map}, 1));
}

torch::Tensor GeneratorImpl::forward_stacked(const torch::Tensor& input) {
  check_batch(input, spec_.in_channels, spec_.image_size, "generator input");
  const auto d = static_cast<size_t>(spec_.levels());
  std::vector<torch::Tensor> skips;
  skips.reserve(d);
  torch::Tensor h = input;
  for (size_t i = 0; i < d; ++i) {
    h = encoder_[i]->as<nn::Sequential>()->forward(h);
    skips.push_back(h);
  }
  // decoder_[k] corresponds to level d-1-k.
  for (size_t k = 0; k + 1 < d; ++k) {
    const size_t level = d - 1 - k;
    if (level != d - 1) h = torch::cat({h, skips[level]}, 1);
    h = decoder_[k]->as<nn::Sequential>()->forward(h);
  }
  if (d > 1) h = torch::cat({h, skips[0]}, 1);
  return torch::tanh(output_->forward(h));
}

Generator build_generator(const GeneratorSpec& spec, uint64_t rng_seed) {
  Generator g(spec);
  init_weights(*g, rng_seed);
  return g;
}

ImageBuffer generator_forward(Generator& generator, const ImageBuffer& masked, const ImageBuffer& reference,
                              const ImageBuffer& pose_map) {
  torch::NoGradGuard guard;
  auto out = generator->forward(masked.tensor().unsqueeze(0), reference.tensor().unsqueeze(0),
                                pose_map.tensor().unsqueeze(0));
  return to_image(out.squeeze(0));
}

// ---------------------------------------------------------------------------
// Patch discriminator

void DiscriminatorSpec::validate() const {
  if (in_channels < 1 || base_width < 1) throw SpecError("discriminator channel counts must be positive");
  if (n_layers < 0 || n_layers > 8) throw SpecError("discriminator n_layers must lie in [0, 8]");
}

int64_t DiscriminatorSpec::grid_size(int64_t image_size) const {
  // k=4, p=1: stride 2 maps s -> floor((s - 2) / 2) + 1, stride 1 maps s -> s - 1.
  int64_t s = image_size;
  for (int64_t i = 0; i < n_layers; ++i) s = (s + 2 - 4) / 2 + 1;
  return s - 2;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorSpec spec) : spec_(spec) {
  spec_.validate();
  auto width = [&](int64_t k) { return spec_.base_width << std::min<int64_t>(k, 3); };
  int64_t ch = spec_.in_channels;
  for (int64_t k = 0; k < spec_.n_layers; ++k) {
    body_->push_back(conv4(ch, width(k), 2));
    if (k > 0) body_->push_back(inorm(width(k)));
    body_->push_back(lrelu());
    ch = width(k);
  }
  body_->push_back(conv4(ch, width(spec_.n_layers), 1));
  if (spec_.n_layers > 0) body_->push_back(inorm(width(spec_.n_layers)));
  body_->push_back(lrelu());
  body_->push_back(conv4(width(spec_.n_layers), 1, 1));
  register_module("body", body_);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& candidate, const torch::Tensor& condition) {
  if (candidate.dim() != 4 || condition.dim() != 4 || candidate.size(0) != condition.size(0) ||
      candidate.size(2) != condition.size(2) || candidate.size(3) != condition.size(3)) {
    throw ShapeError("discriminator candidate " + c10::str(candidate.sizes()) + " vs condition " +
                     c10::str(condition.sizes()));
  }
  if (candidate.size(1) + condition.size(1) != spec_.in_channels) {
    throw ShapeError("discriminator expects " + std::to_string(spec_.in_channels) + " input channels");
  }
  if (spec_.grid_size(std::min(candidate.size(2), candidate.size(3))) < 1) {
    throw ShapeError("input too small for the discriminator");
  }
  return body_->forward(torch::cat({candidate, condition}, 1));
}

PatchDiscriminator build_patch_discriminator(const DiscriminatorSpec& spec, uint64_t rng_seed) {
  PatchDiscriminator d(spec);
  init_weights(*d, rng_seed);
  return d;
}

// ---------------------------------------------------------------------------
// Pose regressor

PoseRegressorImpl::PoseRegressorImpl(int64_t input_size, int64_t base_width)
    : input_size_(input_size), base_width_(base_width) {
  if (input_size < 32 || !std::has_single_bit(static_cast<uint64_t>(input_size))) {
    throw SpecError("pose regressor input size must be a power of 2 and at least 32");
  }
  int64_t ch = 3;
  for (int k = 0; k < kConvStages; ++k) {
    const int64_t out = base_width << std::min(k, 2);
    convs_->push_back(conv4(ch, out, 2));
    convs_->push_back(lrelu());
    ch = out;
  }
  register_module("convs", convs_);
  const int64_t side = input_size >> kConvStages;
  fc1_ = register_module("fc1", nn::Linear(ch * side * side, 64));
  fc2_ = register_module("fc2", nn::Linear(64, 3));
}

torch::Tensor PoseRegressorImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("pose regressor expects [N,3,H,W]");
  auto x = images;
  if (x.size(2) != input_size_ || x.size(3) != input_size_) {
    x = nn::functional::interpolate(x, nn::functional::InterpolateFuncOptions()
                                           .size(std::vector<int64_t>{input_size_, input_size_})
                                           .mode(torch::kBilinear)
                                           .align_corners(false));
  }
  x = convs_->forward(x).flatten(1);
  return fc2_->forward(torch::relu(fc1_->forward(x)));
}

PoseAngles pose_regress(PoseRegressor& regressor, const ImageBuffer& image) {
  torch::NoGradGuard guard;
  auto out = regressor->forward(image.tensor().unsqueeze(0)).squeeze(0).to(torch::kDouble);
  auto deg = [&](int64_t i) { return std::clamp(out[i].item<double>() * 90.0, -90.0, 90.0); };
  return {deg(0), deg(1), deg(2)};
}

}  // namespace occfill
