#include "occfill/losses.hpp"

#include <cmath>
#include <cstdio>

#include "occfill/errors.hpp"

namespace occfill {

void LossWeights::validate() const {
  for (double w : {lambda_r, mu_id, alpha_global, gamma_pose}) {
    if (!std::isfinite(w) || w < 0.0) throw SpecError("loss weights must be finite and non-negative");
  }
}

std::string LossReport::csv_header() {
  return "step,l_r,l_id,l_adv_global_g,l_adv_pose_g,l_total_g,l_d_global,l_d_pose";
}

std::string LossReport::csv_row(int64_t step) const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(step), l_r, l_id,
                l_adv_global_g, l_adv_pose_g, l_total_g, l_d_global, l_d_pose);
  return buf;
}

torch::Tensor reconstruction_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) {
    throw ShapeError("reconstruction loss: " + c10::str(pred.sizes()) + " vs " + c10::str(target.sizes()));
  }
  return (pred - target).abs().mean();
}

torch::Tensor identity_loss(const torch::Tensor& pred, const torch::Tensor& reference,
                            const IdentityEmbedder& embedder) {
  if (pred.dim() != 4 || reference.dim() != 4 || pred.size(0) != reference.size(0)) {
    throw ShapeError("identity loss: " + c10::str(pred.sizes()) + " vs " + c10::str(reference.sizes()));
  }
  torch::Tensor ref_features;
  {
    torch::NoGradGuard guard;
    ref_features = embedder.embed_batch(reference);
  }
  const auto diff = embedder.embed_batch(pred) - ref_features.detach();
  return torch::linalg_vector_norm(diff, 2, {1}, false, c10::nullopt).mean();
}

torch::Tensor bce_real(const torch::Tensor& scores) {
  return -torch::log(torch::sigmoid(scores).clamp(kBceEpsilon, 1.0 - kBceEpsilon)).mean();
}

torch::Tensor bce_fake(const torch::Tensor& scores) {
  return -torch::log((1.0 - torch::sigmoid(scores)).clamp(kBceEpsilon, 1.0 - kBceEpsilon)).mean();
}

torch::Tensor adversarial_d_loss(PatchDiscriminator& discriminator, const torch::Tensor& real,
                                 const torch::Tensor& fake, const torch::Tensor& condition) {
  if (real.sizes() != fake.sizes()) {
    throw ShapeError("adversarial loss: real " + c10::str(real.sizes()) + " vs fake " + c10::str(fake.sizes()));
  }
  return bce_real(discriminator->forward(real, condition)) +
         bce_fake(discriminator->forward(fake.detach(), condition));
}

torch::Tensor adversarial_g_loss(PatchDiscriminator& discriminator, const torch::Tensor& fake,
                                 const torch::Tensor& condition) {
  return bce_real(discriminator->forward(fake, condition));
}

torch::Tensor gate_pose_gradient(const torch::Tensor& gen_output, const torch::Tensor& mask) {
  const bool batched = gen_output.dim() == 4 && mask.dim() == 4;
  const bool single = gen_output.dim() == 3 && mask.dim() == 3;
  if ((!batched && !single) || mask.size(-3) != 1 || mask.size(-1) != gen_output.size(-1) ||
      mask.size(-2) != gen_output.size(-2) || (batched && mask.size(0) != gen_output.size(0))) {
    throw ShapeError("pose gate: output " + c10::str(gen_output.sizes()) + " vs mask " + c10::str(mask.sizes()));
  }
  return torch::where(mask.expand_as(gen_output) > 0.5, gen_output, gen_output.detach());
}

double total_generator_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  double total = 0.0;
  const std::pair<double, double> parts[] = {{weights.lambda_r, terms.l_r},
                                             {weights.mu_id, terms.l_id},
                                             {weights.alpha_global, terms.l_adv_global_g},
                                             {weights.gamma_pose, terms.l_adv_pose_g}};
  const char* names[] = {"l_r", "l_id", "l_adv_global_g", "l_adv_pose_g"};
  for (size_t i = 0; i < 4; ++i) {
    const auto [w, v] = parts[i];
    if (w == 0.0) continue;
    if (!std::isfinite(v)) throw NumericsError(std::string("non-finite term ") + names[i]);
    total += w * v;
  }
  return total;
}

torch::Tensor total_generator_loss(const GeneratorTerms& terms, const LossWeights& weights) {
  weights.validate();
  torch::Tensor total;
  auto add = [&](double w, const torch::Tensor& t) {
    if (w == 0.0 || !t.defined()) return;
    total = total.defined() ? total + w * t : w * t;
  };
  add(weights.lambda_r, terms.l_r);
  add(weights.mu_id, terms.l_id);
  add(weights.alpha_global, terms.l_adv_global_g);
  add(weights.gamma_pose, terms.l_adv_pose_g);
  if (!total.defined()) throw SpecError("every loss term is disabled");
  return total;
}

}  // namespace occfill
