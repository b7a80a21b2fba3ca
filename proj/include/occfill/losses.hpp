#pragma once

#include <torch/torch.h>

#include <string>

#include "occfill/networks.hpp"

namespace occfill {

/// Composite-objective weights: reconstruction, identity, global adversarial
/// and pose adversarial.
struct LossWeights {
  double lambda_r = 1.0;
  double mu_id = 100.0;
  double alpha_global = 100.0;
  double gamma_pose = 70.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Scalar values of the generator terms.
struct LossTerms {
  double l_r = 0.0;
  double l_id = 0.0;
  double l_adv_global_g = 0.0;
  double l_adv_pose_g = 0.0;
};

/// Per-step values reported by the trainer.
struct LossReport {
  double l_r = 0.0;
  double l_id = 0.0;
  double l_adv_global_g = 0.0;
  double l_adv_pose_g = 0.0;
  double l_total_g = 0.0;
  double l_d_global = 0.0;
  double l_d_pose = 0.0;

  static std::string csv_header();
  std::string csv_row(int64_t step) const;
  bool operator==(const LossReport&) const = default;
};

/// Probability clamp used inside the cross-entropy terms.
inline constexpr double kBceEpsilon = 1e-7;

/// Mean absolute difference over every element. Throws ShapeError.
torch::Tensor reconstruction_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Batch mean of ||f(pred) - f(reference)||_2. The reference branch carries
/// no gradient. Throws ShapeError.
torch::Tensor identity_loss(const torch::Tensor& pred, const torch::Tensor& reference,
                            const IdentityEmbedder& embedder);

/// -mean log(sigmoid(s)) with the probability clamped to [eps, 1-eps].
torch::Tensor bce_real(const torch::Tensor& scores);
/// -mean log(1 - sigmoid(s)) with the same clamp.
torch::Tensor bce_fake(const torch::Tensor& scores);

/// Discriminator loss on (real, condition) vs (fake, condition); `fake` is
/// detached here.
torch::Tensor adversarial_d_loss(PatchDiscriminator& discriminator, const torch::Tensor& real,
                                 const torch::Tensor& fake, const torch::Tensor& condition);

/// Non-saturating generator loss -mean log(sigmoid(D(fake, condition))).
torch::Tensor adversarial_g_loss(PatchDiscriminator& discriminator, const torch::Tensor& fake,
                                 const torch::Tensor& condition);

/// Forward value equals `gen_output`; gradient is passed only where mask == 1.
/// Accepts [N,C,H,W] outputs with a [N,1,H,W] mask (or matching unbatched shapes).
torch::Tensor gate_pose_gradient(const torch::Tensor& gen_output, const torch::Tensor& mask);

/// Weighted sum of the generator terms. Zero-weight terms are skipped
/// entirely. Throws NumericsError if an active term is not finite.
double total_generator_loss(const LossTerms& terms, const LossWeights& weights);

/// Differentiable counterpart: undefined tensors are treated as disabled terms.
struct GeneratorTerms {
  torch::Tensor l_r, l_id, l_adv_global_g, l_adv_pose_g;
};
torch::Tensor total_generator_loss(const GeneratorTerms& terms, const LossWeights& weights);

}  // namespace occfill
