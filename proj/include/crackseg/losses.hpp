#pragma once

#include <torch/torch.h>

namespace crackseg {

/// Scalar components as plain numbers; total = bce + dice_loss.
struct LossValue {
  double bce = 0.0;
  double dice_loss = 0.0;
  double total = 0.0;
};

/// Differentiable loss terms (scalar tensors on the inputs' dtype/graph).
struct LossTerms {
  torch::Tensor bce;
  torch::Tensor dice;
  torch::Tensor total;
  LossValue value() const;
};

/// Mean over all pixels of -[y log p + (1-y) log(1-p)], p clamped to
/// [1e-7, 1-1e-7]. Shapes must match.
torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& targets);

/// Soft Dice on probabilities: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps),
/// sums over the whole batch.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& targets, double eps = 1.0);

LossTerms total_loss(const torch::Tensor& probs, const torch::Tensor& targets);

}  // namespace crackseg
