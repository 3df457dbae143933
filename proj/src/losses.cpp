#include "crackseg/losses.hpp"

#include "crackseg/common.hpp"

namespace crackseg {

namespace {
void check_shapes(const torch::Tensor& probs, const torch::Tensor& targets) {
  if (!probs.sizes().equals(targets.sizes())) {
    fail(Err::ShapeMismatch, "probs and targets shapes differ");
  }
}
}  // namespace

LossValue LossTerms::value() const {
  return LossValue{bce.item<double>(), dice.item<double>(), total.item<double>()};
}

torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& targets) {
  check_shapes(probs, targets);
  auto p = probs.clamp(1e-7, 1.0 - 1e-7);
  auto y = targets.to(p.dtype());
  auto per_pixel = -(y * p.log() + (1.0 - y) * (1.0 - p).log());
  return per_pixel.mean();
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& targets, double eps) {
  check_shapes(probs, targets);
  auto y = targets.to(probs.dtype());
  auto intersection = (probs * y).sum();
  auto denom = probs.sum() + y.sum();
  return 1.0 - (2.0 * intersection + eps) / (denom + eps);
}

LossTerms total_loss(const torch::Tensor& probs, const torch::Tensor& targets) {
  LossTerms t;
  t.bce = bce_loss(probs, targets);
  t.dice = dice_loss(probs, targets);
  t.total = t.bce + t.dice;
  return t;
}

}  // namespace crackseg
