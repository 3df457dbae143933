#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>

namespace crackseg {

enum class FusionMode { kIgam, kConcat, kNone };

FusionMode fusion_mode_from_string(const std::string& s);  // "igam" | "concat" | "none"
const char* to_string(FusionMode mode);

/// GN groups rule: 4 when divisible, else 1.
int64_t default_gn_groups(int64_t channels);

/// Aligns a generic feature map to a target stage: bilinear resize
/// (half-pixel centers; identity when sizes already match) followed by a
/// 1x1 convolution to the target channel count.
class FeatureScalerImpl : public torch::nn::Module {
 public:
  FeatureScalerImpl(int64_t source_channels, int64_t target_channels);

  torch::Tensor forward(const torch::Tensor& f_general, std::pair<int64_t, int64_t> target_hw);

  int64_t source_channels() const { return source_channels_; }
  int64_t target_channels() const { return target_channels_; }

 private:
  int64_t source_channels_, target_channels_;
  torch::nn::Conv2d pointwise_{nullptr};
};

TORCH_MODULE(FeatureScaler);

/// Emits two sigmoid attention masks from a channel-concatenated (B,2C,H,W)
/// pair: a shared 1x1 reduction (2C->C, GN, ReLU) followed by two parallel
/// 1x1 branches (GN, sigmoid). First mask gates the general features, second
/// the crack-specific ones.
class InteractionGatesImpl : public torch::nn::Module {
 public:
  InteractionGatesImpl(int64_t channels, int64_t groups);

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& concat_features);

  int64_t channels() const { return channels_; }
  int64_t groups() const { return groups_; }

 private:
  int64_t channels_, groups_;
  torch::nn::Conv2d reduce_{nullptr}, branch_general_{nullptr}, branch_crack_{nullptr};
  torch::nn::GroupNorm reduce_norm_{nullptr}, general_norm_{nullptr}, crack_norm_{nullptr};
};

TORCH_MODULE(InteractionGates);

/// Per-stage fusion of scaled generic features with crack-specific features.
///   kIgam:   f_crack + mask_general * f_scaled + mask_crack * f_crack
///   kConcat: 1x1 projection of concat(f_scaled, f_crack), 2C -> C
///   kNone:   f_crack unchanged (no parameters allocated)
class StageFusionImpl : public torch::nn::Module {
 public:
  StageFusionImpl(FusionMode mode, int64_t source_channels, int64_t channels, int64_t groups);

  torch::Tensor forward(const torch::Tensor& f_general, const torch::Tensor& f_crack);

  FusionMode mode() const { return mode_; }
  FeatureScaler scaler() { return scaler_; }
  InteractionGates gates() { return gates_; }

 private:
  FusionMode mode_;
  int64_t channels_;
  FeatureScaler scaler_{nullptr};
  InteractionGates gates_{nullptr};
  torch::nn::Conv2d concat_proj_{nullptr};
};

TORCH_MODULE(StageFusion);

}  // namespace crackseg
