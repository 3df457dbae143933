#include "crackseg/fusion.hpp"

#include "crackseg/common.hpp"

namespace crackseg {

namespace F = torch::nn::functional;

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "igam") return FusionMode::kIgam;
  if (s == "concat") return FusionMode::kConcat;
  if (s == "none") return FusionMode::kNone;
  fail(Err::ConfigError, "unknown fusion mode '" + s + "' (expected igam|concat|none)");
}

const char* to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kIgam: return "igam";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kNone: return "none";
  }
  return "?";
}

int64_t default_gn_groups(int64_t channels) { return channels % 4 == 0 ? 4 : 1; }

FeatureScalerImpl::FeatureScalerImpl(int64_t source_channels, int64_t target_channels)
    : source_channels_(source_channels), target_channels_(target_channels) {
  pointwise_ = register_module(
      "pointwise", torch::nn::Conv2d(torch::nn::Conv2dOptions(source_channels, target_channels, 1)));
}

torch::Tensor FeatureScalerImpl::forward(const torch::Tensor& f_general,
                                         std::pair<int64_t, int64_t> target_hw) {
  if (f_general.size(1) != source_channels_) {
    fail(Err::ChannelMismatch, "scaler expects " + std::to_string(source_channels_) + " channels, got " +
                                   std::to_string(f_general.size(1)));
  }
  auto x = f_general;
  if (x.size(2) != target_hw.first || x.size(3) != target_hw.second) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{target_hw.first, target_hw.second})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  return pointwise_->forward(x);
}

InteractionGatesImpl::InteractionGatesImpl(int64_t channels, int64_t groups)
    : channels_(channels), groups_(groups) {
  if (channels <= 0 || groups <= 0 || channels % groups != 0) {
    fail(Err::ChannelMismatch, "groups must divide channels");
  }
  reduce_ = register_module("reduce",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels, channels, 1)));
  reduce_norm_ = register_module("reduce_norm", torch::nn::GroupNorm(groups, channels));
  branch_general_ = register_module(
      "branch_general", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  general_norm_ = register_module("general_norm", torch::nn::GroupNorm(groups, channels));
  branch_crack_ = register_module(
      "branch_crack", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  crack_norm_ = register_module("crack_norm", torch::nn::GroupNorm(groups, channels));
}

std::pair<torch::Tensor, torch::Tensor> InteractionGatesImpl::forward(
    const torch::Tensor& concat_features) {
  if (concat_features.size(1) != 2 * channels_) {
    fail(Err::ChannelMismatch, "gates expect " + std::to_string(2 * channels_) + " channels, got " +
                                   std::to_string(concat_features.size(1)));
  }
  auto shared = torch::relu(reduce_norm_->forward(reduce_->forward(concat_features)));
  auto mask_general = torch::sigmoid(general_norm_->forward(branch_general_->forward(shared)));
  auto mask_crack = torch::sigmoid(crack_norm_->forward(branch_crack_->forward(shared)));
  return {mask_general, mask_crack};
}

StageFusionImpl::StageFusionImpl(FusionMode mode, int64_t source_channels, int64_t channels,
                                 int64_t groups)
    : mode_(mode), channels_(channels) {
  if (mode_ == FusionMode::kNone) return;  // identity; nothing to allocate
  scaler_ = register_module("scaler", FeatureScaler(source_channels, channels));
  if (mode_ == FusionMode::kIgam) {
    gates_ = register_module("gates", InteractionGates(channels, groups));
  } else {
    concat_proj_ = register_module(
        "concat_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels, channels, 1)));
  }
}

torch::Tensor StageFusionImpl::forward(const torch::Tensor& f_general, const torch::Tensor& f_crack) {
  if (mode_ == FusionMode::kNone) return f_crack;
  if (f_crack.size(1) != channels_) {
    fail(Err::ChannelMismatch, "crack features must have " + std::to_string(channels_) + " channels");
  }
  auto f_scaled = scaler_->forward(f_general, {f_crack.size(2), f_crack.size(3)});
  auto paired = torch::cat({f_scaled, f_crack}, 1);
  if (mode_ == FusionMode::kConcat) {
    return concat_proj_->forward(paired);
  }
  auto [mask_general, mask_crack] = gates_->forward(paired);
  return f_crack + mask_general * f_scaled + mask_crack * f_crack;
}

}  // namespace crackseg
