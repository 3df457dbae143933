#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include "crackseg/feature_extractor.hpp"
#include "crackseg/fusion.hpp"

namespace crackseg {

struct ModelConfig {
  int64_t base_channels = 64;
  FusionMode fusion_mode = FusionMode::kIgam;

  static constexpr int64_t kInputDivisibility = 16;

  /// [b, 2b, 4b, 8b, 16b]
  std::vector<int64_t> encoder_channels() const;
  void validate() const;  // ConfigError
};

struct SegmentationOutput {
  torch::Tensor logits;         // (B,1,H,W)
  torch::Tensor probabilities;  // sigmoid(logits)
};

/// Two (3x3 conv + GN + ReLU) blocks.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
};

TORCH_MODULE(ConvBlock);

/// Five-stage encoder with per-stage fusion against a frozen feature pyramid,
/// skip-connected decoder (bilinear x2 upsampling), 1-logit head. Fused stage
/// features feed both the skip connection and the downstream path; the fused
/// bottleneck is the decoder input.
class CrackNetImpl : public torch::nn::Module {
 public:
  CrackNetImpl(ModelConfig cfg, FeatureBackend backend);

  SegmentationOutput forward(const torch::Tensor& images);
  torch::Tensor predict_mask(const torch::Tensor& images, double threshold = 0.5);

  /// Encoder + fusion + decoder parameters; never any extractor parameter.
  std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters();
  int64_t trainable_parameter_count();
  std::string trainable_digest();

  const ModelConfig& config() const { return cfg_; }
  FeatureBackend backend() { return backend_; }

 private:
  ModelConfig cfg_;
  FeatureBackend backend_{nullptr};
  std::vector<ConvBlock> enc_blocks_;
  std::vector<StageFusion> fusions_;
  std::vector<ConvBlock> dec_blocks_;
  torch::nn::Conv2d head_{nullptr};
};

TORCH_MODULE(CrackNet);

/// Seeded deterministic construction: same (cfg, backend, seed) => identical
/// parameter digests.
CrackNet build_model(const ModelConfig& cfg, FeatureBackend backend, uint64_t seed);

}  // namespace crackseg
