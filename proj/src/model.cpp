#include "crackseg/model.hpp"

#include "crackseg/common.hpp"
#include "crackseg/container.hpp"

namespace crackseg {

namespace F = torch::nn::functional;

std::vector<int64_t> ModelConfig::encoder_channels() const {
  return {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels, 16 * base_channels};
}

void ModelConfig::validate() const {
  if (base_channels < 1) fail(Err::ConfigError, "base_channels must be >= 1");
}

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t out_channels) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  norm1_ = register_module("norm1", torch::nn::GroupNorm(default_gn_groups(out_channels), out_channels));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(default_gn_groups(out_channels), out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1_->forward(conv1_->forward(x)));
  return torch::relu(norm2_->forward(conv2_->forward(y)));
}

CrackNetImpl::CrackNetImpl(ModelConfig cfg, FeatureBackend backend) : cfg_(cfg) {
  cfg_.validate();
  if (backend->stage_channels().size() != kPyramidStages) {
    fail(Err::ConfigError, "extractor must expose exactly 5 stages");
  }
  backend_ = register_module("extractor", backend);
  backend_->freeze();

  const auto channels = cfg_.encoder_channels();
  int64_t in_c = 3;
  for (int i = 0; i < kPyramidStages; ++i) {
    enc_blocks_.push_back(
        register_module("enc" + std::to_string(i + 1), ConvBlock(in_c, channels[i])));
    in_c = channels[i];
  }
  if (cfg_.fusion_mode != FusionMode::kNone) {
    for (int i = 0; i < kPyramidStages; ++i) {
      fusions_.push_back(register_module(
          "fusion_stage" + std::to_string(i + 1),
          StageFusion(cfg_.fusion_mode, backend_->stage_channels()[i], channels[i],
                      default_gn_groups(channels[i]))));
    }
  }
  // Decoder stage d consumes cat(upsampled, skip_d): channels[d+1] + channels[d].
  for (int d = kPyramidStages - 2; d >= 0; --d) {
    dec_blocks_.push_back(register_module("dec" + std::to_string(d + 1),
                                          ConvBlock(channels[d + 1] + channels[d], channels[d])));
  }
  head_ = register_module("head",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[0], 1, 1)));
}

SegmentationOutput CrackNetImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    fail(Err::ShapeMismatch, "forward expects images of shape (B,3,H,W)");
  }
  if (images.size(2) % ModelConfig::kInputDivisibility != 0 ||
      images.size(3) % ModelConfig::kInputDivisibility != 0) {
    fail(Err::BadResolution, "input " + std::to_string(images.size(2)) + "x" +
                                 std::to_string(images.size(3)) + " not divisible by 16");
  }

  const bool fuse = cfg_.fusion_mode != FusionMode::kNone;
  FeaturePyramid pyramid;
  if (fuse) pyramid = extract(backend_, images);

  // Encoder: fused stage features feed both the skip and the next stage.
  std::vector<torch::Tensor> skips;
  auto x = images;
  for (int i = 0; i < kPyramidStages; ++i) {
    if (i > 0) x = torch::max_pool2d(x, 2);
    x = enc_blocks_[i]->forward(x);
    if (fuse) x = fusions_[i]->forward(pyramid.stages[i], x);
    skips.push_back(x);
  }

  // Decoder: bottleneck in, skips 4..1.
  x = skips.back();
  for (int d = kPyramidStages - 2; d >= 0; --d) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skips[d].size(2), skips[d].size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = dec_blocks_[kPyramidStages - 2 - d]->forward(torch::cat({x, skips[d]}, 1));
  }

  SegmentationOutput out;
  out.logits = head_->forward(x);
  out.probabilities = torch::sigmoid(out.logits);
  return out;
}

torch::Tensor CrackNetImpl::predict_mask(const torch::Tensor& images, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0) fail(Err::ConfigError, "threshold must lie in (0,1)");
  torch::NoGradGuard no_grad;
  auto out = forward(images);
  return (out.probabilities >= threshold).to(torch::kFloat32);
}

std::vector<std::pair<std::string, torch::Tensor>> CrackNetImpl::trainable_parameters() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters()) {
    if (item.key().rfind("extractor.", 0) == 0) continue;
    out.emplace_back(item.key(), item.value());
  }
  return out;
}

int64_t CrackNetImpl::trainable_parameter_count() {
  int64_t n = 0;
  for (const auto& [name, p] : trainable_parameters()) n += p.numel();
  return n;
}

std::string CrackNetImpl::trainable_digest() { return tensor_table_digest(trainable_parameters()); }

CrackNet build_model(const ModelConfig& cfg, FeatureBackend backend, uint64_t seed) {
  torch::manual_seed(seed);
  return CrackNet(cfg, std::move(backend));
}

}  // namespace crackseg
