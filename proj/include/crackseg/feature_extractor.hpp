#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace crackseg {

/// Ordered five-stage feature stack at strides dividing 16.
struct FeaturePyramid {
  std::vector<torch::Tensor> stages;       // 5 x (B, C_i, H/stride_i, W/stride_i)
  std::vector<int64_t> stage_channels;     // 5
  std::vector<int64_t> stage_strides;      // 5, nondecreasing
};

inline constexpr int kPyramidStages = 5;

/// Frozen five-stage conv pyramid. Per stage: 3x3 conv + ReLU; 2x2 max-pool
/// per factor-of-two stride increase between stages. Input normalization
/// constants travel with the backend. Parameters never require grad.
class FeatureBackendImpl : public torch::nn::Module {
 public:
  FeatureBackendImpl(std::string name, std::vector<int64_t> stage_channels,
                     std::vector<int64_t> stage_strides, std::vector<double> norm_mean,
                     std::vector<double> norm_std);

  std::vector<torch::Tensor> forward(const torch::Tensor& images);

  const std::string& backend_name() const { return name_; }
  const std::vector<int64_t>& stage_channels() const { return stage_channels_; }
  const std::vector<int64_t>& stage_strides() const { return stage_strides_; }
  const std::vector<double>& norm_mean() const { return norm_mean_; }
  const std::vector<double>& norm_std() const { return norm_std_; }

  void freeze();  // requires_grad(false) on every parameter

 private:
  std::string name_;
  std::vector<int64_t> stage_channels_;
  std::vector<int64_t> stage_strides_;
  std::vector<double> norm_mean_, norm_std_;
  std::vector<torch::nn::Conv2d> convs_;
};

TORCH_MODULE(FeatureBackend);

inline const std::vector<int64_t> kDefaultStubChannels = {32, 64, 128, 256, 320};

FeatureBackend make_stub_backend(uint64_t seed,
                                 std::vector<int64_t> stage_channels = kDefaultStubChannels);

void save_backend(FeatureBackend backend, const std::filesystem::path& path);
FeatureBackend load_pretrained_backend(const std::filesystem::path& weights_path);

/// Runs the frozen backend under no-grad. BadResolution unless H,W % 16 == 0.
FeaturePyramid extract(FeatureBackend backend, const torch::Tensor& images);

/// Writes one grayscale grid PNG per stage (stage1.png .. stage5.png) showing
/// the first min(n_maps, channels) channel maps of batch element 0, each
/// min-max normalized; constant channels render as mid-gray 128.
std::vector<std::filesystem::path> visualize_pyramid(const FeaturePyramid& pyramid, int n_maps,
                                                     const std::filesystem::path& out_dir);

/// Hex digest over all backend parameters (order + name + raw bytes).
std::string backend_digest(FeatureBackend backend);

}  // namespace crackseg
