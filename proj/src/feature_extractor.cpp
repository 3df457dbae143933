#include "crackseg/feature_extractor.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>

#include "crackseg/common.hpp"
#include "crackseg/container.hpp"

namespace crackseg {

namespace {

void check_stage_lists(const std::vector<int64_t>& channels, const std::vector<int64_t>& strides) {
  if (channels.size() != kPyramidStages || strides.size() != kPyramidStages) {
    fail(Err::CorruptWeights, "backend must declare exactly " + std::to_string(kPyramidStages) + " stages");
  }
  for (auto c : channels) {
    if (c <= 0) fail(Err::CorruptWeights, "stage channel counts must be positive");
  }
  int64_t prev = 0;
  for (auto s : strides) {
    if (s <= 0 || 16 % s != 0) fail(Err::CorruptWeights, "stage strides must divide 16");
    if (s < prev) fail(Err::CorruptWeights, "stage strides must be nondecreasing");
    prev = s;
  }
}

int log2_exact(int64_t v) {
  int n = 0;
  while ((int64_t{1} << n) < v) ++n;
  return n;
}

}  // namespace

FeatureBackendImpl::FeatureBackendImpl(std::string name, std::vector<int64_t> stage_channels,
                                       std::vector<int64_t> stage_strides, std::vector<double> norm_mean,
                                       std::vector<double> norm_std)
    : name_(std::move(name)),
      stage_channels_(std::move(stage_channels)),
      stage_strides_(std::move(stage_strides)),
      norm_mean_(std::move(norm_mean)),
      norm_std_(std::move(norm_std)) {
  check_stage_lists(stage_channels_, stage_strides_);
  if (norm_mean_.size() != 3 || norm_std_.size() != 3) {
    fail(Err::CorruptWeights, "normalization constants must have 3 channels");
  }
  int64_t in_c = 3;
  for (int i = 0; i < kPyramidStages; ++i) {
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in_c, stage_channels_[i], 3).padding(1));
    convs_.push_back(register_module("stage" + std::to_string(i + 1) + "_conv", conv));
    in_c = stage_channels_[i];
  }
}

void FeatureBackendImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> FeatureBackendImpl::forward(const torch::Tensor& images) {
  auto mean = torch::tensor({norm_mean_[0], norm_mean_[1], norm_mean_[2]},
                            images.options())
                  .view({1, 3, 1, 1});
  auto std = torch::tensor({norm_std_[0], norm_std_[1], norm_std_[2]}, images.options())
                 .view({1, 3, 1, 1});
  auto x = (images - mean) / std;

  std::vector<torch::Tensor> stages;
  int64_t prev_stride = 1;
  for (int i = 0; i < kPyramidStages; ++i) {
    const int pools = log2_exact(stage_strides_[i] / prev_stride);
    for (int p = 0; p < pools; ++p) x = torch::max_pool2d(x, 2);
    x = torch::relu(convs_[i]->forward(x));
    stages.push_back(x);
    prev_stride = stage_strides_[i];
  }
  return stages;
}

FeatureBackend make_stub_backend(uint64_t seed, std::vector<int64_t> stage_channels) {
  torch::manual_seed(seed);
  FeatureBackend backend("stub:" + std::to_string(seed), std::move(stage_channels),
                         std::vector<int64_t>{1, 2, 4, 8, 16}, std::vector<double>{0.5, 0.5, 0.5},
                         std::vector<double>{0.5, 0.5, 0.5});
  backend->freeze();
  return backend;
}

void save_backend(FeatureBackend backend, const std::filesystem::path& path) {
  Container c;
  c.meta["kind"] = "backend";
  c.meta["backend_name"] = backend->backend_name();
  c.meta["stage_channels"] = join_i64(backend->stage_channels());
  c.meta["stage_strides"] = join_i64(backend->stage_strides());
  c.meta["norm_mean"] = join_f64(backend->norm_mean());
  c.meta["norm_std"] = join_f64(backend->norm_std());
  for (const auto& item : backend->named_parameters()) c.put(item.key(), item.value());
  write_container(path, c);
}

FeatureBackend load_pretrained_backend(const std::filesystem::path& weights_path) {
  if (!std::filesystem::exists(weights_path)) {
    fail(Err::BackendUnavailable, "weights file '" + weights_path.string() + "' not found");
  }
  auto c = read_container(weights_path);
  if (c.meta_at("kind") != "backend") fail(Err::CorruptWeights, "container is not a backend checkpoint");

  auto channels = c.meta_i64_list("stage_channels");
  auto strides = c.meta_i64_list("stage_strides");
  check_stage_lists(channels, strides);

  FeatureBackend backend(c.meta_at("backend_name"), channels, strides, c.meta_f64_list("norm_mean"),
                         c.meta_f64_list("norm_std"));
  torch::NoGradGuard no_grad;
  for (auto& item : backend->named_parameters()) {
    auto stored = c.get(item.key());
    if (!stored.sizes().equals(item.value().sizes())) {
      fail(Err::CorruptWeights, "tensor '" + item.key() + "' shape mismatch");
    }
    item.value().copy_(stored.to(item.value().dtype()));
  }
  backend->freeze();
  return backend;
}

FeaturePyramid extract(FeatureBackend backend, const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    fail(Err::ShapeMismatch, "extract expects images of shape (B,3,H,W)");
  }
  if (images.size(2) % 16 != 0 || images.size(3) % 16 != 0) {
    fail(Err::BadResolution, "input " + std::to_string(images.size(2)) + "x" +
                                 std::to_string(images.size(3)) + " not divisible by 16");
  }
  torch::NoGradGuard no_grad;
  const bool was_training = backend->is_training();
  backend->eval();
  FeaturePyramid p;
  p.stages = backend->forward(images);
  p.stage_channels = backend->stage_channels();
  p.stage_strides = backend->stage_strides();
  if (was_training) backend->train();
  return p;
}

std::vector<std::filesystem::path> visualize_pyramid(const FeaturePyramid& pyramid, int n_maps,
                                                     const std::filesystem::path& out_dir) {
  if (n_maps < 1) fail(Err::ConfigError, "n_maps must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) {
    fail(Err::IoError, "cannot create output directory '" + out_dir.string() + "'");
  }

  std::vector<std::filesystem::path> files;
  for (size_t k = 0; k < pyramid.stages.size(); ++k) {
    auto stage = pyramid.stages[k].detach().to(torch::kFloat32);
    if (stage.dim() != 4) fail(Err::ShapeMismatch, "pyramid stages must be 4-D");
    stage = stage[0];  // first batch element
    const int count = static_cast<int>(std::min<int64_t>(n_maps, stage.size(0)));
    const int h = static_cast<int>(stage.size(1));
    const int w = static_cast<int>(stage.size(2));
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
    const int rows = (count + cols - 1) / cols;

    cv::Mat grid(rows * h, cols * w, CV_8UC1, cv::Scalar(0));
    for (int i = 0; i < count; ++i) {
      auto ch = stage[i].contiguous();
      const float lo = ch.min().item<float>();
      const float hi = ch.max().item<float>();
      cv::Mat tile(h, w, CV_8UC1);
      const float* src = ch.const_data_ptr<float>();
      if (hi - lo < 1e-12f) {
        tile.setTo(128);  // degenerate constant channel
      } else {
        const float scale = 255.0f / (hi - lo);
        for (int y = 0; y < h; ++y) {
          auto* dst = tile.ptr<unsigned char>(y);
          for (int x = 0; x < w; ++x) {
            dst[x] = static_cast<unsigned char>(std::lround((src[y * w + x] - lo) * scale));
          }
        }
      }
      tile.copyTo(grid(cv::Rect((i % cols) * w, (i / cols) * h, w, h)));
    }

    auto file = out_dir / ("stage" + std::to_string(k + 1) + ".png");
    if (!cv::imwrite(file.string(), grid)) fail(Err::IoError, "cannot write '" + file.string() + "'");
    files.push_back(file);
  }
  return files;
}

std::string backend_digest(FeatureBackend backend) {
  std::vector<std::pair<std::string, torch::Tensor>> named;
  for (const auto& item : backend->named_parameters()) named.emplace_back(item.key(), item.value());
  return tensor_table_digest(named);
}

}  // namespace crackseg
