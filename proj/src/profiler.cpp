#include "crackseg/profiler.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "crackseg/common.hpp"

namespace crackseg {

int64_t conv2d_flops(int64_t kh, int64_t kw, int64_t cin, int64_t cout, int64_t hout, int64_t wout,
                     bool bias) {
  int64_t flops = 2 * kh * kw * cin * cout * hout * wout;
  if (bias) flops += cout * hout * wout;
  return flops;
}

int64_t conv2d_params(int64_t kh, int64_t kw, int64_t cin, int64_t cout, bool bias) {
  return kh * kw * cin * cout + (bias ? cout : 0);
}

namespace {

// Double 3x3 conv + GN + ReLU pair at one resolution.
int64_t conv_block_flops(int64_t cin, int64_t cout, int64_t h, int64_t w) {
  int64_t flops = conv2d_flops(3, 3, cin, cout, h, w, true);
  flops += 2 * cout * h * w;  // GN + ReLU
  flops += conv2d_flops(3, 3, cout, cout, h, w, true);
  flops += 2 * cout * h * w;
  return flops;
}

int64_t gates_flops(int64_t c, int64_t h, int64_t w) {
  int64_t flops = conv2d_flops(1, 1, 2 * c, c, h, w, true) + 2 * c * h * w;  // reduce + GN + ReLU
  flops += 2 * (conv2d_flops(1, 1, c, c, h, w, true) + 2 * c * h * w);       // branches + GN + sigmoid
  return flops;
}

}  // namespace

double model_gflops(const ModelConfig& cfg, const std::vector<int64_t>& extractor_channels,
                    const std::vector<int64_t>& extractor_strides, int64_t input_h, int64_t input_w) {
  if (input_h % 16 != 0 || input_w % 16 != 0) {
    fail(Err::BadResolution, "profiling input must be divisible by 16");
  }
  const auto channels = cfg.encoder_channels();
  const bool fuse = cfg.fusion_mode != FusionMode::kNone;
  int64_t flops = 0;

  // Frozen extractor (not run in fusion mode none).
  if (fuse) {
    flops += 2 * 3 * input_h * input_w;  // input normalization: subtract + divide
    int64_t in_c = 3;
    int64_t prev_stride = 1;
    for (size_t i = 0; i < extractor_channels.size(); ++i) {
      int64_t stride = extractor_strides[i];
      int64_t h = input_h / stride, w = input_w / stride;
      for (int64_t s = prev_stride * 2; s <= stride; s *= 2) {
        flops += in_c * (input_h / s) * (input_w / s);  // each 2x2 pool
      }
      flops += conv2d_flops(3, 3, in_c, extractor_channels[i], h, w, true);
      flops += extractor_channels[i] * h * w;  // ReLU
      in_c = extractor_channels[i];
      prev_stride = stride;
    }
  }

  // Encoder with per-stage fusion.
  int64_t in_c = 3;
  for (int i = 0; i < kPyramidStages; ++i) {
    const int64_t h = input_h >> i, w = input_w >> i;
    if (i > 0) flops += channels[i - 1] * h * w;  // 2x2 max-pool
    flops += conv_block_flops(in_c, channels[i], h, w);
    if (fuse) {
      const int64_t g = extractor_channels[i];
      const int64_t gh = input_h / extractor_strides[i], gw = input_w / extractor_strides[i];
      if (gh != h || gw != w) flops += g * h * w;  // bilinear alignment
      flops += conv2d_flops(1, 1, g, channels[i], h, w, true);  // scaler pointwise
      if (cfg.fusion_mode == FusionMode::kIgam) {
        flops += gates_flops(channels[i], h, w);
        flops += 4 * channels[i] * h * w;  // two gated products + two additions
      } else {
        flops += conv2d_flops(1, 1, 2 * channels[i], channels[i], h, w, true);
      }
    }
    in_c = channels[i];
  }

  // Decoder.
  for (int d = kPyramidStages - 2; d >= 0; --d) {
    const int64_t h = input_h >> d, w = input_w >> d;
    flops += channels[d + 1] * h * w;  // bilinear x2 upsample
    flops += conv_block_flops(channels[d + 1] + channels[d], channels[d], h, w);
  }

  // Head.
  flops += conv2d_flops(1, 1, channels[0], 1, input_h, input_w, true);
  flops += input_h * input_w;  // sigmoid

  return static_cast<double>(flops) / 1e9;
}

ProfileReport profile_model(CrackNet model, std::pair<int64_t, int64_t> input_size, int n_warmup,
                            int n_timed) {
  const auto [h, w] = input_size;
  if (h % 16 != 0 || w % 16 != 0) fail(Err::BadResolution, "profiling input must be divisible by 16");
  if (n_timed < 1) fail(Err::ConfigError, "n_timed must be >= 1");

  ProfileReport r;
  r.input_size = input_size;
  r.n_warmup = n_warmup;
  r.n_timed = n_timed;
  r.params_millions = static_cast<double>(model->trainable_parameter_count()) / 1e6;

  int64_t frozen = 0;
  for (const auto& p : model->backend()->parameters()) frozen += p.numel();
  r.frozen_params_millions = static_cast<double>(frozen) / 1e6;

  r.gflops = model_gflops(model->config(), model->backend()->stage_channels(),
                          model->backend()->stage_strides(), h, w);

  torch::NoGradGuard no_grad;
  model->eval();
  torch::manual_seed(0);
  auto input = torch::rand({1, 3, h, w});
  for (int i = 0; i < n_warmup; ++i) model->forward(input);

  std::vector<double> times_ms;
  times_ms.reserve(n_timed);
  for (int i = 0; i < n_timed; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    model->forward(input);
    auto t1 = std::chrono::steady_clock::now();
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double mean = 0.0;
  for (double t : times_ms) mean += t;
  mean /= static_cast<double>(times_ms.size());
  double var = 0.0;
  for (double t : times_ms) var += (t - mean) * (t - mean);
  r.latency_ms_mean = mean;
  r.latency_ms_std = times_ms.size() > 1 ? std::sqrt(var / static_cast<double>(times_ms.size() - 1)) : 0.0;
  return r;
}

void write_profile_report(const std::filesystem::path& path, const ProfileReport& report) {
  nlohmann::ordered_json j;
  j["params_millions"] = report.params_millions;
  j["frozen_params_millions"] = report.frozen_params_millions;
  j["gflops"] = report.gflops;
  j["latency_ms_mean"] = report.latency_ms_mean;
  j["latency_ms_std"] = report.latency_ms_std;
  j["input_size"] = std::to_string(report.input_size.first) + "x" + std::to_string(report.input_size.second);
  j["n_warmup"] = report.n_warmup;
  j["n_timed"] = report.n_timed;
  j["flop_convention"] = report.flop_convention;
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
}

}  // namespace crackseg
