#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/model.hpp"

namespace crackseg {

inline constexpr const char* kFlopConvention =
    "MAC=2 FLOPs; +Cout*Hout*Wout bias adds per conv; 1 FLOP per output element "
    "per elementwise/normalization/resampling op";

/// 2*Kh*Kw*Cin*Cout*Hout*Wout (+ bias adds).
int64_t conv2d_flops(int64_t kh, int64_t kw, int64_t cin, int64_t cout, int64_t hout, int64_t wout,
                     bool bias);
int64_t conv2d_params(int64_t kh, int64_t kw, int64_t cin, int64_t cout, bool bias);

/// Analytic forward-pass FLOPs for the full network at (H,W), mirroring the
/// runtime architecture (extractor included unless fusion mode is none).
double model_gflops(const ModelConfig& cfg, const std::vector<int64_t>& extractor_channels,
                    const std::vector<int64_t>& extractor_strides, int64_t input_h, int64_t input_w);

struct ProfileReport {
  double params_millions = 0.0;
  double frozen_params_millions = 0.0;
  double gflops = 0.0;
  double latency_ms_mean = 0.0;
  double latency_ms_std = 0.0;
  std::pair<int64_t, int64_t> input_size = {0, 0};
  int n_warmup = 3;
  int n_timed = 10;
  std::string flop_convention = kFlopConvention;
};

/// Latency = mean wall-clock over n_timed forwards after n_warmup warmups
/// (single stream, no grad, eval mode).
ProfileReport profile_model(CrackNet model, std::pair<int64_t, int64_t> input_size, int n_warmup = 3,
                            int n_timed = 10);

void write_profile_report(const std::filesystem::path& path, const ProfileReport& report);

}  // namespace crackseg
