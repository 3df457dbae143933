#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace crackseg {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;

  int64_t total() const { return tp + fp + fn + tn; }
  /// No positives in either prediction or ground truth.
  bool both_empty() const { return tp + fp + fn == 0; }
};

enum class Aggregation { kMicro, kMacro };
const char* to_string(Aggregation a);

struct MetricReport {
  double f1 = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  Aggregation aggregation = Aggregation::kMicro;
  int64_t n_images = 0;
};

/// Pixelwise tallies over binary masks of identical shape. NonBinaryInput if
/// either tensor holds values outside {0,1}.
ConfusionCounts confusion(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask);

// Per-count metric formulas; 0/0 is 1 when both masks are empty, else 0.
double precision_of(const ConfusionCounts& c);
double recall_of(const ConfusionCounts& c);
double f1_of(const ConfusionCounts& c);
double iou_of(const ConfusionCounts& c);
double dice_of(const ConfusionCounts& c);

/// micro: sum counts then apply formulas once; macro: per-image then average.
MetricReport compute_metrics(const std::vector<ConfusionCounts>& counts_per_image, Aggregation aggregation);

/// Pretty-printed JSON, one key per line: f1, iou, dice, aggregation, n_images.
void write_metric_report(const std::filesystem::path& path, const MetricReport& report);

}  // namespace crackseg
