#include "crackseg/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "crackseg/common.hpp"

namespace crackseg {

const char* to_string(Aggregation a) { return a == Aggregation::kMicro ? "micro" : "macro"; }

ConfusionCounts confusion(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask) {
  if (!pred_mask.sizes().equals(gt_mask.sizes())) {
    fail(Err::ShapeMismatch, "prediction and ground truth shapes differ");
  }
  auto pred = pred_mask.detach().to(torch::kFloat32);
  auto gt = gt_mask.detach().to(torch::kFloat32);
  const auto binary = [](const torch::Tensor& t) {
    return ((t == 0.0f) | (t == 1.0f)).all().item<bool>();
  };
  if (!binary(pred)) fail(Err::NonBinaryInput, "prediction mask holds values outside {0,1}");
  if (!binary(gt)) fail(Err::NonBinaryInput, "ground truth mask holds values outside {0,1}");

  auto p = pred == 1.0f;
  auto g = gt == 1.0f;
  ConfusionCounts c;
  c.tp = (p & g).sum().item<int64_t>();
  c.fp = (p & ~g).sum().item<int64_t>();
  c.fn = (~p & g).sum().item<int64_t>();
  c.tn = (~p & ~g).sum().item<int64_t>();
  return c;
}

namespace {
double ratio(int64_t num, int64_t den, const ConfusionCounts& c) {
  if (c.both_empty()) return 1.0;  // perfect agreement on absence
  if (den == 0) return 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double precision_of(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp, c); }
double recall_of(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn, c); }

double f1_of(const ConfusionCounts& c) {
  if (c.both_empty()) return 1.0;
  const double p = precision_of(c);
  const double r = recall_of(c);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double iou_of(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn + c.fp, c); }
double dice_of(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fn + c.fp, c); }

MetricReport compute_metrics(const std::vector<ConfusionCounts>& counts_per_image,
                             Aggregation aggregation) {
  if (counts_per_image.empty()) fail(Err::EmptyInput, "no confusion counts to aggregate");

  MetricReport r;
  r.aggregation = aggregation;
  r.n_images = static_cast<int64_t>(counts_per_image.size());

  if (aggregation == Aggregation::kMicro) {
    ConfusionCounts sum;
    for (const auto& c : counts_per_image) {
      sum.tp += c.tp;
      sum.fp += c.fp;
      sum.fn += c.fn;
      sum.tn += c.tn;
    }
    r.f1 = f1_of(sum);
    r.iou = iou_of(sum);
    r.dice = dice_of(sum);
  } else {
    double f1 = 0.0, iou = 0.0, dice = 0.0;
    for (const auto& c : counts_per_image) {
      f1 += f1_of(c);
      iou += iou_of(c);
      dice += dice_of(c);
    }
    const auto n = static_cast<double>(counts_per_image.size());
    r.f1 = f1 / n;
    r.iou = iou / n;
    r.dice = dice / n;
  }
  return r;
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report) {
  nlohmann::ordered_json j;
  j["f1"] = report.f1;
  j["iou"] = report.iou;
  j["dice"] = report.dice;
  j["aggregation"] = to_string(report.aggregation);
  j["n_images"] = report.n_images;
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
}

}  // namespace crackseg
