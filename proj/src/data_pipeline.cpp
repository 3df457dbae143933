#include "crackseg/data_pipeline.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <future>
#include <map>
#include <set>

#include "crackseg/common.hpp"

namespace crackseg {

namespace {

const std::set<std::string> kImageExtensions = {".png", ".jpg", ".jpeg"};

bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kImageExtensions.count(ext) != 0;
}

std::map<std::string, std::filesystem::path> scan_dir(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
    out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

// (H,W,3) uint8 RGB -> (3,H,W) float in [0,1]
torch::Tensor to_chw_float(const cv::Mat& rgb) {
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).clone();
}

}  // namespace

DatasetManifest scan_dataset(const std::filesystem::path& root, std::pair<int, int> target_size,
                             const std::string& images_dirname, const std::string& masks_dirname) {
  if (target_size.first <= 0 || target_size.second <= 0 || target_size.first % 16 != 0 ||
      target_size.second % 16 != 0) {
    fail(Err::BadTargetSize, "target size " + std::to_string(target_size.first) + "x" +
                                 std::to_string(target_size.second) + " must be positive and divisible by 16");
  }
  const auto images_dir = root / images_dirname;
  const auto masks_dir = root / masks_dirname;
  if (!std::filesystem::is_directory(images_dir) || !std::filesystem::is_directory(masks_dir)) {
    fail(Err::EmptyDataset, "expected '" + images_dir.string() + "' and '" + masks_dir.string() + "'");
  }

  auto images = scan_dir(images_dir);
  auto masks = scan_dir(masks_dir);

  DatasetManifest m;
  m.root = root;
  m.target_size = target_size;
  for (const auto& [stem, image_path] : images) {  // std::map iterates lexicographically
    auto it = masks.find(stem);
    if (it == masks.end()) fail(Err::MissingMask, "image '" + stem + "' has no mask");
    m.stems.push_back(stem);
    m.pairs.emplace_back(image_path, it->second);
  }
  if (m.pairs.empty()) fail(Err::EmptyDataset, "no image/mask pairs under '" + root.string() + "'");
  return m;
}

void export_manifest(const DatasetManifest& m, const std::filesystem::path& out_path) {
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot write '" + out_path.string() + "'");
  for (size_t i = 0; i < m.size(); ++i) {
    os << m.stems[i] << '\t' << m.pairs[i].first.string() << '\t' << m.pairs[i].second.string() << '\n';
  }
}

torch::Tensor decode_image_native(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(Err::DecodeError, "cannot decode '" + path.string() + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return to_chw_float(rgb);
}

torch::Tensor decode_mask_native(const std::filesystem::path& path) {
  cv::Mat mask = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (mask.empty()) fail(Err::DecodeError, "cannot decode '" + path.string() + "'");
  auto m8 = torch::from_blob(mask.data, {mask.rows, mask.cols}, torch::kUInt8);
  return m8.gt(127).to(torch::kFloat32).unsqueeze(0).clone();
}

torch::Tensor decode_image(const std::filesystem::path& path, std::pair<int, int> target_size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(Err::DecodeError, "cannot decode '" + path.string() + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != target_size.first || rgb.cols != target_size.second) {
    cv::resize(rgb, rgb, cv::Size(target_size.second, target_size.first), 0, 0, cv::INTER_LINEAR);
  }
  return to_chw_float(rgb);
}

SegmentationSample load_sample(const DatasetManifest& m, size_t index) {
  if (index >= m.size()) fail(Err::EmptyInput, "sample index out of range");
  const auto& [image_path, mask_path] = m.pairs[index];

  cv::Mat bgr = cv::imread(image_path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(Err::DecodeError, "cannot decode '" + image_path.string() + "'");
  cv::Mat mask = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
  if (mask.empty()) fail(Err::DecodeError, "cannot decode '" + mask_path.string() + "'");
  if (bgr.rows != mask.rows || bgr.cols != mask.cols) {
    fail(Err::ShapeMismatch, "image " + std::to_string(bgr.cols) + "x" + std::to_string(bgr.rows) +
                                 " vs mask " + std::to_string(mask.cols) + "x" + std::to_string(mask.rows) +
                                 " for '" + m.stems[index] + "'");
  }

  const auto [th, tw] = m.target_size;
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != th || rgb.cols != tw) {
    cv::resize(rgb, rgb, cv::Size(tw, th), 0, 0, cv::INTER_LINEAR);
    cv::resize(mask, mask, cv::Size(tw, th), 0, 0, cv::INTER_NEAREST);
  }

  SegmentationSample s;
  s.image = to_chw_float(rgb);
  auto m8 = torch::from_blob(mask.data, {mask.rows, mask.cols}, torch::kUInt8);
  s.mask = m8.gt(127).to(torch::kFloat32).unsqueeze(0).clone();  // 127 -> 0, 128 -> 1
  s.id = m.stems[index];
  return s;
}

std::mt19937_64 sample_rng(const AugmentPolicy& policy, uint64_t epoch, uint64_t sample_index) {
  return std::mt19937_64(mix_seed(policy.seed, epoch, sample_index));
}

SegmentationSample augment_sample(const SegmentationSample& s, const AugmentPolicy& policy,
                                  std::mt19937_64& draw) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip_h = unit(draw) < policy.flip_h_prob;
  const bool flip_v = unit(draw) < policy.flip_v_prob;

  // 90/270 swap H and W; only admissible on square samples.
  const bool square = s.image.size(1) == s.image.size(2);
  std::vector<int> choices;
  for (int r : policy.rotation_choices) {
    if (square || r == 0 || r == 180) choices.push_back(r);
  }
  int rotation = 0;
  if (!choices.empty()) {
    std::uniform_int_distribution<size_t> pick(0, choices.size() - 1);
    rotation = choices[pick(draw)];
  }

  auto transform = [&](const torch::Tensor& t) {
    auto out = t;
    if (flip_h) out = out.flip({2});  // width axis
    if (flip_v) out = out.flip({1});
    if (rotation != 0) out = torch::rot90(out, rotation / 90, {1, 2});
    return out.contiguous();
  };

  return SegmentationSample{transform(s.image), transform(s.mask), s.id};
}

std::vector<size_t> epoch_order(size_t n, std::optional<uint64_t> shuffle_seed, uint64_t epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    std::mt19937_64 rng(mix_seed(*shuffle_seed, epoch, 0x50fful));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

BatchStream::BatchStream(const DatasetManifest& manifest, int64_t batch_size,
                         std::optional<uint64_t> shuffle_seed, std::optional<AugmentPolicy> policy,
                         uint64_t epoch, int workers)
    : manifest_(manifest),
      batch_size_(batch_size),
      policy_(std::move(policy)),
      epoch_(epoch),
      workers_(std::max(1, workers)),
      order_(epoch_order(manifest.size(), shuffle_seed, epoch)) {
  if (batch_size < 1) fail(Err::ConfigError, "batch_size must be >= 1");
}

size_t BatchStream::n_batches() const {
  return (order_.size() + static_cast<size_t>(batch_size_) - 1) / static_cast<size_t>(batch_size_);
}

SegmentationSample BatchStream::prepared_sample(size_t manifest_index) const {
  auto s = load_sample(manifest_, manifest_index);
  if (policy_) {
    auto rng = sample_rng(*policy_, epoch_, manifest_index);
    s = augment_sample(s, *policy_, rng);
  }
  return s;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const size_t end = std::min(cursor_ + static_cast<size_t>(batch_size_), order_.size());

  std::vector<SegmentationSample> samples(end - cursor_);
  if (workers_ > 1) {
    std::vector<std::future<SegmentationSample>> futures;
    futures.reserve(end - cursor_);
    for (size_t i = cursor_; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, [this, i] { return prepared_sample(order_[i]); }));
    }
    for (size_t i = 0; i < futures.size(); ++i) samples[i] = futures[i].get();  // joined in order
  } else {
    for (size_t i = cursor_; i < end; ++i) samples[i - cursor_] = prepared_sample(order_[i]);
  }

  Batch b;
  std::vector<torch::Tensor> images, masks;
  for (auto& s : samples) {
    images.push_back(s.image);
    masks.push_back(s.mask);
    b.ids.push_back(s.id);
  }
  b.images = torch::stack(images);
  b.masks = torch::stack(masks);
  cursor_ = end;
  return b;
}

}  // namespace crackseg
