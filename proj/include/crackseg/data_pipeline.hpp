#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace crackseg {

/// Image/mask pair: image (3,H,W) float in [0,1], mask (1,H,W) float in {0,1}.
struct SegmentationSample {
  torch::Tensor image;
  torch::Tensor mask;
  std::string id;  // source filename stem
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> stems;  // lexicographic order
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;  // (image, mask)
  std::pair<int, int> target_size;  // (H, W), each divisible by 16

  size_t size() const { return pairs.size(); }
};

struct AugmentPolicy {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  std::vector<int> rotation_choices = {0, 90, 180, 270};
  uint64_t seed = 0;
};

DatasetManifest scan_dataset(const std::filesystem::path& root, std::pair<int, int> target_size,
                             const std::string& images_dirname = "images",
                             const std::string& masks_dirname = "masks");

/// Line-oriented export: `<stem>\t<image_path>\t<mask_path>`.
void export_manifest(const DatasetManifest& m, const std::filesystem::path& out_path);

SegmentationSample load_sample(const DatasetManifest& m, size_t index);

/// Shared helpers used by load_sample and the predict/eval paths.
torch::Tensor decode_image(const std::filesystem::path& path, std::pair<int, int> target_size);
torch::Tensor decode_image_native(const std::filesystem::path& path);  // (3,H,W) in [0,1]
torch::Tensor decode_mask_native(const std::filesystem::path& path);   // (1,H,W) in {0,1}

/// Deterministic per-sample generator: pure function of (policy.seed, epoch, index).
std::mt19937_64 sample_rng(const AugmentPolicy& policy, uint64_t epoch, uint64_t sample_index);

/// Applies the same flip/right-angle-rotation draw to image and mask.
SegmentationSample augment_sample(const SegmentationSample& s, const AugmentPolicy& policy,
                                  std::mt19937_64& draw);

struct Batch {
  torch::Tensor images;  // (B,3,H,W)
  torch::Tensor masks;   // (B,1,H,W)
  std::vector<std::string> ids;
};

/// One epoch of batches. Order is manifest order unless shuffle_seed is set,
/// in which case it is a pure function of (shuffle_seed, epoch). Per-sample
/// augmentation draws are pure functions of (policy.seed, epoch, index), so
/// worker count never changes the output.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, int64_t batch_size,
              std::optional<uint64_t> shuffle_seed, std::optional<AugmentPolicy> policy,
              uint64_t epoch = 0, int workers = 1);

  std::optional<Batch> next();
  size_t n_batches() const;
  const std::vector<size_t>& order() const { return order_; }

 private:
  SegmentationSample prepared_sample(size_t manifest_index) const;

  const DatasetManifest& manifest_;
  int64_t batch_size_;
  std::optional<AugmentPolicy> policy_;
  uint64_t epoch_;
  int workers_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

std::vector<size_t> epoch_order(size_t n, std::optional<uint64_t> shuffle_seed, uint64_t epoch);

}  // namespace crackseg
