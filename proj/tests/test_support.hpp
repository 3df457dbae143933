#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace crackseg::testing {

/// Unique scratch directory under the system temp root; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Synthetic crack scene: noisy gray background with a dark jagged polyline;
/// mask marks the polyline. Deterministic in seed.
void write_crack_image_pair(const std::filesystem::path& image_path,
                            const std::filesystem::path& mask_path, int height, int width,
                            uint64_t seed, int thickness = 4);

/// <root>/images + <root>/masks with n seeded pairs named sample_00..; returns root.
std::filesystem::path make_crack_dataset(const std::filesystem::path& root, int n, int height,
                                         int width, uint64_t seed);

/// Elementwise |a-b| <= atol + rtol*max(|a|,|b|); false (with report to stderr)
/// on first violation.
bool close_enough(const torch::Tensor& a, const torch::Tensor& b, double rtol, double atol);

}  // namespace crackseg::testing
