#include "test_support.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <atomic>
#include <iostream>
#include <random>

namespace crackseg::testing {

namespace {
std::atomic<uint64_t> g_tmp_counter{0};
}

TempDir::TempDir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() / "crackseg_tests";
  std::filesystem::create_directories(base);
  path_ = base / (tag + "_" + std::to_string(::getpid()) + "_" +
                  std::to_string(g_tmp_counter.fetch_add(1)));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_crack_image_pair(const std::filesystem::path& image_path,
                            const std::filesystem::path& mask_path, int height, int width,
                            uint64_t seed, int thickness) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(128.0, 18.0);
  cv::Mat image(height, width, CV_8UC3);
  for (int y = 0; y < height; ++y) {
    auto* row = image.ptr<cv::Vec3b>(y);
    for (int x = 0; x < width; ++x) {
      auto v = static_cast<unsigned char>(std::clamp(noise(rng), 0.0, 255.0));
      row[x] = cv::Vec3b(v, v, v);
    }
  }

  // Jagged polyline spanning the width.
  cv::Mat mask(height, width, CV_8UC1, cv::Scalar(0));
  std::uniform_int_distribution<int> jitter(-height / 8, height / 8);
  int y = height / 2 + jitter(rng);
  const int segments = 8;
  cv::Point prev(0, std::clamp(y, thickness, height - thickness));
  for (int s = 1; s <= segments; ++s) {
    int nx = width * s / segments;
    int ny = std::clamp(prev.y + jitter(rng), thickness, height - 1 - thickness);
    cv::line(mask, prev, cv::Point(nx, ny), cv::Scalar(255), thickness);
    cv::line(image, prev, cv::Point(nx, ny), cv::Scalar(40, 40, 46), thickness);
    prev = cv::Point(nx, ny);
  }

  CV_Assert(cv::imwrite(image_path.string(), image));
  CV_Assert(cv::imwrite(mask_path.string(), mask));
}

std::filesystem::path make_crack_dataset(const std::filesystem::path& root, int n, int height,
                                         int width, uint64_t seed) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%02d", i);
    write_crack_image_pair(root / "images" / (std::string(name) + ".png"),
                           root / "masks" / (std::string(name) + ".png"), height, width,
                           seed + static_cast<uint64_t>(i) * 1009);
  }
  return root;
}

bool close_enough(const torch::Tensor& a, const torch::Tensor& b, double rtol, double atol) {
  auto da = a.detach().to(torch::kFloat64).flatten();
  auto db = b.detach().to(torch::kFloat64).flatten();
  if (da.numel() != db.numel()) {
    std::cerr << "close_enough: size mismatch " << da.numel() << " vs " << db.numel() << "\n";
    return false;
  }
  auto diff = (da - db).abs();
  auto bound = atol + rtol * torch::max(da.abs(), db.abs());
  auto bad = (diff > bound).nonzero();
  if (bad.numel() == 0) return true;
  const auto i = bad[0].item<int64_t>();
  std::cerr << "close_enough: element " << i << ": " << da[i].item<double>() << " vs "
            << db[i].item<double>() << " (|diff|=" << diff[i].item<double>() << ")\n";
  return false;
}

}  // namespace crackseg::testing
