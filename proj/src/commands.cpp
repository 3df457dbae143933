#include "crackseg/commands.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <ATen/Context.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include "crackseg/common.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/profiler.hpp"

namespace crackseg {

namespace F = torch::nn::functional;

FeatureBackend backend_from_spec(const std::string& spec) {
  if (spec.rfind("stub:", 0) == 0) {
    uint64_t seed = 0;
    try {
      seed = std::stoull(spec.substr(5));
    } catch (const std::exception&) {
      fail(Err::ConfigError, "bad stub backend seed in '" + spec + "'");
    }
    return make_stub_backend(seed);
  }
  if (spec.rfind("pretrained:", 0) == 0) {
    return load_pretrained_backend(spec.substr(11));
  }
  fail(Err::ConfigError, "backend spec must be stub:<seed> or pretrained:<path>, got '" + spec + "'");
}

ModelConfig model_config_from_run(const RunConfig& cfg) {
  ModelConfig m;
  m.base_channels = cfg.i64("base_channels");
  m.fusion_mode = fusion_mode_from_string(cfg.str("fusion_mode"));
  m.validate();
  return m;
}

TrainConfig train_config_from_run(const RunConfig& cfg) {
  TrainConfig t;
  t.lr0 = cfg.f64("lr0");
  t.epochs = cfg.i64("epochs");
  t.batch_size = cfg.i64("batch_size");
  t.weight_decay = cfg.f64("weight_decay");
  t.seed = static_cast<uint64_t>(cfg.i64("seed"));
  t.checkpoint_every = cfg.i64("checkpoint_every");
  t.deterministic = cfg.flag("deterministic");
  t.workers = static_cast<int>(cfg.i64("workers"));
  t.augment.flip_h_prob = cfg.f64("flip_h_prob");
  t.augment.flip_v_prob = cfg.f64("flip_v_prob");
  t.augment.rotation_choices = cfg.int_list("rotation_choices");
  t.augment.seed = t.seed;
  t.validate();
  return t;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m,
                                                           double val_fraction, uint64_t seed) {
  const size_t n = m.size();
  if (n < 2 || val_fraction <= 0.0) fail(Err::ConfigError, "manifest too small to split");
  size_t n_val = static_cast<size_t>(std::lround(val_fraction * static_cast<double>(n)));
  n_val = std::min(std::max<size_t>(n_val, 1), n - 1);

  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0xa1u));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::set<size_t> val_set(idx.begin(), idx.begin() + static_cast<long>(n_val));

  DatasetManifest train = m, val = m;
  train.stems.clear();
  train.pairs.clear();
  val.stems.clear();
  val.pairs.clear();
  for (size_t i = 0; i < n; ++i) {
    auto& dst = val_set.count(i) ? val : train;
    dst.stems.push_back(m.stems[i]);
    dst.pairs.push_back(m.pairs[i]);
  }
  return {train, val};
}

bool is_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  return is && std::string(magic, 8) == "CSEGCKPT";
}

namespace {

const std::set<std::string> kImageExts = {".png", ".jpg", ".jpeg"};

bool looks_like_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kImageExts.count(ext) != 0;
}

std::filesystem::path ensure_out_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) {
    fail(Err::IoError, "cannot create output directory '" + out_dir.string() + "'");
  }
  return out_dir;
}

// Zero-pad (B,3,H,W) on the right/bottom up to the next multiple of 16.
torch::Tensor pad_to_grid(const torch::Tensor& images) {
  const int64_t h = images.size(2), w = images.size(3);
  const int64_t ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
  if (ph == 0 && pw == 0) return images;
  return F::pad(images, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kConstant).value(0));
}

cv::Mat chw_to_bgr_u8(const torch::Tensor& image) {
  auto hwc = image.mul(255.0f).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
              const_cast<void*>(reinterpret_cast<const void*>(hwc.const_data_ptr())));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask) {
  auto m = mask.squeeze(0).mul(255.0f).to(torch::kUInt8).contiguous();
  cv::Mat out(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1,
              const_cast<void*>(reinterpret_cast<const void*>(m.const_data_ptr())));
  if (!cv::imwrite(path.string(), out)) fail(Err::IoError, "cannot write '" + path.string() + "'");
}

// Prediction in red, alpha-blended at 0.5 over the input.
void write_overlay_png(const std::filesystem::path& path, const torch::Tensor& image,
                       const torch::Tensor& mask) {
  cv::Mat bgr = chw_to_bgr_u8(image);
  auto m = mask.squeeze(0).contiguous();
  const float* mp = m.const_data_ptr<float>();
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      if (mp[y * bgr.cols + x] > 0.5f) {
        row[x][0] = static_cast<unsigned char>(row[x][0] * 0.5f);
        row[x][1] = static_cast<unsigned char>(row[x][1] * 0.5f);
        row[x][2] = static_cast<unsigned char>(row[x][2] * 0.5f + 127.5f);  // red channel
      }
    }
  }
  if (!cv::imwrite(path.string(), bgr)) fail(Err::IoError, "cannot write '" + path.string() + "'");
}

// Native-size prediction with the pad-and-crop rule.
torch::Tensor predict_native(CrackNet model, const torch::Tensor& image, double threshold) {
  auto batch = pad_to_grid(image.unsqueeze(0));
  auto mask = model->predict_mask(batch, threshold);
  return mask[0].slice(1, 0, image.size(1)).slice(2, 0, image.size(2)).contiguous();
}

std::vector<ConfusionCounts> eval_counts_resized(CrackNet model, const DatasetManifest& m,
                                                 int64_t batch_size, double threshold) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<ConfusionCounts> counts;
  BatchStream stream(m, batch_size, std::nullopt, std::nullopt);
  while (auto batch = stream.next()) {
    auto pred = model->predict_mask(batch->images, threshold);
    for (int64_t i = 0; i < pred.size(0); ++i) counts.push_back(confusion(pred[i], batch->masks[i]));
  }
  return counts;
}

std::vector<ConfusionCounts> eval_counts_native(CrackNet model, const DatasetManifest& m,
                                                double threshold) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<ConfusionCounts> counts;
  for (size_t i = 0; i < m.size(); ++i) {
    auto image = decode_image_native(m.pairs[i].first);
    auto mask = decode_mask_native(m.pairs[i].second);
    if (image.size(1) != mask.size(1) || image.size(2) != mask.size(2)) {
      fail(Err::ShapeMismatch, "image/mask sizes differ for '" + m.stems[i] + "'");
    }
    counts.push_back(confusion(predict_native(model, image, threshold), mask));
  }
  return counts;
}

struct TrainingRun {
  std::filesystem::path out_dir;
  DatasetManifest train_manifest;
  DatasetManifest val_manifest;
  TrainState state;
};

TrainingRun run_training(const RunConfig& cfg) {
  if (!cfg.is_set("train_root")) fail(Err::ConfigError, "train_root is required");
  const auto target = cfg.hw("target_size");
  auto full = scan_dataset(cfg.str("train_root"), target, cfg.str("images_dirname"),
                           cfg.str("masks_dirname"));

  DatasetManifest train = full, val = full;
  if (cfg.is_set("val_root")) {
    val = scan_dataset(cfg.str("val_root"), target, cfg.str("images_dirname"),
                       cfg.str("masks_dirname"));
  } else if (cfg.f64("val_fraction") > 0.0 && full.size() >= 2) {
    std::tie(train, val) = split_manifest(full, cfg.f64("val_fraction"),
                                          static_cast<uint64_t>(cfg.i64("seed")));
  }

  auto out_dir = ensure_out_dir(cfg.str("out_dir"));
  cfg.write_resolved(out_dir / "config.resolved");
  export_manifest(train, out_dir / "train_manifest.tsv");
  export_manifest(val, out_dir / "val_manifest.tsv");

  auto tcfg = train_config_from_run(cfg);

  CrackNet model{nullptr};
  std::optional<TrainState> resume;
  if (cfg.is_set("resume")) {
    auto ckpt = load_checkpoint(cfg.str("resume"));
    model = ckpt.model;
    resume = std::move(ckpt.state);
  } else {
    model = build_model(model_config_from_run(cfg), backend_from_spec(cfg.str("backend")),
                        static_cast<uint64_t>(cfg.i64("seed")));
  }

  TrainingRun run;
  run.out_dir = out_dir;
  run.train_manifest = std::move(train);
  run.val_manifest = std::move(val);
  run.state = fit(model, run.train_manifest, run.val_manifest, tcfg, out_dir, std::move(resume));
  return run;
}

void write_per_image_table(const std::filesystem::path& path, const DatasetManifest& m,
                           const std::vector<ConfusionCounts>& counts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Err::IoError, "cannot write '" + path.string() + "'");
  os << "stem\ttp\tfp\tfn\ttn\tf1\tiou\tdice\n";
  os.precision(10);
  for (size_t i = 0; i < counts.size(); ++i) {
    const auto& c = counts[i];
    os << m.stems[i] << '\t' << c.tp << '\t' << c.fp << '\t' << c.fn << '\t' << c.tn << '\t'
       << f1_of(c) << '\t' << iou_of(c) << '\t' << dice_of(c) << '\n';
  }
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
  run_training(cfg);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
             const std::filesystem::path& dataset_root, const std::filesystem::path& out_dir) {
  if (cfg.flag("deterministic")) at::set_num_threads(1);
  auto ckpt = load_checkpoint(checkpoint);
  auto manifest = scan_dataset(dataset_root, cfg.hw("target_size"), cfg.str("images_dirname"),
                               cfg.str("masks_dirname"));
  ensure_out_dir(out_dir);
  cfg.write_resolved(out_dir / "config.resolved");

  const double threshold = cfg.f64("threshold");
  auto counts = cfg.flag("eval_resize")
                    ? eval_counts_resized(ckpt.model, manifest, cfg.i64("batch_size"), threshold)
                    : eval_counts_native(ckpt.model, manifest, threshold);

  write_per_image_table(out_dir / "per_image.tsv", manifest, counts);
  write_metric_report(out_dir / "metrics_micro.json", compute_metrics(counts, Aggregation::kMicro));
  write_metric_report(out_dir / "metrics_macro.json", compute_metrics(counts, Aggregation::kMacro));
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                const std::filesystem::path& input, const std::filesystem::path& out_dir) {
  if (cfg.flag("deterministic")) at::set_num_threads(1);
  auto ckpt = load_checkpoint(checkpoint);
  ckpt.model->eval();

  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(input)) {
    for (const auto& entry : std::filesystem::directory_iterator(input)) {
      if (entry.is_regular_file() && looks_like_image(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (std::filesystem::exists(input)) {
    files.push_back(input);
  }
  if (files.empty()) fail(Err::EmptyDataset, "no input images under '" + input.string() + "'");

  ensure_out_dir(out_dir);
  cfg.write_resolved(out_dir / "config.resolved");
  const double threshold = cfg.f64("threshold");

  size_t failures = 0;
  torch::NoGradGuard no_grad;
  for (const auto& file : files) {
    try {
      auto image = decode_image_native(file);
      auto mask = predict_native(ckpt.model, image, threshold);
      const auto stem = file.stem().string();
      write_mask_png(out_dir / (stem + "_mask.png"), mask);
      write_overlay_png(out_dir / (stem + "_overlay.png"), image, mask);
    } catch (const Error& e) {
      std::cerr << "warning: skipping '" << file.string() << "': " << e.what() << "\n";
      ++failures;
    }
  }
  if (failures == files.size()) fail(Err::DecodeError, "all inputs failed");
  return 0;
}

int cmd_visualize(const RunConfig& cfg, const std::string& backend_spec,
                  const std::filesystem::path& image_path, const std::filesystem::path& out_dir) {
  auto backend = backend_from_spec(backend_spec);
  auto image = decode_image_native(image_path);
  auto pyramid = extract(backend, pad_to_grid(image.unsqueeze(0)));
  ensure_out_dir(out_dir);
  cfg.write_resolved(out_dir / "config.resolved");
  visualize_pyramid(pyramid, static_cast<int>(cfg.i64("n_maps")), out_dir);
  return 0;
}

int cmd_profile(const RunConfig& cfg, std::optional<std::filesystem::path> checkpoint) {
  CrackNet model{nullptr};
  if (checkpoint) {
    model = load_checkpoint(*checkpoint).model;
  } else {
    model = build_model(model_config_from_run(cfg), backend_from_spec(cfg.str("backend")),
                        static_cast<uint64_t>(cfg.i64("seed")));
  }
  auto out_dir = ensure_out_dir(cfg.str("out_dir"));
  cfg.write_resolved(out_dir / "config.resolved");
  const auto [h, w] = cfg.hw("input_size");
  auto report = profile_model(model, {h, w}, static_cast<int>(cfg.i64("n_warmup")),
                              static_cast<int>(cfg.i64("n_timed")));
  write_profile_report(out_dir / "profile.json", report);
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const auto base_out = std::filesystem::path(cfg.str("out_dir"));
  ensure_out_dir(base_out);
  cfg.write_resolved(base_out / "config.resolved");

  std::ofstream table(base_out / "ablation.tsv", std::ios::trunc);
  if (!table) fail(Err::IoError, "cannot write ablation table");
  table << "mode\tsplit\tf1\tiou\tdice\n";
  table.precision(10);

  const double threshold = cfg.f64("threshold");
  for (const char* mode : {"none", "concat", "igam"}) {
    RunConfig sub = cfg;
    sub.set("fusion_mode", mode);
    sub.set("out_dir", (base_out / mode).string());
    auto run = run_training(sub);

    auto best = load_checkpoint(run.out_dir / "best.ckpt");
    auto val_counts =
        eval_counts_resized(best.model, run.val_manifest, cfg.i64("batch_size"), threshold);
    auto val_metrics = compute_metrics(val_counts, Aggregation::kMicro);
    table << mode << "\tval\t" << val_metrics.f1 << '\t' << val_metrics.iou << '\t'
          << val_metrics.dice << '\n';

    if (cfg.is_set("eval_root")) {
      auto eval_manifest = scan_dataset(cfg.str("eval_root"), cfg.hw("target_size"),
                                        cfg.str("images_dirname"), cfg.str("masks_dirname"));
      auto counts = eval_counts_resized(best.model, eval_manifest, cfg.i64("batch_size"), threshold);
      auto metrics = compute_metrics(counts, Aggregation::kMicro);
      table << mode << "\teval\t" << metrics.f1 << '\t' << metrics.iou << '\t' << metrics.dice
            << '\n';
    }
    table.flush();
  }
  return 0;
}

}  // namespace crackseg
