#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/data_pipeline.hpp"
#include "crackseg/losses.hpp"
#include "crackseg/model.hpp"

namespace crackseg {

struct TrainConfig {
  double lr0 = 3e-4;
  int64_t epochs = 100;
  int64_t batch_size = 2;
  double weight_decay = 0.01;
  std::pair<double, double> betas = {0.9, 0.999};
  uint64_t seed = 0;
  int64_t checkpoint_every = 1;  // epochs
  AugmentPolicy augment;
  bool deterministic = false;
  int workers = 1;

  void validate() const;  // ConfigError
};

/// Cosine decay applied once per epoch: lr0 * 0.5 * (1 + cos(pi * epoch / epochs)).
double lr_schedule(const TrainConfig& cfg, int64_t epoch);

/// AdamW with decoupled weight decay and name-keyed state tensors, so
/// optimizer moments round-trip bitwise through the checkpoint container.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, torch::Tensor>> named_params, double lr,
        double weight_decay, std::pair<double, double> betas, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad();
  void step();

  /// "<param>.exp_avg", "<param>.exp_avg_sq" (f32) and "<param>.step" (i64).
  std::vector<std::pair<std::string, torch::Tensor>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, torch::Tensor>>& state);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param, exp_avg, exp_avg_sq;
    int64_t step = 0;
  };
  std::vector<Slot> slots_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
};

struct TrainState {
  int64_t epoch = 0;  // epochs completed
  int64_t step = 0;   // optimizer steps taken
  std::vector<std::pair<std::string, torch::Tensor>> opt_moments;
  torch::Tensor rng_state;  // opaque u8 snapshot of the torch CPU generator
  double best_val_dice = -1.0;
};

/// One gradient step on total_loss over the batch; updates trainable
/// parameters only. NonFiniteLoss aborts with the offending tensor named.
LossValue train_step(CrackNet model, const Batch& batch, AdamW& optimizer);

/// Micro Dice of thresholded predictions over a manifest (no augmentation).
double validation_dice(CrackNet model, const DatasetManifest& val, int64_t batch_size,
                       double threshold = 0.5);

/// Runs the remaining epochs (resume continues after state.epoch), logging one
/// tab-separated line per epoch to out_dir/log.tsv:
///   epoch  lr  train_bce  train_dice_loss  train_total  val_dice
/// Writes last.ckpt every checkpoint_every epochs (and at the final epoch) and
/// best.ckpt whenever validation Dice improves.
TrainState fit(CrackNet model, const DatasetManifest& train_manifest,
               const DatasetManifest& val_manifest, const TrainConfig& cfg,
               const std::filesystem::path& out_dir,
               std::optional<TrainState> resume = std::nullopt);

void save_checkpoint(const std::filesystem::path& path, CrackNet model, const TrainState& state,
                     const TrainConfig& cfg);

struct Checkpoint {
  CrackNet model{nullptr};
  TrainState state;
  TrainConfig train_config;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crackseg
