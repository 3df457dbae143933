#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "crackseg/data_pipeline.hpp"
#include "crackseg/model.hpp"
#include "crackseg/run_config.hpp"
#include "crackseg/training.hpp"

namespace crackseg {

/// "stub:<seed>" or "pretrained:<path>".
FeatureBackend backend_from_spec(const std::string& spec);

ModelConfig model_config_from_run(const RunConfig& cfg);
TrainConfig train_config_from_run(const RunConfig& cfg);

/// Seeded deterministic holdout; both halves keep lexicographic stem order.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m,
                                                           double val_fraction, uint64_t seed);

/// True when the file starts with the checkpoint container magic.
bool is_checkpoint_file(const std::filesystem::path& path);

int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
             const std::filesystem::path& dataset_root, const std::filesystem::path& out_dir);
int cmd_predict(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                const std::filesystem::path& input, const std::filesystem::path& out_dir);
int cmd_visualize(const RunConfig& cfg, const std::string& backend_spec,
                  const std::filesystem::path& image_path, const std::filesystem::path& out_dir);
int cmd_profile(const RunConfig& cfg, std::optional<std::filesystem::path> checkpoint);
int cmd_ablate(const RunConfig& cfg);

}  // namespace crackseg
