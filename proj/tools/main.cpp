#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "crackseg/commands.hpp"
#include "crackseg/common.hpp"
#include "crackseg/run_config.hpp"

namespace {

struct SubArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

// Every run-config key is exposed as --key <value>; --out aliases out_dir.
void attach_config_options(CLI::App* sub, SubArgs& args) {
  sub->add_option("--config", args.config_path, "run config file (key = value lines)");
  sub->add_option_function<std::string>(
      "--out", [&args](const std::string& v) { args.overrides["out_dir"] = v; },
      "output directory (alias for --out_dir)");
  for (const auto& [key, def] : crackseg::RunConfig::known_keys()) {
    if (key == "deterministic") {
      sub->add_flag_function(
          "--deterministic",
          [&args](int64_t) { args.overrides["deterministic"] = "true"; },
          "single-threaded reproducible mode");
      continue;
    }
    sub->add_option_function<std::string>(
        "--" + key, [&args, k = key](const std::string& v) { args.overrides[k] = v; },
        "override config key " + key);
  }
}

crackseg::RunConfig resolve(const SubArgs& args) {
  crackseg::RunConfig cfg;
  if (!args.config_path.empty()) cfg = crackseg::RunConfig::from_file(args.config_path);
  for (const auto& [k, v] : args.overrides) cfg.set(k, v);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crackseg: crack segmentation with frozen generic-feature fusion"};
  app.require_subcommand(1);

  SubArgs train_args;
  std::string train_config_pos;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("config_file", train_config_pos, "run config file");
  attach_config_options(train, train_args);

  SubArgs eval_args;
  std::string eval_ckpt, eval_root, eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("checkpoint", eval_ckpt)->required();
  eval->add_option("dataset_root", eval_root)->required();
  eval->add_option("output_dir", eval_out)->required();
  attach_config_options(eval, eval_args);

  SubArgs predict_args;
  std::string predict_ckpt, predict_input, predict_out;
  auto* predict = app.add_subcommand("predict", "write mask + overlay PNGs for images");
  predict->add_option("checkpoint", predict_ckpt)->required();
  predict->add_option("input", predict_input, "image file or directory")->required();
  predict->add_option("output_dir", predict_out)->required();
  attach_config_options(predict, predict_args);

  SubArgs vis_args;
  std::string vis_backend, vis_image, vis_out;
  auto* visualize = app.add_subcommand("visualize", "render per-stage feature-map grids");
  visualize->add_option("backend_spec", vis_backend, "stub:<seed> or pretrained:<path>")->required();
  visualize->add_option("image", vis_image)->required();
  visualize->add_option("output_dir", vis_out)->required();
  attach_config_options(visualize, vis_args);

  SubArgs profile_args;
  std::string profile_src;
  auto* profile = app.add_subcommand("profile", "parameter/GFLOP/latency report");
  profile->add_option("config_or_checkpoint", profile_src, "run config file or .ckpt");
  attach_config_options(profile, profile_args);

  SubArgs ablate_args;
  std::string ablate_config_pos;
  auto* ablate = app.add_subcommand("ablate", "train+eval the none/concat/igam fusion modes");
  ablate->add_option("config_file", ablate_config_pos, "run config file");
  attach_config_options(ablate, ablate_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (!train_config_pos.empty()) train_args.config_path = train_config_pos;
      return crackseg::cmd_train(resolve(train_args));
    }
    if (eval->parsed()) {
      return crackseg::cmd_eval(resolve(eval_args), eval_ckpt, eval_root, eval_out);
    }
    if (predict->parsed()) {
      return crackseg::cmd_predict(resolve(predict_args), predict_ckpt, predict_input, predict_out);
    }
    if (visualize->parsed()) {
      return crackseg::cmd_visualize(resolve(vis_args), vis_backend, vis_image, vis_out);
    }
    if (profile->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (!profile_src.empty()) {
        if (crackseg::is_checkpoint_file(profile_src)) {
          ckpt = profile_src;
        } else {
          profile_args.config_path = profile_src;
        }
      }
      return crackseg::cmd_profile(resolve(profile_args), ckpt);
    }
    if (ablate->parsed()) {
      if (!ablate_config_pos.empty()) ablate_args.config_path = ablate_config_pos;
      return crackseg::cmd_ablate(resolve(ablate_args));
    }
  } catch (const crackseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
