#include "crackseg/training.hpp"

#include <ATen/Context.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "crackseg/common.hpp"
#include "crackseg/container.hpp"
#include "crackseg/metrics.hpp"

namespace crackseg {

void TrainConfig::validate() const {
  if (lr0 <= 0.0) fail(Err::ConfigError, "lr0 must be > 0");
  if (epochs < 1) fail(Err::ConfigError, "epochs must be >= 1");
  if (batch_size < 1) fail(Err::ConfigError, "batch_size must be >= 1");
  if (checkpoint_every < 1) fail(Err::ConfigError, "checkpoint_every must be >= 1");
}

double lr_schedule(const TrainConfig& cfg, int64_t epoch) {
  if (epoch < 0 || epoch > cfg.epochs) fail(Err::ConfigError, "epoch outside [0, epochs]");
  const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.lr0 * 0.5 * (1.0 + std::cos(phase));
}

AdamW::AdamW(std::vector<std::pair<std::string, torch::Tensor>> named_params, double lr,
             double weight_decay, std::pair<double, double> betas, double eps)
    : lr_(lr), weight_decay_(weight_decay), beta1_(betas.first), beta2_(betas.second), eps_(eps) {
  for (auto& [name, p] : named_params) {
    Slot s;
    s.name = name;
    s.param = p;
    s.exp_avg = torch::zeros_like(p);
    s.exp_avg_sq = torch::zeros_like(p);
    slots_.push_back(std::move(s));
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) s.param.mutable_grad().reset();
  }
}

void AdamW::step() {
  torch::NoGradGuard no_grad;
  for (auto& s : slots_) {
    if (!s.param.grad().defined()) continue;
    auto grad = s.param.grad();
    s.param.mul_(1.0 - lr_ * weight_decay_);  // decoupled decay
    s.step += 1;
    s.exp_avg.mul_(beta1_).add_(grad, 1.0 - beta1_);
    s.exp_avg_sq.mul_(beta2_).addcmul_(grad, grad, 1.0 - beta2_);
    const double bias_c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.step));
    const double bias_c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.step));
    auto denom = (s.exp_avg_sq.sqrt() / std::sqrt(bias_c2)).add_(eps_);
    s.param.addcdiv_(s.exp_avg, denom, -lr_ / bias_c1);
  }
}

std::vector<std::pair<std::string, torch::Tensor>> AdamW::export_state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& s : slots_) {
    out.emplace_back(s.name + ".exp_avg", s.exp_avg.clone());
    out.emplace_back(s.name + ".exp_avg_sq", s.exp_avg_sq.clone());
    out.emplace_back(s.name + ".step", torch::tensor(s.step, torch::kInt64));
  }
  return out;
}

void AdamW::import_state(const std::vector<std::pair<std::string, torch::Tensor>>& state) {
  auto lookup = [&](const std::string& name) -> const torch::Tensor& {
    for (const auto& [n, t] : state) {
      if (n == name) return t;
    }
    fail(Err::CorruptWeights, "missing optimizer state '" + name + "'");
  };
  torch::NoGradGuard no_grad;
  for (auto& s : slots_) {
    const auto& avg = lookup(s.name + ".exp_avg");
    const auto& sq = lookup(s.name + ".exp_avg_sq");
    if (!avg.sizes().equals(s.param.sizes()) || !sq.sizes().equals(s.param.sizes())) {
      fail(Err::CorruptWeights, "optimizer state shape mismatch for '" + s.name + "'");
    }
    s.exp_avg.copy_(avg);
    s.exp_avg_sq.copy_(sq);
    s.step = lookup(s.name + ".step").item<int64_t>();
  }
}

LossValue train_step(CrackNet model, const Batch& batch, AdamW& optimizer) {
  model->train();
  optimizer.zero_grad();
  auto out = model->forward(batch.images);
  auto terms = total_loss(out.probabilities, batch.masks);

  if (!std::isfinite(terms.total.item<double>())) {
    const char* offender = "total";
    if (!out.logits.isfinite().all().item<bool>()) {
      offender = "logits";
    } else if (!out.probabilities.isfinite().all().item<bool>()) {
      offender = "probabilities";
    } else if (!std::isfinite(terms.bce.item<double>())) {
      offender = "bce";
    } else if (!std::isfinite(terms.dice.item<double>())) {
      offender = "dice";
    }
    fail(Err::NonFiniteLoss, std::string("non-finite loss; offending tensor: ") + offender);
  }

  terms.total.backward();
  optimizer.step();
  return terms.value();
}

double validation_dice(CrackNet model, const DatasetManifest& val, int64_t batch_size,
                       double threshold) {
  model->eval();
  torch::NoGradGuard no_grad;
  std::vector<ConfusionCounts> counts;
  BatchStream stream(val, batch_size, std::nullopt, std::nullopt);
  while (auto batch = stream.next()) {
    auto pred = model->predict_mask(batch->images, threshold);
    for (int64_t i = 0; i < pred.size(0); ++i) {
      counts.push_back(confusion(pred[i], batch->masks[i]));
    }
  }
  return compute_metrics(counts, Aggregation::kMicro).dice;
}

namespace {

torch::Tensor cpu_rng_state() { return at::detail::getDefaultCPUGenerator().get_state(); }

void meta_put_train_config(Container& c, const TrainConfig& cfg) {
  std::ostringstream lr0, wd, b1, b2;
  lr0.precision(17);
  lr0 << cfg.lr0;
  wd.precision(17);
  wd << cfg.weight_decay;
  b1.precision(17);
  b1 << cfg.betas.first;
  b2.precision(17);
  b2 << cfg.betas.second;
  c.meta["train.lr0"] = lr0.str();
  c.meta["train.epochs"] = std::to_string(cfg.epochs);
  c.meta["train.batch_size"] = std::to_string(cfg.batch_size);
  c.meta["train.weight_decay"] = wd.str();
  c.meta["train.beta1"] = b1.str();
  c.meta["train.beta2"] = b2.str();
  c.meta["train.seed"] = std::to_string(cfg.seed);
  c.meta["train.checkpoint_every"] = std::to_string(cfg.checkpoint_every);
  c.meta["train.deterministic"] = cfg.deterministic ? "1" : "0";
  c.meta["train.workers"] = std::to_string(cfg.workers);
  std::ostringstream fh, fv;
  fh.precision(17);
  fh << cfg.augment.flip_h_prob;
  fv.precision(17);
  fv << cfg.augment.flip_v_prob;
  c.meta["augment.flip_h_prob"] = fh.str();
  c.meta["augment.flip_v_prob"] = fv.str();
  std::vector<int64_t> rots(cfg.augment.rotation_choices.begin(), cfg.augment.rotation_choices.end());
  c.meta["augment.rotation_choices"] = join_i64(rots);
  c.meta["augment.seed"] = std::to_string(cfg.augment.seed);
}

TrainConfig meta_get_train_config(const Container& c) {
  TrainConfig cfg;
  cfg.lr0 = c.meta_f64("train.lr0");
  cfg.epochs = c.meta_i64("train.epochs");
  cfg.batch_size = c.meta_i64("train.batch_size");
  cfg.weight_decay = c.meta_f64("train.weight_decay");
  cfg.betas = {c.meta_f64("train.beta1"), c.meta_f64("train.beta2")};
  cfg.seed = static_cast<uint64_t>(c.meta_i64("train.seed"));
  cfg.checkpoint_every = c.meta_i64("train.checkpoint_every");
  cfg.deterministic = c.meta_at("train.deterministic") == "1";
  cfg.workers = static_cast<int>(c.meta_i64("train.workers"));
  cfg.augment.flip_h_prob = c.meta_f64("augment.flip_h_prob");
  cfg.augment.flip_v_prob = c.meta_f64("augment.flip_v_prob");
  cfg.augment.rotation_choices.clear();
  for (auto r : c.meta_i64_list("augment.rotation_choices")) {
    cfg.augment.rotation_choices.push_back(static_cast<int>(r));
  }
  cfg.augment.seed = static_cast<uint64_t>(c.meta_i64("augment.seed"));
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, CrackNet model, const TrainState& state,
                     const TrainConfig& cfg) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["model.base_channels"] = std::to_string(model->config().base_channels);
  c.meta["model.fusion_mode"] = to_string(model->config().fusion_mode);

  auto backend = model->backend();
  c.meta["backend_name"] = backend->backend_name();
  c.meta["stage_channels"] = join_i64(backend->stage_channels());
  c.meta["stage_strides"] = join_i64(backend->stage_strides());
  c.meta["norm_mean"] = join_f64(backend->norm_mean());
  c.meta["norm_std"] = join_f64(backend->norm_std());

  meta_put_train_config(c, cfg);

  c.meta["state.epoch"] = std::to_string(state.epoch);
  c.meta["state.step"] = std::to_string(state.step);
  std::ostringstream best;
  best.precision(17);
  best << state.best_val_dice;
  c.meta["state.best_val_dice"] = best.str();

  for (const auto& item : model->named_parameters()) c.put("param." + item.key(), item.value());
  for (const auto& [name, t] : state.opt_moments) c.put("opt." + name, t);
  if (state.rng_state.defined()) c.put("rng_state", state.rng_state);
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto c = read_container(path);
  if (c.meta_at("kind") != "checkpoint") fail(Err::CorruptWeights, "container is not a model checkpoint");

  FeatureBackend backend(c.meta_at("backend_name"), c.meta_i64_list("stage_channels"),
                         c.meta_i64_list("stage_strides"), c.meta_f64_list("norm_mean"),
                         c.meta_f64_list("norm_std"));

  ModelConfig mcfg;
  mcfg.base_channels = c.meta_i64("model.base_channels");
  mcfg.fusion_mode = fusion_mode_from_string(c.meta_at("model.fusion_mode"));

  Checkpoint ckpt;
  ckpt.model = CrackNet(mcfg, backend);
  {
    torch::NoGradGuard no_grad;
    for (auto& item : ckpt.model->named_parameters()) {
      auto stored = c.get("param." + item.key());
      if (!stored.sizes().equals(item.value().sizes())) {
        fail(Err::CorruptWeights, "parameter '" + item.key() + "' shape mismatch");
      }
      item.value().copy_(stored);
    }
  }
  ckpt.model->backend()->freeze();

  ckpt.train_config = meta_get_train_config(c);
  ckpt.state.epoch = c.meta_i64("state.epoch");
  ckpt.state.step = c.meta_i64("state.step");
  ckpt.state.best_val_dice = c.meta_f64("state.best_val_dice");
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("opt.", 0) == 0) ckpt.state.opt_moments.emplace_back(name.substr(4), t);
  }
  if (const auto* rng = c.find("rng_state")) ckpt.state.rng_state = *rng;
  return ckpt;
}

TrainState fit(CrackNet model, const DatasetManifest& train_manifest,
               const DatasetManifest& val_manifest, const TrainConfig& cfg,
               const std::filesystem::path& out_dir, std::optional<TrainState> resume) {
  cfg.validate();
  if (train_manifest.size() == 0 || val_manifest.size() == 0) {
    fail(Err::EmptyDataset, "training and validation manifests must be nonempty");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  if (cfg.deterministic) at::set_num_threads(1);
  torch::manual_seed(cfg.seed);

  AdamW optimizer(model->trainable_parameters(), cfg.lr0, cfg.weight_decay, cfg.betas);
  TrainState state;
  if (resume) {
    state = std::move(*resume);
    optimizer.import_state(state.opt_moments);
    if (state.rng_state.defined()) {
      auto gen = at::detail::getDefaultCPUGenerator();  // copies share the impl
      gen.set_state(state.rng_state);
    }
  }

  std::ofstream log(out_dir / "log.tsv", std::ios::app);
  if (!log) fail(Err::IoError, "cannot open log file under '" + out_dir.string() + "'");
  log.precision(10);

  const std::string extractor_before = backend_digest(model->backend());

  for (int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    optimizer.set_lr(lr);

    model->train();
    double sum_bce = 0.0, sum_dice = 0.0, sum_total = 0.0;
    int64_t n_steps = 0;
    BatchStream stream(train_manifest, cfg.batch_size, cfg.seed, cfg.augment, epoch, cfg.workers);
    while (auto batch = stream.next()) {
      auto loss = train_step(model, *batch, optimizer);
      sum_bce += loss.bce;
      sum_dice += loss.dice_loss;
      sum_total += loss.total;
      ++n_steps;
    }

    const double val_dice = validation_dice(model, val_manifest, cfg.batch_size);

    state.epoch = epoch + 1;
    state.step += n_steps;
    state.opt_moments = optimizer.export_state();
    state.rng_state = cpu_rng_state();

    log << epoch << '\t' << lr << '\t' << sum_bce / n_steps << '\t' << sum_dice / n_steps << '\t'
        << sum_total / n_steps << '\t' << val_dice << '\n';
    log.flush();

    if (val_dice > state.best_val_dice) {
      state.best_val_dice = val_dice;
      save_checkpoint(out_dir / "best.ckpt", model, state, cfg);
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
      save_checkpoint(out_dir / "last.ckpt", model, state, cfg);
    }
  }

  if (backend_digest(model->backend()) != extractor_before) {
    fail(Err::CorruptWeights, "frozen extractor parameters changed during training");
  }
  return state;
}

}  // namespace crackseg
