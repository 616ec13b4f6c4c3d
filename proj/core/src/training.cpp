#include "ccmt/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ccmt/error.hpp"
#include "ccmt/evaluation.hpp"
#include "ccmt/runtime.hpp"

namespace ccmt {

LrSchedule parse_schedule(std::string_view s) {
  if (s == "standard_last30") return LrSchedule::standard_last30;
  if (s == "rotation_stc_200_100_50") return LrSchedule::rotation_stc_200_100_50;
  if (s == "none") return LrSchedule::none;
  if (s == "auto" || s == "automatic") return LrSchedule::automatic;
  throw ValidationError("unknown lr schedule '" + std::string(s) + "'");
}

std::string_view to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::standard_last30: return "standard_last30";
    case LrSchedule::rotation_stc_200_100_50: return "rotation_stc_200_100_50";
    case LrSchedule::none: return "none";
    case LrSchedule::automatic: return "auto";
  }
  return "?";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "joint") return Scenario::joint;
  if (s == "generalized_cu") return Scenario::generalized_cu;
  if (s == "multi_model") return Scenario::multi_model;
  throw ValidationError("unknown scenario '" + std::string(s) + "'");
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::joint: return "joint";
    case Scenario::generalized_cu: return "generalized_cu";
    case Scenario::multi_model: return "multi_model";
  }
  return "?";
}

std::vector<SnrBand> default_snr_bands() {
  return {{-12, -10}, {-9, -7}, {-6, -4}, {-3, -1}, {0, 2},    {3, 5},
          {6, 8},     {9, 11},  {12, 14}, {15, 17}, {18, 20}};
}

void TrainConfig::validate(const ArchConfig& arch) const {
  arch.validate();
  if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (channel_samples < 1) throw ValidationError("train.T must be >= 1");
  if (cooperative_samples < 1) throw ValidationError("train.L must be >= 1");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ValidationError("train.lr must be > 0");
  if (freeze_cu_after && arch.variant != Variant::ccmt) {
    throw ValidationError("freeze_cu_after is only valid for CCMT systems");
  }
  if (!task_snr_train.empty() && task_snr_train.size() != arch.tasks) {
    throw ValidationError("per-task SNR ranges need one entry per task");
  }
  if (!task_eval_snr_db.empty() && task_eval_snr_db.size() != arch.tasks) {
    throw ValidationError("per-task evaluation SNRs need one entry per task");
  }
  for (const auto& c : channel_configs()) c.validate();
  cu_pretrain_snr.validate();
}

std::vector<ChannelConfig> TrainConfig::channel_configs() const {
  if (!task_snr_train.empty()) return task_snr_train;
  return {snr_train};
}

double lr_at(LrSchedule schedule, double base_lr, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs == 0 || epoch >= total_epochs) {
    throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(total_epochs) + ")");
  }
  // Position on the 500-epoch reference axis.
  const double e = static_cast<double>(epoch) * 500.0 / static_cast<double>(total_epochs);
  switch (schedule) {
    case LrSchedule::none:
      return base_lr;
    case LrSchedule::automatic:
    case LrSchedule::standard_last30: {
      if (e < 470.0) return base_lr;
      const int blocks = std::min(3, static_cast<int>(std::floor((e - 470.0) / 10.0)) + 1);
      return base_lr * std::pow(0.1, blocks);
    }
    case LrSchedule::rotation_stc_200_100_50: {
      int k = 0;
      if (e >= 300.0) ++k;
      if (e >= 400.0) ++k;
      if (e >= 450.0) ++k;
      return base_lr * std::pow(0.1, k);
    }
  }
  return base_lr;
}

LossTerms loss_ccmt(const ForwardResult& forward, std::span<const std::vector<int>> labels,
                    std::size_t cooperative_samples) {
  if (forward.outputs.empty()) throw ContractError("loss_ccmt: no channel draws");
  if (cooperative_samples < 1) throw ValidationError("L must be >= 1");
  const std::size_t tasks = forward.outputs.front().size();
  if (labels.size() != tasks) {
    throw ContractError("loss_ccmt: " + std::to_string(labels.size()) + " label sets for " +
                        std::to_string(tasks) + " tasks");
  }
  LossTerms out;
  out.per_task.assign(tasks, 0.0);
  Var<float> total;
  for (const auto& draw : forward.outputs) {
    Var<float> draw_total;
    for (std::size_t i = 0; i < tasks; ++i) {
      const Var<float> term = task_outputs(i) == 1 ? ops::nll_binary(draw[i], labels[i])
                                                   : ops::nll_categorical(draw[i], labels[i]);
      out.per_task[i] += term.value()[0];
      draw_total = draw_total.valid() ? ops::add(draw_total, term) : term;
    }
    total = total.valid() ? ops::add(total, draw_total) : draw_total;
  }
  const auto t = static_cast<float>(forward.outputs.size());
  for (auto& v : out.per_task) v /= t;
  out.total = ops::scale(total, 1.0f / t);
  // Cooperative samples are identical under deterministic encoders; their
  // average is the single term itself.
  return out;
}

void TrainLog::append(const TrainLog& other) {
  const std::size_t offset = records.empty() ? 0 : records.back().epoch;
  for (auto r : other.records) {
    r.epoch += offset;
    records.push_back(std::move(r));
  }
  diagnostics.clamped_logs += other.diagnostics.clamped_logs;
  diagnostics.zero_power_batches += other.diagnostics.zero_power_batches;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "epoch,loss,err_task1,err_task2,lr,snr_lo,snr_hi,loss_task1,loss_task2\n";
  auto at = [](const std::vector<double>& v, std::size_t i) {
    return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
  };
  for (const auto& r : log.records) {
    os << r.epoch << ',' << fmt(r.loss) << ',' << fmt(at(r.task_error, 0)) << ','
       << fmt(at(r.task_error, 1)) << ',' << fmt(r.lr) << ',' << fmt(r.snr_lo_db) << ','
       << fmt(r.snr_hi_db) << ',' << fmt(at(r.task_loss, 0)) << ',' << fmt(at(r.task_loss, 1))
       << '\n';
  }
  return os.str();
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open training log for writing");
  f << train_log_csv(log);
  if (!f) throw IoError(path.string(), "write failed");
}

FeatureCache::FeatureCache(const ModelBundle& bundle, const DatasetSplit& split,
                           std::size_t chunk) {
  const auto& arch = bundle.arch();
  if (arch.variant != Variant::ccmt) throw ContractError("feature cache needs a CCMT bundle");
  if (split.role() == SplitRole::train && split.rotation().enabled) {
    throw ContractError("training rotations are resampled per epoch; CU features cannot be cached");
  }
  if (arch.nodes != kQuarters) throw ValidationError("image data provides exactly 4 nodes");
  nodes_ = arch.nodes;
  c2_ = arch.ccmt[1];
  width_ = 9 * c2_;
  data_.resize(split.size() * nodes_ * width_);

  BatchStream stream(split.role() == SplitRole::train ? split.with_rotation({}) : split, chunk, 0);
  // Validation order is sequential; for an unrotated train split the order is
  // irrelevant because features are stored by sample id.
  while (auto batch = stream.next()) {
    Tape<float> tape;
    BoundModel model(tape, bundle, [](const ParamSpec&) { return false; });
    for (std::size_t k = 0; k < nodes_; ++k) {
      auto f = cu_forward(model, k + 1, tape.constant(std::move(batch->nodes[k])));
      const float* src = f.value().data();
      for (std::size_t j = 0; j < batch->size(); ++j) {
        std::copy_n(src + j * width_, width_,
                    data_.data() + (batch->sample_ids[j] * nodes_ + k) * width_);
      }
    }
  }
}

Tensor FeatureCache::gather(std::size_t node_index, std::span<const std::size_t> ids) const {
  Tensor out(Shape{ids.size(), 3, 3, c2_});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    std::copy_n(data_.data() + (ids[j] * nodes_ + node_index) * width_, width_,
                out.data() + j * width_);
  }
  return out;
}

namespace {

bool is_cu(const ParamSpec& s) { return s.group == ParamGroup::cu; }

LrSchedule resolve(LrSchedule s, const ArchConfig& arch, bool rotation) {
  if (s != LrSchedule::automatic) return s;
  return arch.variant == Variant::stc && rotation ? LrSchedule::rotation_stc_200_100_50
                                                  : LrSchedule::standard_last30;
}

}  // namespace

TrainResult train(ModelBundle bundle, const Dataset& data, const TrainConfig& config,
                  const ProgressFn& progress) {
  tune_allocator();
  const ArchConfig arch = bundle.arch();
  config.validate(arch);
  if (arch.nodes != kQuarters) throw ValidationError("image data provides exactly 4 nodes");

  const RotationSettings rot{config.rotation, data.train.rotation().bound_deg,
                             data.validation.rotation().validation_seed};
  const DatasetSplit train_split = data.train.with_rotation(rot);
  const DatasetSplit val_split = data.validation.with_rotation(rot);
  const auto channels = config.channel_configs();
  const LrSchedule schedule = resolve(config.schedule, arch, config.rotation);

  BatchStream stream(train_split, config.batch_size, derive_seed(config.seed, {0xba7c4}));
  Rng channel_rng(config.channel_seed ? *config.channel_seed
                                      : derive_seed(config.seed, {0xc4a77e1}));

  Optimizer optimizer(config.optimizer);
  bool frozen_before = false;
  std::optional<FeatureCache> train_cache, val_cache;

  TrainLog log;
  std::vector<std::string> names;
  std::vector<Tensor*> params;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool frozen = config.freeze_cu_after && epoch >= *config.freeze_cu_after;
    if (frozen && !frozen_before) {
      // The trainable set shrinks; moments of the old set no longer apply.
      optimizer = Optimizer(config.optimizer);
      if (!config.rotation) train_cache.emplace(bundle, train_split);
      val_cache.emplace(bundle, val_split);
    }
    frozen_before = frozen;
    const bool use_cache = frozen && train_cache.has_value();

    const double lr = lr_at(schedule, config.base_lr, epoch, config.epochs);
    stream.set_materialize_pixels(!use_cache);
    stream.start_epoch(epoch);

    double loss_sum = 0;
    std::vector<double> task_sum(arch.tasks, 0.0);
    std::size_t seen = 0, batch_index = 0;
    while (auto batch = stream.next()) {
      Tape<float> tape;
      BoundModel model(tape, bundle,
                       frozen ? std::function<bool(const ParamSpec&)>(
                                    [](const ParamSpec& s) { return !is_cu(s); })
                              : std::function<bool(const ParamSpec&)>{});
      std::vector<Var<float>> inputs;
      for (std::size_t k = 0; k < arch.nodes; ++k) {
        inputs.push_back(tape.constant(use_cache ? train_cache->gather(k, batch->sample_ids)
                                                 : std::move(batch->nodes[k])));
      }
      const auto draw =
          draw_channel(arch, batch->size(), config.channel_samples, channels, channel_rng);
      const auto fwd = system_forward(model, inputs, draw,
                                      use_cache ? EncoderInput::cu_features
                                                : EncoderInput::observations);
      const std::vector<std::vector<int>> labels = {batch->z1, batch->z2};
      const auto loss = loss_ccmt(fwd, std::span(labels).first(arch.tasks),
                                  config.cooperative_samples);
      const double value = loss.total.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_index + 1));
      }
      tape.backward(loss.total);

      const auto grads = model.gradients();
      names.clear();
      params.clear();
      for (auto i : model.trainable_indices()) {
        params.push_back(&bundle.params()[i].value);
        names.push_back(bundle.params()[i].name);
      }
      optimizer.step(params, grads, lr, names);

      const double w = static_cast<double>(batch->size());
      loss_sum += value * w;
      for (std::size_t i = 0; i < arch.tasks; ++i) task_sum[i] += loss.per_task[i] * w;
      seen += batch->size();
      ++batch_index;
      log.diagnostics.clamped_logs += tape.diagnostics().clamped_logs;
      log.diagnostics.zero_power_batches += tape.diagnostics().zero_power_batches;
    }

    TrainRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(seen);
    for (auto s : task_sum) rec.task_loss.push_back(s / static_cast<double>(seen));
    rec.lr = lr;
    rec.snr_lo_db = channels.front().snr_lo_db;
    rec.snr_hi_db = channels.front().snr_hi_db;
    const bool evaluate = config.eval_every > 0 &&
                          ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
    if (evaluate) {
      EvalOptions eo;
      eo.snr_db = config.task_eval_snr_db.empty() ? std::vector<double>{config.eval_snr_db}
                                                  : config.task_eval_snr_db;
      eo.noise_seed = config.eval_seed;
      eo.limit = config.eval_limit;
      rec.task_error = error_rates(bundle, val_split, eo, frozen ? &*val_cache : nullptr);
    } else {
      rec.task_error.assign(arch.tasks, std::numeric_limits<double>::quiet_NaN());
    }
    log.records.push_back(rec);
    if (progress) progress(rec);
  }

  auto& meta = bundle.metadata();
  meta.seed = config.seed;
  meta.epochs += config.epochs;
  meta.rotation = config.rotation;
  meta.snr_lo_db = channels.front().snr_lo_db;
  meta.snr_hi_db = channels.front().snr_hi_db;
  if (meta.scenario.empty()) meta.scenario = std::string(to_string(config.scenario));
  return {std::move(bundle), std::move(log)};
}

TrainResult retrain_specific_units(ModelBundle bundle, const Dataset& data,
                                   const TrainConfig& config, const ProgressFn& progress) {
  if (bundle.arch().variant != Variant::ccmt) {
    throw ValidationError("specific-unit retraining needs a CCMT bundle");
  }
  TrainConfig phase2 = config;
  phase2.freeze_cu_after = 0;
  return train(std::move(bundle), data, phase2, progress);
}

TrainResult pretrain_common_units(ModelBundle bundle, const Dataset& data,
                                  const TrainConfig& config, const ProgressFn& progress) {
  if (bundle.arch().variant != Variant::ccmt) {
    throw ValidationError("generalized-CU training needs a CCMT bundle");
  }
  TrainConfig phase1 = config;
  phase1.epochs = config.cu_pretrain_epochs;
  phase1.snr_train = config.cu_pretrain_snr;
  phase1.task_snr_train.clear();
  phase1.freeze_cu_after.reset();
  phase1.seed = derive_seed(config.seed, {1});
  phase1.channel_seed.reset();
  return train(std::move(bundle), data, phase1, progress);
}

TrainResult train_generalized_cu(ModelBundle bundle, const Dataset& data,
                                 const TrainConfig& config, const ProgressFn& progress) {
  auto first = pretrain_common_units(std::move(bundle), data, config, progress);
  TrainConfig phase2 = config;
  phase2.seed = derive_seed(config.seed, {2});
  phase2.channel_seed.reset();
  auto second = retrain_specific_units(std::move(first.bundle), data, phase2, progress);
  second.bundle.metadata().scenario = "generalized_cu";
  second.bundle.metadata().seed = config.seed;

  TrainLog log = std::move(first.log);
  log.append(second.log);
  return {std::move(second.bundle), std::move(log)};
}

std::vector<ModelBundle> train_multi_model(const ArchConfig& arch, const Dataset& data,
                                           const TrainConfig& base,
                                           std::span<const SnrBand> bands,
                                           const ProgressFn& progress,
                                           const ModelBundle* generalized) {
  if (bands.empty()) throw ValidationError("multi-model training needs at least one SNR band");
  std::vector<ModelBundle> out;
  std::optional<ModelBundle> pretrained;
  if (arch.variant == Variant::ccmt) {
    if (generalized) {
      if (!(generalized->arch() == arch)) {
        throw ValidationError("pretrained bundle is " + generalized->arch().describe() +
                              ", expected " + arch.describe());
      }
    } else {
      pretrained = pretrain_common_units(ModelBundle::initialize(arch, base.seed), data, base,
                                         progress)
                       .bundle;
      generalized = &*pretrained;
    }
  } else if (generalized) {
    throw ValidationError("a pretrained common unit only applies to CCMT");
  }
  for (std::size_t b = 0; b < bands.size(); ++b) {
    TrainConfig cfg = base;
    cfg.snr_train = ChannelConfig{bands[b].first, bands[b].second};
    cfg.task_snr_train.clear();
    cfg.seed = derive_seed(base.seed, {0xba2d, b});
    cfg.channel_seed.reset();
    cfg.eval_snr_db = 0.5 * (bands[b].first + bands[b].second);
    TrainResult r = arch.variant == Variant::ccmt
                        ? retrain_specific_units(*generalized, data, cfg, progress)
                        : train(ModelBundle::initialize(arch, cfg.seed), data, cfg, progress);
    auto& meta = r.bundle.metadata();
    meta.seed = base.seed;
    meta.scenario = arch.variant == Variant::ccmt ? "generalized_cu_multi_model" : "multi_model";
    meta.snr_lo_db = bands[b].first;
    meta.snr_hi_db = bands[b].second;
    out.push_back(std::move(r.bundle));
  }
  return out;
}

}  // namespace ccmt
