#ifndef CCMT_TRAINING_HPP_
#define CCMT_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccmt/channel.hpp"
#include "ccmt/data.hpp"
#include "ccmt/models.hpp"
#include "ccmt/optimizer.hpp"

namespace ccmt {

/// automatic resolves to rotation_stc_200_100_50 for STC with rotation and to
/// standard_last30 otherwise.
enum class LrSchedule { standard_last30, rotation_stc_200_100_50, none, automatic };
enum class Scenario { joint, generalized_cu, multi_model };

LrSchedule parse_schedule(std::string_view s);
std::string_view to_string(LrSchedule s);
Scenario parse_scenario(std::string_view s);
std::string_view to_string(Scenario s);

using SnrBand = std::pair<double, double>;

/// The eleven SNR bands of the multi-model study, in dB.
std::vector<SnrBand> default_snr_bands();

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 128;         // J
  std::size_t channel_samples = 1;      // T
  std::size_t cooperative_samples = 1;  // L
  double base_lr = 1e-4;
  LrSchedule schedule = LrSchedule::automatic;
  Scenario scenario = Scenario::joint;
  ChannelConfig snr_train{9.0, 11.0};
  /// Optional per-task training SNR ranges; overrides snr_train when set.
  std::vector<ChannelConfig> task_snr_train;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> channel_seed;  // defaults to a stream derived from seed
  std::optional<std::size_t> freeze_cu_after;
  bool rotation = false;
  OptimizerKind optimizer = OptimizerKind::adam;

  /// Generalized-CU phase 1: full system on a wide SNR range.
  std::size_t cu_pretrain_epochs = 250;
  ChannelConfig cu_pretrain_snr{-10.0, 20.0};

  /// Bands for Scenario::multi_model.
  std::vector<SnrBand> bands;

  /// Per-epoch validation. eval_every = 0 disables it.
  double eval_snr_db = 10.0;
  std::vector<double> task_eval_snr_db;  // optional per-task override
  std::size_t eval_every = 1;
  std::uint64_t eval_seed = 2024;
  std::size_t eval_limit = 0;  // 0: full validation split

  void validate(const ArchConfig& arch) const;
  std::vector<ChannelConfig> channel_configs() const;
};

/// Learning rate at 0-based `epoch`. Window boundaries are stated for a
/// 500-epoch run and scaled proportionally for other lengths.
double lr_at(LrSchedule schedule, double base_lr, std::size_t epoch, std::size_t total_epochs);

/// Empirical objective, negated: (1/T) sum_t sum_i mean_j -log q_i(z_i | x_hat).
struct LossTerms {
  Var<float> total;
  std::vector<double> per_task;  // task terms averaged over the T draws
};

/// `labels[i]` holds the batch labels of task i. With deterministic encoders
/// the L cooperative samples coincide, so `cooperative_samples` only
/// contributes its (identity) average.
LossTerms loss_ccmt(const ForwardResult& forward, std::span<const std::vector<int>> labels,
                    std::size_t cooperative_samples = 1);

struct TrainRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  std::vector<double> task_loss;
  std::vector<double> task_error;  // NaN when not evaluated this epoch
  double lr = 0.0;
  double snr_lo_db = 0.0;
  double snr_hi_db = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  TapeDiagnostics diagnostics;
  void append(const TrainLog& other);
};

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);
std::string train_log_csv(const TrainLog& log);

struct TrainResult {
  ModelBundle bundle;
  TrainLog log;
};

using ProgressFn = std::function<void(const TrainRecord&)>;

/// Mini-batch training of every trainable tensor on the negated objective.
/// CU tensors become constants from epoch `freeze_cu_after` on. Deterministic
/// for a given config.
TrainResult train(ModelBundle bundle, const Dataset& data, const TrainConfig& config,
                  const ProgressFn& progress = {});

/// Phase 1 of the generalized-CU procedure alone: the full CCMT system trained
/// `cu_pretrain_epochs` on `cu_pretrain_snr`.
TrainResult pretrain_common_units(ModelBundle bundle, const Dataset& data,
                                  const TrainConfig& config, const ProgressFn& progress = {});

/// Phase 1: `cu_pretrain_epochs` on `cu_pretrain_snr`; phase 2: CU frozen,
/// SUs and decoders trained `epochs` on the target range.
TrainResult train_generalized_cu(ModelBundle bundle, const Dataset& data,
                                 const TrainConfig& config, const ProgressFn& progress = {});

/// Phase 2 only: retrain SUs and decoders of an already generalized bundle.
TrainResult retrain_specific_units(ModelBundle bundle, const Dataset& data,
                                   const TrainConfig& config, const ProgressFn& progress = {});

/// One bundle per band, tagged with it. CCMT: one shared generalized CU, then
/// per-band SU/decoder retraining. STC: independent full trainings.
/// `generalized`, if given, is a finished phase-1 CCMT bundle to start from.
std::vector<ModelBundle> train_multi_model(const ArchConfig& arch, const Dataset& data,
                                           const TrainConfig& base,
                                           std::span<const SnrBand> bands,
                                           const ProgressFn& progress = {},
                                           const ModelBundle* generalized = nullptr);

/// Split-aware CU feature store for a frozen CU, [N][K][3*3*c2]. Valid for
/// validation splits and for unrotated training splits.
class FeatureCache {
 public:
  FeatureCache(const ModelBundle& bundle, const DatasetSplit& split, std::size_t chunk = 1000);

  /// Features of `ids` at node index `node_index` as a [J,3,3,c2] tensor.
  Tensor gather(std::size_t node_index, std::span<const std::size_t> ids) const;
  std::size_t feature_size() const noexcept { return width_; }

 private:
  std::size_t nodes_ = 0, width_ = 0, c2_ = 0;
  std::vector<float> data_;
};

}  // namespace ccmt

#endif  // CCMT_TRAINING_HPP_
