#ifndef CCMT_EVALUATION_HPP_
#define CCMT_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ccmt/data.hpp"
#include "ccmt/models.hpp"
#include "ccmt/training.hpp"

namespace ccmt {

/// How the transmit power scale is measured at evaluation time.
enum class EvalNormalization {
  full_split,  // one scale per encoder over the whole evaluated split
  per_chunk,   // one scale per evaluation chunk (training-like batches)
};

struct EvalOptions {
  std::vector<double> snr_db = {10.0};  // one value, or one per task
  std::uint64_t noise_seed = 2024;
  std::size_t chunk = 1000;
  EvalNormalization normalization = EvalNormalization::full_split;
  bool noiseless = false;
  std::size_t limit = 0;  // evaluate the first `limit` samples; 0 = all
};

/// Fraction of misclassified samples per task: task 1 thresholds the sigmoid
/// at 0.5, task 2 takes the argmax. Noise comes from `noise_seed`, so two
/// models evaluated with equal options see identical noise.
std::vector<double> error_rates(const ModelBundle& bundle, const DatasetSplit& split,
                                const EvalOptions& options,
                                const FeatureCache* validation_features = nullptr);

/// Single-task convenience form; `task` is 1-based.
double error_rate(const ModelBundle& bundle, const DatasetSplit& split, double snr_db,
                  std::size_t task, std::uint64_t noise_seed);

/// Index of the bundle with the lowest error for `task` at `snr_db`; ties go
/// to the lower trained-band midpoint.
std::size_t select_best(std::span<const ModelBundle> bundles, double snr_db, std::size_t task,
                        const DatasetSplit& split, std::uint64_t noise_seed);

enum class SweepKind { over_epochs, over_snr, over_params };
SweepKind parse_sweep_kind(std::string_view s);
std::string_view to_string(SweepKind k);

struct SweepSpec {
  SweepKind kind = SweepKind::over_snr;
  std::vector<double> snr_eval = {10.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool rotation = false;
  std::vector<ArchConfig> architectures;
  /// over_snr: multi-model bands; empty trains one model on train.snr_train.
  std::vector<SnrBand> bands;
  /// CCMT systems are trained with the generalized-CU procedure in over_snr
  /// and over_params (and additionally reported in over_epochs).
  bool generalized_cu = true;
  /// over_params: training range and evaluation SNR per task.
  std::vector<SnrBand> task_train_snr = {{4.0, 6.0}, {9.0, 11.0}};
  std::vector<double> task_eval_snr = {5.0, 10.0};
  std::uint64_t eval_seed = 2024;
  TrainConfig train;

  void validate() const;
};

struct ExperimentRecord {
  std::string scenario;
  std::string arch;
  std::optional<std::uint64_t> seed;  // nullopt: mean over seeds
  double snr_db = 0.0;
  int task = 1;
  double error_rate = 0.0;
  std::size_t epochs = 0;
  std::size_t n_params = 0;

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

/// Sorts by scenario, arch, snr, task, seed (mean last), then epochs.
void sort_records(std::vector<ExperimentRecord>& records);

/// Appends one mean-over-seeds record per (scenario, arch, snr, task, epochs)
/// group that has more than one seed.
void add_seed_means(std::vector<ExperimentRecord>& records);

std::string records_csv(std::vector<ExperimentRecord> records);
void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path);
std::vector<ExperimentRecord> parse_csv(const std::string& text);

/// Trains every bundle the spec needs, evaluates each (arch, seed, snr, task)
/// point and returns sorted records including seed means.
std::vector<ExperimentRecord> run_sweep(const SweepSpec& spec, const Dataset& data,
                                        std::ostream* progress = nullptr);

}  // namespace ccmt

#endif  // CCMT_EVALUATION_HPP_
