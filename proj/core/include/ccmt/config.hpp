#ifndef CCMT_CONFIG_HPP_
#define CCMT_CONFIG_HPP_

#include <filesystem>
#include <string>

#include "ccmt/evaluation.hpp"
#include "ccmt/models.hpp"
#include "ccmt/training.hpp"

namespace ccmt {

/// A training run file: {"arch": {...}, "train": {...}}. Unknown keys are
/// rejected with ValidationError.
struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Sweep file: kind, snr_eval, seeds, rotation, architectures, bands, plus an
/// optional "train" object with the same keys as in a run file.
SweepSpec parse_sweep_spec(const std::string& json_text);
SweepSpec load_sweep_spec(const std::filesystem::path& path);

/// "ccmt:6,5,3" or "stc:4,4,3".
ArchConfig parse_arch_descriptor(const std::string& text);

/// "6,5,3".
Filters parse_filter_list(const std::string& text);

}  // namespace ccmt

#endif  // CCMT_CONFIG_HPP_
