#include "ccmt_tools/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <iomanip>

#include "ccmt/config.hpp"
#include "ccmt/error.hpp"
#include "ccmt/evaluation.hpp"
#include "ccmt/models.hpp"
#include "ccmt/training.hpp"

namespace ccmt::cli {
namespace {

std::filesystem::path resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CCMT_DATA_DIR"); env && *env) return env;
  throw ValidationError("no MNIST directory: pass --data-dir or set CCMT_DATA_DIR");
}

std::filesystem::path band_path(const std::filesystem::path& out, std::size_t index) {
  auto p = out;
  p.replace_filename(out.stem().string() + ".band" + std::to_string(index) +
                     out.extension().string());
  return p;
}

void print_errors(std::ostream& out, const std::vector<double>& errs) {
  for (std::size_t i = 0; i < errs.size(); ++i) {
    out << "task" << (i + 1) << " error_rate " << std::setprecision(6) << errs[i] << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cooperative multi-task semantic communication toolkit", "ccmt"};
  app.require_subcommand(1);

  std::string data_dir;

  auto* train_cmd = app.add_subcommand("train", "Train a system from a JSON run config");
  std::string config_path, out_path, log_path;
  train_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  train_cmd->add_option("--out", out_path, "output bundle path")->required();
  train_cmd->add_option("--log", log_path, "per-epoch CSV log");
  train_cmd->add_option("--data-dir", data_dir, "MNIST directory (default $CCMT_DATA_DIR)");
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch progress");

  auto* eval_cmd = app.add_subcommand("eval", "Error rates of a bundle on the validation split");
  std::string bundle_path;
  double snr = 10.0;
  bool rotation = false;
  std::uint64_t eval_seed = 2024;
  std::size_t limit = 0;
  eval_cmd->add_option("--bundle", bundle_path, "bundle file")->required();
  eval_cmd->add_option("--snr", snr, "evaluation SNR in dB")->required();
  eval_cmd->add_flag("--rotation", rotation, "rotate validation quarters");
  eval_cmd->add_option("--seed", eval_seed, "channel noise seed");
  eval_cmd->add_option("--limit", limit, "evaluate only the first N samples");
  eval_cmd->add_option("--data-dir", data_dir, "MNIST directory (default $CCMT_DATA_DIR)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment sweep and write CSV");
  std::string spec_path, csv_path;
  sweep_cmd->add_option("--spec", spec_path, "sweep spec (JSON)")->required();
  sweep_cmd->add_option("--out", csv_path, "CSV output path")->required();
  sweep_cmd->add_option("--data-dir", data_dir, "MNIST directory (default $CCMT_DATA_DIR)");

  auto* count_cmd = app.add_subcommand("count-params", "Per-node CNN parameter count");
  std::string variant = "ccmt", filters = "6,5,3", scope = "cnn";
  count_cmd->add_option("--variant", variant, "ccmt or stc")->required();
  count_cmd->add_option("--filters", filters, "three filter counts, e.g. 6,5,3")->required();
  count_cmd->add_option("--scope", scope, "cnn (per node) or total")
      ->check(CLI::IsMember({"cnn", "total"}));

  auto* inspect_cmd = app.add_subcommand("inspect", "Print bundle architecture and metadata");
  inspect_cmd->add_option("--bundle", bundle_path, "bundle file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (*count_cmd) {
      ArchConfig a;
      a.variant = parse_variant(variant);
      (a.variant == Variant::ccmt ? a.ccmt : a.stc) = parse_filter_list(filters);
      a.validate();
      out << count_params(a, scope == "cnn" ? ParamScope::cnn_only : ParamScope::total) << "\n";
      return kExitOk;
    }
    if (*inspect_cmd) {
      const auto b = load_bundle(bundle_path);
      const auto& a = b.arch();
      const auto& m = b.metadata();
      out << "arch " << a.describe() << "\n"
          << "nodes " << a.nodes << "\n"
          << "tasks " << a.tasks << "\n"
          << "channel_uses";
      for (auto u : a.channel_uses) out << ' ' << u;
      out << "\n"
          << "cnn_params_per_node " << count_params(a, ParamScope::cnn_only) << "\n"
          << "total_params " << count_params(a, ParamScope::total) << "\n"
          << "scenario " << (m.scenario.empty() ? "-" : m.scenario) << "\n"
          << "seed " << m.seed << "\n"
          << "snr_band " << m.snr_lo_db << " " << m.snr_hi_db << "\n"
          << "epochs " << m.epochs << "\n"
          << "rotation " << (m.rotation ? "yes" : "no") << "\n";
      return kExitOk;
    }
    if (*train_cmd) {
      const RunConfig rc = load_run_config(config_path);
      const Dataset data = load_dataset(resolve_data_dir(data_dir));
      ProgressFn progress;
      if (!quiet) {
        progress = [&out](const TrainRecord& r) {
          out << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss << " lr "
              << r.lr;
          for (std::size_t i = 0; i < r.task_error.size(); ++i) {
            if (!std::isnan(r.task_error[i])) out << " err" << (i + 1) << ' ' << r.task_error[i];
          }
          out << std::endl;
        };
      }
      switch (rc.train.scenario) {
        case Scenario::joint: {
          auto r = train(ModelBundle::initialize(rc.arch, rc.train.seed), data, rc.train, progress);
          save_bundle(r.bundle, out_path);
          if (!log_path.empty()) write_train_log_csv(r.log, log_path);
          break;
        }
        case Scenario::generalized_cu: {
          auto r = train_generalized_cu(ModelBundle::initialize(rc.arch, rc.train.seed), data,
                                        rc.train, progress);
          save_bundle(r.bundle, out_path);
          if (!log_path.empty()) write_train_log_csv(r.log, log_path);
          break;
        }
        case Scenario::multi_model: {
          const auto bands = rc.train.bands.empty() ? default_snr_bands() : rc.train.bands;
          const auto bundles = train_multi_model(rc.arch, data, rc.train, bands, progress);
          for (std::size_t b = 0; b < bundles.size(); ++b) {
            const auto p = band_path(out_path, b);
            save_bundle(bundles[b], p);
            out << "wrote " << p.string() << "\n";
          }
          return kExitOk;
        }
      }
      out << "wrote " << out_path << "\n";
      return kExitOk;
    }
    if (*eval_cmd) {
      const auto b = load_bundle(bundle_path);
      const Dataset data = load_dataset(resolve_data_dir(data_dir));
      RotationSettings rot = data.validation.rotation();
      rot.enabled = rotation;
      EvalOptions o;
      o.snr_db = {snr};
      o.noise_seed = eval_seed;
      o.limit = limit;
      print_errors(out, error_rates(b, data.validation.with_rotation(rot), o));
      return kExitOk;
    }
    if (*sweep_cmd) {
      const SweepSpec spec = load_sweep_spec(spec_path);
      const Dataset data = load_dataset(resolve_data_dir(data_dir));
      const auto records = run_sweep(spec, data, &err);
      emit_csv(records, csv_path);
      out << "wrote " << records.size() << " records to " << csv_path << "\n";
      return kExitOk;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace ccmt::cli
