#include "ccmt/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "ccmt/error.hpp"

namespace ccmt {

std::vector<double> error_rates(const ModelBundle& bundle, const DatasetSplit& full_split,
                                const EvalOptions& options,
                                const FeatureCache* validation_features) {
  const ArchConfig& arch = bundle.arch();
  if (full_split.size() == 0) throw ValidationError("cannot evaluate on an empty split");
  if (options.chunk == 0) throw ValidationError("evaluation chunk must be >= 1");
  if (options.snr_db.size() != 1 && options.snr_db.size() != arch.tasks) {
    throw ValidationError("evaluation needs one SNR or one per task");
  }
  if (arch.nodes != kQuarters) throw ValidationError("image data provides exactly 4 nodes");
  const DatasetSplit split = options.limit > 0 && options.limit < full_split.size()
                                 ? full_split.head(options.limit)
                                 : full_split;
  const std::size_t n = split.size();
  const bool cached = validation_features != nullptr;

  // Raw symbols [i][k] as [N, m_i] row-major, indexed by sample id.
  std::vector<std::vector<std::vector<float>>> sym(arch.tasks);
  for (std::size_t i = 0; i < arch.tasks; ++i) {
    sym[i].assign(arch.nodes, std::vector<float>(n * arch.channel_uses[i]));
  }
  std::vector<std::vector<std::vector<double>>> chunk_scale(arch.tasks,
                                                            std::vector<std::vector<double>>(arch.nodes));
  std::vector<std::vector<std::size_t>> chunk_ids;

  BatchStream stream(split, options.chunk, 0);
  stream.set_materialize_pixels(!cached);
  while (auto batch = stream.next()) {
    Tape<float> tape;
    BoundModel model(tape, bundle, [](const ParamSpec&) { return false; });
    std::vector<Var<float>> inputs;
    for (std::size_t k = 0; k < arch.nodes; ++k) {
      inputs.push_back(tape.constant(cached ? validation_features->gather(k, batch->sample_ids)
                                            : std::move(batch->nodes[k])));
    }
    const auto raw = encode_raw(model, inputs,
                                cached ? EncoderInput::cu_features : EncoderInput::observations);
    for (std::size_t i = 0; i < arch.tasks; ++i) {
      const std::size_t m = arch.channel_uses[i];
      for (std::size_t k = 0; k < arch.nodes; ++k) {
        const float* src = raw[i][k].value().data();
        for (std::size_t j = 0; j < batch->size(); ++j) {
          std::copy_n(src + j * m, m, sym[i][k].data() + batch->sample_ids[j] * m);
        }
        chunk_scale[i][k].push_back(power_scale(src, batch->size() * m));
      }
    }
    chunk_ids.push_back(std::move(batch->sample_ids));
  }

  // Normalize, then add noise generated per (task, node) in a fixed order.
  Rng rng(options.noise_seed);
  for (std::size_t i = 0; i < arch.tasks; ++i) {
    const std::size_t m = arch.channel_uses[i];
    const double snr = options.snr_db.size() == 1 ? options.snr_db[0] : options.snr_db[i];
    for (std::size_t k = 0; k < arch.nodes; ++k) {
      auto& v = sym[i][k];
      if (options.normalization == EvalNormalization::full_split) {
        const auto s = static_cast<float>(power_scale(v.data(), v.size()));
        for (auto& x : v) x *= s;
      } else {
        for (std::size_t c = 0; c < chunk_ids.size(); ++c) {
          const auto s = static_cast<float>(chunk_scale[i][k][c]);
          for (auto id : chunk_ids[c]) {
            for (std::size_t u = 0; u < m; ++u) v[id * m + u] *= s;
          }
        }
      }
      if (!options.noiseless) {
        const Tensor noise = gaussian_noise(Shape{n, m}, noise_variance(snr), rng);
        for (std::size_t e = 0; e < v.size(); ++e) v[e] += noise.data()[e];
      }
    }
  }

  std::vector<std::size_t> wrong(arch.tasks, 0);
  for (std::size_t start = 0; start < n; start += options.chunk) {
    const std::size_t j = std::min(options.chunk, n - start);
    Tape<float> tape;
    BoundModel model(tape, bundle, [](const ParamSpec&) { return false; });
    for (std::size_t i = 0; i < arch.tasks; ++i) {
      const std::size_t m = arch.channel_uses[i];
      std::vector<Var<float>> received;
      for (std::size_t k = 0; k < arch.nodes; ++k) {
        Tensor t(Shape{j, m});
        std::copy_n(sym[i][k].data() + start * m, j * m, t.data());
        received.push_back(tape.constant(std::move(t)));
      }
      const auto out = decoder_forward(model, i + 1, received);
      const float* q = out.value().data();
      const std::size_t c = task_outputs(i);
      for (std::size_t s = 0; s < j; ++s) {
        const SemanticLabels lab = split.labels(start + s);
        int decision;
        if (c == 1) {
          decision = q[s] >= 0.5f ? 1 : 0;
        } else {
          decision = static_cast<int>(std::max_element(q + s * c, q + (s + 1) * c) - (q + s * c));
        }
        if (decision != (i == 0 ? lab.z1 : lab.z2)) ++wrong[i];
      }
    }
  }
  std::vector<double> out;
  for (auto w : wrong) out.push_back(static_cast<double>(w) / static_cast<double>(n));
  return out;
}

double error_rate(const ModelBundle& bundle, const DatasetSplit& split, double snr_db,
                  std::size_t task, std::uint64_t noise_seed) {
  if (task < 1 || task > bundle.arch().tasks) {
    throw ValidationError("task " + std::to_string(task) + " outside 1-" +
                          std::to_string(bundle.arch().tasks));
  }
  EvalOptions o;
  o.snr_db = {snr_db};
  o.noise_seed = noise_seed;
  return error_rates(bundle, split, o)[task - 1];
}

std::size_t select_best(std::span<const ModelBundle> bundles, double snr_db, std::size_t task,
                        const DatasetSplit& split, std::uint64_t noise_seed) {
  if (bundles.empty()) throw ValidationError("select_best needs at least one bundle");
  std::size_t best = 0;
  double best_err = 2.0, best_mid = 0.0;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const double err = error_rate(bundles[b], split, snr_db, task, noise_seed);
    const auto& meta = bundles[b].metadata();
    const double mid = 0.5 * (meta.snr_lo_db + meta.snr_hi_db);
    if (err < best_err || (err == best_err && mid < best_mid)) {
      best = b;
      best_err = err;
      best_mid = mid;
    }
  }
  return best;
}

SweepKind parse_sweep_kind(std::string_view s) {
  if (s == "over_epochs") return SweepKind::over_epochs;
  if (s == "over_snr") return SweepKind::over_snr;
  if (s == "over_params") return SweepKind::over_params;
  throw ValidationError("unknown sweep kind '" + std::string(s) + "'");
}

std::string_view to_string(SweepKind k) {
  switch (k) {
    case SweepKind::over_epochs: return "over_epochs";
    case SweepKind::over_snr: return "over_snr";
    case SweepKind::over_params: return "over_params";
  }
  return "?";
}

void SweepSpec::validate() const {
  if (seeds.empty()) throw ValidationError("sweep needs at least one seed");
  if (snr_eval.empty() && kind != SweepKind::over_params) {
    throw ValidationError("sweep needs at least one evaluation SNR");
  }
  if (architectures.empty()) throw ValidationError("sweep needs at least one architecture");
  for (const auto& a : architectures) train.validate(a);
  for (const auto& [lo, hi] : bands) {
    if (!(lo <= hi)) throw ValidationError("band lower edge exceeds upper edge");
  }
  if (kind == SweepKind::over_params) {
    for (const auto& a : architectures) {
      if (task_train_snr.size() != a.tasks || task_eval_snr.size() != a.tasks) {
        throw ValidationError("over_params needs one training range and one eval SNR per task");
      }
    }
  }
}

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

auto sort_key(const ExperimentRecord& r) {
  // Mean rows sort after every seed.
  return std::make_tuple(r.scenario, r.arch, r.snr_db, r.task, !r.seed.has_value(),
                         r.seed.value_or(0), r.epochs);
}

}  // namespace

void sort_records(std::vector<ExperimentRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return sort_key(a) < sort_key(b); });
}

void add_seed_means(std::vector<ExperimentRecord>& records) {
  std::map<std::tuple<std::string, std::string, double, int, std::size_t>,
           std::pair<ExperimentRecord, std::size_t>>
      groups;
  std::map<std::tuple<std::string, std::string, double, int, std::size_t>, double> sums;
  for (const auto& r : records) {
    if (!r.seed) continue;
    const auto key = std::make_tuple(r.scenario, r.arch, r.snr_db, r.task, r.epochs);
    auto [it, fresh] = groups.try_emplace(key, r, 0);
    ++it->second.second;
    sums[key] += r.error_rate;
  }
  for (auto& [key, g] : groups) {
    if (g.second < 2) continue;
    ExperimentRecord m = g.first;
    m.seed.reset();
    m.error_rate = sums[key] / static_cast<double>(g.second);
    records.push_back(m);
  }
}

std::string records_csv(std::vector<ExperimentRecord> records) {
  sort_records(records);
  std::string out = "scenario,arch,seed,snr_db,task,error_rate,epochs,n_params\n";
  for (const auto& r : records) {
    out += r.scenario + ',' + r.arch + ',' + (r.seed ? std::to_string(*r.seed) : "mean") + ',' +
           fmt6(r.snr_db) + ',' + std::to_string(r.task) + ',' + fmt6(r.error_rate) + ',' +
           std::to_string(r.epochs) + ',' + std::to_string(r.n_params) + '\n';
  }
  return out;
}

void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path) {
  const std::string text = records_csv(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open CSV for writing");
  f << text;
  if (!f) throw IoError(path.string(), "write failed");
}

std::vector<ExperimentRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "scenario,arch,seed,snr_db,task,error_rate,epochs,n_params") {
    throw ValidationError("CSV header mismatch");
  }
  std::vector<ExperimentRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) {
      throw ValidationError("CSV row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                            " fields");
    }
    auto num = [&](const std::string& s, auto& v) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError("CSV row " + std::to_string(row) + ": bad number '" + s + "'");
      }
    };
    ExperimentRecord r;
    r.scenario = f[0];
    r.arch = f[1];
    if (f[2] != "mean") {
      std::uint64_t s = 0;
      num(f[2], s);
      r.seed = s;
    }
    num(f[3], r.snr_db);
    num(f[4], r.task);
    num(f[5], r.error_rate);
    num(f[6], r.epochs);
    num(f[7], r.n_params);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::uint64_t point_seed(std::uint64_t base, double snr_db) {
  return derive_seed(base, {std::bit_cast<std::uint64_t>(snr_db)});
}

std::string tag(std::string s, bool rotation) { return rotation ? s + "_rot" : s; }

// Comma-free architecture id for the CSV arch column, e.g. "ccmt-6-5-3".
std::string csv_arch(const ArchConfig& a) {
  const auto& f = a.filters();
  return std::string(to_string(a.variant)) + "-" + std::to_string(f[0]) + "-" +
         std::to_string(f[1]) + "-" + std::to_string(f[2]);
}

}  // namespace

std::vector<ExperimentRecord> run_sweep(const SweepSpec& spec, const Dataset& data,
                                        std::ostream* progress) {
  spec.validate();
  const RotationSettings rot{spec.rotation, data.validation.rotation().bound_deg,
                             data.validation.rotation().validation_seed};
  const DatasetSplit val = data.validation.with_rotation(rot);
  std::vector<ExperimentRecord> records;
  auto note = [&](const std::string& s) {
    if (progress) *progress << s << std::endl;
  };

  for (const auto& arch : spec.architectures) {
    const std::size_t n_params = count_params(arch, ParamScope::cnn_only);
    const bool generalized = spec.generalized_cu && arch.variant == Variant::ccmt;
    for (const auto seed : spec.seeds) {
      TrainConfig cfg = spec.train;
      cfg.seed = seed;
      cfg.rotation = spec.rotation;
      cfg.eval_seed = spec.eval_seed;
      note(std::string(to_string(spec.kind)) + ": " + arch.describe() + " seed " +
           std::to_string(seed));

      auto record = [&](const std::string& scenario, double snr, int task, double err,
                        std::size_t epochs) {
        records.push_back({tag(scenario, spec.rotation), csv_arch(arch), seed, snr, task, err,
                           epochs, n_params});
      };

      switch (spec.kind) {
        case SweepKind::over_epochs: {
          const double snr = spec.snr_eval.front();
          cfg.eval_snr_db = snr;
          cfg.eval_seed = point_seed(spec.eval_seed, snr);
          if (cfg.eval_every == 0) cfg.eval_every = 1;
          auto log_records = [&](const std::string& scenario, const TrainLog& log,
                                 std::size_t skip) {
            for (const auto& r : log.records) {
              if (r.epoch <= skip || std::isnan(r.task_error.front())) continue;
              for (std::size_t i = 0; i < r.task_error.size(); ++i) {
                record(scenario, snr, static_cast<int>(i + 1), r.task_error[i], r.epoch - skip);
              }
            }
          };
          cfg.scenario = Scenario::joint;
          log_records("joint", train(ModelBundle::initialize(arch, seed), data, cfg).log, 0);
          if (generalized) {
            cfg.scenario = Scenario::generalized_cu;
            const auto g = train_generalized_cu(ModelBundle::initialize(arch, seed), data, cfg);
            log_records("generalized_cu", g.log, cfg.cu_pretrain_epochs);
          }
          break;
        }
        case SweepKind::over_snr: {
          if (!spec.bands.empty()) {
            cfg.eval_every = 0;
            const auto bundles =
                train_multi_model(arch, data, cfg, spec.bands);
            const std::string scenario = generalized ? "generalized_cu_multi_model" : "multi_model";
            for (const double snr : spec.snr_eval) {
              for (std::size_t t = 1; t <= arch.tasks; ++t) {
                const auto ps = point_seed(spec.eval_seed, snr);
                const auto b = select_best(bundles, snr, t, val, ps);
                record(scenario, snr, static_cast<int>(t),
                       error_rate(bundles[b], val, snr, t, ps), cfg.epochs);
              }
            }
          } else {
            cfg.eval_every = 0;
            const auto bundle =
                generalized ? train_generalized_cu(ModelBundle::initialize(arch, seed), data, cfg).bundle
                            : train(ModelBundle::initialize(arch, seed), data, cfg).bundle;
            for (const double snr : spec.snr_eval) {
              EvalOptions o;
              o.snr_db = {snr};
              o.noise_seed = point_seed(spec.eval_seed, snr);
              const auto errs = error_rates(bundle, val, o);
              for (std::size_t t = 0; t < errs.size(); ++t) {
                record(generalized ? "generalized_cu" : "joint", snr, static_cast<int>(t + 1),
                       errs[t], cfg.epochs);
              }
            }
          }
          break;
        }
        case SweepKind::over_params: {
          cfg.eval_every = 0;
          cfg.task_snr_train.clear();
          for (const auto& [lo, hi] : spec.task_train_snr) cfg.task_snr_train.push_back({lo, hi});
          const auto bundle =
              generalized ? train_generalized_cu(ModelBundle::initialize(arch, seed), data, cfg).bundle
                          : train(ModelBundle::initialize(arch, seed), data, cfg).bundle;
          EvalOptions o;
          o.snr_db = spec.task_eval_snr;
          o.noise_seed = point_seed(spec.eval_seed, spec.task_eval_snr.front());
          const auto errs = error_rates(bundle, val, o);
          for (std::size_t t = 0; t < errs.size(); ++t) {
            record(generalized ? "generalized_cu" : "joint", spec.task_eval_snr[t],
                   static_cast<int>(t + 1), errs[t], cfg.epochs);
          }
          break;
        }
      }
    }
  }
  add_seed_means(records);
  sort_records(records);
  return records;
}

}  // namespace ccmt
