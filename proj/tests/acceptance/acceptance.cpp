// Acceptance driver: prints one PASS/FAIL line per criterion.
//
//   ccmt_acceptance [--preset ci|full] [--criteria 1,2,...] [--seeds N]
//                   [--epochs N] [--data-dir DIR] [--cache-dir DIR]
//
// Trained bundles are cached under --cache-dir keyed by their full training
// configuration, so a rerun only re-evaluates.

#include <CLI11.hpp>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ccmt/channel.hpp"
#include "ccmt/config.hpp"
#include "ccmt/error.hpp"
#include "ccmt/evaluation.hpp"
#include "ccmt/runtime.hpp"
#include "ccmt/training.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace ccmt;

namespace {

struct Verdict {
  bool pass = true;
  std::string summary;
};

void detail(const std::string& line) { std::cout << "  " << line << "\n" << std::flush; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// ---- criterion 1 -----------------------------------------------------------

Verdict parameter_counts() {
  Verdict v;
  struct Case {
    const char* arch;
    std::size_t expected;
  };
  const Case cases[] = {{"ccmt:6,5,3", 611}, {"stc:4,4,3", 598},     {"ccmt:4,2,2", 190},
                        {"stc:2,2,2", 192},  {"ccmt:14,13,8", 3679}, {"stc:11,10,8", 3676}};
  for (const auto& c : cases) {
    const auto n = count_params(parse_arch_descriptor(c.arch), ParamScope::cnn_only);
    detail(std::string(c.arch) + " -> " + std::to_string(n) + " (expected " +
           std::to_string(c.expected) + ")");
    if (n != c.expected) v.pass = false;
  }
  Rng rng(20240601);
  std::size_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    ArchConfig a;
    a.variant = i % 2 ? Variant::stc : Variant::ccmt;
    Filters f{testing::pick(rng, 1, 16), testing::pick(rng, 1, 16), testing::pick(rng, 1, 16)};
    (a.variant == Variant::ccmt ? a.ccmt : a.stc) = f;
    a.channel_uses = {testing::pick(rng, 1, 4), testing::pick(rng, 1, 4)};
    const auto bundle = ModelBundle::initialize(a, static_cast<std::uint64_t>(i));
    std::size_t cnn_node1 = 0, all = 0;
    for (std::size_t k = 0; k < bundle.params().size(); ++k) {
      const auto& spec = bundle.layout()[k];
      const auto size = bundle.params()[k].value.size();
      all += size;
      if (spec.cnn && spec.node == 1) cnn_node1 += size;
    }
    if (cnn_node1 != count_params(a, ParamScope::cnn_only) ||
        all != count_params(a, ParamScope::total)) {
      ++mismatches;
    }
  }
  detail("random configs with formula != allocation: " + std::to_string(mismatches) + " / 100");
  if (mismatches) v.pass = false;
  v.summary = v.pass ? "six reference counts exact, 100 random configs agree" : "count mismatch";
  return v;
}

// ---- criterion 2 -----------------------------------------------------------

Verdict gradients() {
  Verdict v;
  double worst = 0.0;
  for (const auto& c : testing::primitive_op_cases()) {
    const auto s = testing::run_gradcheck(c, 20, 77);
    detail(c.name + ": " + std::to_string(s.instances) + " instances, max rel error " +
           fmt(s.max_rel_error, 10));
    worst = std::max(worst, s.max_rel_error);
    if (s.instances != 20 || !(s.max_rel_error < testing::kFdTolerance)) v.pass = false;
  }
  v.summary = "max relative error " + fmt(worst, 10) + " (limit 1e-4)";
  return v;
}

// ---- criterion 3 -----------------------------------------------------------

Verdict channel_statistics() {
  Verdict v;
  Rng rng(99);
  for (double snr : {-10.0, 0.0, 10.0, 20.0}) {
    const Tensor zeros({1000000});
    const Tensor y = awgn(zeros, snr, rng);
    double m = 0.0, sq = 0.0;
    for (float x : y.values()) {
      m += x;
      sq += static_cast<double>(x) * x;
    }
    const double n = static_cast<double>(y.size());
    const double var = sq / n - (m / n) * (m / n);
    const double target = std::pow(10.0, -snr / 10.0);
    const double rel = std::abs(var / target - 1.0);
    detail("SNR " + fmt(snr, 0) + " dB: variance " + fmt(var, 6) + " target " + fmt(target, 6) +
           " rel dev " + fmt(rel, 5));
    if (!(rel <= 0.01)) v.pass = false;
  }
  double worst = 0.0;
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_real_distribution<double> scale_exp(-3.0, 3.0);
  for (int b = 0; b < 1000; ++b) {
    Tensor batch({testing::pick(rng, 1, 256), testing::pick(rng, 1, 8)});
    const float s = static_cast<float>(std::pow(10.0, scale_exp(rng)));
    for (auto& x : batch.values()) x = s * u(rng);
    const Tensor out = power_normalize(batch);
    double p = 0.0;
    for (float x : out.values()) p += static_cast<double>(x) * x;
    worst = std::max(worst, std::abs(p / static_cast<double>(out.size()) - 1.0));
  }
  detail("power_normalize over 1000 batches: max |mean power - 1| = " + fmt(worst, 9));
  if (!(worst <= 1e-5)) v.pass = false;
  v.summary = v.pass ? "noise variance within 1%, unit mean power within 1e-5" : "out of tolerance";
  return v;
}

// ---- criterion 4 -----------------------------------------------------------

Verdict loss_sanity() {
  Verdict v;
  constexpr std::size_t J = 64;
  std::vector<int> z1(J), z2(J);
  for (std::size_t j = 0; j < J; ++j) {
    z2[j] = static_cast<int>(j % 10);
    z1[j] = z2[j] == 2;
  }
  const std::vector<std::vector<int>> labels = {z1, z2};
  {
    Tape<float> tape;
    ForwardResult f;
    f.outputs = {{tape.constant(Tensor({J, 1}, 0.5f)), tape.constant(Tensor({J, 10}, 0.1f))}};
    const auto l = loss_ccmt(f, labels);
    const double d1 = std::abs(l.per_task[0] - std::log(2.0));
    const double d2 = std::abs(l.per_task[1] - std::log(10.0));
    detail("uniform task-1 term " + fmt(l.per_task[0], 9) + " |diff to ln 2| " + fmt(d1, 9));
    detail("uniform task-2 term " + fmt(l.per_task[1], 9) + " |diff to ln 10| " + fmt(d2, 9));
    if (!(d1 <= 1e-6 && d2 <= 1e-6)) v.pass = false;
  }
  // T = 4 draws in one pass versus four single-draw passes over the same noise.
  const ArchConfig arch;
  const auto bundle = ModelBundle::initialize(arch, 5);
  Rng rng(8);
  std::vector<Tensor> obs;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t k = 0; k < arch.nodes; ++k) {
    Tensor t({J, 14, 14, 1});
    for (auto& x : t.values()) x = u(rng);
    obs.push_back(std::move(t));
  }
  const ChannelConfig cc{9.0, 11.0};
  const ChannelDraw draw = draw_channel(arch, J, 4, std::span(&cc, 1), rng);
  auto loss_of = [&](const ChannelDraw& d) {
    Tape<float> tape;
    BoundModel m(tape, bundle);
    std::vector<Var<float>> in;
    for (const auto& o : obs) in.push_back(tape.constant(o));
    return loss_ccmt(system_forward(m, in, d), labels).total.value()[0];
  };
  const float joint = loss_of(draw);
  float acc = 0.0f;
  const auto singles = split_draws(draw);
  for (const auto& d : singles) acc += loss_of(d);
  const float looped = acc * (1.0f / static_cast<float>(singles.size()));
  detail("T=4 loss " + fmt(joint, 9) + ", mean of single-draw losses " + fmt(looped, 9));
  if (std::bit_cast<std::uint32_t>(joint) != std::bit_cast<std::uint32_t>(looped)) v.pass = false;
  v.summary = v.pass ? "ln 2 / ln 10 within 1e-6, T-draw loss equals per-draw mean"
                     : "loss identity violated";
  return v;
}

// ---- criterion 8 -----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

bool bitwise_equal(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.arch() == b.arch()) || !(a.metadata() == b.metadata())) return false;
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t k = 0; k < a.params().size(); ++k) {
    const auto& x = a.params()[k];
    const auto& y = b.params()[k];
    if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
    if (std::memcmp(x.value.data(), y.value.data(), x.value.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

Verdict reproducibility(const Dataset& full, const fs::path& scratch) {
  Verdict v;
  const Dataset data{full.train.head(1000), full.validation.head(500)};
  SweepSpec spec;
  spec.kind = SweepKind::over_epochs;
  spec.seeds = {1, 2};
  spec.snr_eval = {10.0};
  spec.architectures = {parse_arch_descriptor("ccmt:6,5,3"), parse_arch_descriptor("stc:4,4,3")};
  spec.train.epochs = 2;
  spec.train.cu_pretrain_epochs = 1;
  spec.train.eval_every = 1;
  fs::create_directories(scratch);
  const auto a = scratch / "sweep_a.csv", b = scratch / "sweep_b.csv";
  emit_csv(run_sweep(spec, data), a);
  emit_csv(run_sweep(spec, data), b);
  const bool same_csv = slurp(a) == slurp(b) && !slurp(a).empty();
  detail(std::string("sweep CSV (") + std::to_string(slurp(a).size()) + " bytes) identical: " +
         (same_csv ? "yes" : "no"));

  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 3;
  tc.eval_every = 1;
  const auto r1 = train(ModelBundle::initialize(ArchConfig{}, 3), data, tc);
  const auto r2 = train(ModelBundle::initialize(ArchConfig{}, 3), data, tc);
  const bool same_log = train_log_csv(r1.log) == train_log_csv(r2.log);
  detail(std::string("train log CSV identical: ") + (same_log ? "yes" : "no"));

  const auto p1 = scratch / "rt1.bundle", p2 = scratch / "rt2.bundle";
  save_bundle(r1.bundle, p1);
  const auto loaded = load_bundle(p1);
  save_bundle(loaded, p2);
  const bool round_trip = bitwise_equal(r1.bundle, loaded) && slurp(p1) == slurp(p2);
  detail(std::string("bundle save/load bit-exact: ") + (round_trip ? "yes" : "no"));

  v.pass = same_csv && same_log && round_trip;
  v.summary = v.pass ? "CSV bytes and bundle round trip identical" : "mismatch";
  return v;
}

// ---- training-based criteria (5, 6, 7) -------------------------------------

struct Preset {
  std::string name;
  std::size_t epochs;  // joint / STC run length; CCMT splits it in two phases
  double crit5_lo, crit5_hi;
};

Preset preset_named(const std::string& name) {
  if (name == "full") return {"full", 500, 0.08, 0.17};
  return {"ci", 150, 0.0, 0.22};
}

const std::vector<SnrBand> kBands = {{-6.0, -4.0}, {9.0, 11.0}};
constexpr double kHighSnr = 10.0;
constexpr double kLowSnr = -5.0;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

class Trainer {
 public:
  Trainer(const Dataset& data, fs::path cache, Preset preset)
      : data_(data), cache_(std::move(cache)), preset_(std::move(preset)) {
    fs::create_directories(cache_);
  }

  TrainConfig base(bool rotation, std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = preset_.epochs;
    c.cu_pretrain_epochs = preset_.epochs / 2;
    c.rotation = rotation;
    c.seed = seed;
    c.eval_every = 0;
    return c;
  }

  ModelBundle pretrained_cu(bool rotation, std::uint64_t seed) {
    const ArchConfig arch = parse_arch_descriptor("ccmt:6,5,3");
    const TrainConfig c = base(rotation, seed);
    return cached("phase1", key(arch, c), arch, [&] {
      return std::vector{
          pretrain_common_units(ModelBundle::initialize(arch, seed), data_, c, progress("phase1"))
              .bundle};
    })[0];
  }

  /// Band bundles (kBands order) of the generalized-CU CCMT or of STC.
  std::vector<ModelBundle> band_models(Variant variant, bool rotation, std::uint64_t seed) {
    const ArchConfig arch =
        parse_arch_descriptor(variant == Variant::ccmt ? "ccmt:6,5,3" : "stc:4,4,3");
    TrainConfig c = base(rotation, seed);
    if (variant == Variant::ccmt) c.epochs = preset_.epochs - c.cu_pretrain_epochs;
    std::optional<ModelBundle> phase1;
    if (variant == Variant::ccmt) phase1 = pretrained_cu(rotation, seed);
    return cached("bands", key(arch, c) + "|bands", arch, [&] {
      return train_multi_model(arch, data_, c, kBands, progress("bands"),
                               phase1 ? &*phase1 : nullptr);
    });
  }

  ModelBundle joint_ccmt(std::uint64_t seed) {
    const ArchConfig arch = parse_arch_descriptor("ccmt:6,5,3");
    TrainConfig c = base(false, seed);
    return cached("joint", key(arch, c) + "|joint", arch, [&] {
      return std::vector{train(ModelBundle::initialize(arch, seed), data_, c, progress("joint")).bundle};
    })[0];
  }

 private:
  static std::string key(const ArchConfig& a, const TrainConfig& c) {
    std::ostringstream os;
    os << "v1|" << a.describe() << "|m" << a.channel_uses[0] << "," << a.channel_uses[1] << "|e"
       << c.epochs << "|p" << c.cu_pretrain_epochs << "|r" << c.rotation << "|s" << c.seed << "|j"
       << c.batch_size << "|lr" << c.base_lr;
    for (const auto& [lo, hi] : kBands) os << "|b" << lo << ":" << hi;
    return os.str();
  }

  ProgressFn progress(std::string stage) const {
    return [stage](const TrainRecord& r) {
      if (r.epoch % 25 == 0) {
        std::cerr << "    [" << stage << "] epoch " << r.epoch << " loss " << r.loss << std::endl;
      }
    };
  }

  template <class Fn>
  std::vector<ModelBundle> cached(const std::string& tag, const std::string& k,
                                  const ArchConfig& arch, Fn&& make) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(k)));
    const fs::path stem = cache_ / (tag + "-" + hex);
    std::vector<ModelBundle> out;
    for (std::size_t i = 0;; ++i) {
      const fs::path p = stem.string() + "." + std::to_string(i) + ".bundle";
      if (!fs::exists(p)) break;
      try {
        out.push_back(load_bundle(p, arch));
      } catch (const Error&) {
        out.clear();
        break;
      }
    }
    const fs::path done = stem.string() + ".done";
    if (!out.empty() && fs::exists(done)) return out;
    std::cerr << "  training " << k << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    out = make();
    for (std::size_t i = 0; i < out.size(); ++i) {
      save_bundle(out[i], stem.string() + "." + std::to_string(i) + ".bundle");
    }
    std::ofstream(done) << k << "\n";
    std::cerr << "  done in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
              << " s" << std::endl;
    return out;
  }

  const Dataset& data_;
  fs::path cache_;
  Preset preset_;
};

std::uint64_t point_seed(double snr) { return derive_seed(2024, {std::bit_cast<std::uint64_t>(snr)}); }

DatasetSplit validation(const Dataset& data, bool rotation) {
  RotationSettings r = data.validation.rotation();
  r.enabled = rotation;
  return data.validation.with_rotation(r);
}

std::vector<double> errors_at(const ModelBundle& b, const DatasetSplit& split, double snr) {
  EvalOptions o;
  o.snr_db = {snr};
  o.noise_seed = point_seed(snr);
  return error_rates(b, split, o);
}

/// Multi-model (best selected) error per task at `snr`.
std::vector<double> best_errors(const std::vector<ModelBundle>& bundles, const DatasetSplit& split,
                                double snr) {
  std::vector<std::vector<double>> per_bundle;
  for (const auto& b : bundles) per_bundle.push_back(errors_at(b, split, snr));
  std::vector<double> out;
  for (std::size_t task = 1; task <= 2; ++task) {
    const auto idx = select_best(bundles, snr, task, split, point_seed(snr));
    out.push_back(per_bundle[idx][task - 1]);
  }
  return out;
}

struct TrainingOutcome {
  Verdict c5, c6, c7;
};

TrainingOutcome training_criteria(const Dataset& data, const fs::path& cache, const Preset& preset,
                                  std::size_t seeds) {
  Trainer trainer(data, cache, preset);
  // err[variant][rotation][snr][task] -> per-seed values
  std::map<std::tuple<int, int, int, int>, std::vector<double>> err;
  std::vector<double> gen_err[2], joint_err[2], anchor;
  bool cu_frozen = true;
  const DatasetSplit val[2] = {validation(data, false), validation(data, true)};

  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    std::cerr << "seed " << seed << std::endl;
    for (int rot = 0; rot < 2; ++rot) {
      const auto phase1 = trainer.pretrained_cu(rot, seed);
      const auto ccmt = trainer.band_models(Variant::ccmt, rot, seed);
      const auto stc = trainer.band_models(Variant::stc, rot, seed);
      for (const auto& b : ccmt) {
        if (b.checksum(ParamGroup::cu) != phase1.checksum(ParamGroup::cu)) cu_frozen = false;
      }
      for (int s = 0; s < 2; ++s) {
        const double snr = s ? kLowSnr : kHighSnr;
        const auto ec = best_errors(ccmt, val[rot], snr);
        const auto es = best_errors(stc, val[rot], snr);
        for (int t = 0; t < 2; ++t) {
          err[{0, rot, s, t}].push_back(ec[t]);
          err[{1, rot, s, t}].push_back(es[t]);
        }
      }
      if (rot) anchor.push_back(errors_at(ccmt[1], val[1], kHighSnr)[1]);
      if (!rot) {
        const auto g = errors_at(ccmt[1], val[0], kHighSnr);
        const auto j = errors_at(trainer.joint_ccmt(seed), val[0], kHighSnr);
        for (int t = 0; t < 2; ++t) {
          gen_err[t].push_back(g[t]);
          joint_err[t].push_back(j[t]);
        }
      }
    }
  }

  auto m = [&](int variant, int rot, int s, int t) { return mean(err[{variant, rot, s, t}]); };
  for (int rot = 0; rot < 2; ++rot) {
    for (int s = 0; s < 2; ++s) {
      for (int t = 0; t < 2; ++t) {
        detail(std::string(rot ? "rotation" : "no rotation") + ", " +
               fmt(s ? kLowSnr : kHighSnr, 0) + " dB, task " + std::to_string(t + 1) +
               ": CCMT " + fmt(m(0, rot, s, t)) + " STC " + fmt(m(1, rot, s, t)));
      }
    }
  }

  TrainingOutcome out;
  // 5: generalized-CU CCMT (6,5,3) with rotation, [9,11] band model at 10 dB.
  {
    const double v = mean(anchor);
    out.c5.pass = v >= preset.crit5_lo && v <= preset.crit5_hi;
    out.c5.summary = "preset " + preset.name + ": mean task-2 error " + fmt(v) + " over " +
                     std::to_string(seeds) + " seeds, required [" + fmt(preset.crit5_lo, 2) +
                     ", " + fmt(preset.crit5_hi, 2) + "]";
  }
  // 6: ordering.
  {
    bool high_ok = true, low_ok = true;
    for (int rot = 0; rot < 2; ++rot) {
      for (int t = 0; t < 2; ++t) {
        if (!(m(0, rot, 0, t) <= m(1, rot, 0, t))) high_ok = false;
        if (!(std::abs(m(0, rot, 1, t) - m(1, rot, 1, t)) <= 0.03)) low_ok = false;
      }
    }
    const double gap_plain = m(1, 0, 0, 1) - m(0, 0, 0, 1);
    const double gap_rot = m(1, 1, 0, 1) - m(0, 1, 0, 1);
    const bool gap_ok = gap_rot > gap_plain;
    detail("task-2 STC-CCMT gap at 10 dB: no rotation " + fmt(gap_plain) + ", rotation " +
           fmt(gap_rot));
    out.c6.pass = high_ok && low_ok && gap_ok;
    out.c6.summary = std::string("CCMT<=STC at 10 dB: ") + (high_ok ? "yes" : "no") +
                     "; gap grows with rotation: " + (gap_ok ? "yes" : "no") +
                     "; |CCMT-STC|<=0.03 at -5 dB: " + (low_ok ? "yes" : "no");
  }
  // 7: generalized vs joint at 10 dB, no rotation.
  {
    bool close = true;
    for (int t = 0; t < 2; ++t) {
      const double d = mean(gen_err[t]) - mean(joint_err[t]);
      detail("task " + std::to_string(t + 1) + ": generalized-CU " + fmt(mean(gen_err[t])) +
             " joint " + fmt(mean(joint_err[t])) + " diff " + fmt(d));
      if (!(std::abs(d) <= 0.02)) close = false;
    }
    detail(std::string("CU weights bit-identical across phase 2: ") + (cu_frozen ? "yes" : "no"));
    out.c7.pass = close && cu_frozen;
    out.c7.summary = std::string("within 0.02 of joint: ") + (close ? "yes" : "no") +
                     "; CU frozen bit-exactly: " + (cu_frozen ? "yes" : "no");
  }
  return out;
}

void report(int n, const Verdict& v) {
  std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << " (" << v.summary
            << ")\n"
            << std::flush;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8", "ccmt_acceptance"};
  std::string preset_name = "ci", criteria_text = "1,2,3,4,5,6,7,8", data_dir, cache_dir;
  std::size_t seeds = 5, epochs_override = 0;
  app.add_option("--preset", preset_name, "ci (150 epochs) or full (500 epochs)")
      ->check(CLI::IsMember({"ci", "full"}));
  app.add_option("--criteria", criteria_text, "comma-separated subset of 1-8");
  app.add_option("--seeds", seeds, "training seeds for criteria 5-7")->check(CLI::Range(1, 100));
  app.add_option("--epochs", epochs_override, "override the preset run length (smoke runs)");
  app.add_option("--data-dir", data_dir, "MNIST directory (default $CCMT_DATA_DIR)");
  app.add_option("--cache-dir", cache_dir, "trained-bundle cache");
  CLI11_PARSE(app, argc, argv);

  tune_allocator();
  std::set<int> wanted;
  {
    std::stringstream ss(criteria_text);
    for (std::string item; std::getline(ss, item, ',');) wanted.insert(std::stoi(item));
  }
  if (data_dir.empty()) {
    if (const char* env = std::getenv("CCMT_DATA_DIR")) data_dir = env;
  }
  if (cache_dir.empty()) cache_dir = (fs::temp_directory_path() / "ccmt_acceptance_cache").string();

  bool all = true;
  auto run = [&](int n, const std::function<Verdict()>& fn) {
    if (!wanted.count(n)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    all = all && v.pass;
    report(n, v);
  };

  run(1, parameter_counts);
  run(2, gradients);
  run(3, channel_statistics);
  run(4, loss_sanity);

  std::optional<Dataset> data;
  const bool need_data = wanted.count(5) || wanted.count(6) || wanted.count(7) || wanted.count(8);
  std::string data_problem;
  if (need_data) {
    try {
      if (data_dir.empty()) throw ValidationError("no MNIST directory (--data-dir or CCMT_DATA_DIR)");
      data = load_dataset(data_dir);
    } catch (const std::exception& e) {
      data_problem = e.what();
    }
  }
  auto need = [&]() -> const Dataset& {
    if (!data) throw ValidationError(data_problem);
    return *data;
  };

  std::optional<TrainingOutcome> trained;
  auto training = [&]() -> const TrainingOutcome& {
    if (!trained) {
      Preset p = preset_named(preset_name);
      if (epochs_override) {
        p.epochs = epochs_override;
        p.name += " (" + std::to_string(epochs_override) + " epochs)";
      }
      trained = training_criteria(need(), cache_dir, p, seeds);
    }
    return *trained;
  };
  run(5, [&] { return training().c5; });
  run(6, [&] { return training().c6; });
  run(7, [&] { return training().c7; });
  run(8, [&] { return reproducibility(need(), fs::path(cache_dir) / "scratch"); });
  return all ? 0 : 1;
}
