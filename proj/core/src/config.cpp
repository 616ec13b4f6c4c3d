#include "ccmt/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ccmt/error.hpp"

namespace ccmt {
namespace {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string(), "cannot open file");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
}

void only_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ValidationError("'" + where + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ValidationError("unknown key '" + where + "." + k + "'");
  }
}

template <class T>
T get(const json& obj, const std::string& where, const char* key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("bad value for '" + where + "." + key + "': " + e.what());
  }
}

template <class T>
void maybe(const json& obj, const std::string& where, const char* key, T& out) {
  if (obj.contains(key)) out = get<T>(obj, where, key);
}

SnrBand band(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ValidationError("'" + where + "' must be a [lo, hi] pair of numbers");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

std::vector<SnrBand> bands(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError("'" + where + "' must be a list of [lo, hi] pairs");
  std::vector<SnrBand> out;
  for (const auto& b : v) out.push_back(band(b, where));
  return out;
}

Filters filters(const json& v, const std::string& where) {
  if (v.is_string()) return parse_filter_list(v.get<std::string>());
  if (!v.is_array() || v.size() != 3) throw ValidationError("'" + where + "' needs 3 filter counts");
  Filters f{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number_unsigned()) throw ValidationError("'" + where + "' entries must be >= 0");
    f[i] = v[i].get<std::size_t>();
  }
  return f;
}

ArchConfig arch_from(const json& a) {
  only_keys(a, "arch", {"variant", "ccmt", "stc", "m", "K", "N"});
  ArchConfig arch;
  if (a.contains("variant")) arch.variant = parse_variant(get<std::string>(a, "arch", "variant"));
  if (a.contains("ccmt")) arch.ccmt = filters(a["ccmt"], "arch.ccmt");
  if (a.contains("stc")) arch.stc = filters(a["stc"], "arch.stc");
  maybe(a, "arch", "K", arch.nodes);
  maybe(a, "arch", "N", arch.tasks);
  maybe(a, "arch", "m", arch.channel_uses);
  arch.validate();
  return arch;
}

TrainConfig train_from(const json& t) {
  only_keys(t, "train",
            {"epochs", "batch_size", "lr", "schedule", "scenario", "snr", "task_snr", "seed",
             "channel_seed", "L", "T", "rotation", "freeze_cu_after", "cu_pretrain_epochs",
             "cu_pretrain_snr", "bands", "eval_snr", "task_eval_snr", "eval_every", "eval_seed",
             "eval_limit", "optimizer"});
  const std::string w = "train";
  TrainConfig c;
  maybe(t, w, "epochs", c.epochs);
  maybe(t, w, "batch_size", c.batch_size);
  maybe(t, w, "lr", c.base_lr);
  if (t.contains("schedule")) c.schedule = parse_schedule(get<std::string>(t, w, "schedule"));
  if (t.contains("scenario")) c.scenario = parse_scenario(get<std::string>(t, w, "scenario"));
  if (t.contains("snr")) {
    const auto [lo, hi] = band(t["snr"], "train.snr");
    c.snr_train = ChannelConfig{lo, hi};
  }
  if (t.contains("task_snr")) {
    for (const auto& [lo, hi] : bands(t["task_snr"], "train.task_snr")) {
      c.task_snr_train.push_back(ChannelConfig{lo, hi});
    }
  }
  maybe(t, w, "seed", c.seed);
  if (t.contains("channel_seed")) c.channel_seed = get<std::uint64_t>(t, w, "channel_seed");
  maybe(t, w, "L", c.cooperative_samples);
  maybe(t, w, "T", c.channel_samples);
  maybe(t, w, "rotation", c.rotation);
  if (t.contains("freeze_cu_after")) c.freeze_cu_after = get<std::size_t>(t, w, "freeze_cu_after");
  maybe(t, w, "cu_pretrain_epochs", c.cu_pretrain_epochs);
  if (t.contains("cu_pretrain_snr")) {
    const auto [lo, hi] = band(t["cu_pretrain_snr"], "train.cu_pretrain_snr");
    c.cu_pretrain_snr = ChannelConfig{lo, hi};
  }
  if (t.contains("bands")) c.bands = bands(t["bands"], "train.bands");
  maybe(t, w, "eval_snr", c.eval_snr_db);
  maybe(t, w, "task_eval_snr", c.task_eval_snr_db);
  maybe(t, w, "eval_every", c.eval_every);
  maybe(t, w, "eval_seed", c.eval_seed);
  maybe(t, w, "eval_limit", c.eval_limit);
  if (t.contains("optimizer")) {
    const auto o = get<std::string>(t, w, "optimizer");
    if (o == "adam") {
      c.optimizer = OptimizerKind::adam;
    } else if (o == "sgd") {
      c.optimizer = OptimizerKind::sgd;
    } else {
      throw ValidationError("unknown optimizer '" + o + "'");
    }
  }
  return c;
}

}  // namespace

Filters parse_filter_list(const std::string& text) {
  Filters f{};
  std::size_t idx = 0, start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                           : comma - start);
    if (idx >= 3) throw ValidationError("filter list '" + text + "' has more than 3 entries");
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), f[idx]);
    if (item.empty() || ec != std::errc{} || p != item.data() + item.size()) {
      throw ValidationError("bad filter count '" + item + "' in '" + text + "'");
    }
    ++idx;
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (idx != 3) throw ValidationError("filter list '" + text + "' needs 3 entries");
  return f;
}

ArchConfig parse_arch_descriptor(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("architecture '" + text + "' should look like ccmt:6,5,3");
  }
  ArchConfig a;
  a.variant = parse_variant(text.substr(0, colon));
  (a.variant == Variant::ccmt ? a.ccmt : a.stc) = parse_filter_list(text.substr(colon + 1));
  a.validate();
  return a;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_json(json_text);
  only_keys(j, "config", {"arch", "train"});
  RunConfig rc;
  if (j.contains("arch")) rc.arch = arch_from(j["arch"]);
  if (j.contains("train")) rc.train = train_from(j["train"]);
  rc.train.validate(rc.arch);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path));
}

SweepSpec parse_sweep_spec(const std::string& json_text) {
  const json j = parse_json(json_text);
  only_keys(j, "sweep",
            {"kind", "snr_eval", "seeds", "rotation", "architectures", "bands", "generalized_cu",
             "task_train_snr", "task_eval_snr", "eval_seed", "train"});
  const std::string w = "sweep";
  SweepSpec s;
  if (!j.contains("kind")) throw ValidationError("sweep spec lacks 'kind'");
  s.kind = parse_sweep_kind(get<std::string>(j, w, "kind"));
  maybe(j, w, "snr_eval", s.snr_eval);
  maybe(j, w, "seeds", s.seeds);
  maybe(j, w, "rotation", s.rotation);
  maybe(j, w, "generalized_cu", s.generalized_cu);
  maybe(j, w, "task_eval_snr", s.task_eval_snr);
  maybe(j, w, "eval_seed", s.eval_seed);
  if (j.contains("train")) s.train = train_from(j["train"]);
  if (j.contains("bands")) {
    if (j["bands"].is_string() && j["bands"] == "default") {
      s.bands = default_snr_bands();
    } else {
      s.bands = bands(j["bands"], "sweep.bands");
    }
  }
  if (j.contains("task_train_snr")) s.task_train_snr = bands(j["task_train_snr"], "sweep.task_train_snr");
  if (j.contains("architectures")) {
    if (!j["architectures"].is_array()) throw ValidationError("'sweep.architectures' must be a list");
    for (const auto& a : j["architectures"]) {
      s.architectures.push_back(a.is_string() ? parse_arch_descriptor(a.get<std::string>())
                                              : arch_from(a));
    }
  }
  s.validate();
  return s;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
  return parse_sweep_spec(read_file(path));
}

}  // namespace ccmt
