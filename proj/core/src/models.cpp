#include "ccmt/models.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "ccmt/error.hpp"

namespace ccmt {

std::string_view to_string(Variant v) { return v == Variant::ccmt ? "ccmt" : "stc"; }

Variant parse_variant(std::string_view s) {
  if (s == "ccmt" || s == "CCMT") return Variant::ccmt;
  if (s == "stc" || s == "STC") return Variant::stc;
  throw ValidationError("unknown variant '" + std::string(s) + "' (expected ccmt or stc)");
}

std::size_t task_outputs(std::size_t task_index) {
  switch (task_index) {
    case 0: return 1;
    case 1: return 10;
    default: throw ValidationError("only two tasks are defined (binary 'is two', digit class)");
  }
}

void ArchConfig::validate() const {
  if (nodes < 1) throw ValidationError("arch.K must be >= 1");
  if (tasks < 1 || tasks > 2) throw ValidationError("arch.N must be 1 or 2");
  if (channel_uses.size() != tasks) {
    throw ValidationError("arch.m needs one entry per task (" + std::to_string(tasks) + ")");
  }
  for (auto m : channel_uses) {
    if (m < 1) throw ValidationError("channel uses must be >= 1");
  }
  for (auto c : filters()) {
    if (c < 1) throw ValidationError("filter counts must be >= 1");
  }
}

std::string ArchConfig::describe() const {
  const auto& f = filters();
  return std::string(to_string(variant)) + "(" + std::to_string(f[0]) + "," +
         std::to_string(f[1]) + "," + std::to_string(f[2]) + ")";
}

std::vector<ParamSpec> parameter_layout(const ArchConfig& arch) {
  arch.validate();
  std::vector<ParamSpec> out;
  auto conv = [&](std::string prefix, std::size_t cin, std::size_t cout, ParamGroup g,
                  std::size_t node) {
    out.push_back({prefix + ".kernel", {3, 3, cin, cout}, 9 * cin, g, true, node});
    out.push_back({prefix + ".bias", {cout}, 9 * cin, g, true, node});
  };
  auto fc = [&](std::string prefix, std::size_t n, std::size_t m, ParamGroup g, std::size_t node) {
    out.push_back({prefix + ".weights", {n, m}, n, g, false, node});
    out.push_back({prefix + ".bias", {m}, n, g, false, node});
  };
  const auto& f = arch.filters();
  for (std::size_t k = 1; k <= arch.nodes; ++k) {
    const std::string node = "node" + std::to_string(k);
    if (arch.variant == Variant::ccmt) {
      conv(node + ".cu.conv1", 1, f[0], ParamGroup::cu, k);
      conv(node + ".cu.conv2", f[0], f[1], ParamGroup::cu, k);
      for (std::size_t i = 0; i < arch.tasks; ++i) {
        const std::string su = node + ".su" + std::to_string(i + 1);
        conv(su + ".conv", f[1], f[2], ParamGroup::su, k);
        fc(su + ".fc", 9 * f[2], arch.channel_uses[i], ParamGroup::su, k);
      }
    } else {
      for (std::size_t i = 0; i < arch.tasks; ++i) {
        const std::string enc = node + ".stc" + std::to_string(i + 1);
        conv(enc + ".conv1", 1, f[0], ParamGroup::stc, k);
        conv(enc + ".conv2", f[0], f[1], ParamGroup::stc, k);
        conv(enc + ".conv3", f[1], f[2], ParamGroup::stc, k);
        fc(enc + ".fc", 9 * f[2], arch.channel_uses[i], ParamGroup::stc, k);
      }
    }
  }
  for (std::size_t i = 0; i < arch.tasks; ++i) {
    const std::string dec = "dec" + std::to_string(i + 1);
    fc(dec + ".fc1", arch.nodes * arch.channel_uses[i], ArchConfig::kDecoderHidden,
       ParamGroup::decoder, 0);
    fc(dec + ".fc2", ArchConfig::kDecoderHidden, task_outputs(i), ParamGroup::decoder, 0);
  }
  return out;
}

// Closed forms; the allocation in parameter_layout must agree with these.
std::size_t count_params(const ArchConfig& arch, ParamScope scope) {
  arch.validate();
  const auto& f = arch.filters();
  const std::size_t n = arch.tasks;
  std::size_t cnn;
  if (arch.variant == Variant::ccmt) {
    cnn = (9 + 1) * f[0] + (9 * f[0] + 1) * f[1] + n * ((9 * f[1] + 1) * f[2]);
  } else {
    cnn = n * ((9 + 1) * f[0] + (9 * f[0] + 1) * f[1] + (9 * f[1] + 1) * f[2]);
  }
  if (scope == ParamScope::cnn_only) return cnn;

  std::size_t per_node = cnn;
  for (std::size_t i = 0; i < n; ++i) per_node += (9 * f[2] + 1) * arch.channel_uses[i];
  std::size_t decoders = 0;
  for (std::size_t i = 0; i < n; ++i) {
    decoders += (arch.nodes * arch.channel_uses[i] + 1) * ArchConfig::kDecoderHidden +
                (ArchConfig::kDecoderHidden + 1) * task_outputs(i);
  }
  return arch.nodes * per_node + decoders;
}

ModelBundle::ModelBundle(ArchConfig arch, std::vector<NamedTensor> params, BundleMetadata metadata)
    : arch_(std::move(arch)),
      layout_(parameter_layout(arch_)),
      params_(std::move(params)),
      metadata_(std::move(metadata)) {
  if (params_.size() != layout_.size()) {
    throw ShapeError("bundle has " + std::to_string(params_.size()) + " tensors, " +
                     arch_.describe() + " needs " + std::to_string(layout_.size()));
  }
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (params_[i].name != layout_[i].name) {
      throw ShapeError("bundle tensor #" + std::to_string(i) + " is '" + params_[i].name +
                       "', expected '" + layout_[i].name + "'");
    }
    if (params_[i].value.shape() != layout_[i].shape) {
      throw ShapeError("tensor '" + params_[i].name + "' has shape " +
                       shape_string(params_[i].value.shape()) + ", " + arch_.describe() +
                       " needs " + shape_string(layout_[i].shape));
    }
  }
}

ModelBundle ModelBundle::initialize(const ArchConfig& arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x1417}));
  std::vector<NamedTensor> params;
  for (const auto& spec : parameter_layout(arch)) {
    Tensor t(spec.shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    for (auto& v : t.values()) {
      v = static_cast<float>((2.0 * std::generate_canonical<double, 53>(rng) - 1.0) * bound);
    }
    params.push_back({spec.name, std::move(t)});
  }
  BundleMetadata meta;
  meta.seed = seed;
  return ModelBundle(arch, std::move(params), meta);
}

std::size_t ModelBundle::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ContractError("no parameter named '" + std::string(name) + "' in " + arch_.describe());
}

Tensor& ModelBundle::param(std::string_view name) { return params_[index_of(name)].value; }
const Tensor& ModelBundle::param(std::string_view name) const {
  return params_[index_of(name)].value;
}

std::size_t ModelBundle::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::uint64_t ModelBundle::checksum(ParamGroup group) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (layout_[i].group != group) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(params_[i].value.data());
    for (std::size_t b = 0; b < params_[i].value.size() * sizeof(float); ++b) {
      h = (h ^ bytes[b]) * 0x100000001b3ULL;
    }
  }
  return h;
}

BoundModel::BoundModel(Tape<float>& tape, const ModelBundle& bundle,
                       std::function<bool(const ParamSpec&)> trainable)
    : tape_(&tape), bundle_(&bundle) {
  const auto layout = bundle.layout();
  const auto params = bundle.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool train = !trainable || trainable(layout[i]);
    vars_.push_back(train ? tape.parameter(params[i].value) : tape.constant(params[i].value));
    index_.emplace(params[i].name, i);
    if (train) trainable_.push_back(i);
  }
}

Var<float> BoundModel::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw ContractError("no parameter named '" + std::string(name) + "' in " +
                        arch().describe());
  }
  return vars_[it->second];
}

std::vector<Tensor> BoundModel::gradients() const {
  std::vector<Tensor> out;
  out.reserve(trainable_.size());
  for (auto i : trainable_) out.push_back(tape_->grad(vars_[i]));
  return out;
}

namespace {

std::string node_prefix(std::size_t node) { return "node" + std::to_string(node); }

void check_node_task(const ArchConfig& arch, std::size_t node, std::size_t task) {
  if (node < 1 || node > arch.nodes) {
    throw ContractError("node " + std::to_string(node) + " outside 1.." +
                        std::to_string(arch.nodes));
  }
  if (task < 1 || task > arch.tasks) {
    throw ContractError("task " + std::to_string(task) + " outside 1.." +
                        std::to_string(arch.tasks));
  }
}

Var<float> conv_relu(const BoundModel& m, const std::string& prefix, Var<float> x) {
  return ops::activation(ops::conv2d(x, m[prefix + ".kernel"], m[prefix + ".bias"]),
                         Activation::relu);
}

Var<float> conv_relu_pool(const BoundModel& m, const std::string& prefix, Var<float> x) {
  return ops::conv_relu_pool(x, m[prefix + ".kernel"], m[prefix + ".bias"]);
}

Var<float> flatten_fc(const BoundModel& m, const std::string& prefix, Var<float> x) {
  const std::size_t batch = x.shape()[0];
  auto flat = ops::reshape(x, Shape{batch, x.value().size() / batch});
  return ops::dense(flat, m[prefix + ".weights"], m[prefix + ".bias"]);
}

}  // namespace

Var<float> cu_forward(const BoundModel& model, std::size_t node, Var<float> observation) {
  if (model.arch().variant != Variant::ccmt) {
    throw ContractError("cu_forward: STC systems have no common unit");
  }
  check_node_task(model.arch(), node, 1);
  const std::string p = node_prefix(node) + ".cu";
  return conv_relu_pool(model, p + ".conv2", conv_relu_pool(model, p + ".conv1", observation));
}

Var<float> su_forward(const BoundModel& model, std::size_t node, std::size_t task,
                      Var<float> feature) {
  if (model.arch().variant != Variant::ccmt) {
    throw ContractError("su_forward: STC systems use stc_encoder_forward");
  }
  check_node_task(model.arch(), node, task);
  const auto& f = model.arch().ccmt;
  const auto& s = feature.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != 3 || s[3] != f[1]) {
    throw ShapeError("su_forward: feature must be [J,3,3," + std::to_string(f[1]) + "], got " +
                     shape_string(s));
  }
  const std::string p = node_prefix(node) + ".su" + std::to_string(task);
  return flatten_fc(model, p + ".fc", conv_relu(model, p + ".conv", feature));
}

Var<float> stc_encoder_forward(const BoundModel& model, std::size_t node, std::size_t task,
                               Var<float> observation) {
  if (model.arch().variant != Variant::stc) {
    throw ContractError("stc_encoder_forward: CCMT systems use cu_forward/su_forward");
  }
  check_node_task(model.arch(), node, task);
  const std::string p = node_prefix(node) + ".stc" + std::to_string(task);
  auto h = conv_relu_pool(model, p + ".conv1", observation);
  h = conv_relu_pool(model, p + ".conv2", h);
  h = conv_relu(model, p + ".conv3", h);
  return flatten_fc(model, p + ".fc", h);
}

Var<float> decoder_forward(const BoundModel& model, std::size_t task,
                           std::span<const Var<float>> received) {
  const auto& arch = model.arch();
  check_node_task(arch, 1, task);
  if (received.size() != arch.nodes) {
    throw ContractError("decoder " + std::to_string(task) + " needs " +
                        std::to_string(arch.nodes) + " node vectors, got " +
                        std::to_string(received.size()));
  }
  for (const auto& r : received) {
    if (r.shape().back() != arch.channel_uses[task - 1]) {
      throw ShapeError("decoder " + std::to_string(task) + ": received vector " +
                       shape_string(r.shape()) + " but m = " +
                       std::to_string(arch.channel_uses[task - 1]));
    }
  }
  const std::string p = "dec" + std::to_string(task);
  auto h = ops::concat(received);
  h = ops::activation(ops::dense(h, model[p + ".fc1.weights"], model[p + ".fc1.bias"]),
                      Activation::tanh);
  h = ops::dense(h, model[p + ".fc2.weights"], model[p + ".fc2.bias"]);
  return ops::activation(h, task_outputs(task - 1) == 1 ? Activation::sigmoid
                                                        : Activation::softmax);
}

ChannelDraw draw_channel(const ArchConfig& arch, std::size_t batch, std::size_t draws,
                         std::span<const ChannelConfig> per_task, Rng& rng) {
  if (per_task.empty() || (per_task.size() != 1 && per_task.size() != arch.tasks)) {
    throw ValidationError("need one channel config, or one per task");
  }
  if (draws < 1) throw ValidationError("channel sample count T must be >= 1");
  ChannelDraw d;
  std::vector<double> variance;
  for (std::size_t i = 0; i < arch.tasks; ++i) {
    const auto& cfg = per_task[per_task.size() == 1 ? 0 : i];
    cfg.validate();
    d.snr_db.push_back(sample_snr_db(cfg, rng));
    variance.push_back(cfg.noiseless ? 0.0 : noise_variance(d.snr_db.back()));
  }
  d.noise.resize(draws);
  for (std::size_t t = 0; t < draws; ++t) {
    d.noise[t].resize(arch.tasks);
    for (std::size_t i = 0; i < arch.tasks; ++i) {
      for (std::size_t k = 0; k < arch.nodes; ++k) {
        d.noise[t][i].push_back(
            gaussian_noise(Shape{batch, arch.channel_uses[i]}, variance[i], rng));
      }
    }
  }
  return d;
}

std::vector<ChannelDraw> split_draws(const ChannelDraw& draw) {
  std::vector<ChannelDraw> out;
  for (const auto& n : draw.noise) out.push_back(ChannelDraw{draw.snr_db, {n}});
  return out;
}

std::vector<std::vector<Var<float>>> encode_raw(const BoundModel& model,
                                                std::span<const Var<float>> node_inputs,
                                                EncoderInput kind) {
  const auto& arch = model.arch();
  if (node_inputs.size() != arch.nodes) {
    throw ContractError("expected " + std::to_string(arch.nodes) + " node inputs, got " +
                        std::to_string(node_inputs.size()));
  }
  if (kind == EncoderInput::cu_features && arch.variant != Variant::ccmt) {
    throw ContractError("cached CU features only exist for CCMT systems");
  }
  std::vector<std::vector<Var<float>>> raw(arch.tasks);
  for (std::size_t k = 1; k <= arch.nodes; ++k) {
    if (arch.variant == Variant::ccmt) {
      // One CU evaluation feeds every SU of the node.
      const Var<float> feature = kind == EncoderInput::cu_features
                                     ? node_inputs[k - 1]
                                     : cu_forward(model, k, node_inputs[k - 1]);
      for (std::size_t i = 1; i <= arch.tasks; ++i) {
        raw[i - 1].push_back(su_forward(model, k, i, feature));
      }
    } else {
      for (std::size_t i = 1; i <= arch.tasks; ++i) {
        raw[i - 1].push_back(stc_encoder_forward(model, k, i, node_inputs[k - 1]));
      }
    }
  }
  return raw;
}

std::vector<std::vector<Var<float>>> encode(const BoundModel& model,
                                            std::span<const Var<float>> node_inputs,
                                            EncoderInput kind) {
  auto raw = encode_raw(model, node_inputs, kind);
  for (auto& task : raw) {
    for (auto& v : task) v = power_normalize(v);
  }
  return raw;
}

ForwardResult system_forward(const BoundModel& model, std::span<const Var<float>> node_inputs,
                             const ChannelDraw& draw, EncoderInput kind) {
  const auto& arch = model.arch();
  if (draw.snr_db.size() != arch.tasks) {
    throw ContractError("channel draw has " + std::to_string(draw.snr_db.size()) +
                        " task channels, system has " + std::to_string(arch.tasks));
  }
  ForwardResult r;
  r.transmitted = encode(model, node_inputs, kind);
  for (std::size_t t = 0; t < draw.draws(); ++t) {
    std::vector<Var<float>> outs;
    std::vector<std::vector<Var<float>>> rec(arch.tasks);
    for (std::size_t i = 0; i < arch.tasks; ++i) {
      for (std::size_t k = 0; k < arch.nodes; ++k) {
        rec[i].push_back(ops::add_constant(r.transmitted[i][k], draw.noise[t][i][k]));
      }
      outs.push_back(decoder_forward(model, i + 1, rec[i]));
    }
    r.outputs.push_back(std::move(outs));
    r.received.push_back(std::move(rec));
  }
  return r;
}

}  // namespace ccmt
