#ifndef CCMT_MODELS_HPP_
#define CCMT_MODELS_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccmt/autodiff.hpp"
#include "ccmt/channel.hpp"
#include "ccmt/random.hpp"
#include "ccmt/tensor.hpp"

namespace ccmt {

enum class Variant { ccmt, stc };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

using Filters = std::array<std::size_t, 3>;

/// Architecture hyperparameters. `ccmt` holds (c1,c2,c3) and `stc` holds
/// (k1,k2,k3); only the triple matching `variant` is used.
struct ArchConfig {
  std::size_t nodes = 4;
  std::size_t tasks = 2;
  std::vector<std::size_t> channel_uses = {2, 2};
  Variant variant = Variant::ccmt;
  Filters ccmt = {6, 5, 3};
  Filters stc = {4, 4, 3};

  static constexpr std::size_t kDecoderHidden = 16;

  const Filters& filters() const { return variant == Variant::ccmt ? ccmt : stc; }
  void validate() const;
  std::string describe() const;  // e.g. "ccmt(6,5,3)"

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Task 1 is the binary "digit is two" decision (1 sigmoid output), task 2 the
/// ten-way digit classification (softmax).
std::size_t task_outputs(std::size_t task_index);

enum class ParamGroup { cu, su, stc, decoder };

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;
  ParamGroup group;
  bool cnn;  // convolution kernel or bias
  std::size_t node;  // 1-based; 0 for decoders
};

/// Every tensor of an architecture, in canonical order.
std::vector<ParamSpec> parameter_layout(const ArchConfig& arch);

enum class ParamScope { cnn_only, total };

/// cnn_only: convolution parameters of one sensing node, the quantity the
/// CCMT/STC budget comparison is stated in. total: every trainable value in
/// the system (all nodes, FC layers and decoders).
std::size_t count_params(const ArchConfig& arch, ParamScope scope);

struct BundleMetadata {
  std::uint64_t seed = 0;
  std::string scenario;
  double snr_lo_db = 0.0;
  double snr_hi_db = 0.0;
  std::size_t epochs = 0;
  bool rotation = false;

  friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Full parameter set {theta (CUs), Phi (SUs or STC encoders), Psi (decoders)}.
class ModelBundle {
 public:
  /// Throws ShapeError if `params` disagrees with parameter_layout(arch).
  ModelBundle(ArchConfig arch, std::vector<NamedTensor> params, BundleMetadata metadata = {});

  /// Uniform fan-in initialization, bound 1/sqrt(fan_in), for weights and biases.
  static ModelBundle initialize(const ArchConfig& arch, std::uint64_t seed);

  const ArchConfig& arch() const noexcept { return arch_; }
  BundleMetadata& metadata() noexcept { return metadata_; }
  const BundleMetadata& metadata() const noexcept { return metadata_; }

  std::span<NamedTensor> params() noexcept { return params_; }
  std::span<const NamedTensor> params() const noexcept { return params_; }
  std::span<const ParamSpec> layout() const noexcept { return layout_; }

  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;

  std::size_t total_values() const;

  /// FNV-1a over the raw bytes of every tensor in `group`.
  std::uint64_t checksum(ParamGroup group) const;

  friend bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return a.arch_ == b.arch_ && a.metadata_ == b.metadata_ && a.params_ == b.params_;
  }

 private:
  std::size_t index_of(std::string_view name) const;

  ArchConfig arch_;
  std::vector<ParamSpec> layout_;
  std::vector<NamedTensor> params_;
  BundleMetadata metadata_;
};

/// Bundle parameters placed on a tape. Tensors whose group is frozen enter as
/// constants and receive no gradient.
class BoundModel {
 public:
  BoundModel(Tape<float>& tape, const ModelBundle& bundle,
             std::function<bool(const ParamSpec&)> trainable = {});

  Tape<float>& tape() const { return *tape_; }
  const ArchConfig& arch() const { return bundle_->arch(); }
  Var<float> operator[](std::string_view name) const;

  /// Indices (into bundle.params()) and tape handles of trainable tensors.
  const std::vector<std::size_t>& trainable_indices() const { return trainable_; }
  std::vector<Tensor> gradients() const;

 private:
  Tape<float>* tape_;
  const ModelBundle* bundle_;
  std::vector<Var<float>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> trainable_;
};

/// Two conv+ReLU+max-pool stages: [J,14,14,1] -> [J,3,3,c2]. CCMT only.
Var<float> cu_forward(const BoundModel& model, std::size_t node, Var<float> observation);

/// Conv(c3)+ReLU, flatten, FC to m_i. Returns pre-normalization symbols [J,m_i].
Var<float> su_forward(const BoundModel& model, std::size_t node, std::size_t task,
                      Var<float> feature);

/// Three conv stages and FC for one task at one node (STC only). Returns
/// pre-normalization symbols [J,m_i].
Var<float> stc_encoder_forward(const BoundModel& model, std::size_t node, std::size_t task,
                               Var<float> observation);

/// Concatenates the K received vectors, FC(16)+tanh, FC+sigmoid (task 1) or
/// FC+softmax (task 2).
Var<float> decoder_forward(const BoundModel& model, std::size_t task,
                           std::span<const Var<float>> received);

/// Noise realizations for one mini-batch: one SNR per task, and per channel
/// draw t, task i and node k a [J,m_i] noise tensor.
struct ChannelDraw {
  std::vector<double> snr_db;
  std::vector<std::vector<std::vector<Tensor>>> noise;  // [t][i][k]
  std::size_t draws() const { return noise.size(); }
};

/// `per_task` holds one config per task, or a single config shared by all.
ChannelDraw draw_channel(const ArchConfig& arch, std::size_t batch, std::size_t draws,
                         std::span<const ChannelConfig> per_task, Rng& rng);

/// Splits a T-draw realization into T single-draw realizations.
std::vector<ChannelDraw> split_draws(const ChannelDraw& draw);

enum class EncoderInput { observations, cu_features };

struct ForwardResult {
  std::vector<std::vector<Var<float>>> outputs;                   // [t][i]
  std::vector<std::vector<Var<float>>> transmitted;               // [i][k], unit power
  std::vector<std::vector<std::vector<Var<float>>>> received;     // [t][i][k]
};

/// Per-task transmitted symbols [i][k] after power normalization.
std::vector<std::vector<Var<float>>> encode(const BoundModel& model,
                                            std::span<const Var<float>> node_inputs,
                                            EncoderInput kind = EncoderInput::observations);

/// Pre-normalization symbols [i][k].
std::vector<std::vector<Var<float>>> encode_raw(const BoundModel& model,
                                                std::span<const Var<float>> node_inputs,
                                                EncoderInput kind = EncoderInput::observations);

/// Encoders, power normalization, AWGN and decoders for all tasks.
ForwardResult system_forward(const BoundModel& model, std::span<const Var<float>> node_inputs,
                             const ChannelDraw& draw,
                             EncoderInput kind = EncoderInput::observations);

/// Versioned binary container: header, arch/metadata text, then ordered
/// (name, shape, float32) records. See README for the byte layout.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);
/// As load_bundle, and throws FormatError unless the stored arch equals `expected`.
ModelBundle load_bundle(const std::filesystem::path& path, const ArchConfig& expected);

inline constexpr std::uint32_t kBundleVersion = 1;

}  // namespace ccmt

#endif  // CCMT_MODELS_HPP_
