#ifndef CCMT_DATA_HPP_
#define CCMT_DATA_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ccmt/tensor.hpp"

namespace ccmt {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kQuarterSide = 14;
inline constexpr std::size_t kQuarterPixels = kQuarterSide * kQuarterSide;
inline constexpr std::size_t kQuarters = 4;

/// Decoded IDX pair: images [N,28,28] scaled to [0,1] and digit labels.
struct MnistImages {
  Tensor images;
  std::vector<int> digits;
  std::size_t count() const { return digits.size(); }
};

/// Reads an IDX3 image file (magic 2051) and IDX1 label file (magic 2049).
/// Throws IngestionError with the failing byte offset.
MnistImages load_mnist(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

struct MnistFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

/// Canonical MNIST file names inside `dir`.
MnistFiles mnist_files(const std::filesystem::path& dir);

/// One sensing node's view: a 14x14 quarter. Nodes are 1-based:
/// 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right.
struct PartialObservation {
  int node = 1;
  Tensor pixels;  // [14,14]
  std::size_t sample_id = 0;
};

std::array<PartialObservation, kQuarters> quarter(const Tensor& image, std::size_t sample_id = 0);

/// Inverse of quarter().
Tensor reassemble(std::span<const PartialObservation> quarters);

/// Rotation about the quarter center by inverse mapping with bilinear
/// interpolation; samples outside the quarter read as 0.
PartialObservation rotate_quarter(const PartialObservation& obs, double angle_deg);

/// Raw-buffer form of rotate_quarter for 14x14 planes.
void rotate_plane(const float* src, double angle_deg, float* dst);

/// z1 is the "digit is two" indicator, z2 the digit class.
struct SemanticLabels {
  int z1 = 0;
  int z2 = 0;
  friend bool operator==(const SemanticLabels&, const SemanticLabels&) = default;
};

SemanticLabels make_labels(int digit);

enum class SplitRole { train, validation };

struct RotationSettings {
  bool enabled = false;
  double bound_deg = 30.0;
  std::uint64_t validation_seed = 0x7a11da7e;
};

/// Immutable, pre-quartered dataset split. Copies share storage, so a split
/// can be handed to several concurrent training runs.
class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(SplitRole role, const MnistImages& mnist, RotationSettings rotation = {});

  SplitRole role() const noexcept { return role_; }
  std::size_t size() const noexcept { return storage_ ? storage_->digits.size() : 0; }
  const RotationSettings& rotation() const noexcept { return rotation_; }

  /// Same samples, different rotation settings.
  DatasetSplit with_rotation(RotationSettings rotation) const;
  /// First `n` samples (for tests and smoke runs).
  DatasetSplit head(std::size_t n) const;

  const float* quarter_pixels(std::size_t sample, std::size_t node_index) const {
    return storage_->pixels.data() + (sample * kQuarters + node_index) * kQuarterPixels;
  }
  int digit(std::size_t sample) const { return storage_->digits[sample]; }
  SemanticLabels labels(std::size_t sample) const { return make_labels(digit(sample)); }

  /// Observation of one node, with the split's rotation applied for `epoch`
  /// (validation angles ignore the epoch).
  PartialObservation observation(std::size_t sample, int node, std::uint64_t stream_seed,
                                 std::size_t epoch) const;

  /// Rotation angle in degrees for (sample, node). Training angles depend on
  /// (stream_seed, epoch); validation angles only on the split's fixed seed.
  double angle(std::size_t sample, std::size_t node_index, std::uint64_t stream_seed,
               std::size_t epoch) const;

 private:
  struct Storage {
    std::vector<float> pixels;  // [N][4][14*14]
    std::vector<int> digits;
  };

  SplitRole role_ = SplitRole::train;
  RotationSettings rotation_;
  std::shared_ptr<const Storage> storage_;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit validation;
};

/// Loads the four canonical MNIST files from `dir`.
Dataset load_dataset(const std::filesystem::path& dir, RotationSettings rotation = {});

/// One mini-batch: per node a [J,14,14,1] tensor plus labels.
struct Batch {
  std::vector<std::size_t> sample_ids;
  std::vector<Tensor> nodes;
  std::vector<int> z1;
  std::vector<int> z2;
  std::size_t size() const { return sample_ids.size(); }
};

/// Epoch-wise mini-batch iterator over a split. Training splits are shuffled
/// per epoch from `seed`; validation order is fixed. The final partial batch
/// is kept.
class BatchStream {
 public:
  BatchStream(const DatasetSplit& split, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const noexcept;
  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();

  /// When false, batches carry ids and labels only (for cached encoder features).
  void set_materialize_pixels(bool on) noexcept { materialize_ = on; }

 private:
  DatasetSplit split_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  bool materialize_ = true;
  std::vector<std::size_t> order_;
};

}  // namespace ccmt

#endif  // CCMT_DATA_HPP_
