#include "ccmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "ccmt/error.hpp"
#include "ccmt/random.hpp"

namespace ccmt {
namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw IngestionError(path.string(), offset, "truncated IDX header");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    throw IngestionError(path.string(), 0,
                         "bad IDX magic number " + std::to_string(got) + ", expected " +
                             std::to_string(want));
  }
}

}  // namespace

MnistImages load_mnist(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  expect_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  if (rows != kImageSide || cols != kImageSide) {
    throw IngestionError(images_path.string(), 8,
                         "expected 28x28 images, got " + std::to_string(rows) + "x" +
                             std::to_string(cols));
  }
  const std::size_t payload = n * rows * cols;
  if (img.size() < 16 + payload) {
    throw IngestionError(images_path.string(), img.size(),
                         "truncated image payload: need " + std::to_string(16 + payload) +
                             " bytes");
  }

  const auto lab = read_file(labels_path);
  expect_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);
  const std::size_t nl = read_be32(lab, 4, labels_path);
  if (nl != n) {
    throw IngestionError(labels_path.string(), 4,
                         "label count " + std::to_string(nl) + " does not match image count " +
                             std::to_string(n));
  }
  if (lab.size() < 8 + nl) {
    throw IngestionError(labels_path.string(), lab.size(), "truncated label payload");
  }

  MnistImages out;
  if (n == 0) return out;
  out.images = Tensor(Shape{n, rows, cols});
  for (std::size_t i = 0; i < payload; ++i) out.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  out.digits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int d = lab[8 + i];
    if (d > 9) throw IngestionError(labels_path.string(), 8 + i, "label outside 0-9");
    out.digits[i] = d;
  }
  return out;
}

MnistFiles mnist_files(const std::filesystem::path& dir) {
  return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
          dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
}

std::array<PartialObservation, kQuarters> quarter(const Tensor& image, std::size_t sample_id) {
  if (image.rank() != 2 || image.dim(0) != kImageSide || image.dim(1) != kImageSide) {
    throw ShapeError("quarter: expected [28,28] image, got " + shape_string(image.shape()));
  }
  std::array<PartialObservation, kQuarters> out;
  for (std::size_t q = 0; q < kQuarters; ++q) {
    const std::size_t r0 = (q / 2) * kQuarterSide, c0 = (q % 2) * kQuarterSide;
    Tensor px(Shape{kQuarterSide, kQuarterSide});
    for (std::size_t r = 0; r < kQuarterSide; ++r) {
      for (std::size_t c = 0; c < kQuarterSide; ++c) {
        px[r * kQuarterSide + c] = image[(r0 + r) * kImageSide + c0 + c];
      }
    }
    out[q] = PartialObservation{static_cast<int>(q + 1), std::move(px), sample_id};
  }
  return out;
}

Tensor reassemble(std::span<const PartialObservation> quarters) {
  if (quarters.size() != kQuarters) throw ShapeError("reassemble: need exactly 4 quarters");
  Tensor image(Shape{kImageSide, kImageSide});
  for (const auto& obs : quarters) {
    if (obs.node < 1 || obs.node > 4) throw ValidationError("reassemble: node index out of range");
    if (obs.pixels.shape() != Shape{kQuarterSide, kQuarterSide}) {
      throw ShapeError("reassemble: quarter must be [14,14]");
    }
    const std::size_t q = obs.node - 1;
    const std::size_t r0 = (q / 2) * kQuarterSide, c0 = (q % 2) * kQuarterSide;
    for (std::size_t r = 0; r < kQuarterSide; ++r) {
      for (std::size_t c = 0; c < kQuarterSide; ++c) {
        image[(r0 + r) * kImageSide + c0 + c] = obs.pixels[r * kQuarterSide + c];
      }
    }
  }
  return image;
}

void rotate_plane(const float* src, double angle_deg, float* dst) {
  constexpr long n = kQuarterSide;
  constexpr double center = (n - 1) / 2.0;
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  auto pixel = [src](long y, long x) -> double {
    if (y < 0 || x < 0 || y >= n || x >= n) return 0.0;
    return src[y * n + x];
  };
  for (long y = 0; y < n; ++y) {
    for (long x = 0; x < n; ++x) {
      const double dx = x - center, dy = y - center;
      const double sx = cs * dx + sn * dy + center;
      const double sy = -sn * dx + cs * dy + center;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const double v = (1 - ay) * ((1 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1)) +
                       ay * ((1 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1));
      dst[y * n + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

PartialObservation rotate_quarter(const PartialObservation& obs, double angle_deg) {
  if (obs.pixels.shape() != Shape{kQuarterSide, kQuarterSide}) {
    throw ShapeError("rotate_quarter: expected [14,14], got " + shape_string(obs.pixels.shape()));
  }
  PartialObservation out{obs.node, Tensor(obs.pixels.shape()), obs.sample_id};
  rotate_plane(obs.pixels.data(), angle_deg, out.pixels.data());
  return out;
}

SemanticLabels make_labels(int digit) {
  if (digit < 0 || digit > 9) {
    throw ValidationError("digit " + std::to_string(digit) + " outside 0-9");
  }
  return {digit == 2 ? 1 : 0, digit};
}

DatasetSplit::DatasetSplit(SplitRole role, const MnistImages& mnist, RotationSettings rotation)
    : role_(role), rotation_(rotation) {
  auto st = std::make_shared<Storage>();
  const std::size_t n = mnist.count();
  st->digits = mnist.digits;
  st->pixels.resize(n * kQuarters * kQuarterPixels);
  for (std::size_t s = 0; s < n; ++s) {
    const float* img = mnist.images.data() + s * kImageSide * kImageSide;
    for (std::size_t q = 0; q < kQuarters; ++q) {
      const std::size_t r0 = (q / 2) * kQuarterSide, c0 = (q % 2) * kQuarterSide;
      float* dst = st->pixels.data() + (s * kQuarters + q) * kQuarterPixels;
      for (std::size_t r = 0; r < kQuarterSide; ++r) {
        std::copy_n(img + (r0 + r) * kImageSide + c0, kQuarterSide, dst + r * kQuarterSide);
      }
    }
  }
  storage_ = std::move(st);
}

DatasetSplit DatasetSplit::with_rotation(RotationSettings rotation) const {
  DatasetSplit out = *this;
  out.rotation_ = rotation;
  return out;
}

DatasetSplit DatasetSplit::head(std::size_t n) const {
  n = std::min(n, size());
  auto st = std::make_shared<Storage>();
  st->digits.assign(storage_->digits.begin(), storage_->digits.begin() + n);
  st->pixels.assign(storage_->pixels.begin(),
                    storage_->pixels.begin() + n * kQuarters * kQuarterPixels);
  DatasetSplit out = *this;
  out.storage_ = std::move(st);
  return out;
}

double DatasetSplit::angle(std::size_t sample, std::size_t node_index, std::uint64_t stream_seed,
                           std::size_t epoch) const {
  if (!rotation_.enabled) return 0.0;
  const std::uint64_t h =
      role_ == SplitRole::validation
          ? derive_seed(rotation_.validation_seed, {sample, node_index})
          : derive_seed(stream_seed, {0x407a7e, epoch, sample, node_index});
  return (2.0 * unit_from_hash(h) - 1.0) * rotation_.bound_deg;
}

PartialObservation DatasetSplit::observation(std::size_t sample, int node,
                                             std::uint64_t stream_seed, std::size_t epoch) const {
  if (node < 1 || node > static_cast<int>(kQuarters)) {
    throw ValidationError("node index " + std::to_string(node) + " outside 1-4");
  }
  PartialObservation obs{node, Tensor(Shape{kQuarterSide, kQuarterSide}), sample};
  const float* src = quarter_pixels(sample, node - 1);
  if (rotation_.enabled) {
    rotate_plane(src, angle(sample, node - 1, stream_seed, epoch), obs.pixels.data());
  } else {
    std::copy_n(src, kQuarterPixels, obs.pixels.data());
  }
  return obs;
}

Dataset load_dataset(const std::filesystem::path& dir, RotationSettings rotation) {
  const auto files = mnist_files(dir);
  return {DatasetSplit(SplitRole::train, load_mnist(files.train_images, files.train_labels),
                       rotation),
          DatasetSplit(SplitRole::validation, load_mnist(files.test_images, files.test_labels),
                       rotation)};
}

BatchStream::BatchStream(const DatasetSplit& split, std::size_t batch_size, std::uint64_t seed)
    : split_(split), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ValidationError("batch size must be >= 1");
  if (split.size() == 0) throw ValidationError("cannot batch an empty split");
  start_epoch(0);
}

std::size_t BatchStream::batches_per_epoch() const noexcept {
  return (split_.size() + batch_size_ - 1) / batch_size_;
}

void BatchStream::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(split_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (split_.role() == SplitRole::train) {
    Rng rng(derive_seed(seed_, {0x5a0ff1e, epoch}));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t j = std::min(batch_size_, order_.size() - cursor_);
  Batch b;
  b.sample_ids.assign(order_.begin() + cursor_, order_.begin() + cursor_ + j);
  cursor_ += j;
  b.z1.reserve(j);
  b.z2.reserve(j);
  for (auto s : b.sample_ids) {
    const auto lab = split_.labels(s);
    b.z1.push_back(lab.z1);
    b.z2.push_back(lab.z2);
  }
  if (!materialize_) return b;

  const bool rotate = split_.rotation().enabled;
  for (std::size_t q = 0; q < kQuarters; ++q) {
    Tensor t(Shape{j, kQuarterSide, kQuarterSide, 1});
    for (std::size_t i = 0; i < j; ++i) {
      const float* src = split_.quarter_pixels(b.sample_ids[i], q);
      float* dst = t.data() + i * kQuarterPixels;
      if (rotate) {
        rotate_plane(src, split_.angle(b.sample_ids[i], q, seed_, epoch_), dst);
      } else {
        std::copy_n(src, kQuarterPixels, dst);
      }
    }
    b.nodes.push_back(std::move(t));
  }
  return b;
}

}  // namespace ccmt
