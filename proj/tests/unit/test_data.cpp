#include <doctest.h>

#include <cmath>
#include <set>

#include "ccmt/data.hpp"
#include "ccmt/error.hpp"
#include "synthetic.hpp"

using namespace ccmt;
namespace fs = std::filesystem;

TEST_CASE("IDX ingestion") {
  const auto dir = testing::scratch_dir("idx");
  const std::vector<std::uint8_t> px(2 * 784, 0);
  testing::write_file(dir / "img", testing::idx_images(2051, 2, px));
  testing::write_file(dir / "lab", testing::idx_labels(2049, {3, 2}));

  SUBCASE("all-zero images decode to zeros") {
    const auto m = load_mnist(dir / "img", dir / "lab");
    CHECK(m.count() == 2);
    CHECK(m.images.shape() == Shape{2, 28, 28});
    for (float v : m.images.values()) CHECK(v == 0.0f);
    CHECK(m.digits == std::vector<int>{3, 2});
  }
  SUBCASE("pixel scaling by 255") {
    std::vector<std::uint8_t> p(784, 0);
    p[0] = 255;
    p[1] = 51;
    testing::write_file(dir / "img1", testing::idx_images(2051, 1, p));
    testing::write_file(dir / "lab1", testing::idx_labels(2049, {0}));
    const auto m = load_mnist(dir / "img1", dir / "lab1");
    CHECK(m.images[0] == 1.0f);
    CHECK(m.images[1] == doctest::Approx(0.2));
  }
  SUBCASE("label file passed as images: magic error") {
    try {
      load_mnist(dir / "lab", dir / "lab");
      FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find("2049") != std::string::npos);
    }
  }
  SUBCASE("truncated payload names its offset") {
    testing::write_file(dir / "short", testing::idx_images(2051, 2, std::vector<std::uint8_t>(784)));
    try {
      load_mnist(dir / "short", dir / "lab");
      FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
      CHECK(e.offset() > 0);
    }
  }
  SUBCASE("count mismatch") {
    testing::write_file(dir / "lab3", testing::idx_labels(2049, {1, 2, 3}));
    CHECK_THROWS_AS(load_mnist(dir / "img", dir / "lab3"), IngestionError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mnist(dir / "nope", dir / "lab"), IoError);
  }
}

TEST_CASE("quartering") {
  Tensor img({28, 28});
  img.at({0, 0}) = 1.0f;
  auto q = quarter(img);
  CHECK(q[0].node == 1);
  CHECK(q[0].pixels.shape() == Shape{14, 14});
  CHECK(q[0].pixels[0] == 1.0f);
  for (int k = 1; k < 4; ++k) {
    for (float v : q[k].pixels.values()) CHECK(v == 0.0f);
  }
  Tensor tr({28, 28});
  tr.at({0, 14}) = 0.5f;
  tr.at({14, 0}) = 0.25f;
  tr.at({27, 27}) = 0.75f;
  auto q2 = quarter(tr);
  CHECK(q2[1].pixels.at({0, 0}) == 0.5f);
  CHECK(q2[2].pixels.at({0, 0}) == 0.25f);
  CHECK(q2[3].pixels.at({13, 13}) == 0.75f);

  const auto m = testing::synthetic_images(100, 9);
  for (std::size_t s = 0; s < 100; ++s) {
    Tensor x({28, 28});
    std::copy_n(m.images.data() + s * 784, 784, x.data());
    const auto parts = quarter(x, s);
    CHECK(parts[3].sample_id == s);
    CHECK(reassemble(parts) == x);
  }
  CHECK_THROWS_AS(quarter(Tensor({28, 27})), ShapeError);
}

TEST_CASE("quarter rotation") {
  PartialObservation o;
  o.pixels = Tensor({14, 14});
  Rng rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : o.pixels.values()) v = u(rng);
  CHECK(rotate_quarter(o, 0.0).pixels == o.pixels);
  const auto r0 = rotate_quarter(o, 0.0), r360 = rotate_quarter(o, 360.0);
  for (std::size_t i = 0; i < 196; ++i) CHECK(std::abs(r0.pixels[i] - r360.pixels[i]) <= 1e-6);

  // Cross through the center of a 14x14 grid (center at 6.5): rows and
  // columns 6 and 7, symmetric under a quarter turn.
  PartialObservation cross;
  cross.pixels = Tensor({14, 14});
  for (std::size_t i = 0; i < 14; ++i) {
    for (std::size_t c : {6, 7}) {
      cross.pixels.at({i, c}) = 1.0f;
      cross.pixels.at({c, i}) = 1.0f;
    }
  }
  const auto rot = rotate_quarter(cross, 90.0);
  for (std::size_t i = 0; i < 196; ++i) CHECK(std::abs(rot.pixels[i] - cross.pixels[i]) <= 1e-6);

  const auto r30 = rotate_quarter(o, 27.0);
  for (float v : r30.pixels.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("labels") {
  CHECK(make_labels(2) == SemanticLabels{1, 2});
  CHECK(make_labels(7) == SemanticLabels{0, 7});
  CHECK(make_labels(0) == SemanticLabels{0, 0});
  CHECK_THROWS_AS(make_labels(10), ValidationError);
  CHECK_THROWS_AS(make_labels(-1), ValidationError);
}

TEST_CASE("dataset split and batching") {
  const DatasetSplit train(SplitRole::train, testing::synthetic_images(300, 2));
  const DatasetSplit val(SplitRole::validation, testing::synthetic_images(50, 3));
  for (std::size_t s = 0; s < train.size(); ++s) {
    const auto l = train.labels(s);
    CHECK((l.z1 == 1) == (l.z2 == 2));
  }

  SUBCASE("ceil division, last partial batch kept") {
    BatchStream bs(train, 128, 7);
    CHECK(bs.batches_per_epoch() == 3);
    bs.start_epoch(0);
    std::vector<std::size_t> sizes;
    std::set<std::size_t> ids;
    while (auto b = bs.next()) {
      sizes.push_back(b->size());
      ids.insert(b->sample_ids.begin(), b->sample_ids.end());
      CHECK(b->nodes.size() == 4);
      CHECK(b->nodes[0].shape() == Shape{b->size(), 14, 14, 1});
    }
    CHECK(sizes == std::vector<std::size_t>{128, 128, 44});
    CHECK(ids.size() == 300);
  }
  SUBCASE("whole validation split in one batch, fixed order") {
    BatchStream bs(val, 10000, 1);
    CHECK(bs.batches_per_epoch() == 1);
    bs.start_epoch(0);
    auto b = bs.next();
    REQUIRE(b);
    for (std::size_t i = 0; i < b->size(); ++i) CHECK(b->sample_ids[i] == i);
    CHECK_FALSE(bs.next());
  }
  SUBCASE("same seed and epoch give identical batches; epochs reshuffle") {
    auto order = [&](std::uint64_t seed, std::size_t epoch) {
      BatchStream bs(train, 64, seed);
      bs.start_epoch(epoch);
      std::vector<std::size_t> ids;
      while (auto b = bs.next()) ids.insert(ids.end(), b->sample_ids.begin(), b->sample_ids.end());
      return ids;
    };
    CHECK(order(5, 0) == order(5, 0));
    CHECK(order(5, 0) != order(5, 1));
    CHECK(order(5, 0) != order(6, 0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(BatchStream(train, 0, 1), ValidationError);
    CHECK_THROWS_AS(BatchStream(DatasetSplit{}, 8, 1), ValidationError);
  }
  SUBCASE("rotation: angles bounded, validation fixed, training resampled per epoch") {
    RotationSettings r;
    r.enabled = true;
    const auto rt = train.with_rotation(r), rv = val.with_rotation(r);
    for (std::size_t s = 0; s < 50; ++s) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double a = rt.angle(s, k, 11, 0);
        CHECK(std::abs(a) <= 30.0);
        CHECK(rv.angle(s, k, 11, 0) == rv.angle(s, k, 99, 5));
      }
    }
    CHECK(rt.angle(0, 0, 11, 0) != rt.angle(0, 0, 11, 1));
    const auto o1 = rv.observation(3, 2, 0, 0), o2 = rv.observation(3, 2, 0, 0);
    CHECK(o1.pixels == o2.pixels);
    const auto plain = val.observation(3, 2, 0, 0);
    CHECK(plain.pixels != o1.pixels);
    for (float v : o1.pixels.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("dataset from a directory of IDX files") {
  const auto dir = testing::scratch_dir("mnistdir");
  CHECK_THROWS_AS(load_dataset(dir), IoError);
  std::vector<std::uint8_t> px(3 * 784, 128);
  const auto f = mnist_files(dir);
  testing::write_file(f.train_images, testing::idx_images(2051, 3, px));
  testing::write_file(f.train_labels, testing::idx_labels(2049, {1, 2, 3}));
  testing::write_file(f.test_images, testing::idx_images(2051, 3, px));
  testing::write_file(f.test_labels, testing::idx_labels(2049, {4, 5, 2}));
  const auto d = load_dataset(dir);
  CHECK(d.train.size() == 3);
  CHECK(d.validation.role() == SplitRole::validation);
  CHECK(d.validation.labels(2) == SemanticLabels{1, 2});
}
