#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ntklab/datasets.hpp"
#include "ntklab/rng.hpp"

using namespace ntklab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "ntklab_idx_fixtures") { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

/// Two 2x2 images, labels 7 and 3, written byte by byte.
void write_fixture_pair(const TempDir& dir) {
  IdxFile images;
  images.magic = kIdxImagesMagic;
  images.dims = {2, 2, 2};
  images.payload = {0, 51, 102, 153, 204, 255, 10, 20};
  write_idx(dir.file("images"), images);

  IdxFile labels;
  labels.magic = kIdxLabelsMagic;
  labels.dims = {2};
  labels.payload = {7, 3};
  write_idx(dir.file("labels"), labels);
}

}  // namespace

TEST_CASE("teacher-matching learner has zero loss on noiseless data") {
  SyntheticSpec spec;
  spec.n = 40;
  spec.d = 6;
  spec.teacher = MlpArch{3, 8, 6};
  spec.noise_std = 0.0;
  spec.seed = 9;
  const LabeledSet data = gen_synthetic(spec);

  // rebuild the teacher exactly as the generator derives it
  const MlpModel teacher =
      init_params(spec.teacher, {InitKind::He, CounterRng(spec.seed).fork(1).key()});
  CHECK(loss(teacher, data) == 0.0);
}

TEST_CASE("gen_synthetic is bit-deterministic per seed") {
  SyntheticSpec spec;
  spec.n = 25;
  spec.d = 4;
  spec.teacher = MlpArch{2, 1, 4};
  spec.noise_std = 0.3;
  spec.seed = 1234;
  const LabeledSet a = gen_synthetic(spec);
  const LabeledSet b = gen_synthetic(spec);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);

  spec.seed = 1235;
  const LabeledSet c = gen_synthetic(spec);
  CHECK(a.x != c.x);
}

TEST_CASE("linear teacher produces exactly X w") {
  SyntheticSpec spec;
  spec.n = 100;
  spec.d = 16;
  spec.teacher = MlpArch{2, 1, 16};
  spec.noise_std = 0.0;
  spec.seed = 5;
  const LabeledSet data = gen_synthetic(spec);
  const MlpModel teacher =
      init_params(spec.teacher, {InitKind::He, CounterRng(spec.seed).fork(1).key()});
  CHECK((data.y - data.x * teacher.theta).norm() == 0.0);
}

TEST_CASE("gen_synthetic validates its spec") {
  SyntheticSpec spec;
  spec.d = 4;
  spec.teacher = MlpArch{2, 1, 5};  // teacher expects a different input width
  CHECK_THROWS_AS(gen_synthetic(spec), ShapeMismatch);
}

TEST_CASE("idx fixture loads with mapped labels and scaled pixels") {
  TempDir dir;
  write_fixture_pair(dir);
  const LabeledSet data = load_idx_pair(dir.file("images"), dir.file("labels"), 7, 3);
  REQUIRE(data.n() == 2);
  CHECK(data.y[0] == 1.0);
  CHECK(data.y[1] == -1.0);
  CHECK(data.x(0, 0) == 0.0);
  CHECK(data.x(0, 1) == doctest::Approx(51.0 / 255.0));
  CHECK(data.x(1, 1) == 1.0);
  CHECK(data.x.cols() == 4);
}

TEST_CASE("idx loader truncates at max_n after class filtering") {
  TempDir dir;
  write_fixture_pair(dir);
  const LabeledSet data = load_idx_pair(dir.file("images"), dir.file("labels"), 7, 3, 1);
  REQUIRE(data.n() == 1);
  CHECK(data.y[0] == 1.0);  // file order kept
}

TEST_CASE("idx loader rejects wrong magic words") {
  TempDir dir;
  IdxFile bogus;
  bogus.magic = kIdxImagesMagic;
  bogus.dims = {1, 1, 1};
  bogus.payload = {42};
  write_idx(dir.file("images"), bogus);
  // corrupt the magic in place: 0x00000802 is neither images nor labels
  {
    std::ofstream out(dir.file("bad"), std::ios::binary);
    const unsigned char header[8] = {0, 0, 8, 2, 0, 0, 0, 1};
    out.write(reinterpret_cast<const char*>(header), 8);
    out.put('\0');
  }
  CHECK_THROWS_AS(read_idx(dir.file("bad")), BadMagic);

  // a labels file in the images slot is also a magic failure
  IdxFile labels;
  labels.magic = kIdxLabelsMagic;
  labels.dims = {1};
  labels.payload = {7};
  write_idx(dir.file("labels"), labels);
  CHECK_THROWS_AS(load_idx_pair(dir.file("labels"), dir.file("labels"), 7, 3), BadMagic);
}

TEST_CASE("idx loader detects truncation and count mismatches") {
  TempDir dir;
  write_fixture_pair(dir);

  {
    std::ofstream out(dir.file("short"), std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    out.write(reinterpret_cast<const char*>(header), 16);
    out.put('\1');  // 1 of 8 payload bytes
  }
  CHECK_THROWS_AS(read_idx(dir.file("short")), TruncatedFile);

  IdxFile labels3;
  labels3.magic = kIdxLabelsMagic;
  labels3.dims = {3};
  labels3.payload = {7, 3, 7};
  write_idx(dir.file("labels3"), labels3);
  CHECK_THROWS_AS(load_idx_pair(dir.file("images"), dir.file("labels3"), 7, 3), CountMismatch);
}

TEST_CASE("idx loader reports absent classes before truncation") {
  TempDir dir;
  write_fixture_pair(dir);
  CHECK_THROWS_AS(load_idx_pair(dir.file("images"), dir.file("labels"), 7, 9), ClassAbsent);
  CHECK_THROWS_AS(load_idx_pair(dir.file("images"), dir.file("labels"), 9, 3), ClassAbsent);
}

TEST_CASE("idx round-trips a dataset-derived fixture") {
  TempDir dir;
  write_fixture_pair(dir);
  const LabeledSet data = load_idx_pair(dir.file("images"), dir.file("labels"), 7, 3);

  // rebuild IDX bytes from the loaded set and reload
  IdxFile images;
  images.magic = kIdxImagesMagic;
  images.dims = {static_cast<std::uint32_t>(data.n()), 2, 2};
  for (Index i = 0; i < data.n(); ++i)
    for (Index j = 0; j < data.x.cols(); ++j)
      images.payload.push_back(static_cast<std::uint8_t>(std::lround(data.x(i, j) * 255.0)));
  IdxFile labels;
  labels.magic = kIdxLabelsMagic;
  labels.dims = {static_cast<std::uint32_t>(data.n())};
  for (Index i = 0; i < data.n(); ++i)
    labels.payload.push_back(data.y[i] > 0 ? 7 : 3);

  write_idx(dir.file("images_rt"), images);
  write_idx(dir.file("labels_rt"), labels);
  const LabeledSet reloaded = load_idx_pair(dir.file("images_rt"), dir.file("labels_rt"), 7, 3);
  CHECK(reloaded.x == data.x);
  CHECK(reloaded.y == data.y);
}
