#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/net.hpp"
#include "ntklab/rng.hpp"

namespace ntklab {

/// Teacher-network regression data: standard normal inputs, targets from a
/// freshly initialized teacher model plus optional Gaussian noise.
struct SyntheticSpec {
  Index n = 100;
  Index d = 16;
  MlpArch teacher{2, 1, 16};
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

/// Deterministic in the seed: inputs, teacher weights and noise come from
/// fixed substreams of one counter RNG, so repeated calls are bit-identical.
inline LabeledSet gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.d < 1) throw ShapeMismatch("gen_synthetic: n and d must be >= 1");
  if (spec.teacher.in_dim != spec.d)
    throw ShapeMismatch("gen_synthetic: teacher in_dim != d");
  if (spec.noise_std < 0.0) throw Error("gen_synthetic: noise_std must be >= 0");

  CounterRng root(spec.seed);
  CounterRng xs = root.fork(0);
  LabeledSet data;
  data.x.resize(spec.n, spec.d);
  for (Index i = 0; i < spec.n; ++i)
    for (Index j = 0; j < spec.d; ++j) data.x(i, j) = xs.gaussian();

  const MlpModel teacher = init_params(spec.teacher, {InitKind::He, root.fork(1).key()});
  data.y = forward(teacher, data.x);
  if (spec.noise_std > 0.0) {
    CounterRng noise = root.fork(2);
    for (Index i = 0; i < spec.n; ++i) data.y[i] += spec.noise_std * noise.gaussian();
  }
  return data;
}

/// One IDX file: big-endian magic, big-endian 32-bit dimension sizes, raw
/// unsigned byte payload.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::istream& in) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFile("idx: header cut short");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                             std::uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Reads an images (0x00000803) or labels (0x00000801) file; any other
/// magic word is rejected.
inline IdxFile read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_idx: cannot open " + path);

  IdxFile file;
  file.magic = detail::read_be32(in);
  std::size_t ndims;
  if (file.magic == kIdxImagesMagic) {
    ndims = 3;
  } else if (file.magic == kIdxLabelsMagic) {
    ndims = 1;
  } else {
    throw BadMagic("read_idx: magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", file.magic);
      return std::string(buf);
    }() + " in " + path);
  }

  std::size_t count = 1;
  for (std::size_t k = 0; k < ndims; ++k) {
    file.dims.push_back(detail::read_be32(in));
    count *= file.dims.back();
  }
  file.payload.resize(count);
  if (!in.read(reinterpret_cast<char*>(file.payload.data()),
               static_cast<std::streamsize>(count)))
    throw TruncatedFile("read_idx: payload cut short in " + path);
  return file;
}

inline void write_idx(const std::string& path, const IdxFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_idx: cannot open " + path);
  detail::write_be32(out, file.magic);
  for (const auto d : file.dims) detail::write_be32(out, d);
  out.write(reinterpret_cast<const char*>(file.payload.data()),
            static_cast<std::streamsize>(file.payload.size()));
  if (!out) throw IoError("write_idx: write failed for " + path);
}

/// Builds a two-class regression set from an images/labels file pair:
/// keeps samples labeled class_a (target +1) or class_b (target -1) in
/// file order, scales pixels to [0, 1] by /255, and truncates to max_n
/// rows (0 keeps everything). Both classes must occur in the file before
/// truncation.
inline LabeledSet load_idx_pair(const std::string& images_path, const std::string& labels_path,
                                int class_a, int class_b, Index max_n = 0) {
  const IdxFile images = read_idx(images_path);
  const IdxFile labels = read_idx(labels_path);
  if (images.magic != kIdxImagesMagic)
    throw BadMagic("load_idx_pair: " + images_path + " is not an images file");
  if (labels.magic != kIdxLabelsMagic)
    throw BadMagic("load_idx_pair: " + labels_path + " is not a labels file");
  if (images.dims[0] != labels.dims[0])
    throw CountMismatch("load_idx_pair: " + std::to_string(images.dims[0]) + " images vs " +
                        std::to_string(labels.dims[0]) + " labels");

  const Index d = static_cast<Index>(images.dims[1]) * static_cast<Index>(images.dims[2]);
  std::vector<Index> keep;
  bool saw_a = false, saw_b = false;
  for (Index i = 0; i < static_cast<Index>(labels.dims[0]); ++i) {
    const int label = labels.payload[static_cast<std::size_t>(i)];
    if (label == class_a) saw_a = true;
    if (label == class_b) saw_b = true;
    if (label == class_a || label == class_b) keep.push_back(i);
  }
  if (!saw_a) throw ClassAbsent("load_idx_pair: class " + std::to_string(class_a) + " absent");
  if (!saw_b) throw ClassAbsent("load_idx_pair: class " + std::to_string(class_b) + " absent");
  if (max_n > 0 && static_cast<Index>(keep.size()) > max_n) keep.resize(static_cast<std::size_t>(max_n));

  LabeledSet data;
  data.x.resize(static_cast<Index>(keep.size()), d);
  data.y.resize(static_cast<Index>(keep.size()));
  for (Index row = 0; row < static_cast<Index>(keep.size()); ++row) {
    const Index i = keep[static_cast<std::size_t>(row)];
    const std::uint8_t* px = images.payload.data() + static_cast<std::size_t>(i) * d;
    for (Index j = 0; j < d; ++j) data.x(row, j) = static_cast<double>(px[j]) / 255.0;
    data.y[row] = labels.payload[static_cast<std::size_t>(i)] == class_a ? 1.0 : -1.0;
  }
  return data;
}

}  // namespace ntklab
