#include "lear/mnist.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "lear/errors.hpp"

namespace lear {

namespace {

std::uint32_t read_u32_be(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("idx: truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

struct IdxImages {
  std::uint32_t count, rows, cols;
  std::vector<unsigned char> pixels;
};

IdxImages read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("idx: cannot open " + path);
  const std::uint32_t magic = read_u32_be(in);
  if (magic != 0x00000803u)
    throw DataError("idx: bad image magic in " + path);
  IdxImages d;
  d.count = read_u32_be(in);
  d.rows = read_u32_be(in);
  d.cols = read_u32_be(in);
  d.pixels.resize(static_cast<std::size_t>(d.count) * d.rows * d.cols);
  in.read(reinterpret_cast<char*>(d.pixels.data()),
          static_cast<std::streamsize>(d.pixels.size()));
  if (!in) throw DataError("idx: truncated image data in " + path);
  return d;
}

std::vector<unsigned char> read_idx_labels(const std::string& path, std::uint32_t expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("idx: cannot open " + path);
  const std::uint32_t magic = read_u32_be(in);
  if (magic != 0x00000801u)
    throw DataError("idx: bad label magic in " + path);
  const std::uint32_t count = read_u32_be(in);
  if (count != expect) throw DataError("idx: image/label count mismatch in " + path);
  std::vector<unsigned char> labels(count);
  in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count));
  if (!in) throw DataError("idx: truncated label data in " + path);
  return labels;
}

}  // namespace

Dataset ingest_idx_pair(const std::string& images_path, const std::string& labels_path,
                        const std::string& id_prefix) {
  IdxImages img = read_idx_images(images_path);
  auto labels = read_idx_labels(labels_path, img.count);

  unsigned char lo = 255, hi = 0;
  for (auto p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  const float span = hi > lo ? static_cast<float>(hi - lo) : 1.0f;

  Dataset ds;
  ds.domain = DomainTag::planar2d;
  ds.num_classes = 10;
  ds.samples.reserve(img.count);
  const std::size_t per = static_cast<std::size_t>(img.rows) * img.cols;
  for (std::uint32_t i = 0; i < img.count; ++i) {
    LabeledSample s;
    s.image.domain = DomainTag::planar2d;
    s.image.values = Tensor<float>({img.rows, img.cols, 1});
    const unsigned char* src = img.pixels.data() + static_cast<std::size_t>(i) * per;
    for (std::size_t p = 0; p < per; ++p)
      s.image.values[static_cast<std::int64_t>(p)] =
          (static_cast<float>(src[p]) - static_cast<float>(lo)) / span;
    if (labels[i] > 9) throw DataError("idx: label out of range");
    s.label = one_hot(labels[i], 10);
    s.id = id_prefix + std::to_string(i);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

MnistData ingest_mnist(const std::string& dir) {
  MnistData d;
  d.train = ingest_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                            "train");
  d.test =
      ingest_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", "test");
  return d;
}

}  // namespace lear
