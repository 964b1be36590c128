#pragma once

#include <string>

#include "lear/data.hpp"

namespace lear {

struct MnistData {
  Dataset train;
  Dataset test;
};

/// Parses the big-endian IDX pair(s) in `dir` (magic 0x00000803 images,
/// 0x00000801 labels), min-max normalizes pixel values to [0,1], pairs
/// images with one-hot labels, and preserves the publisher train/test split.
MnistData ingest_mnist(const std::string& dir);

/// Single split (images + labels files given explicitly).
Dataset ingest_idx_pair(const std::string& images_path, const std::string& labels_path,
                        const std::string& id_prefix);

}  // namespace lear
