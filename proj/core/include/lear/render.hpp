#pragma once

#include <string>
#include <vector>

#include "lear/data.hpp"
#include "lear/tensor.hpp"

namespace lear {

struct RgbImage {
  int width = 0, height = 0;
  std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel

  static RgbImage blank(int w, int h, unsigned char value = 255);
};

void write_png(const std::string& path, const RgbImage& img);

/// 99th-percentile style limit of |t| (symmetric color scale about 0).
float percentile_abs(const Tensor<float>& t, double pct);

/// Grayscale panel from a [H,W,1] tensor, values clamped to [lo,hi].
RgbImage render_grayscale(const Tensor<float>& img, float lo, float hi);

/// Signed map panel: blue (negative) -> white (zero) -> yellow/red (positive),
/// symmetric about 0 with the given limit.
RgbImage render_diverging(const Tensor<float>& map, float limit);

RgbImage hstack(const std::vector<RgbImage>& panels, int gap = 2);
RgbImage vstack(const std::vector<RgbImage>& panels, int gap = 2);

/// Mid-slices of a [X,Y,Z,1] volume: axial, coronal, sagittal as [H,W,1].
std::vector<Tensor<float>> mid_slices(const Tensor<float>& volume);

/// Three-panel explanation grid: input, counterfactual map, transformed
/// image. Volumetric inputs render one row of three mid-slices per panel.
RgbImage explain_grid(const Tensor<float>& input, const Tensor<float>& map,
                      const Tensor<float>& transformed, DomainTag domain, int upscale = 4);

}  // namespace lear
