#include "lear/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lear/errors.hpp"

namespace lear {

RgbImage RgbImage::blank(int w, int h, unsigned char value) {
  RgbImage img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<std::size_t>(w) * h * 3, value);
  return img;
}

void write_png(const std::string& path, const RgbImage& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DataError("cannot write png: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw DataError("png encoding failed: " + path);
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() +
                                             static_cast<std::size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

float percentile_abs(const Tensor<float>& t, double pct) {
  std::vector<float> mag(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(t[i]);
  std::sort(mag.begin(), mag.end());
  const auto idx = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(mag.size() - 1),
                       std::floor(pct / 100.0 * static_cast<double>(mag.size() - 1) + 0.5)));
  const float v = mag[idx];
  return v > 0 ? v : 1e-6f;
}

RgbImage render_grayscale(const Tensor<float>& img, float lo, float hi) {
  if (img.rank() != 3 || img.dim(2) != 1) throw ShapeError("render_grayscale: need [H,W,1]");
  const int H = static_cast<int>(img.dim(0)), W = static_cast<int>(img.dim(1));
  RgbImage out = RgbImage::blank(W, H);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float v = (img[static_cast<std::int64_t>(y) * W + x] - lo) / span;
      v = std::min(std::max(v, 0.0f), 1.0f);
      const auto b = static_cast<unsigned char>(std::lround(v * 255.0f));
      auto* px = &out.rgb[(static_cast<std::size_t>(y) * W + x) * 3];
      px[0] = px[1] = px[2] = b;
    }
  return out;
}

namespace {

void diverging_color(float v, unsigned char* px) {
  // v in [-1,1]; blue for subtraction, white at zero, yellow->red for addition
  v = std::min(std::max(v, -1.0f), 1.0f);
  float r, g, b;
  if (v < 0) {
    const float t = -v;
    r = 255 + t * (59 - 255);
    g = 255 + t * (76 - 255);
    b = 255 + t * (192 - 255);
  } else if (v < 0.5f) {
    const float t = v * 2;
    r = 255;
    g = 255 + t * (221 - 255);
    b = 255 + t * (0 - 255);
  } else {
    const float t = (v - 0.5f) * 2;
    r = 255 + t * (180 - 255);
    g = 221 + t * (4 - 221);
    b = 0 + t * (38 - 0);
  }
  px[0] = static_cast<unsigned char>(std::lround(r));
  px[1] = static_cast<unsigned char>(std::lround(g));
  px[2] = static_cast<unsigned char>(std::lround(b));
}

}  // namespace

RgbImage render_diverging(const Tensor<float>& map, float limit) {
  if (map.rank() != 3 || map.dim(2) != 1) throw ShapeError("render_diverging: need [H,W,1]");
  const int H = static_cast<int>(map.dim(0)), W = static_cast<int>(map.dim(1));
  RgbImage out = RgbImage::blank(W, H);
  const float inv = limit > 0 ? 1.0f / limit : 1.0f;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      diverging_color(map[static_cast<std::int64_t>(y) * W + x] * inv,
                      &out.rgb[(static_cast<std::size_t>(y) * W + x) * 3]);
  return out;
}

RgbImage hstack(const std::vector<RgbImage>& panels, int gap) {
  int H = 0, W = 0;
  for (const auto& p : panels) {
    H = std::max(H, p.height);
    W += p.width;
  }
  W += gap * (static_cast<int>(panels.size()) - 1);
  RgbImage out = RgbImage::blank(W, H);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y)
      std::copy(p.rgb.begin() + static_cast<std::ptrdiff_t>(y) * p.width * 3,
                p.rgb.begin() + static_cast<std::ptrdiff_t>(y + 1) * p.width * 3,
                out.rgb.begin() + (static_cast<std::ptrdiff_t>(y) * W + x0) * 3);
    x0 += p.width + gap;
  }
  return out;
}

RgbImage vstack(const std::vector<RgbImage>& panels, int gap) {
  int H = 0, W = 0;
  for (const auto& p : panels) {
    W = std::max(W, p.width);
    H += p.height;
  }
  H += gap * (static_cast<int>(panels.size()) - 1);
  RgbImage out = RgbImage::blank(W, H);
  int y0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y)
      std::copy(p.rgb.begin() + static_cast<std::ptrdiff_t>(y) * p.width * 3,
                p.rgb.begin() + static_cast<std::ptrdiff_t>(y + 1) * p.width * 3,
                out.rgb.begin() + (static_cast<std::ptrdiff_t>(y0 + y) * W) * 3);
    y0 += p.height + gap;
  }
  return out;
}

std::vector<Tensor<float>> mid_slices(const Tensor<float>& volume) {
  if (volume.rank() != 4 || volume.dim(3) != 1) throw ShapeError("mid_slices: need [X,Y,Z,1]");
  const std::int64_t X = volume.dim(0), Y = volume.dim(1), Z = volume.dim(2);
  Tensor<float> axial({X, Y, 1});  // z = Z/2
  for (std::int64_t x = 0; x < X; ++x)
    for (std::int64_t y = 0; y < Y; ++y) axial[x * Y + y] = volume[(x * Y + y) * Z + Z / 2];
  Tensor<float> coronal({X, Z, 1});  // y = Y/2
  for (std::int64_t x = 0; x < X; ++x)
    for (std::int64_t z = 0; z < Z; ++z) coronal[x * Z + z] = volume[(x * Y + Y / 2) * Z + z];
  Tensor<float> sagittal({Y, Z, 1});  // x = X/2
  for (std::int64_t y = 0; y < Y; ++y)
    for (std::int64_t z = 0; z < Z; ++z) sagittal[y * Z + z] = volume[((X / 2) * Y + y) * Z + z];
  return {axial, coronal, sagittal};
}

namespace {

RgbImage upscale(const RgbImage& img, int factor) {
  if (factor <= 1) return img;
  RgbImage out = RgbImage::blank(img.width * factor, img.height * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const auto* src = &img.rgb[(static_cast<std::size_t>(y / factor) * img.width +
                                  static_cast<std::size_t>(x / factor)) * 3];
      auto* dst = &out.rgb[(static_cast<std::size_t>(y) * out.width + x) * 3];
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  return out;
}

}  // namespace

RgbImage explain_grid(const Tensor<float>& input, const Tensor<float>& map,
                      const Tensor<float>& transformed, DomainTag domain, int up) {
  const float limit = percentile_abs(map, 99.0);
  auto gray_bounds = [](const Tensor<float>& t) {
    float lo = t[0], hi = t[0];
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      lo = std::min(lo, t[i]);
      hi = std::max(hi, t[i]);
    }
    return std::pair<float, float>(lo, hi);
  };
  auto [ilo, ihi] = gray_bounds(input);

  if (domain == DomainTag::planar2d) {
    auto a = upscale(render_grayscale(input, ilo, ihi), up);
    auto b = upscale(render_diverging(map, limit), up);
    auto c = upscale(render_grayscale(transformed, ilo, ihi), up);
    return hstack({a, b, c});
  }
  auto render_volume_row = [&](const Tensor<float>& v, bool diverging) {
    auto slices = mid_slices(v);
    std::vector<RgbImage> panels;
    for (auto& s : slices)
      panels.push_back(upscale(
          diverging ? render_diverging(s, limit) : render_grayscale(s, ilo, ihi), up));
    return hstack(panels);
  };
  return vstack({render_volume_row(input, false), render_volume_row(map, true),
                 render_volume_row(transformed, false)});
}

}  // namespace lear
