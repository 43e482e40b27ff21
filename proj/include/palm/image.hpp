#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "palm/errors.hpp"
#include "palm/landmarks.hpp"
#include "palm/tensor.hpp"

namespace palm {

// Planar float image, values nominally in [0,1], layout CHW.
struct FloatImage {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  static FloatImage make(int c, int h, int w, float fill = 0.f) {
    FloatImage img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.data.assign(static_cast<size_t>(c) * h * w, fill);
    return img;
  }
  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  size_t plane() const { return static_cast<size_t>(height) * width; }
};

// Interleaved 8-bit image as stored on disk.
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> data;  // HWC
};

inline ImageU8 quantize(const FloatImage& img) {
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = img.channels;
  out.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        out.data[i++] = static_cast<unsigned char>(std::lround(v * 255.f));
      }
  return out;
}

inline FloatImage dequantize(const ImageU8& img) {
  FloatImage out = FloatImage::make(img.channels, img.height, img.width);
  size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = static_cast<float>(img.data[i++]) / 255.f;
  return out;
}

// ---- PNG / PGM --------------------------------------------------------------

inline void write_png(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: only 1 or 3 channels supported");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("png write failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageU8 read_png(const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw DataError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DataError("png read failed: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w, h;
  int bit_depth, color_type;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int channels = png_get_channels(png, info);
  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.channels = channels;
  img.data.resize(static_cast<size_t>(w) * h * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.data.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1) throw DataError("write_pgm: grayscale only");
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot open for writing: " + path.string());
  std::fprintf(fp, "P5\n%d %d\n255\n", img.width, img.height);
  std::fwrite(img.data.data(), 1, img.data.size(), fp);
  std::fclose(fp);
}

inline ImageU8 read_pgm(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw DataError("cannot open image: " + path.string());
  char magic[3] = {0};
  int w = 0, h = 0, maxv = 0;
  if (std::fscanf(fp, "%2s %d %d %d", magic, &w, &h, &maxv) != 4 || std::strcmp(magic, "P5") != 0 || maxv != 255) {
    std::fclose(fp);
    throw DataError("not an 8-bit P5 PGM: " + path.string());
  }
  std::fgetc(fp);  // single whitespace after maxval
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.data.resize(static_cast<size_t>(w) * h);
  size_t got = std::fread(img.data.data(), 1, img.data.size(), fp);
  std::fclose(fp);
  if (got != img.data.size()) throw DataError("truncated PGM: " + path.string());
  return img;
}

// Reads by extension; grayscale is replicated to 3 channels.
inline FloatImage read_image_3ch(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing image file: " + path.string());
  ImageU8 raw = path.extension() == ".pgm" ? read_pgm(path) : read_png(path);
  FloatImage img = dequantize(raw);
  if (img.channels == 3) return img;
  if (img.channels != 1) throw DataError("unsupported channel count in " + path.string());
  FloatImage out = FloatImage::make(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), out.data.begin() + c * out.plane());
  return out;
}

// ---- Geometry ---------------------------------------------------------------

inline float bilinear_tap(const FloatImage& img, int c, double px, double py) {
  int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
  double fx = px - x0, fy = py - y0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    int yy = y0 + dy;
    if (yy < 0 || yy >= img.height) continue;
    double wy = dy ? fy : 1.0 - fy;
    for (int dx = 0; dx <= 1; ++dx) {
      int xx = x0 + dx;
      if (xx < 0 || xx >= img.width) continue;
      acc += wy * (dx ? fx : 1.0 - fx) * img.at(c, yy, xx);
    }
  }
  return static_cast<float>(acc);
}

// Align-corners bilinear resize (matches the sampler's coordinate rule).
inline FloatImage resize_bilinear(const FloatImage& img, int out_h, int out_w) {
  if (img.width < 2 || img.height < 2) throw DimensionError("resize_bilinear: source axes must be >= 2");
  FloatImage out = FloatImage::make(img.channels, out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    double py = out_h > 1 ? static_cast<double>(y) * (img.height - 1) / (out_h - 1) : 0.0;
    for (int x = 0; x < out_w; ++x) {
      double px = out_w > 1 ? static_cast<double>(x) * (img.width - 1) / (out_w - 1) : 0.0;
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = bilinear_tap(img, c, px, py);
    }
  }
  return out;
}

// Exact horizontal mirror: out(x,y) = in(W-1-x, y).
inline FloatImage flip_horizontal(const FloatImage& img) {
  FloatImage out = FloatImage::make(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

// Exact k*90-degree rotation; k=1 maps input pixel (x,y) to (y, W-1-x).
inline FloatImage rotate90k(const FloatImage& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  FloatImage out = k == 2 ? FloatImage::make(img.channels, img.height, img.width)
                          : FloatImage::make(img.channels, img.width, img.height);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (k == 1)
          out.at(c, img.width - 1 - x, y) = img.at(c, y, x);
        else if (k == 2)
          out.at(c, img.height - 1 - y, img.width - 1 - x) = img.at(c, y, x);
        else
          out.at(c, x, img.height - 1 - y) = img.at(c, y, x);
      }
  return out;
}

// Forward pixel map p' = A*(p-c) + c + t; the image is resampled through the
// inverse with zero fill.
struct Affine2 {
  double a11 = 1, a12 = 0, a21 = 0, a22 = 1;  // linear part
  double tx = 0, ty = 0;                      // translation, pixels

  Vec2 apply(const Vec2& p, const Vec2& center) const {
    double dx = p.x - center.x, dy = p.y - center.y;
    return {center.x + a11 * dx + a12 * dy + tx, center.y + a21 * dx + a22 * dy + ty};
  }
  Affine2 inverse() const {
    double det = a11 * a22 - a12 * a21;
    if (std::abs(det) < 1e-12) throw NumericError("affine resample: singular linear part");
    Affine2 inv;
    inv.a11 = a22 / det;
    inv.a12 = -a12 / det;
    inv.a21 = -a21 / det;
    inv.a22 = a11 / det;
    // translation handled by the caller through apply() composition
    return inv;
  }

  static Affine2 rotation_deg(double deg) {
    double r = deg * M_PI / 180.0;
    // +90 deg maps pixel (x,y) to (y, W-1-x) about the center
    return {std::cos(r), std::sin(r), -std::sin(r), std::cos(r), 0, 0};
  }
  static Affine2 scaling(double s) { return {s, 0, 0, s, 0, 0}; }
  static Affine2 translation(double tx, double ty) { return {1, 0, 0, 1, tx, ty}; }
};

inline FloatImage affine_resample(const FloatImage& img, const Affine2& fwd) {
  Vec2 c{(img.width - 1) * 0.5, (img.height - 1) * 0.5};
  Affine2 inv = fwd.inverse();
  FloatImage out = FloatImage::make(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double dx = x - c.x - fwd.tx, dy = y - c.y - fwd.ty;
      double sx = c.x + inv.a11 * dx + inv.a12 * dy;
      double sy = c.y + inv.a21 * dx + inv.a22 * dy;
      if (sx < -1 || sx > img.width || sy < -1 || sy > img.height) continue;  // zero fill
      for (int ch = 0; ch < img.channels; ++ch) out.at(ch, y, x) = bilinear_tap(img, ch, sx, sy);
    }
  return out;
}

inline LandmarkSet affine_transform_landmarks_px(const LandmarkSet& px, const Affine2& fwd, int width, int height) {
  Vec2 c{(width - 1) * 0.5, (height - 1) * 0.5};
  LandmarkSet out;
  for (int i = 0; i < 9; ++i) out[i] = fwd.apply(px[i], c);
  return out;
}

// ---- Tensor bridges ---------------------------------------------------------

template <typename T>
Tensor<T> image_to_tensor(const FloatImage& img) {
  std::vector<T> v(img.data.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.data[i]);
  return Tensor<T>({img.channels, img.height, img.width}, std::move(v));
}

template <typename T>
FloatImage tensor_to_image(const Tensor<T>& t) {
  if (t.ndim() != 3) throw DimensionError("tensor_to_image: expected CxHxW");
  FloatImage img = FloatImage::make(t.dim(0), t.dim(1), t.dim(2));
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(t.values()[i]);
  return img;
}

inline std::array<float, 3> mean_rgb(const std::vector<const FloatImage*>& images) {
  std::array<double, 3> acc{0, 0, 0};
  size_t count = 0;
  for (const auto* img : images) {
    for (int c = 0; c < 3; ++c)
      for (size_t p = 0; p < img->plane(); ++p) acc[static_cast<size_t>(c)] += img->data[c * img->plane() + p];
    count += img->plane();
  }
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) out[static_cast<size_t>(c)] = count ? static_cast<float>(acc[static_cast<size_t>(c)] / count) : 0.f;
  return out;
}

}  // namespace palm
