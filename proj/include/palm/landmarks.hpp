#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "palm/errors.hpp"
#include "palm/tensor.hpp"

namespace palm {

struct Vec2 {
  double x = 0.0, y = 0.0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 midpoint(const Vec2& a, const Vec2& b) { return {(a.x + b.x) * 0.5, (a.y + b.y) * 0.5}; }

// Nine labelled points L1..L9 stored at indices 0..8, normalized to [-1,1]
// in the owning image's frame. L1/L3 at the finger bases' outer corners,
// L7/L9 at the palm-wrist border, L4/L5/L6/L8 derived midpoints.
struct LandmarkSet {
  std::array<Vec2, 9> p{};

  Vec2& operator[](int i) { return p[static_cast<size_t>(i)]; }
  const Vec2& operator[](int i) const { return p[static_cast<size_t>(i)]; }
};

// Fills L4 = mid(L1,L7), L8 = mid(L7,L9), L6 = mid(L3,L9), then L5 = mid(L8,L2).
inline LandmarkSet derive_full_set(const Vec2& l1, const Vec2& l2, const Vec2& l3, const Vec2& l7, const Vec2& l9) {
  LandmarkSet s;
  s[0] = l1;
  s[1] = l2;
  s[2] = l3;
  s[6] = l7;
  s[8] = l9;
  s[3] = midpoint(l1, l7);
  s[7] = midpoint(l7, l9);
  s[5] = midpoint(l3, l9);
  s[4] = midpoint(s[7], l2);
  return s;
}

// Pixel center convention matching the sampler: 0 -> -1, W-1 -> +1.
inline double normalize_coord(double px, int extent) {
  if (extent < 2) throw DimensionError("normalize_coord: image extent must be >= 2");
  return 2.0 * px / (extent - 1) - 1.0;
}
inline double denormalize_coord(double xn, int extent) {
  if (extent < 2) throw DimensionError("denormalize_coord: image extent must be >= 2");
  return (xn + 1.0) * 0.5 * (extent - 1);
}

inline LandmarkSet normalize_landmarks(const LandmarkSet& px, int width, int height) {
  LandmarkSet out;
  for (int i = 0; i < 9; ++i) out[i] = {normalize_coord(px[i].x, width), normalize_coord(px[i].y, height)};
  return out;
}
inline LandmarkSet denormalize_landmarks(const LandmarkSet& nm, int width, int height) {
  LandmarkSet out;
  for (int i = 0; i < 9; ++i) out[i] = {denormalize_coord(nm[i].x, width), denormalize_coord(nm[i].y, height)};
  return out;
}

// Mirror relabeling: x -> -x and L1<->L3, L4<->L6, L7<->L9 so the flipped set
// stays a valid right-hand configuration.
inline LandmarkSet flip_landmarks(const LandmarkSet& s) {
  LandmarkSet out;
  for (int i = 0; i < 9; ++i) out[i] = {-s[i].x, s[i].y};
  std::swap(out.p[0], out.p[2]);
  std::swap(out.p[3], out.p[5]);
  std::swap(out.p[6], out.p[8]);
  return out;
}

// Mean point-to-point distance over the nine landmarks, divided by the
// normalized frame side (2.0), as a percentage.
inline double nme_percent(const LandmarkSet& pred, const LandmarkSet& gt) {
  double sum = 0.0;
  for (int i = 0; i < 9; ++i) sum += (pred[i] - gt[i]).norm();
  return 100.0 * (sum / 9.0) / 2.0;
}

template <typename T>
Tensor<T> landmarks_to_tensor(const LandmarkSet& s) {
  std::vector<T> v(18);
  for (int i = 0; i < 9; ++i) {
    v[2 * i] = static_cast<T>(s[i].x);
    v[2 * i + 1] = static_cast<T>(s[i].y);
  }
  return Tensor<T>({18}, std::move(v));
}

template <typename T>
LandmarkSet landmarks_from_span(const std::vector<T>& v, size_t offset = 0) {
  LandmarkSet s;
  for (int i = 0; i < 9; ++i) {
    s[i].x = static_cast<double>(v[offset + 2 * i]);
    s[i].y = static_cast<double>(v[offset + 2 * i + 1]);
  }
  return s;
}

// ---- CSV formats -----------------------------------------------------------
//
// 9-point landmark CSV:  path,x1,y1,...,x9,y9,space   (space: "norm" | "px")
// 5-point annotation CSV: path,x1,y1,x2,y2,x3,y3,x7,y7,x9,y9,space

struct LandmarkRow {
  std::string path;
  LandmarkSet lm;
  std::string space = "norm";
};

struct AnnotationRecord {
  std::string path;
  std::array<Vec2, 5> primary;  // L1, L2, L3, L7, L9 in pixels
  std::string mask_path;        // optional
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, int lineno) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(file + ":" + std::to_string(lineno) + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

inline void write_landmark_csv(const std::filesystem::path& path, const std::vector<LandmarkRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "path,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5,x6,y6,x7,y7,x8,y8,x9,y9,space\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.path;
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", r.lm[i].x, r.lm[i].y);
      out << buf;
    }
    out << "," << r.space << "\n";
  }
}

inline std::vector<LandmarkRow> read_landmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<LandmarkRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;  // header
    auto f = detail::split_csv_line(line);
    if (f.size() != 20)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 20 fields, got " +
                      std::to_string(f.size()));
    LandmarkRow r;
    r.path = f[0];
    for (int i = 0; i < 9; ++i) {
      r.lm[i].x = detail::parse_double(f[1 + 2 * i], path.string(), lineno);
      r.lm[i].y = detail::parse_double(f[2 + 2 * i], path.string(), lineno);
    }
    r.space = f[19];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_annotation_csv(const std::filesystem::path& path, const std::vector<AnnotationRecord>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "path,x1,y1,x2,y2,x3,y3,x7,y7,x9,y9,space\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.path;
    for (const auto& p : r.primary) {
      std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", p.x, p.y);
      out << buf;
    }
    out << ",px\n";
  }
}

inline std::vector<AnnotationRecord> read_annotation_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<AnnotationRecord> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 12)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 12 fields, got " +
                      std::to_string(f.size()));
    AnnotationRecord r;
    r.path = f[0];
    for (int i = 0; i < 5; ++i) {
      r.primary[i].x = detail::parse_double(f[1 + 2 * i], path.string(), lineno);
      r.primary[i].y = detail::parse_double(f[2 + 2 * i], path.string(), lineno);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace palm
