#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "palm/landmarks.hpp"
#include "palm/ops.hpp"
#include "palm/tensor.hpp"

namespace palm {

// Fixed ROI template: regular 3x3 lattice over [-1,1]^2, row-major, so L1 is
// the top-left corner of the palm template and L9 the bottom-right. The
// derived-midpoint identities of LandmarkSet hold exactly on this lattice.
struct TemplateGrid {
  static const std::array<Vec2, 9>& points() {
    static const std::array<Vec2, 9> pts = [] {
      std::array<Vec2, 9> p;
      for (int i = 0; i < 9; ++i) p[static_cast<size_t>(i)] = {static_cast<double>(i % 3 - 1), static_cast<double>(i / 3 - 1)};
      return p;
    }();
    return pts;
  }
};

// U(r) = r^2 log(r^2) expressed on the squared distance; U(0) = 0.
inline double tps_kernel_sq(double d2) { return d2 > 0.0 ? d2 * std::log(d2) : 0.0; }

// Regular output lattice spanning [-1,1] inclusive: corners land exactly on
// (+-1, +-1).
inline Vec2 roi_lattice_point(int i, int j, int h, int w) {
  return {w > 1 ? -1.0 + 2.0 * j / (w - 1) : 0.0, h > 1 ? -1.0 + 2.0 * i / (h - 1) : 0.0};
}

// Solved warp from ROI template coordinates to target coordinates.
// Side conditions sum(w) = 0, sum(w*tx) = 0, sum(w*ty) = 0 hold by
// construction of the augmented system.
struct TpsTransform {
  std::array<Vec2, 9> w{};  // nonlinear weights, one per control point
  std::array<Vec2, 3> a{};  // affine part: constant, x, y coefficients
  std::array<Vec2, 9> ctrl{};

  Vec2 apply(const Vec2& p) const {
    Vec2 out{a[0].x + a[1].x * p.x + a[2].x * p.y, a[0].y + a[1].y * p.x + a[2].y * p.y};
    for (int i = 0; i < 9; ++i) {
      Vec2 d = p - ctrl[static_cast<size_t>(i)];
      double u = tps_kernel_sq(d.x * d.x + d.y * d.y);
      out.x += w[static_cast<size_t>(i)].x * u;
      out.y += w[static_cast<size_t>(i)].y * u;
    }
    return out;
  }

  double max_bending_weight() const {
    double m = 0.0;
    for (const auto& wi : w) m = std::max({m, std::abs(wi.x), std::abs(wi.y)});
    return m;
  }
};

namespace detail {

// Augmented TPS matrix [[K + lambda*I, P],[P^T, 0]] for n control points.
inline Eigen::MatrixXd tps_system_matrix(const std::vector<Vec2>& ctrl, double lambda) {
  const int n = static_cast<int>(ctrl.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 3, n + 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Vec2 d = ctrl[static_cast<size_t>(i)] - ctrl[static_cast<size_t>(j)];
      M(i, j) = tps_kernel_sq(d.x * d.x + d.y * d.y);
    }
    M(i, i) += lambda;
    M(i, n) = M(n, i) = 1.0;
    M(i, n + 1) = M(n + 1, i) = ctrl[static_cast<size_t>(i)].x;
    M(i, n + 2) = M(n + 2, i) = ctrl[static_cast<size_t>(i)].y;
  }
  return M;
}

// Inverts the system, falling back to the ridge when the plain matrix is
// singular. The exact solve keeps warp(template_i) == target_i at double
// precision; the ridge is only a rescue for degenerate control points.
inline Eigen::MatrixXd tps_inverse(const std::vector<Vec2>& ctrl) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(tps_system_matrix(ctrl, 0.0));
  if (lu.isInvertible()) return lu.inverse();
  Eigen::FullPivLU<Eigen::MatrixXd> ridged(tps_system_matrix(ctrl, 1e-8));
  if (!ridged.isInvertible()) throw NumericError("tps: control-point system singular beyond ridge rescue");
  return ridged.inverse();
}

// Cached inverse for the fixed 9-point template; read-only after first use.
inline const Eigen::Matrix<double, 12, 12>& template_inverse() {
  static const Eigen::Matrix<double, 12, 12> inv = [] {
    std::vector<Vec2> ctrl(TemplateGrid::points().begin(), TemplateGrid::points().end());
    Eigen::Matrix<double, 12, 12> m = tps_inverse(ctrl);
    return m;
  }();
  return inv;
}

// Basis row per output pixel: [U(|p-t_1|), ..., U(|p-t_9|), 1, x, y].
// Cached per grid size; the warp is linear in (w, a) against this basis.
inline const Eigen::MatrixXd& grid_basis(int h, int w) {
  static std::map<std::pair<int, int>, std::unique_ptr<Eigen::MatrixXd>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(h, w);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto basis = std::make_unique<Eigen::MatrixXd>(h * w, 12);
  const auto& tpl = TemplateGrid::points();
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      Vec2 pt = roi_lattice_point(i, j, h, w);
      double x = pt.x, y = pt.y;
      int r = i * w + j;
      for (int k = 0; k < 9; ++k) {
        double dx = x - tpl[static_cast<size_t>(k)].x, dy = y - tpl[static_cast<size_t>(k)].y;
        (*basis)(r, k) = tps_kernel_sq(dx * dx + dy * dy);
      }
      (*basis)(r, 9) = 1.0;
      (*basis)(r, 10) = x;
      (*basis)(r, 11) = y;
    }
  }
  auto& ref = *basis;
  cache[key] = std::move(basis);
  return ref;
}

}  // namespace detail

// Direct path: builds and factorizes the system for arbitrary control points.
inline TpsTransform solve_tps_direct(const std::array<Vec2, 9>& ctrl, const std::array<Vec2, 9>& targets) {
  std::vector<Vec2> c(ctrl.begin(), ctrl.end());
  Eigen::MatrixXd inv = detail::tps_inverse(c);
  Eigen::Matrix<double, 12, 2> rhs = Eigen::Matrix<double, 12, 2>::Zero();
  for (int i = 0; i < 9; ++i) {
    rhs(i, 0) = targets[static_cast<size_t>(i)].x;
    rhs(i, 1) = targets[static_cast<size_t>(i)].y;
  }
  Eigen::Matrix<double, 12, 2> sol = inv * rhs;
  TpsTransform t;
  t.ctrl = ctrl;
  for (int i = 0; i < 9; ++i) t.w[static_cast<size_t>(i)] = {sol(i, 0), sol(i, 1)};
  for (int i = 0; i < 3; ++i) t.a[static_cast<size_t>(i)] = {sol(9 + i, 0), sol(9 + i, 1)};
  return t;
}

// Cached path for the fixed template. Targets appear linearly on the right
// hand side, so downstream derivatives w.r.t. them are rows of the cached
// inverse.
inline TpsTransform solve_tps(const LandmarkSet& targets) {
  const auto& inv = detail::template_inverse();
  Eigen::Matrix<double, 12, 2> rhs = Eigen::Matrix<double, 12, 2>::Zero();
  for (int i = 0; i < 9; ++i) {
    rhs(i, 0) = targets[i].x;
    rhs(i, 1) = targets[i].y;
  }
  Eigen::Matrix<double, 12, 2> sol = inv * rhs;
  TpsTransform t;
  t.ctrl = TemplateGrid::points();
  for (int i = 0; i < 9; ++i) t.w[static_cast<size_t>(i)] = {sol(i, 0), sol(i, 1)};
  for (int i = 0; i < 3; ++i) t.a[static_cast<size_t>(i)] = {sol(9 + i, 0), sol(9 + i, 1)};
  return t;
}

// ---- Differentiable ops ----------------------------------------------------

// targets: [18] or [9,2] -> [12,2] stacked (w rows 0..8, a rows 9..11).
template <typename T>
Tensor<T> solve_tps_op(const Tensor<T>& targets) {
  if (targets.numel() != 18)
    throw DimensionError("solve_tps: expected 9 (x,y) target points, got " + shape_str(targets.shape()));
  const auto& inv = detail::template_inverse();
  std::vector<T> out(24);
  for (int r = 0; r < 12; ++r) {
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < 9; ++i) {
      sx += inv(r, i) * static_cast<double>(targets.values()[2 * i]);
      sy += inv(r, i) * static_cast<double>(targets.values()[2 * i + 1]);
    }
    out[static_cast<size_t>(2 * r)] = static_cast<T>(sx);
    out[static_cast<size_t>(2 * r + 1)] = static_cast<T>(sy);
  }
  auto tn = targets.node();
  auto fn = [tn](TensorNode<T>& self) {
    if (!tn->requires_grad) return;
    const auto& inv2 = detail::template_inverse();
    for (int i = 0; i < 9; ++i) {
      double gx = 0.0, gy = 0.0;
      for (int r = 0; r < 12; ++r) {
        gx += inv2(r, i) * static_cast<double>(self.grad[static_cast<size_t>(2 * r)]);
        gy += inv2(r, i) * static_cast<double>(self.grad[static_cast<size_t>(2 * r + 1)]);
      }
      tn->grad[static_cast<size_t>(2 * i)] += static_cast<T>(gx);
      tn->grad[static_cast<size_t>(2 * i + 1)] += static_cast<T>(gy);
    }
  };
  return detail::make_op<T>({12, 2}, std::move(out), {targets}, fn);
}

// Pushes the regular [-1,1]^2 output lattice (corners included) through the
// warp: [12,2] -> [h,w,2] coordinates in the input image frame.
template <typename T>
Tensor<T> generate_grid_op(const Tensor<T>& wa, int h, int w) {
  if (wa.numel() != 24) throw DimensionError("generate_grid: expected [12,2] tps coefficients");
  if (h < 2 || w < 2) throw DimensionError("generate_grid: output grid must be at least 2x2");
  const Eigen::MatrixXd& B = detail::grid_basis(h, w);
  std::vector<T> out(static_cast<size_t>(h) * w * 2);
  for (int r = 0; r < h * w; ++r) {
    double sx = 0.0, sy = 0.0;
    for (int k = 0; k < 12; ++k) {
      sx += B(r, k) * static_cast<double>(wa.values()[static_cast<size_t>(2 * k)]);
      sy += B(r, k) * static_cast<double>(wa.values()[static_cast<size_t>(2 * k + 1)]);
    }
    out[static_cast<size_t>(2 * r)] = static_cast<T>(sx);
    out[static_cast<size_t>(2 * r + 1)] = static_cast<T>(sy);
  }
  auto wn = wa.node();
  auto fn = [wn, h, w](TensorNode<T>& self) {
    if (!wn->requires_grad) return;
    const Eigen::MatrixXd& B2 = detail::grid_basis(h, w);
    for (int k = 0; k < 12; ++k) {
      double gx = 0.0, gy = 0.0;
      for (int r = 0; r < h * w; ++r) {
        gx += B2(r, k) * static_cast<double>(self.grad[static_cast<size_t>(2 * r)]);
        gy += B2(r, k) * static_cast<double>(self.grad[static_cast<size_t>(2 * r + 1)]);
      }
      wn->grad[static_cast<size_t>(2 * k)] += static_cast<T>(gx);
      wn->grad[static_cast<size_t>(2 * k + 1)] += static_cast<T>(gy);
    }
  };
  return detail::make_op<T>({h, w, 2}, std::move(out), {wa}, fn);
}

// Align-corners bilinear sampling with zero padding: -1 is the center of
// pixel 0, +1 the center of pixel W-1; taps outside the image contribute
// nothing, so values fade to zero across the border.
template <typename T>
Tensor<T> bilinear_sample_op(const Tensor<T>& image, const Tensor<T>& grid) {
  if (image.ndim() != 3) throw DimensionError("bilinear_sample: image must be CxHxW");
  if (grid.ndim() != 3 || grid.dim(2) != 2) throw DimensionError("bilinear_sample: grid must be hxwx2");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H < 2 || W < 2) throw DimensionError("bilinear_sample: degenerate image axes HxW");
  const int gh = grid.dim(0), gw = grid.dim(1);
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t oplane = static_cast<size_t>(gh) * gw;
  const double sx = 0.5 * (W - 1), sy = 0.5 * (H - 1);

  std::vector<T> out(static_cast<size_t>(C) * oplane, T(0));
  const T* img = image.values().data();
  const T* g = grid.values().data();
  for (size_t p = 0; p < oplane; ++p) {
    double px = (static_cast<double>(g[2 * p]) + 1.0) * sx;
    double py = (static_cast<double>(g[2 * p + 1]) + 1.0) * sy;
    int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    double fx = px - x0, fy = py - y0;
    for (int dy = 0; dy <= 1; ++dy) {
      int yy = y0 + dy;
      if (yy < 0 || yy >= H) continue;
      double wy = dy ? fy : 1.0 - fy;
      for (int dx = 0; dx <= 1; ++dx) {
        int xx = x0 + dx;
        if (xx < 0 || xx >= W) continue;
        double wgt = wy * (dx ? fx : 1.0 - fx);
        for (int c = 0; c < C; ++c)
          out[c * oplane + p] += static_cast<T>(wgt * static_cast<double>(img[c * plane + yy * W + xx]));
      }
    }
  }

  auto in = image.node();
  auto gn = grid.node();
  auto fn = [in, gn, C, H, W, gh, gw, plane, oplane, sx, sy](TensorNode<T>& self) {
    const T* g2 = gn->values.data();
    for (size_t p = 0; p < oplane; ++p) {
      double px = (static_cast<double>(g2[2 * p]) + 1.0) * sx;
      double py = (static_cast<double>(g2[2 * p + 1]) + 1.0) * sy;
      int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
      double fx = px - x0, fy = py - y0;
      double dpx = 0.0, dpy = 0.0;
      for (int dy = 0; dy <= 1; ++dy) {
        int yy = y0 + dy;
        if (yy < 0 || yy >= H) continue;
        double wy = dy ? fy : 1.0 - fy;
        double dwy = dy ? 1.0 : -1.0;
        for (int dx = 0; dx <= 1; ++dx) {
          int xx = x0 + dx;
          if (xx < 0 || xx >= W) continue;
          double wx = dx ? fx : 1.0 - fx;
          double dwx = dx ? 1.0 : -1.0;
          for (int c = 0; c < C; ++c) {
            double go = static_cast<double>(self.grad[c * oplane + p]);
            double pix = static_cast<double>(in->values[c * plane + yy * W + xx]);
            if (in->requires_grad) in->grad[c * plane + yy * W + xx] += static_cast<T>(go * wy * wx);
            dpx += go * wy * dwx * pix;
            dpy += go * dwy * wx * pix;
          }
        }
      }
      if (gn->requires_grad) {
        gn->grad[2 * p] += static_cast<T>(dpx * sx);
        gn->grad[2 * p + 1] += static_cast<T>(dpy * sy);
      }
    }
  };
  return detail::make_op<T>({C, gh, gw}, std::move(out), {image, grid}, fn);
}

// solve -> grid -> sample; the differentiable path from predicted landmarks
// to the resampled ROI.
template <typename T>
Tensor<T> extract_roi_op(const Tensor<T>& full_image, const Tensor<T>& landmarks, int h_roi, int w_roi) {
  return bilinear_sample_op(full_image, generate_grid_op(solve_tps_op(landmarks), h_roi, w_roi));
}

}  // namespace palm
