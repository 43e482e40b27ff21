#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <vector>

#include "palm/rng.hpp"
#include "palm/tensor.hpp"

namespace palm {

enum class Mode { Train, Eval };

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// col(r, oy*OW+ox) with r = (i*kh+ky)*kw+kx; zero-filled where the padded
// window leaves the image.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW, T* col) {
  const int P = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + static_cast<size_t>((c * kh + ky) * kw + kx) * P;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          T* dst = row + oy * OW;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = x + static_cast<size_t>(c * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accum(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW, T* dx) {
  const int P = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + static_cast<size_t>((c * kh + ky) * kw + kx) * P;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = dx + static_cast<size_t>(c * H + iy) * W;
          const T* src = row + oy * OW;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation, NCHW input, OIKK weights. Output (H+2p-kh)/s+1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int stride = 1,
                 int pad = 0) {
  if (input.ndim() != 4) throw DimensionError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
  if (weights.ndim() != 4) throw DimensionError("conv2d: weights must be OIKK, got " + shape_str(weights.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = weights.dim(0), I = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (C != I)
    throw DimensionError("conv2d: input channel axis (" + std::to_string(C) + ") != weight input axis (" +
                         std::to_string(I) + ")");
  if (bias.ndim() != 1 || bias.dim(0) != O)
    throw DimensionError("conv2d: bias axis must equal output channels " + std::to_string(O));
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit padded input axes HxW = " + std::to_string(H) + "x" + std::to_string(W));

  const int K = C * kh * kw, P = OH * OW;
  std::vector<T> out(static_cast<size_t>(N) * O * P);
  std::vector<T> col(static_cast<size_t>(K) * P);
  detail::CMapRM<T> Wm(weights.values().data(), O, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col(input.values().data() + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                   col.data());
    detail::MapRM<T> Om(out.data() + static_cast<size_t>(n) * O * P, O, P);
    Om.noalias() = Wm * detail::CMapRM<T>(col.data(), K, P);
    for (int o = 0; o < O; ++o) Om.row(o).array() += bias.values()[o];
  }

  auto in_node = input.node();
  auto w_node = weights.node();
  auto b_node = bias.node();
  auto fn = [=](TensorNode<T>& self) {
    std::vector<T> colb(static_cast<size_t>(K) * P);
    detail::CMapRM<T> Wmb(w_node->values.data(), O, K);
    for (int n = 0; n < N; ++n) {
      detail::CMapRM<T> dOut(self.grad.data() + static_cast<size_t>(n) * O * P, O, P);
      const bool need_col = w_node->requires_grad || in_node->requires_grad;
      if (need_col)
        detail::im2col(in_node->values.data() + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, OH,
                       OW, colb.data());
      if (w_node->requires_grad) {
        detail::MapRM<T> dW(w_node->grad.data(), O, K);
        dW.noalias() += dOut * detail::CMapRM<T>(colb.data(), K, P).transpose();
      }
      if (b_node->requires_grad) {
        for (int o = 0; o < O; ++o) b_node->grad[o] += dOut.row(o).sum();
      }
      if (in_node->requires_grad) {
        detail::MatRM<T> dCol = Wmb.transpose() * dOut;
        detail::col2im_accum(dCol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                             in_node->grad.data() + static_cast<size_t>(n) * C * H * W);
      }
    }
  };
  return detail::make_op<T>({N, O, OH, OW}, std::move(out), {input, weights, bias}, fn);
}

// 2x2 stride-2 max; ties route the gradient to the first maximal element in
// row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
  if (input.ndim() != 4) throw DimensionError("maxpool2: input must be NCHW, got " + shape_str(input.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw DimensionError("maxpool2: spatial axes must be even, got H=" + std::to_string(H) +
                         " W=" + std::to_string(W));
  const int OH = H / 2, OW = W / 2;
  std::vector<T> out(static_cast<size_t>(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const T* x = input.values().data();
  size_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = x + static_cast<size_t>(nc) * H * W;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox, ++oi) {
        int base = (oy * 2) * W + ox * 2;
        int best = base;
        T bv = plane[base];
        if (plane[base + 1] > bv) { bv = plane[base + 1]; best = base + 1; }
        if (plane[base + W] > bv) { bv = plane[base + W]; best = base + W; }
        if (plane[base + W + 1] > bv) { bv = plane[base + W + 1]; best = base + W + 1; }
        out[oi] = bv;
        (*argmax)[oi] = static_cast<int64_t>(nc) * H * W + best;
      }
    }
  }
  auto in_node = input.node();
  auto fn = [in_node, argmax](TensorNode<T>& self) {
    if (!in_node->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i) in_node->grad[(*argmax)[i]] += self.grad[i];
  };
  return detail::make_op<T>({N, C, OH, OW}, std::move(out), {input}, fn);
}

// Subgradient at 0 takes the negative-branch slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T leak) {
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > T(0) ? x.values()[i] : leak * x.values()[i];
  auto in_node = x.node();
  auto fn = [in_node, leak](TensorNode<T>& self) {
    if (!in_node->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i)
      in_node->grad[i] += self.grad[i] * (in_node->values[i] > T(0) ? T(1) : leak);
  };
  return detail::make_op<T>(x.shape(), std::move(out), {x}, fn);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  auto in_node = x.node();
  auto fn = [in_node](TensorNode<T>& self) {
    if (!in_node->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i)
      in_node->grad[i] += self.grad[i] * (T(1) - self.values[i] * self.values[i]);
  };
  return detail::make_op<T>(x.shape(), std::move(out), {x}, fn);
}

// Per-location channel vector divided by sqrt(sum of squares + eps).
template <typename T>
Tensor<T> channel_l2_normalize(const Tensor<T>& x, T eps) {
  if (x.ndim() != 4) throw DimensionError("channel_l2_normalize: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t plane = static_cast<size_t>(H) * W;
  std::vector<T> out(x.numel());
  auto scale = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * plane);  // 1/s at each (n,h,w)
  for (int n = 0; n < N; ++n) {
    for (size_t p = 0; p < plane; ++p) {
      T ss = eps;
      for (int c = 0; c < C; ++c) {
        T v = x.values()[(static_cast<size_t>(n) * C + c) * plane + p];
        ss += v * v;
      }
      T inv = T(1) / std::sqrt(ss);
      (*scale)[n * plane + p] = inv;
      for (int c = 0; c < C; ++c) {
        size_t i = (static_cast<size_t>(n) * C + c) * plane + p;
        out[i] = x.values()[i] * inv;
      }
    }
  }
  auto in_node = x.node();
  auto fn = [in_node, scale, N, C, plane](TensorNode<T>& self) {
    if (!in_node->requires_grad) return;
    for (int n = 0; n < N; ++n) {
      for (size_t p = 0; p < plane; ++p) {
        T inv = (*scale)[n * plane + p];
        T dot = T(0);
        for (int c = 0; c < C; ++c) {
          size_t i = (static_cast<size_t>(n) * C + c) * plane + p;
          dot += self.grad[i] * in_node->values[i];
        }
        for (int c = 0; c < C; ++c) {
          size_t i = (static_cast<size_t>(n) * C + c) * plane + p;
          in_node->grad[i] += self.grad[i] * inv - in_node->values[i] * dot * inv * inv * inv;
        }
      }
    }
  };
  return detail::make_op<T>(x.shape(), std::move(out), {x}, fn);
}

// y = x W + b with x: NxD, W: DxM, b: M.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.ndim() != 2 || W.ndim() != 2)
    throw DimensionError("fully_connected: x and W must be rank 2, got " + shape_str(x.shape()) + " and " +
                         shape_str(W.shape()));
  const int N = x.dim(0), D = x.dim(1), M = W.dim(1);
  if (W.dim(0) != D)
    throw DimensionError("fully_connected: inner axes disagree, x D=" + std::to_string(D) +
                         " vs W rows=" + std::to_string(W.dim(0)));
  if (b.ndim() != 1 || b.dim(0) != M) throw DimensionError("fully_connected: bias axis must be " + std::to_string(M));
  std::vector<T> out(static_cast<size_t>(N) * M);
  detail::CMapRM<T> Xm(x.values().data(), N, D);
  detail::CMapRM<T> Wm(W.values().data(), D, M);
  detail::MapRM<T> Om(out.data(), N, M);
  Om.noalias() = Xm * Wm;
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) out[static_cast<size_t>(n) * M + m] += b.values()[m];
  auto xn = x.node(), wn = W.node(), bn = b.node();
  auto fn = [=](TensorNode<T>& self) {
    detail::CMapRM<T> dOut(self.grad.data(), N, M);
    if (xn->requires_grad) {
      detail::MapRM<T> dX(xn->grad.data(), N, D);
      dX.noalias() += dOut * detail::CMapRM<T>(wn->values.data(), D, M).transpose();
    }
    if (wn->requires_grad) {
      detail::MapRM<T> dW(wn->grad.data(), D, M);
      dW.noalias() += detail::CMapRM<T>(xn->values.data(), N, D).transpose() * dOut;
    }
    if (bn->requires_grad) {
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) bn->grad[m] += self.grad[static_cast<size_t>(n) * M + m];
    }
  };
  return detail::make_op<T>({N, M}, std::move(out), {x, W, b}, fn);
}

// Inverted dropout: eval mode and rate 0 are exact identities.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, RngState& rng) {
  if (rate >= 1.0 || rate < 0.0) throw ParameterError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    T m = (rng.next_uniform() >= rate) ? scale : T(0);
    (*mask)[i] = m;
    out[i] = x.values()[i] * m;
  }
  auto in_node = x.node();
  auto fn = [in_node, mask](TensorNode<T>& self) {
    if (!in_node->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i) in_node->grad[i] += self.grad[i] * (*mask)[i];
  };
  return detail::make_op<T>(x.shape(), std::move(out), {x}, fn);
}

// Mean negative log-softmax of the true class, max-subtracted for stability.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw DimensionError("softmax_cross_entropy: logits must be NxC");
  const int N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw DimensionError("softmax_cross_entropy: need one label per row, got " + std::to_string(labels.size()));
  for (int n = 0; n < N; ++n)
    if (labels[n] < 0 || labels[n] >= C)
      throw ParameterError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " outside [0," +
                           std::to_string(C) + ") at row " + std::to_string(n));
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  T loss = T(0);
  for (int n = 0; n < N; ++n) {
    const T* z = logits.values().data() + static_cast<size_t>(n) * C;
    T* p = probs->data() + static_cast<size_t>(n) * C;
    T m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    T sum = T(0);
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(z[c] - m);
      sum += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= sum;
    loss += std::log(sum) - (z[labels[n]] - m);
  }
  loss /= static_cast<T>(N);
  auto ln = logits.node();
  auto labs = std::make_shared<std::vector<int>>(labels);
  auto fn = [ln, probs, labs, N, C](TensorNode<T>& self) {
    if (!ln->requires_grad) return;
    const T g = self.grad[0] / static_cast<T>(N);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(n) * C + c;
        ln->grad[i] += g * ((*probs)[i] - (c == (*labs)[n] ? T(1) : T(0)));
      }
    }
  };
  return detail::make_op<T>({1}, std::vector<T>{loss}, {logits}, fn);
}

// Mean squared difference over all elements.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("l2_loss: shapes disagree, " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const size_t n = pred.numel();
  T loss = T(0);
  for (size_t i = 0; i < n; ++i) {
    T d = pred.values()[i] - target.values()[i];
    loss += d * d;
  }
  loss /= static_cast<T>(n);
  auto pn = pred.node(), tn = target.node();
  auto fn = [pn, tn, n](TensorNode<T>& self) {
    const T g = self.grad[0] * T(2) / static_cast<T>(n);
    for (size_t i = 0; i < n; ++i) {
      T d = pn->values[i] - tn->values[i];
      if (pn->requires_grad) pn->grad[i] += g * d;
      if (tn->requires_grad) tn->grad[i] -= g * d;
    }
  };
  return detail::make_op<T>({1}, std::vector<T>{loss}, {pred, target}, fn);
}

// Scalar dot with fixed weights; used to scalarize outputs in gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> w) {
  if (w.size() != x.numel()) throw DimensionError("weighted_sum: weight count must equal numel");
  T s = T(0);
  for (size_t i = 0; i < w.size(); ++i) s += w[i] * x.values()[i];
  auto xn = x.node();
  auto ws = std::make_shared<std::vector<T>>(std::move(w));
  auto fn = [xn, ws](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < ws->size(); ++i) xn->grad[i] += self.grad[0] * (*ws)[i];
  };
  return detail::make_op<T>({1}, std::vector<T>{s}, {x}, fn);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) + " changes element count");
  auto xn = x.node();
  auto fn = [xn](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  };
  return detail::make_op<T>(std::move(shape), x.values(), {x}, fn);
}

// Row n of a 2-D tensor as a flat vector.
template <typename T>
Tensor<T> select_row(const Tensor<T>& x, int n) {
  if (x.ndim() != 2) throw DimensionError("select_row: input must be rank 2");
  const int D = x.dim(1);
  if (n < 0 || n >= x.dim(0)) throw ParameterError("select_row: row " + std::to_string(n) + " out of range");
  std::vector<T> out(x.values().begin() + static_cast<size_t>(n) * D,
                     x.values().begin() + static_cast<size_t>(n + 1) * D);
  auto xn = x.node();
  auto fn = [xn, n, D](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    for (int d = 0; d < D; ++d) xn->grad[static_cast<size_t>(n) * D + d] += self.grad[d];
  };
  return detail::make_op<T>({D}, std::move(out), {x}, fn);
}

// Stacks equally shaped tensors along a new leading batch axis.
template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ParameterError("concat_batch: empty input");
  const auto& s0 = items[0].shape();
  for (const auto& t : items)
    if (t.shape() != s0) throw DimensionError("concat_batch: mismatched item shapes");
  const size_t per = items[0].numel();
  std::vector<T> out;
  out.reserve(per * items.size());
  for (const auto& t : items) out.insert(out.end(), t.values().begin(), t.values().end());
  std::vector<int> shape;
  shape.push_back(static_cast<int>(items.size()));
  shape.insert(shape.end(), s0.begin(), s0.end());
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& t : items) nodes.push_back(t.node());
  auto fn = [nodes, per](TensorNode<T>& self) {
    for (size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      for (size_t i = 0; i < per; ++i) nodes[k]->grad[i] += self.grad[k * per + i];
    }
  };
  return detail::make_op<T>(std::move(shape), std::move(out), items, fn);
}

// Subtracts a per-channel constant from an NCHW tensor (identity gradient).
template <typename T>
Tensor<T> sub_channel_mean(const Tensor<T>& x, const std::vector<T>& mean) {
  if (x.ndim() != 4) throw DimensionError("sub_channel_mean: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1);
  if (static_cast<int>(mean.size()) != C) throw DimensionError("sub_channel_mean: one constant per channel required");
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(x.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      size_t base = (static_cast<size_t>(n) * C + c) * plane;
      for (size_t p = 0; p < plane; ++p) out[base + p] = x.values()[base + p] - mean[c];
    }
  auto xn = x.node();
  auto fn = [xn](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  };
  return detail::make_op<T>(x.shape(), std::move(out), {x}, fn);
}

// Plain row-wise softmax (scoring only, no tape).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.ndim() != 2) throw DimensionError("softmax_rows: logits must be NxC");
  const int N = logits.dim(0), C = logits.dim(1);
  std::vector<T> out(logits.numel());
  for (int n = 0; n < N; ++n) {
    const T* z = logits.values().data() + static_cast<size_t>(n) * C;
    T* p = out.data() + static_cast<size_t>(n) * C;
    T m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    T sum = T(0);
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(z[c] - m);
      sum += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= sum;
  }
  return out;
}

}  // namespace palm
