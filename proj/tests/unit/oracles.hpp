// SPDX-License-Identifier: Apache-2.0
//
// Scalar-loop reference implementations used by the unit tests. Nothing here
// touches the tape or the library's op implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ttc/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const ttc::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline ttc::Tensor to_tensor(const Mat& m) {
  std::vector<double> d;
  for (const auto& r : m) d.insert(d.end(), r.begin(), r.end());
  return ttc::Tensor::from({m.size(), m.empty() ? 0 : m[0].size()}, d);
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double elu1(double x) { return x > 0 ? x + 1.0 : std::exp(x); }

/// Softmax attention weights; keep(i, j) selects admissible keys.
template <typename Keep>
Mat attention_weights(const Mat& q, const Mat& k, Keep keep) {
  const std::size_t n = q.size(), d = q[0].size();
  Mat w(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    std::vector<double> s(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(i, j)) continue;
      for (std::size_t c = 0; c < d; ++c) s[j] += q[i][c] * k[j][c];
      s[j] /= std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (keep(i, j)) z += std::exp(s[j] - mx);
    for (std::size_t j = 0; j < n; ++j)
      if (keep(i, j)) w[i][j] = std::exp(s[j] - mx) / z;
  }
  return w;
}

inline Mat softmax_attention(const Mat& q, const Mat& k, const Mat& v) {
  return matmul(attention_weights(q, k, [](std::size_t, std::size_t) { return true; }), v);
}

/// Token j is a neighbor of token i when it lies in the window of side
/// min(w, extent) centered on i and slid back inside the grid.
inline bool in_window(std::size_t i, std::size_t j, std::size_t h, std::size_t w, std::size_t win) {
  const auto inside = [](long pos, long other, long extent, long win) {
    const long side = std::min(win, extent);
    const long lo = std::clamp(pos - side / 2, 0L, extent - side);
    return other >= lo && other < lo + side;
  };
  const long ri = static_cast<long>(i / w), ci = static_cast<long>(i % w);
  const long rj = static_cast<long>(j / w), cj = static_cast<long>(j % w);
  return inside(ri, rj, static_cast<long>(h), static_cast<long>(win)) &&
         inside(ci, cj, static_cast<long>(w), static_cast<long>(win));
}

/// Materialized N x N linear attention with elu+1 features.
inline Mat linear_attention(const Mat& q, const Mat& k, const Mat& v) {
  const std::size_t n = q.size(), d = q[0].size();
  Mat out(n, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a(n, 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < d; ++c) a[j] += elu1(q[i][c]) * elu1(k[j][c]);
      z += a[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += a[j] / z * v[j][c];
  }
  return out;
}

/// Depthwise "same" convolution of an [H x W x C] array by a [k x k x C] kernel.
inline std::vector<double> dwconv(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c,
                                  const std::vector<double>& kern, std::size_t k) {
  std::vector<double> y(h * w * c, 0.0);
  const long half = static_cast<long>(k / 2);
  for (long r = 0; r < static_cast<long>(h); ++r)
    for (long s = 0; s < static_cast<long>(w); ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (long a = -half; a <= half; ++a)
          for (long b = -half; b <= half; ++b) {
            const long rr = r + a, ss = s + b;
            if (rr < 0 || ss < 0 || rr >= static_cast<long>(h) || ss >= static_cast<long>(w)) continue;
            acc += x[(rr * w + ss) * c + ch] * kern[((a + half) * static_cast<long>(k) + (b + half)) * c + ch];
          }
        y[(r * w + s) * c + ch] = acc;
      }
  return y;
}

inline double max_abs(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

inline double max_abs(const ttc::Tensor& a, const Mat& b) { return max_abs(to_mat(a), b); }

}  // namespace oracle
