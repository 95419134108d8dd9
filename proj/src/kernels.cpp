// SPDX-License-Identifier: Apache-2.0
#include "ttc/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ttc::kernels {

namespace {

// C[m x n] = A[m x k] B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    std::fill(ci, ci + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// C[m x n] = A^T B with A[k x m], B[k x n]
template <typename T>
void gemm_tn(std::size_t k, std::size_t m, std::size_t n, const T* a, const T* b, T* c) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < k; ++i) {
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < m; ++p) {
      const T s = a[i * m + p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s * bi[j];
    }
  }
}

template <typename T>
void transpose(std::size_t m, std::size_t n, const T* a, T* out) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T elu_plus_one(T x) {
  return x > T(0) ? x + T(1) : std::exp(x);
}

}  // namespace

template <typename T>
void softmax_attention(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, T* out,
                       Workspace<T>& ws) {
  ws.a.resize(n * d);
  ws.b.resize(n);
  T* kt = ws.a.data();
  T* logits = ws.b.data();
  transpose(n, d, k, kt);
  const T s = T(1) / std::sqrt(static_cast<T>(d));
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(logits, logits + n, T(0));
    for (std::size_t c = 0; c < d; ++c) {
      const T qc = q[i * d + c] * s;
      const T* row = kt + c * n;
      for (std::size_t j = 0; j < n; ++j) logits[j] += qc * row[j];
    }
    const T mx = *std::max_element(logits, logits + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      logits[j] = std::exp(logits[j] - mx);
      total += logits[j];
    }
    T* o = out + i * d;
    std::fill(o, o + d, T(0));
    for (std::size_t j = 0; j < n; ++j) {
      const T p = logits[j];
      const T* vj = v + j * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += p * vj[c];
    }
    const T inv = T(1) / total;
    for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
  }
}

template <typename T>
void linear_attention(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, T* out,
                      Workspace<T>& ws) {
  ws.a.resize(n * d);
  ws.b.resize(d * d);
  ws.c.resize(d);
  T* phi = ws.a.data();
  T* kv = ws.b.data();
  T* ksum = ws.c.data();
  for (std::size_t i = 0; i < n * d; ++i) phi[i] = elu_plus_one(k[i]);
  gemm_tn(n, d, d, phi, v, kv);
  std::fill(ksum, ksum + d, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) ksum[c] += phi[i * d + c];
  for (std::size_t i = 0; i < n * d; ++i) phi[i] = elu_plus_one(q[i]);
  gemm_nn(n, d, d, phi, kv, out);
  for (std::size_t i = 0; i < n; ++i) {
    T den = 0;
    for (std::size_t c = 0; c < d; ++c) den += phi[i * d + c] * ksum[c];
    const T inv = T(1) / den;
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] *= inv;
  }
}

template <typename T>
void ttt_two_layer(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, const T* w1,
                   const T* w2, T eta, T* out, Workspace<T>& ws) {
  ws.a.resize(n * d);
  ws.b.resize(n * d);
  ws.c.resize(n * d);
  ws.e.resize(4 * d * d);
  ws.f.resize(2 * d * d);
  T* z = ws.a.data();
  T* act = ws.b.data();
  T* dz = ws.c.data();
  T* w2t = ws.e.data();
  T* g1 = w2t + d * d;
  T* nw1 = g1 + d * d;
  T* nw2 = nw1 + d * d;
  T* g2 = ws.f.data();

  gemm_nn(n, d, d, k, w1, z);
  transpose(d, d, w2, w2t);
  // dY = -V, so dZ = -(V W2^T) * silu'(Z) and dW2 = -A^T V.
  gemm_nn(n, d, d, v, w2t, dz);
  for (std::size_t i = 0; i < n * d; ++i) {
    const T s = sigmoid(z[i]);
    act[i] = z[i] * s;
    dz[i] = -dz[i] * s * (T(1) + z[i] * (T(1) - s));
  }
  gemm_tn(n, d, d, k, dz, g1);
  gemm_tn(n, d, d, act, v, g2);
  for (std::size_t i = 0; i < d * d; ++i) {
    nw1[i] = w1[i] - eta * g1[i];
    nw2[i] = w2[i] + eta * g2[i];
  }
  gemm_nn(n, d, d, q, nw1, z);
  for (std::size_t i = 0; i < n * d; ++i) z[i] = z[i] * sigmoid(z[i]);
  gemm_nn(n, d, d, z, nw2, out);
}

#define TTC_INSTANTIATE(T)                                                                       \
  template void softmax_attention<T>(std::size_t, std::size_t, const T*, const T*, const T*, T*, \
                                     Workspace<T>&);                                             \
  template void linear_attention<T>(std::size_t, std::size_t, const T*, const T*, const T*, T*,  \
                                    Workspace<T>&);                                              \
  template void ttt_two_layer<T>(std::size_t, std::size_t, const T*, const T*, const T*,         \
                                 const T*, const T*, T, T*, Workspace<T>&);

TTC_INSTANTIATE(float)
TTC_INSTANTIATE(double)

#undef TTC_INSTANTIATE

}  // namespace ttc::kernels
