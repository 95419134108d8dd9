// SPDX-License-Identifier: Apache-2.0
//
// Tape-free attention kernels used for wall-clock measurement. Row-major
// [N x d] buffers; instantiated for float and double.
#pragma once

#include <cstddef>
#include <vector>

namespace ttc::kernels {

template <typename T>
struct Workspace {
  std::vector<T> a, b, c, e, f;
};

/// Softmax(Q K^T / sqrt(d)) V, one query row at a time.
template <typename T>
void softmax_attention(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, T* out,
                       Workspace<T>& ws);

/// elu+1 kernel linear attention.
template <typename T>
void linear_attention(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, T* out,
                      Workspace<T>& ws);

/// Two-layer SiLU inner model, inner-product loss, one update step of size
/// eta, then the query pass. w1, w2 are [d x d].
template <typename T>
void ttt_two_layer(std::size_t n, std::size_t d, const T* q, const T* k, const T* v, const T* w1,
                   const T* w2, T eta, T* out, Workspace<T>& ws);

}  // namespace ttc::kernels
