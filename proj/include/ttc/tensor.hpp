// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a dynamic reverse-mode tape.
//
// A Tensor is an immutable value handle. Operations on tensors that require
// gradients append a node to the Tape those tensors belong to; Tape::grad
// replays the record in reverse. Backward rules are themselves written in
// terms of differentiable operations, so gradients taken with
// create_graph=true can be differentiated again (the fast-weight update
// relies on this).
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttc/rng.hpp"

namespace ttc {

using Shape = std::vector<std::size_t>;

/// Storage precision. f32 tensors hold values exactly representable as
/// IEEE single precision; arithmetic is always carried out in double.
enum class DType { f64, f32 };

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
struct TapeState;
struct Access;
}  // namespace detail

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, DType dtype = DType::f64);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double value);
  /// Row-major literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;
  DType dtype() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double at(std::size_t flat) const;
  double operator()(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  /// Gradient populated by Tape::backward; undefined tensor when absent.
  Tensor grad() const;

  /// Same values, no tape association.
  Tensor detach() const;
  /// Copy rounded to the given storage precision.
  Tensor to(DType dtype) const;

  bool all_finite() const;

  /// Identity of the underlying storage (used by the tape for bookkeeping).
  const void* id() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend struct detail::Access;
};

/// Backward rule: (grad of output, output, inputs, which inputs need a
/// gradient) -> one gradient per input (undefined where not needed).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad, const Tensor& out,
                                                     const std::vector<Tensor>& inputs,
                                                     const std::vector<bool>& needed)>;

/// Builds an op output and records it on the inputs' tape when any input
/// requires a gradient and that tape is recording.
Tensor make_op_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                      BackwardFn backward, const char* name);

/// Ordered record of executed differentiable operations. Confined to one
/// thread. Tensors outlive their tape safely; they simply stop recording.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;

  /// Leaf that requires a gradient and records on this tape.
  Tensor variable(const Tensor& value);

  /// Gradients of a scalar output with respect to `wrt` (leaves or
  /// intermediates of this tape). With create_graph the backward
  /// computation is itself recorded.
  std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                           bool create_graph = false);
  /// Vector-Jacobian product with an explicit seed shaped like `output`.
  std::vector<Tensor> grad(const Tensor& output, const Tensor& seed,
                           const std::vector<Tensor>& wrt, bool create_graph = false);

  /// Populates grad() of every requires_grad leaf. Single use.
  void backward(const Tensor& output);

  std::size_t size() const;
  bool recording() const;

  /// Handle to the live tape `t` records on, if any.
  static std::optional<Tape> of(const Tensor& t);

 private:
  explicit Tape(std::shared_ptr<detail::TapeState> state) : state_(std::move(state)) {}
  std::shared_ptr<detail::TapeState> state_;
  friend class NoRecordGuard;
};

/// RAII guard suspending recording on a tape.
class NoRecordGuard {
 public:
  explicit NoRecordGuard(Tape& tape);
  ~NoRecordGuard();
  NoRecordGuard(const NoRecordGuard&) = delete;
  NoRecordGuard& operator=(const NoRecordGuard&) = delete;

 private:
  std::shared_ptr<detail::TapeState> state_;
  bool previous_;
};

enum class ActivationKind { silu, gelu, elu_plus_one };

ActivationKind parse_activation(const std::string& name);
std::string to_string(ActivationKind kind);

/// Scalar activation and its derivatives up to order 3.
double activation_value(ActivationKind kind, double x, int order = 0);

// Differentiable operations. 2-D operands unless stated otherwise.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor pow(const Tensor& a, double exponent);
/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Broadcast a {1} tensor to `shape`.
Tensor expand(const Tensor& scalar, const Shape& shape);
/// [n x m] -> [1 x m]
Tensor sum_rows(const Tensor& a);
/// [1 x m] -> [n x m]
Tensor broadcast_rows(const Tensor& row, std::size_t n);
/// [n x m] -> [n x 1]
Tensor sum_cols(const Tensor& a);
/// [n x 1] -> [n x m]
Tensor broadcast_cols(const Tensor& col, std::size_t m);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
/// Places `a` at column `start` of a zero [rows x total] matrix.
Tensor pad_cols(const Tensor& a, std::size_t start, std::size_t total);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Element (row, col) of a matrix as a {1} tensor.
Tensor select(const Tensor& a, std::size_t row, std::size_t col);

/// Elementwise activation, or its `order`-th derivative.
Tensor activation(const Tensor& x, ActivationKind kind, int order = 0);

/// Row softmax of scale*x. With a mask (row-major, nonzero = keep) masked
/// entries get exactly zero weight; every row must keep at least one entry.
Tensor softmax_rows(const Tensor& x, double scale = 1.0,
                    std::shared_ptr<const std::vector<std::uint8_t>> mask = nullptr);

/// Per-channel 2-D convolution, zero "same" padding.
/// x: [H x W x C], kernel: [k x k x C] with k odd.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);
/// Kernel rotated by 180 degrees in its two spatial axes.
Tensor flip_kernel(const Tensor& kernel);
/// Gradient of depthwise_conv2d with respect to its kernel.
Tensor dwconv_weight_grad(const Tensor& x, const Tensor& grad_out, std::size_t kernel_size);

/// Central-difference gradient of a scalar function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

double max_abs_diff(const Tensor& a, const Tensor& b);
/// ||a-b||_F / max(||b||_F, floor)
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-300);
double frobenius_norm(const Tensor& a);

}  // namespace ttc
