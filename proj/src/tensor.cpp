// SPDX-License-Identifier: Apache-2.0
#include "ttc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ttc/error.hpp"

namespace ttc {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  DType dtype = DType::f64;
  bool requires_grad = false;
  std::weak_ptr<TapeState> tape;
  std::ptrdiff_t node = -1;  // producing node, -1 for leaves and constants
  std::vector<double> grad;
  bool has_grad = false;
};

struct Node {
  std::vector<Tensor> inputs;
  Tensor output;
  BackwardFn backward;
  const char* name;
};

struct TapeState {
  std::vector<Node> nodes;
  std::vector<Tensor> leaves;
  bool recording = true;
  bool consumed = false;
};

struct Access {
  static TensorImpl& impl(const Tensor& t) { return *t.impl_; }
  static const std::shared_ptr<TensorImpl>& ptr(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> p) { return Tensor(std::move(p)); }
};

}  // namespace detail

using detail::Access;
using detail::TensorImpl;
using detail::TapeState;

namespace {

Tensor make_constant(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Access::wrap(std::move(impl));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f, std::initializer_list<Tensor> inputs, BackwardFn bw,
                 const char* name) {
  std::vector<double> out(a.numel());
  auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(src[i]);
  return make_op_result(a.shape(), std::move(out), inputs, std::move(bw), name);
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f, BackwardFn bw, const char* name) {
  require_same_shape(a, b, name);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return make_op_result(a.shape(), std::move(out), {a, b}, std::move(bw), name);
}

// Restores the recording flag on scope exit.
struct RecordingScope {
  TapeState& state;
  bool previous;
  RecordingScope(TapeState& s, bool on) : state(s), previous(s.recording) { s.recording = on; }
  ~RecordingScope() { state.recording = previous; }
};

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, DType dtype) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  }
  if (dtype == DType::f32) {
    for (auto& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  auto t = make_constant(std::move(shape), std::move(data));
  t.impl_->dtype = dtype;
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return from({n, n}, std::move(d));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> d;
  d.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    d.insert(d.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(d));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.normal(0.0, stddev);
  return from(std::move(shape), std::move(d));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::rows() const {
  require_matrix(*this, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_matrix(*this, "cols");
  return impl_->shape[1];
}

DType Tensor::dtype() const {
  require_defined(*this, "dtype");
  return impl_->dtype;
}

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::at(std::size_t flat) const { return data()[flat]; }

double Tensor::operator()(std::size_t row, std::size_t col) const {
  return impl_->data[row * cols() + col];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor Tensor::grad() const {
  if (!impl_ || !impl_->has_grad) return {};
  return make_constant(impl_->shape, impl_->grad);
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  auto t = make_constant(impl_->shape, impl_->data);
  t.impl_->dtype = impl_->dtype;
  return t;
}

Tensor Tensor::to(DType dtype) const {
  require_defined(*this, "to");
  return from(impl_->shape, impl_->data, dtype);
}

bool Tensor::all_finite() const {
  auto d = data();
  return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

Tensor make_op_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                      BackwardFn backward, const char* name) {
  auto out = make_constant(std::move(shape), std::move(data));
  std::shared_ptr<TapeState> tape;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    auto t = Access::impl(in).tape.lock();
    if (!t) continue;
    if (tape && tape != t) throw ConfigError(std::string(name) + ": operands belong to different tapes");
    tape = std::move(t);
  }
  if (tape && tape->recording) {
    auto& impl = Access::impl(out);
    impl.requires_grad = true;
    impl.tape = tape;
    impl.node = static_cast<std::ptrdiff_t>(tape->nodes.size());
    tape->nodes.push_back(detail::Node{std::vector<Tensor>(inputs), out, std::move(backward), name});
  }
  return out;
}

Tape::Tape() : state_(std::make_shared<TapeState>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

Tensor Tape::variable(const Tensor& value) {
  require_defined(value, "variable");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = value.shape();
  impl->data = value.to_vector();
  impl->dtype = value.dtype();
  impl->requires_grad = true;
  impl->tape = state_;
  auto t = Access::wrap(std::move(impl));
  state_->leaves.push_back(t);
  return t;
}

std::optional<Tape> Tape::of(const Tensor& t) {
  if (!t.requires_grad()) return std::nullopt;
  auto state = Access::impl(t).tape.lock();
  if (!state) return std::nullopt;
  return Tape(std::move(state));
}

std::size_t Tape::size() const { return state_->nodes.size(); }
bool Tape::recording() const { return state_->recording; }

std::vector<Tensor> Tape::grad(const Tensor& output, const std::vector<Tensor>& wrt,
                               bool create_graph) {
  require_defined(output, "grad");
  if (output.numel() != 1) {
    throw DimensionError("grad: output must be a scalar, got " + shape_string(output.shape()) +
                         "; pass an explicit seed");
  }
  return grad(output, Tensor::full(output.shape(), 1.0), wrt, create_graph);
}

std::vector<Tensor> Tape::grad(const Tensor& output, const Tensor& seed,
                               const std::vector<Tensor>& wrt, bool create_graph) {
  require_same_shape(output, seed, "grad seed");
  auto& st = *state_;
  std::vector<Tensor> result;
  result.reserve(wrt.size());

  const bool on_tape = output.requires_grad() && Access::impl(output).tape.lock() == state_;
  std::unordered_map<const void*, Tensor> acc;
  acc.emplace(output.id(), seed);

  if (on_tape && Access::impl(output).node >= 0) {
    const auto end = static_cast<std::size_t>(Access::impl(output).node) + 1;
    // Forward sweep: which nodes connect a wrt tensor to the output.
    std::unordered_set<const void*> reach;
    for (const auto& w : wrt) reach.insert(w.id());
    std::vector<char> leads(end, 0);
    for (std::size_t n = 0; n < end; ++n) {
      for (const auto& in : st.nodes[n].inputs) {
        if (reach.count(in.id())) {
          leads[n] = 1;
          break;
        }
      }
      if (leads[n]) reach.insert(st.nodes[n].output.id());
    }

    RecordingScope scope(st, create_graph);
    for (std::size_t n = end; n-- > 0;) {
      if (!leads[n]) continue;
      // Copies: backward may append nodes and reallocate the vector.
      const Tensor out = st.nodes[n].output;
      auto it = acc.find(out.id());
      if (it == acc.end()) continue;
      const Tensor g = it->second;
      const std::vector<Tensor> inputs = st.nodes[n].inputs;
      const BackwardFn backward = st.nodes[n].backward;
      std::vector<bool> needed(inputs.size());
      bool any = false;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        needed[i] = inputs[i].requires_grad() && reach.count(inputs[i].id()) > 0;
        any = any || needed[i];
      }
      if (!any) continue;
      auto grads = backward(g, out, inputs, needed);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!needed[i] || i >= grads.size() || !grads[i].defined()) continue;
        auto [pos, inserted] = acc.try_emplace(inputs[i].id(), grads[i]);
        if (!inserted) pos->second = add(pos->second, grads[i]);
      }
    }
  }

  for (const auto& w : wrt) {
    auto it = acc.find(w.id());
    result.push_back(it != acc.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return result;
}

void Tape::backward(const Tensor& output) {
  if (state_->consumed) throw ConfigError("tape already replayed; tapes are single-use");
  auto grads = grad(output, state_->leaves, false);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& impl = Access::impl(state_->leaves[i]);
    impl.grad = grads[i].to_vector();
    impl.has_grad = true;
  }
  state_->consumed = true;
}

NoRecordGuard::NoRecordGuard(Tape& tape)
    : state_(tape.state_), previous_(state_->recording) {
  state_->recording = false;
}

NoRecordGuard::~NoRecordGuard() { state_->recording = previous_; }

// ---------------------------------------------------------------------------
// Activations

ActivationKind parse_activation(const std::string& name) {
  if (name == "silu") return ActivationKind::silu;
  if (name == "gelu") return ActivationKind::gelu;
  if (name == "elu_plus_one" || name == "elu+1") return ActivationKind::elu_plus_one;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::silu: return "silu";
    case ActivationKind::gelu: return "gelu";
    case ActivationKind::elu_plus_one: return "elu_plus_one";
  }
  return "?";
}

double activation_value(ActivationKind kind, double x, int order) {
  if (order < 0 || order > 3) {
    throw ConfigError("activation derivatives are available up to order 3, requested " +
                      std::to_string(order));
  }
  switch (kind) {
    case ActivationKind::silu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      const double u = s * (1.0 - s);
      switch (order) {
        case 0: return x * s;
        case 1: return s * (1.0 + x * (1.0 - s));
        case 2: return u * (2.0 + x * (1.0 - 2.0 * s));
        default: {
          const double t = 1.0 - 2.0 * s;
          return u * (t * (3.0 + x * t) - 2.0 * x * u);
        }
      }
    }
    case ActivationKind::gelu: {
      constexpr double inv_sqrt2 = 0.70710678118654752440;
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      const double phi = inv_sqrt2pi * std::exp(-0.5 * x * x);
      switch (order) {
        case 0: return x * 0.5 * std::erfc(-x * inv_sqrt2);
        case 1: return 0.5 * std::erfc(-x * inv_sqrt2) + x * phi;
        case 2: return phi * (2.0 - x * x);
        default: return phi * (x * x * x - 4.0 * x);
      }
    }
    case ActivationKind::elu_plus_one:
      if (x > 0.0) return order == 0 ? x + 1.0 : (order == 1 ? 1.0 : 0.0);
      return std::exp(x);
  }
  throw ConfigError("unsupported activation");
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v = x[i * k + p];
      if (v == 0.0) continue;
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += v * brow[j];
    }
  }
  return make_op_result({m, n}, std::move(out), {a, b},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                           const std::vector<bool>& need) {
                          std::vector<Tensor> r(2);
                          if (need[0]) r[0] = matmul(g, transpose(in[1]));
                          if (need[1]) r[1] = matmul(transpose(in[0]), g);
                          return r;
                        },
                        "matmul");
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return make_op_result({n, m}, std::move(out), {a},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                           const std::vector<bool>&) { return std::vector<Tensor>{transpose(g)}; },
                        "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x + y; },
                    [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                       const std::vector<bool>&) { return std::vector<Tensor>{g, g}; },
                    "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x - y; },
                    [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                       const std::vector<bool>& need) {
                      return std::vector<Tensor>{g, need[1] ? neg(g) : Tensor{}};
                    },
                    "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x * y; },
                    [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                       const std::vector<bool>& need) {
                      std::vector<Tensor> r(2);
                      if (need[0]) r[0] = mul(g, in[1]);
                      if (need[1]) r[1] = mul(g, in[0]);
                      return r;
                    },
                    "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x / y; },
                    [](const Tensor& g, const Tensor& out, const std::vector<Tensor>& in,
                       const std::vector<bool>& need) {
                      std::vector<Tensor> r(2);
                      if (need[0]) r[0] = div(g, in[1]);
                      if (need[1]) r[1] = neg(div(mul(g, out), in[1]));
                      return r;
                    },
                    "div");
}

Tensor neg(const Tensor& a) {
  require_defined(a, "neg");
  return map_unary(a, [](double x) { return -x; }, {a},
                   [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                      const std::vector<bool>&) { return std::vector<Tensor>{neg(g)}; },
                   "neg");
}

Tensor scale(const Tensor& a, double s) {
  require_defined(a, "scale");
  return map_unary(a, [s](double x) { return x * s; }, {a},
                   [s](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                       const std::vector<bool>&) { return std::vector<Tensor>{scale(g, s)}; },
                   "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined(a, "add_scalar");
  return map_unary(a, [s](double x) { return x + s; }, {a},
                   [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                      const std::vector<bool>&) { return std::vector<Tensor>{g}; },
                   "add_scalar");
}

Tensor pow(const Tensor& a, double exponent) {
  require_defined(a, "pow");
  return map_unary(a, [exponent](double x) { return std::pow(x, exponent); }, {a},
                   [exponent](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                              const std::vector<bool>&) {
                     return std::vector<Tensor>{mul(g, scale(pow(in[0], exponent - 1.0), exponent))};
                   },
                   "pow");
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op_result({1}, {s}, {a},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                           const std::vector<bool>&) {
                          return std::vector<Tensor>{expand(g, in[0].shape())};
                        },
                        "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor expand(const Tensor& s, const Shape& shape) {
  require_defined(s, "expand");
  if (s.numel() != 1) throw DimensionError("expand: expected a single-element tensor");
  return make_op_result(shape, std::vector<double>(shape_numel(shape), s.at(0)), {s},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                           const std::vector<bool>&) {
                          return std::vector<Tensor>{reshape(sum(g), in[0].shape())};
                        },
                        "expand");
}

Tensor sum_rows(const Tensor& a) {
  require_matrix(a, "sum_rows");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(m, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  return make_op_result({1, m}, std::move(out), {a},
                        [n](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                            const std::vector<bool>&) {
                          return std::vector<Tensor>{broadcast_rows(g, n)};
                        },
                        "sum_rows");
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  require_matrix(row, "broadcast_rows");
  if (row.rows() != 1) throw DimensionError("broadcast_rows: expected [1 x m]");
  const std::size_t m = row.cols();
  std::vector<double> out(n * m);
  auto x = row.data();
  for (std::size_t i = 0; i < n; ++i) std::copy(x.begin(), x.end(), out.begin() + i * m);
  return make_op_result({n, m}, std::move(out), {row},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                           const std::vector<bool>&) { return std::vector<Tensor>{sum_rows(g)}; },
                        "broadcast_rows");
}

Tensor sum_cols(const Tensor& a) {
  require_matrix(a, "sum_cols");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += x[i * m + j];
  return make_op_result({n, 1}, std::move(out), {a},
                        [m](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                            const std::vector<bool>&) {
                          return std::vector<Tensor>{broadcast_cols(g, m)};
                        },
                        "sum_cols");
}

Tensor broadcast_cols(const Tensor& col, std::size_t m) {
  require_matrix(col, "broadcast_cols");
  if (col.cols() != 1) throw DimensionError("broadcast_cols: expected [n x 1]");
  const std::size_t n = col.rows();
  std::vector<double> out(n * m);
  auto x = col.data();
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.begin() + i * m, m, x[i]);
  return make_op_result({n, m}, std::move(out), {col},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                           const std::vector<bool>&) { return std::vector<Tensor>{sum_cols(g)}; },
                        "broadcast_cols");
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return make_op_result(shape, a.to_vector(), {a},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                           const std::vector<bool>&) {
                          return std::vector<Tensor>{reshape(g, in[0].shape())};
                        },
                        "reshape");
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t n = a.rows(), m = a.cols();
  if (count == 0 || start + count > m) throw DimensionError("slice_cols: range out of bounds");
  std::vector<double> out(n * count);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.begin() + i * m + start, count, out.begin() + i * count);
  return make_op_result({n, count}, std::move(out), {a},
                        [start, m](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                                   const std::vector<bool>&) {
                          return std::vector<Tensor>{pad_cols(g, start, m)};
                        },
                        "slice_cols");
}

Tensor pad_cols(const Tensor& a, std::size_t start, std::size_t total) {
  require_matrix(a, "pad_cols");
  const std::size_t n = a.rows(), c = a.cols();
  if (start + c > total) throw DimensionError("pad_cols: range out of bounds");
  std::vector<double> out(n * total, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.begin() + i * c, c, out.begin() + i * total + start);
  return make_op_result({n, total}, std::move(out), {a},
                        [start, c](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                                   const std::vector<bool>&) {
                          return std::vector<Tensor>{slice_cols(g, start, c)};
                        },
                        "pad_cols");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tensor acc;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != parts[0].rows()) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  // Expressed through pad_cols so the backward rule comes for free.
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto placed = pad_cols(p, offset, total);
    acc = acc.defined() ? add(acc, placed) : placed;
    offset += p.cols();
  }
  return acc;
}

namespace {
Tensor place_scalar(const Tensor& s, const Shape& shape, std::size_t row, std::size_t col) {
  std::vector<double> out(shape_numel(shape), 0.0);
  out[row * shape[1] + col] = s.at(0);
  return make_op_result(shape, std::move(out), {s},
                        [row, col](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                                   const std::vector<bool>&) {
                          return std::vector<Tensor>{select(g, row, col)};
                        },
                        "place_scalar");
}
}  // namespace

Tensor select(const Tensor& a, std::size_t row, std::size_t col) {
  require_matrix(a, "select");
  if (row >= a.rows() || col >= a.cols()) throw DimensionError("select: index out of bounds");
  return make_op_result({1}, {a(row, col)}, {a},
                        [row, col](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                                   const std::vector<bool>&) {
                          return std::vector<Tensor>{place_scalar(g, in[0].shape(), row, col)};
                        },
                        "select");
}

Tensor activation(const Tensor& x, ActivationKind kind, int order) {
  require_defined(x, "activation");
  // Validate eagerly so unknown orders surface as configuration errors.
  (void)activation_value(kind, 0.0, order);
  return map_unary(x, [kind, order](double v) { return activation_value(kind, v, order); }, {x},
                   [kind, order](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                                 const std::vector<bool>&) {
                     return std::vector<Tensor>{mul(g, activation(in[0], kind, order + 1))};
                   },
                   "activation");
}

Tensor softmax_rows(const Tensor& x, double scale_factor,
                    std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  if (mask && mask->size() != n * m) throw DimensionError("softmax_rows: mask shape mismatch");
  std::vector<double> out(n * m, 0.0);
  auto v = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto keep = [&](std::size_t j) { return !mask || (*mask)[i * m + j] != 0; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (keep(j)) mx = std::max(mx, scale_factor * v[i * m + j]);
    if (!std::isfinite(mx) && mx < 0) throw DimensionError("softmax_rows: row fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!keep(j)) continue;
      out[i * m + j] = std::exp(scale_factor * v[i * m + j] - mx);
      total += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= total;
  }
  return make_op_result({n, m}, std::move(out), {x},
                        [scale_factor, m](const Tensor& g, const Tensor& y,
                                          const std::vector<Tensor>&, const std::vector<bool>&) {
                          auto inner = broadcast_cols(sum_cols(mul(g, y)), m);
                          return std::vector<Tensor>{scale(mul(y, sub(g, inner)), scale_factor)};
                        },
                        "softmax_rows");
}

namespace {

void check_conv_operands(const Tensor& x, const Tensor& kernel) {
  require_defined(x, "depthwise_conv2d");
  require_defined(kernel, "depthwise_conv2d");
  if (x.rank() != 3 || kernel.rank() != 3) {
    throw DimensionError("depthwise_conv2d: expected [H x W x C] input and [k x k x C] kernel");
  }
  const auto k = kernel.shape()[0];
  if (kernel.shape()[1] != k) throw ConfigError("depthwise_conv2d: kernel must be square");
  if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
  if (kernel.shape()[2] != x.shape()[2]) throw DimensionError("depthwise_conv2d: channel mismatch");
}

}  // namespace

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  check_conv_operands(x, kernel);
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t k = kernel.shape()[0];
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<double> out(h * w * c, 0.0);
  auto xv = x.data();
  auto kv = kernel.data();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t s = 0; s < w; ++s) {
      double* o = out.data() + (r * w + s) * c;
      for (std::size_t a = 0; a < k; ++a) {
        const auto rr = static_cast<std::ptrdiff_t>(r + a) - pad;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t b = 0; b < k; ++b) {
          const auto ss = static_cast<std::ptrdiff_t>(s + b) - pad;
          if (ss < 0 || ss >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* xi = xv.data() + (static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(ss)) * c;
          const double* ki = kv.data() + (a * k + b) * c;
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += ki[ch] * xi[ch];
        }
      }
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, kernel},
                        [k](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                            const std::vector<bool>& need) {
                          std::vector<Tensor> r(2);
                          if (need[0]) r[0] = depthwise_conv2d(g, flip_kernel(in[1]));
                          if (need[1]) r[1] = dwconv_weight_grad(in[0], g, k);
                          return r;
                        },
                        "depthwise_conv2d");
}

Tensor flip_kernel(const Tensor& kernel) {
  require_defined(kernel, "flip_kernel");
  if (kernel.rank() != 3) throw DimensionError("flip_kernel: expected [k x k x C]");
  const std::size_t k = kernel.shape()[0], k2 = kernel.shape()[1], c = kernel.shape()[2];
  std::vector<double> out(k * k2 * c);
  auto kv = kernel.data();
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k2; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(a * k2 + b) * c + ch] = kv[((k - 1 - a) * k2 + (k2 - 1 - b)) * c + ch];
  return make_op_result(kernel.shape(), std::move(out), {kernel},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>&,
                           const std::vector<bool>&) { return std::vector<Tensor>{flip_kernel(g)}; },
                        "flip_kernel");
}

Tensor dwconv_weight_grad(const Tensor& x, const Tensor& grad_out, std::size_t k) {
  require_same_shape(x, grad_out, "dwconv_weight_grad");
  if (x.rank() != 3) throw DimensionError("dwconv_weight_grad: expected [H x W x C]");
  if (k % 2 == 0) throw ConfigError("dwconv_weight_grad: kernel size must be odd");
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<double> out(k * k * c, 0.0);
  auto xv = x.data();
  auto gv = grad_out.data();
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      double* o = out.data() + (a * k + b) * c;
      for (std::size_t r = 0; r < h; ++r) {
        const auto rr = static_cast<std::ptrdiff_t>(r + a) - pad;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t s = 0; s < w; ++s) {
          const auto ss = static_cast<std::ptrdiff_t>(s + b) - pad;
          if (ss < 0 || ss >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* gi = gv.data() + (r * w + s) * c;
          const double* xi = xv.data() + (static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(ss)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += gi[ch] * xi[ch];
        }
      }
    }
  }
  return make_op_result({k, k, c}, std::move(out), {x, grad_out},
                        [](const Tensor& g, const Tensor&, const std::vector<Tensor>& in,
                           const std::vector<bool>& need) {
                          std::vector<Tensor> r(2);
                          if (need[0]) r[0] = depthwise_conv2d(in[1], flip_kernel(g));
                          if (need[1]) r[1] = depthwise_conv2d(in[0], g);
                          return r;
                        },
                        "dwconv_weight_grad");
}

// ---------------------------------------------------------------------------
// Numerics helpers

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  require_defined(x, "finite_diff_grad");
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  auto base = x.to_vector();
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + h;
    const double up = f(Tensor::from(x.shape(), probe));
    probe[i] = base[i] - h;
    const double down = f(Tensor::from(x.shape(), probe));
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DivergenceError("finite_diff_grad: non-finite function value at coordinate " +
                            std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(g));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "relative_error");
  double diff = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) diff += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(diff) / std::max(frobenius_norm(b), floor);
}

}  // namespace ttc
