#include "diffcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pf::diff {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("diffcore: " + msg); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

int threads_from_env() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int n = hw;
  if (const char* env = std::getenv("PLANEFIELD_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) n = std::min(v, hw);
  }
  return n;
}

}  // namespace

int worker_count() {
  static int n = threads_from_env();
  return n;
}

void parallel_rows(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
#ifdef _OPENMP
  int workers = worker_count();
  if (workers > 1 && n >= 256) {
#pragma omp parallel num_threads(workers)
    {
      int tid = omp_get_thread_num();
      int nt = omp_get_num_threads();
      int64_t chunk = (n + nt - 1) / nt;
      int64_t lo = tid * chunk;
      int64_t hi = std::min(n, lo + chunk);
      if (lo < hi) fn(lo, hi);
    }
    return;
  }
#endif
  fn(0, n);
}

// ---------------------------------------------------------------------------
// Tensor / Graph
// ---------------------------------------------------------------------------

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad,
                    std::string name) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    fail("leaf '" + name + "': " + std::to_string(values.size()) + " values for shape " +
         shape_str(shape));
  for (double v : values)
    if (!std::isfinite(v)) fail("leaf '" + name + "': non-finite value rejected");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  n->name = std::move(name);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad, std::string name) {
  auto count = static_cast<size_t>(shape_numel(shape));
  return leaf(std::move(shape), std::vector<double>(count, 0.0), requires_grad, std::move(name));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad, std::string name) {
  auto count = static_cast<size_t>(shape_numel(shape));
  return leaf(std::move(shape), std::vector<double>(count, v), requires_grad, std::move(name));
}

Tensor Tensor::scalar(double v, bool requires_grad, std::string name) {
  return leaf({1}, {v}, requires_grad, std::move(name));
}

double Tensor::scalar_value() const {
  if (numel() != 1) fail("scalar_value on tensor of shape " + shape_str(shape()));
  return n_->value[0];
}

std::span<const double> Tensor::grad() const {
  if (n_->grad_pass != Graph::active().pass_id() || n_->grad.empty())
    return {};
  return n_->grad;
}

void Tensor::materialize_grad() {
  if (!n_->requires_grad) fail("materialize_grad on non-grad tensor");
  if (n_->grad_pass != Graph::active().pass_id() || n_->grad.empty()) {
    n_->grad.assign(n_->value.size(), 0.0);
    n_->grad_pass = Graph::active().pass_id();
  }
}

Graph& Graph::active() {
  static Graph g;
  return g;
}

void Graph::record(const std::shared_ptr<Node>& n) { tape_.push_back(n); }

void Graph::clear() { tape_.clear(); }

double* grad_sink(Node& parent) {
  if (!parent.requires_grad) return nullptr;
  uint64_t pass = Graph::active().pass_id();
  if (parent.grad_pass != pass || parent.grad.size() != parent.value.size()) {
    parent.grad.assign(parent.value.size(), 0.0);
    parent.grad_pass = pass;
  }
  return parent.grad.data();
}

void accumulate_grad(Node& parent, const double* src, int64_t n) {
  double* dst = grad_sink(parent);
  if (!dst) return;
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) fail("backward: loss must be scalar, got " + shape_str(loss.shape()));
  ++pass_id_;
  Node* ln = loss.raw();
  ln->grad.assign(1, 1.0);
  ln->grad_pass = pass_id_;

  // Locate the loss on the tape; everything after it cannot contribute.
  size_t end = tape_.size();
  while (end > 0 && tape_[end - 1].get() != ln) --end;
  if (end == 0 && !tape_.empty() && !ln->is_leaf)
    fail("backward: loss node is not on the active tape");

  for (size_t i = end; i-- > 0;) {
    Node& n = *tape_[i];
    if (n.grad_pass != pass_id_ || n.grad.empty()) continue;  // unreached
    if (check_nan_) {
      for (double g : n.grad)
        if (std::isnan(g)) fail("backward: NaN gradient at op '" + n.name + "'");
    }
    if (n.backward) n.backward(n);
  }
}

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    fail(std::string(name) + ": value count does not match shape");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->name = name;
  bool needs_grad = false;
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    needs_grad = needs_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  n->requires_grad = needs_grad;
  if (needs_grad) {
    n->backward = std::move(backward);
    Graph::active().record(n);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise binary
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] + pb[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [n](Node& o) {
    accumulate_grad(*o.parents[0], o.grad.data(), n);
    accumulate_grad(*o.parents[1], o.grad.data(), n);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] - pb[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [n](Node& o) {
    accumulate_grad(*o.parents[0], o.grad.data(), n);
    if (double* gb = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i) gb[i] -= o.grad[static_cast<size_t>(i)];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] * pb[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [n](Node& o) {
    const double* va = o.parents[0]->value.data();
    const double* vb = o.parents[1]->value.data();
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) ga[i] += o.grad[static_cast<size_t>(i)] * vb[i];
    if (double* gb = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i) gb[i] += o.grad[static_cast<size_t>(i)] * va[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] / pb[i];
  return make_op("div", a.shape(), std::move(out), {a, b}, [n](Node& o) {
    const double* va = o.parents[0]->value.data();
    const double* vb = o.parents[1]->value.data();
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) ga[i] += o.grad[static_cast<size_t>(i)] / vb[i];
    if (double* gb = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i)
        gb[i] -= o.grad[static_cast<size_t>(i)] * va[i] / (vb[i] * vb[i]);
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] + s;
  return make_op("add_scalar", a.shape(), std::move(out), {a},
                 [n](Node& o) { accumulate_grad(*o.parents[0], o.grad.data(), n); });
}

Tensor mul_scalar(const Tensor& a, double s) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] * s;
  return make_op("mul_scalar", a.shape(), std::move(out), {a}, [n, s](Node& o) {
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) ga[i] += o.grad[static_cast<size_t>(i)] * s;
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd dfdx_from_xy) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i]);
  return make_op(name, a.shape(), std::move(out), {a}, [n, dfdx_from_xy](Node& o) {
    const double* x = o.parents[0]->value.data();
    const double* y = o.value.data();
    if (double* g = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i)
        g[i] += o.grad[static_cast<size_t>(i)] * dfdx_from_xy(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}
Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}
Tensor sqrt(const Tensor& a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}
Tensor sin(const Tensor& a) {
  return unary_op("sin", a, [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}
Tensor cos(const Tensor& a) {
  return unary_op("cos", a, [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}
Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
Tensor softplus(const Tensor& a) {
  return unary_op("softplus", a, stable_softplus,
                  [](double x, double) { return stable_sigmoid(x); });
}
Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
Tensor abs(const Tensor& a) {
  return unary_op("abs", a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op("clamp", a,
                  [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                  [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape / layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    fail("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  int64_t n = a.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {a},
                 [n](Node& o) { accumulate_grad(*o.parents[0], o.grad.data(), n); });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols: empty input");
  int64_t rows = parts[0].dim(0);
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) fail("concat_cols: incompatible part shape");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(rows * total));
  int off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const double* src = parts[pi].values().data();
    int w = widths[pi];
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(src + r * w, w, out.data() + r * total + off);
    off += w;
  }
  std::vector<Tensor> tensor_parts = parts;
  return make_op("concat_cols", {static_cast<int>(rows), total}, std::move(out), tensor_parts,
                 [rows, total, widths](Node& o) {
                   int off2 = 0;
                   for (size_t pi = 0; pi < o.parents.size(); ++pi) {
                     int w = widths[pi];
                     if (double* g = grad_sink(*o.parents[pi])) {
                       for (int64_t r = 0; r < rows; ++r)
                         for (int c = 0; c < w; ++c)
                           g[r * w + c] += o.grad[static_cast<size_t>(r * total + off2 + c)];
                     }
                     off2 += w;
                   }
                 });
}

Tensor slice_cols(const Tensor& a, int col0, int ncols) {
  if (a.rank() != 2) fail("slice_cols: expects rank-2 input");
  int64_t rows = a.dim(0);
  int k = a.dim(1);
  if (col0 < 0 || col0 + ncols > k) fail("slice_cols: out of range");
  std::vector<double> out(static_cast<size_t>(rows * ncols));
  const double* src = a.values().data();
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(src + r * k + col0, ncols, out.data() + r * ncols);
  return make_op("slice_cols", {static_cast<int>(rows), ncols}, std::move(out), {a},
                 [rows, k, col0, ncols](Node& o) {
                   if (double* g = grad_sink(*o.parents[0]))
                     for (int64_t r = 0; r < rows; ++r)
                       for (int c = 0; c < ncols; ++c)
                         g[r * k + col0 + c] += o.grad[static_cast<size_t>(r * ncols + c)];
                 });
}

Tensor slice_rows(const Tensor& a, int64_t row0, int64_t nrows) {
  int64_t rows = a.dim(0);
  int64_t k = a.rank() == 2 ? a.dim(1) : 1;
  if (row0 < 0 || row0 + nrows > rows) fail("slice_rows: out of range");
  std::vector<double> out(static_cast<size_t>(nrows * k));
  std::copy_n(a.values().data() + row0 * k, nrows * k, out.data());
  Shape shape = a.shape();
  shape[0] = static_cast<int>(nrows);
  return make_op("slice_rows", std::move(shape), std::move(out), {a},
                 [row0, nrows, k](Node& o) {
                   if (double* g = grad_sink(*o.parents[0]))
                     for (int64_t i = 0; i < nrows * k; ++i)
                       g[row0 * k + i] += o.grad[static_cast<size_t>(i)];
                 });
}

Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx) {
  int64_t rows = a.dim(0);
  int64_t k = a.rank() == 2 ? a.dim(1) : 1;
  int64_t m = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(m * k));
  const double* src = a.values().data();
  for (int64_t i = 0; i < m; ++i) {
    if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= rows)
      fail("gather_rows: index out of range");
    std::copy_n(src + idx[static_cast<size_t>(i)] * k, k, out.data() + i * k);
  }
  Shape shape = a.shape();
  shape[0] = static_cast<int>(m);
  auto indices = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_op("gather_rows", std::move(shape), std::move(out), {a},
                 [indices, m, k](Node& o) {
                   if (double* g = grad_sink(*o.parents[0]))
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t c = 0; c < k; ++c)
                         g[(*indices)[static_cast<size_t>(i)] * k + c] +=
                             o.grad[static_cast<size_t>(i * k + c)];
                 });
}

Tensor scatter_rows(const std::vector<int64_t>& idx, const Tensor& rows, int64_t n_out) {
  int64_t m = rows.dim(0);
  if (static_cast<int64_t>(idx.size()) != m) fail("scatter_rows: index count mismatch");
  int64_t k = rows.rank() == 2 ? rows.dim(1) : 1;
  std::vector<double> out(static_cast<size_t>(n_out * k), 0.0);
  const double* src = rows.values().data();
  for (int64_t i = 0; i < m; ++i) {
    int64_t r = idx[static_cast<size_t>(i)];
    if (r < 0 || r >= n_out) fail("scatter_rows: index out of range");
    std::copy_n(src + i * k, k, out.data() + r * k);
  }
  Shape shape = rows.shape();
  shape[0] = static_cast<int>(n_out);
  auto indices = std::make_shared<std::vector<int64_t>>(idx);
  return make_op("scatter_rows", std::move(shape), std::move(out), {rows},
                 [indices, m, k](Node& o) {
                   if (double* g = grad_sink(*o.parents[0]))
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t c = 0; c < k; ++c)
                         g[i * k + c] +=
                             o.grad[static_cast<size_t>((*indices)[static_cast<size_t>(i)] * k + c)];
                 });
}

Tensor repeat_rows(const Tensor& a, int times) {
  int64_t rows = a.dim(0);
  int64_t k = a.rank() == 2 ? a.dim(1) : 1;
  std::vector<double> out(static_cast<size_t>(rows * times * k));
  const double* src = a.values().data();
  for (int64_t r = 0; r < rows; ++r)
    for (int t = 0; t < times; ++t)
      std::copy_n(src + r * k, k, out.data() + (r * times + t) * k);
  Shape shape = a.shape();
  shape[0] = static_cast<int>(rows * times);
  return make_op("repeat_rows", std::move(shape), std::move(out), {a},
                 [rows, times, k](Node& o) {
                   if (double* g = grad_sink(*o.parents[0]))
                     for (int64_t r = 0; r < rows; ++r)
                       for (int t = 0; t < times; ++t)
                         for (int64_t c = 0; c < k; ++c)
                           g[r * k + c] += o.grad[static_cast<size_t>((r * times + t) * k + c)];
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(static_cast<size_t>(n * m), 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.data();
  parallel_rows(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* orow = po + i * m;
      const double* arow = pa + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = pb + kk * m;
        for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    }
  });
  return make_op("matmul", {static_cast<int>(n), static_cast<int>(m)}, std::move(out), {a, b},
                 [n, k, m](Node& o) {
                   const double* va = o.parents[0]->value.data();
                   const double* vb = o.parents[1]->value.data();
                   const double* go = o.grad.data();
                   if (double* ga = grad_sink(*o.parents[0])) {
                     // dA = dC * B^T
                     parallel_rows(n, [&](int64_t lo, int64_t hi) {
                       for (int64_t i = lo; i < hi; ++i)
                         for (int64_t kk = 0; kk < k; ++kk) {
                           double acc = 0.0;
                           const double* grow = go + i * m;
                           const double* brow = vb + kk * m;
                           for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                           ga[i * k + kk] += acc;
                         }
                     });
                   }
                   if (double* gb = grad_sink(*o.parents[1])) {
                     // dB = A^T * dC; parallel over B rows, serial over i.
                     parallel_rows(k, [&](int64_t lo, int64_t hi) {
                       for (int64_t kk = lo; kk < hi; ++kk) {
                         double* brow = gb + kk * m;
                         for (int64_t i = 0; i < n; ++i) {
                           double av = va[i * k + kk];
                           if (av == 0.0) continue;
                           const double* grow = go + i * m;
                           for (int64_t j = 0; j < m; ++j) brow[j] += av * grow[j];
                         }
                       }
                     });
                   }
                 });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (a.rank() != 2 || row.numel() != a.dim(1)) fail("add_row: incompatible shapes");
  int64_t n = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * k));
  const double* pa = a.values().data();
  const double* pr = row.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) out[static_cast<size_t>(i * k + c)] = pa[i * k + c] + pr[c];
  return make_op("add_row", a.shape(), std::move(out), {a, row}, [n, k](Node& o) {
    accumulate_grad(*o.parents[0], o.grad.data(), n * k);
    if (double* gr = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < k; ++c) gr[c] += o.grad[static_cast<size_t>(i * k + c)];
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  if (a.rank() != 2 || col.numel() != a.dim(0)) fail("mul_col: incompatible shapes");
  int64_t n = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * k));
  const double* pa = a.values().data();
  const double* pc = col.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) out[static_cast<size_t>(i * k + c)] = pa[i * k + c] * pc[i];
  return make_op("mul_col", a.shape(), std::move(out), {a, col}, [n, k](Node& o) {
    const double* va = o.parents[0]->value.data();
    const double* vc = o.parents[1]->value.data();
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < k; ++c)
          ga[i * k + c] += o.grad[static_cast<size_t>(i * k + c)] * vc[i];
    if (double* gc = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t c = 0; c < k; ++c)
          acc += o.grad[static_cast<size_t>(i * k + c)] * va[i * k + c];
        gc[i] += acc;
      }
  });
}

Tensor div_col(const Tensor& a, const Tensor& col) {
  if (a.rank() != 2 || col.numel() != a.dim(0)) fail("div_col: incompatible shapes");
  int64_t n = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * k));
  const double* pa = a.values().data();
  const double* pc = col.values().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) out[static_cast<size_t>(i * k + c)] = pa[i * k + c] / pc[i];
  return make_op("div_col", a.shape(), std::move(out), {a, col}, [n, k](Node& o) {
    const double* va = o.parents[0]->value.data();
    const double* vc = o.parents[1]->value.data();
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < k; ++c)
          ga[i * k + c] += o.grad[static_cast<size_t>(i * k + c)] / vc[i];
    if (double* gc = grad_sink(*o.parents[1]))
      for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t c = 0; c < k; ++c)
          acc += o.grad[static_cast<size_t>(i * k + c)] * va[i * k + c];
        gc[i] -= acc / (vc[i] * vc[i]);
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions / scans
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  int64_t n = a.numel();
  double acc = 0.0;
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  return make_op("sum", {1}, {acc}, {a}, [n](Node& o) {
    double g = o.grad[0];
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  int64_t n = a.numel();
  double acc = 0.0;
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  acc /= static_cast<double>(n);
  return make_op("mean", {1}, {acc}, {a}, [n](Node& o) {
    double g = o.grad[0] / static_cast<double>(n);
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Tensor sum_axis1(const Tensor& a) {
  if (a.rank() != 2) fail("sum_axis1: expects rank-2 input");
  int64_t n = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t c = 0; c < k; ++c) acc += pa[i * k + c];
    out[static_cast<size_t>(i)] = acc;
  }
  return make_op("sum_axis1", {static_cast<int>(n)}, std::move(out), {a}, [n, k](Node& o) {
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < k; ++c) ga[i * k + c] += o.grad[static_cast<size_t>(i)];
  });
}

Tensor cumsum_exclusive_axis1(const Tensor& a) {
  if (a.rank() != 2) fail("cumsum_exclusive_axis1: expects rank-2 input");
  int64_t n = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * k));
  const double* pa = a.values().data();
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t c = 0; c < k; ++c) {
      out[static_cast<size_t>(i * k + c)] = acc;
      acc += pa[i * k + c];
    }
  }
  return make_op("cumsum_exclusive_axis1", a.shape(), std::move(out), {a}, [n, k](Node& o) {
    // d out[i,j] / d in[i,c] = 1 for c < j, so grad_in = reverse exclusive cumsum.
    if (double* ga = grad_sink(*o.parents[0]))
      for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t c = k - 1; c >= 0; --c) {
          ga[i * k + c] += acc;
          acc += o.grad[static_cast<size_t>(i * k + c)];
        }
      }
  });
}

}  // namespace pf::diff
