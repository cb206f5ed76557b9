#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pf::diff {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One node of the computation graph. Interior nodes carry a backward
// closure that scatters this node's grad into its parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = false;
  uint64_t grad_pass = 0;  // pass id of the backward() that last wrote grad
  std::string name;        // leaf parameter name; op name for interior nodes
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

// Value-semantics handle to a Node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  // Leaf constructors. Leaf values are validated to be finite.
  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad,
                     std::string name = "");
  static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = "");
  static Tensor full(Shape shape, double v, bool requires_grad = false, std::string name = "");
  static Tensor scalar(double v, bool requires_grad = false, std::string name = "");

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return n_->is_leaf; }
  const std::string& name() const { return n_->name; }

  std::span<const double> values() const { return n_->value; }
  std::span<double> mutable_values() { return n_->value; }
  double at(int64_t i) const { return n_->value[static_cast<size_t>(i)]; }
  double scalar_value() const;

  // Gradient as written by the most recent backward pass. Empty span when the
  // node was not reached.
  std::span<const double> grad() const;
  // Allocates a zero grad marked current if the last backward did not reach
  // this node. Used by the optimizer for parameters outside the active graph.
  void materialize_grad();

  std::shared_ptr<Node>& node() { return n_; }
  const std::shared_ptr<Node>& node() const { return n_; }
  Node* raw() const { return n_.get(); }

 private:
  std::shared_ptr<Node> n_;
};

// Execution tape. Records interior ops in execution order; backward replays
// in reverse. Single-writer: graph construction and backward are not
// concurrency-safe (pure forward reads of frozen leaves are).
class Graph {
 public:
  static Graph& active();

  void record(const std::shared_ptr<Node>& n);
  size_t size() const { return tape_.size(); }
  uint64_t pass_id() const { return pass_id_; }

  // Reverse pass from a scalar loss. Grads of all reached nodes are
  // overwritten (not accumulated across calls).
  void backward(const Tensor& loss);

  // Drops all recorded interior nodes. Leaves survive via external handles.
  void clear();

  // When enabled, backward scans each propagated grad for NaN and throws a
  // diagnostic naming the op.
  void set_check_nan(bool on) { check_nan_ = on; }

 private:
  std::vector<std::shared_ptr<Node>> tape_;
  uint64_t pass_id_ = 0;
  bool check_nan_ = false;
};

// Custom-op entry point used by downstream modules (field sampling, scene
// contraction). `backward` reads out.grad and accumulates into parents.
Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(Node&)> backward);

// Accumulate `src` into `parent` grad, allocating/zeroing once per pass.
void accumulate_grad(Node& parent, const double* src, int64_t n);
double* grad_sink(Node& parent);  // zeroed-once-per-pass grad buffer, or null

// ---- elementwise binary (same shape) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// ---- scalar broadcast ----
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// ---- elementwise unary ----
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// ---- shape / layout ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);        // (n,ki) -> (n,sum ki)
Tensor slice_cols(const Tensor& a, int col0, int ncols);     // (n,k) -> (n,ncols)
Tensor slice_rows(const Tensor& a, int64_t row0, int64_t nrows);
Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx);
// Rows placed at idx (unique indices), zeros elsewhere.
Tensor scatter_rows(const std::vector<int64_t>& idx, const Tensor& rows, int64_t n_out);
Tensor repeat_rows(const Tensor& a, int times);              // row i -> rows i*times..i*times+times-1

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);             // (n,k)x(k,m)
Tensor add_row(const Tensor& a, const Tensor& row);          // (n,k)+(k) bias
Tensor mul_col(const Tensor& a, const Tensor& col);          // (n,k) rows scaled by (n)
Tensor div_col(const Tensor& a, const Tensor& col);

// ---- reductions / scans ----
Tensor sum(const Tensor& a);                                 // -> (1)
Tensor mean(const Tensor& a);                                // -> (1)
Tensor sum_axis1(const Tensor& a);                           // (n,k) -> (n)
Tensor cumsum_exclusive_axis1(const Tensor& a);              // (n,k) scan along k

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Worker threads for row-parallel kernels; honors PLANEFIELD_THREADS.
int worker_count();
void parallel_rows(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace pf::diff
