#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xg/common.hpp"

namespace xg {

class Tensor;
using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

// One recorded value/operation. The DAG of nodes is the tape: eager execution
// assigns monotonically increasing sequence numbers per thread, so every
// node's inputs precede it and sorting by seq is a topological order.
struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // leaf gradient accumulator, lazily sized
  uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;
  bool consumed = false;  // a root that has been backward()ed
};

// Dense row-major f64 tensor handle. Values are treated as immutable once a
// node participates in a graph; mutable_data() exists for leaf initialization
// and optimizer updates between recordings.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node(std::move(n)) {}

  static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);
  static Tensor normal(Shape shape, double mean, double sd, Rng& rng, bool requires_grad = false);

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  int dim(int i) const { return node->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node->shape.size()); }
  size_t numel() const { return node->value.size(); }
  bool requires_grad() const { return node->requires_grad; }

  const std::vector<double>& data() const { return node->value; }
  std::vector<double>& mutable_data() { return node->value; }
  double item() const;

  bool has_grad() const { return !node->grad.empty(); }
  const std::vector<double>& grad_data() const;
  Tensor grad() const;  // leaf grad as a fresh constant tensor
  void zero_grad();

  // Fresh leaf with copied values and no graph attachment.
  Tensor detached() const;

  // Hard error on any NaN/Inf; `ctx` names the producer in the message.
  void validate_finite(const char* ctx) const;

  std::shared_ptr<Node> node;
};

// Construction helper used by every op implementation.
Tensor make_node(Shape shape, std::vector<double> value, const char* op,
                 std::vector<Tensor> parents, BackwardFn backward_fn);

// Global toggle for the per-op finiteness sweep (on by default).
void set_finite_checks(bool on);
bool finite_checks_enabled();

// Thread-local recording switch. While disabled, ops compute values but attach
// no graph; the plain backward pass runs under this to stay purely numeric.
bool autograd_recording();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

}  // namespace xg
