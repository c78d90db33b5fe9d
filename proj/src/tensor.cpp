#include "xg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace xg {

namespace {
thread_local uint64_t g_seq = 0;
thread_local bool g_recording = true;
bool g_finite_checks = true;
}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

bool autograd_recording() { return g_recording; }
NoGradGuard::NoGradGuard() : prev(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev; }

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::from(std::vector<double> data, Shape shape, bool requires_grad) {
  if (data.size() != shape_numel(shape))
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->seq = ++g_seq;
  return Tensor(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const size_t n = shape_numel(shape);
  return from(std::vector<double>(n, 0.0), std::move(shape), requires_grad);
}

Tensor Tensor::ones(Shape shape) {
  const size_t n = shape_numel(shape);
  return from(std::vector<double>(n, 1.0), std::move(shape));
}

Tensor Tensor::full(Shape shape, double v) {
  const size_t n = shape_numel(shape);
  return from(std::vector<double>(n, v), std::move(shape));
}

Tensor Tensor::scalar(double v) { return from({v}, Shape{}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::vector<double> d(shape_numel(shape));
  for (auto& x : d) x = rng.uniform(lo, hi);
  return from(std::move(d), std::move(shape), requires_grad);
}

Tensor Tensor::normal(Shape shape, double mean, double sd, Rng& rng, bool requires_grad) {
  std::vector<double> d(shape_numel(shape));
  for (auto& x : d) x = mean + sd * rng.normal();
  return from(std::move(d), std::move(shape), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node->value[0];
}

const std::vector<double>& Tensor::grad_data() const {
  if (node->grad.empty()) throw Error("grad_data(): no gradient accumulated");
  return node->grad;
}

Tensor Tensor::grad() const { return Tensor::from(grad_data(), shape()); }

void Tensor::zero_grad() { node->grad.assign(numel(), 0.0); }

Tensor Tensor::detached() const {
  auto n = std::make_shared<Node>();
  n->shape = node->shape;
  n->value = node->value;
  n->requires_grad = false;
  n->seq = ++g_seq;
  return Tensor(n);
}

void Tensor::validate_finite(const char* ctx) const {
  for (double v : node->value)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + ctx + " " + shape_str(shape()));
}

Tensor make_node(Shape shape, std::vector<double> value, const char* op,
                 std::vector<Tensor> parents, BackwardFn backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->seq = ++g_seq;
  Tensor out(n);
  if (g_finite_checks) out.validate_finite(op);

  bool track = g_recording;
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p.node->requires_grad) track = true;
  }
  if (track && backward_fn) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node);
    n->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace xg
