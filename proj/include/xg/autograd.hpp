#pragma once

#include <functional>
#include <vector>

#include "xg/tensor.hpp"

namespace xg {

// Accumulates d(loss)/d(leaf) into every requires-grad leaf's grad buffer.
// Consumes the root: calling backward twice on the same loss is an error.
void backward(const Tensor& loss);

// Functional gradient query: returns d(out)/d(wrt[i]) without touching grad
// buffers and without consuming anything. With create_graph the returned
// gradients are live graph nodes, so they can be differentiated again --
// this is the nested-backward path the explanation losses stand on.
// A wrt tensor the output does not depend on yields zeros.
std::vector<Tensor> grad_of(const Tensor& out, const std::vector<Tensor>& wrt,
                            bool create_graph);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int checked = 0;
  int kinks = 0;  // coordinates excluded by the curvature probe
};

// Central-difference check of the tape gradient of a scalar function.
// Coordinates where |f(x+h)-2f(x)+f(x-h)|/h^2 blows up (relu at 0, max ties)
// are flagged as kinks and excluded from the comparison.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double tol = 1e-5);

}  // namespace xg
