#include "xg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "xg/ops.hpp"

namespace xg {

namespace {

// Ancestors of root (root included), sorted by descending seq. Creation order
// is topological, so this is a valid reverse-topological sweep order.
std::vector<Node*> collect_graph(Node* root) {
  std::vector<Node*> out;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (const auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(out.begin(), out.end(), [](Node* a, Node* b) { return a->seq > b->seq; });
  return out;
}

struct EngineOpts {
  bool create_graph = false;
  bool accumulate_leaves = false;
};

std::vector<Tensor> run_engine(const Tensor& root, const std::vector<Tensor>& wrt,
                               const EngineOpts& opts) {
  auto nodes = collect_graph(root.node.get());

  // reach(n): some wrt is reachable from n via parent edges. Processing in
  // ascending seq order finalizes parents before children. When wrt is empty
  // the engine targets all requires-grad leaves, for which requires_grad
  // itself is the reach flag.
  std::unordered_set<Node*> reach;
  const bool to_leaves = wrt.empty();
  if (!to_leaves) {
    std::unordered_set<Node*> wanted;
    for (const auto& t : wrt) wanted.insert(t.node.get());
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      Node* n = *it;
      bool r = wanted.count(n) > 0;
      for (const auto& p : n->parents)
        if (reach.count(p.get())) r = true;
      if (r) reach.insert(n);
    }
  }
  auto reachable = [&](Node* n) { return to_leaves ? n->requires_grad : reach.count(n) > 0; };

  std::unordered_map<Node*, Tensor> grads;
  grads[root.node.get()] = Tensor::ones(root.shape());

  std::unordered_map<Node*, Tensor> results;
  std::unordered_set<Node*> wanted;
  for (const auto& t : wrt) wanted.insert(t.node.get());

  for (Node* n : nodes) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    Tensor g = it->second;
    grads.erase(it);
    if (wanted.count(n)) {
      auto rit = results.find(n);
      results[n] = rit == results.end() ? g : add(rit->second, g);
    }
    if (opts.accumulate_leaves && n->requires_grad && !n->backward_fn) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
      const auto& gv = g.data();
      for (size_t i = 0; i < gv.size(); ++i) n->grad[i] += gv[i];
    }
    if (!n->backward_fn) continue;

    std::vector<Tensor> pgrads;
    if (opts.create_graph) {
      pgrads = n->backward_fn(g);
    } else {
      NoGradGuard guard;
      pgrads = n->backward_fn(g);
    }
    if (pgrads.size() != n->parents.size())
      throw Error(std::string("backward of op '") + n->op + "' returned wrong arity");
    for (size_t i = 0; i < pgrads.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad || !reachable(p)) continue;
      auto git = grads.find(p);
      if (git == grads.end()) {
        grads.emplace(p, pgrads[i]);
      } else if (opts.create_graph) {
        git->second = add(git->second, pgrads[i]);
      } else {
        NoGradGuard guard;
        git->second = add(git->second, pgrads[i]);
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto rit = results.find(t.node.get());
    out.push_back(rit != results.end() ? rit->second : Tensor::zeros(t.shape()));
  }
  return out;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.node->backward_fn && loss.node->parents.empty() && !loss.node->requires_grad)
    throw Error("backward: loss is not attached to a recorded tape");
  if (loss.node->consumed)
    throw Error("backward: tape already consumed by a previous backward; record a new forward");
  loss.node->consumed = true;
  EngineOpts opts;
  opts.accumulate_leaves = true;
  run_engine(loss, {}, opts);
}

std::vector<Tensor> grad_of(const Tensor& out, const std::vector<Tensor>& wrt,
                            bool create_graph) {
  if (!out.defined()) throw Error("grad_of: undefined tensor");
  if (out.numel() != 1)
    throw ShapeError("grad_of: output must be scalar, got " + shape_str(out.shape()));
  EngineOpts opts;
  opts.create_graph = create_graph;
  return run_engine(out, wrt, opts);
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h, double tol) {
  Tensor leaf = x.detached();
  leaf.node->requires_grad = true;
  Tensor y = f(leaf);
  if (y.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  const double f0 = y.item();
  Tensor g = grad_of(y, {leaf}, false)[0];

  GradCheckReport rep;
  const double kink_thresh = 1.0 / (100.0 * h);
  std::vector<double> base = x.data();
  std::vector<double> fds(base.size(), 0.0);
  std::vector<bool> kink(base.size(), false);
  for (size_t i = 0; i < base.size(); ++i) {
    // no recording guard here: f may itself take gradients internally (the
    // explanation losses do), so each probe runs with recording available
    double fp = 0.0, fm = 0.0, fp2 = 0.0, fm2 = 0.0;
    {
      std::vector<double> d = base;
      d[i] = base[i] + h;
      fp = f(Tensor::from(d, x.shape())).item();
      d[i] = base[i] - h;
      fm = f(Tensor::from(d, x.shape())).item();
      d[i] = base[i] + 2.0 * h;
      fp2 = f(Tensor::from(d, x.shape())).item();
      d[i] = base[i] - 2.0 * h;
      fm2 = f(Tensor::from(d, x.shape())).item();
    }
    const double curvature = std::fabs(fp - 2.0 * f0 + fm) / (h * h);
    if (curvature > kink_thresh) {
      kink[i] = true;
      continue;
    }
    // five-point central stencil; truncation O(h^4)
    fds[i] = (-fp2 + 8.0 * fp - 8.0 * fm + fm2) / (12.0 * h);
  }
  // Relative error per coordinate, floored at a small multiple of the
  // gradient's own scale so near-zero components are not dominated by the
  // finite-difference roundoff noise eps*|f|/h.
  double scale = 0.0;
  for (size_t i = 0; i < base.size(); ++i)
    if (!kink[i]) scale = std::max({scale, std::fabs(g.data()[i]), std::fabs(fds[i])});
  const double floor = std::max(1e-3 * scale, 1e-8);
  for (size_t i = 0; i < base.size(); ++i) {
    if (kink[i]) {
      ++rep.kinks;
      continue;
    }
    const double gt = g.data()[i];
    const double rel = std::fabs(gt - fds[i]) / std::max({std::fabs(gt), std::fabs(fds[i]), floor});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    ++rep.checked;
  }
  rep.pass = rep.max_rel_err < tol && rep.checked > 0;
  return rep;
}

}  // namespace xg
