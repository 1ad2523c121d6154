#pragma once

// Tape-based reverse-mode automatic differentiation over vector-valued
// nodes. Parameters enter the graph as leaves bound to external weight and
// gradient buffers; backward() accumulates directly into those buffers.

#include <cmath>
#include <functional>
#include <vector>

#include "echodistill/types.hpp"

namespace echodistill {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  const std::vector<double>& val(Var v) const { return nodes_[v.id].val; }
  double scalar(Var v) const { return nodes_[v.id].val[0]; }

  Var constant(std::vector<double> v) { return push(std::move(v), nullptr); }
  Var constant_scalar(double v) { return constant({v}); }

  // Leaf bound to an external parameter vector; backward adds into *g.
  Var leaf(const double* w, double* g, int n) {
    Var out = push(std::vector<double>(w, w + n), nullptr);
    nodes_[out.id].back = [this, out, g, n]() {
      const auto& go = nodes_[out.id].grad;
      for (int i = 0; i < n; ++i) g[i] += go[i];
    };
    return out;
  }

  // y = x * W (+ b), with W row-major rows x cols, x of length rows.
  Var affine(const double* w, double* gw, int rows, int cols, Var x,
             const double* b = nullptr, double* gb = nullptr) {
    const auto& xv = nodes_[x.id].val;
    if (static_cast<int>(xv.size()) != rows) throw DimMismatch("affine input size");
    std::vector<double> y(cols, 0.0);
    for (int i = 0; i < rows; ++i) {
      double xi = xv[i];
      const double* wrow = w + static_cast<size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) y[j] += xi * wrow[j];
    }
    if (b)
      for (int j = 0; j < cols; ++j) y[j] += b[j];
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].back = [this, out, x, w, gw, rows, cols, gb]() {
      const auto& go = nodes_[out.id].grad;
      const auto& xv = nodes_[x.id].val;
      auto& gx = nodes_[x.id].grad;
      for (int i = 0; i < rows; ++i) {
        const double* wrow = w + static_cast<size_t>(i) * cols;
        double* gwrow = gw ? gw + static_cast<size_t>(i) * cols : nullptr;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) {
          acc += wrow[j] * go[j];
          if (gwrow) gwrow[j] += xv[i] * go[j];
        }
        gx[i] += acc;
      }
      if (gb)
        for (int j = 0; j < cols; ++j) gb[j] += go[j];
    };
    return out;
  }

  // row lookup into a row-major parameter matrix (embedding access)
  Var row(const double* w, double* gw, int cols, int r) {
    const double* src = w + static_cast<size_t>(r) * cols;
    Var out = push(std::vector<double>(src, src + cols), nullptr);
    if (gw) {
      nodes_[out.id].back = [this, out, gw, cols, r]() {
        const auto& go = nodes_[out.id].grad;
        double* dst = gw + static_cast<size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) dst[j] += go[j];
      };
    }
    return out;
  }

  Var add(Var a, Var b) {
    const auto& av = nodes_[a.id].val;
    const auto& bv = nodes_[b.id].val;
    if (av.size() != bv.size()) throw DimMismatch("add size");
    std::vector<double> y(av.size());
    for (size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      const auto& go = nodes_[out.id].grad;
      auto& ga = nodes_[a.id].grad;
      auto& gb = nodes_[b.id].grad;
      for (size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    };
    return out;
  }

  Var tanh(Var a) {
    const auto& av = nodes_[a.id].val;
    std::vector<double> y(av.size());
    for (size_t i = 0; i < av.size(); ++i) y[i] = std::tanh(av[i]);
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const auto& go = nodes_[out.id].grad;
      const auto& yv = nodes_[out.id].val;
      auto& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += (1.0 - yv[i] * yv[i]) * go[i];
    };
    return out;
  }

  // numerically stable log-softmax
  Var log_softmax(Var a) {
    const auto& av = nodes_[a.id].val;
    double m = av[0];
    for (double v : av) m = std::max(m, v);
    double lse = 0.0;
    for (double v : av) lse += std::exp(v - m);
    lse = m + std::log(lse);
    std::vector<double> y(av.size());
    for (size_t i = 0; i < av.size(); ++i) y[i] = av[i] - lse;
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const auto& go = nodes_[out.id].grad;
      const auto& yv = nodes_[out.id].val;
      auto& ga = nodes_[a.id].grad;
      double gsum = 0.0;
      for (double g : go) gsum += g;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] - std::exp(yv[i]) * gsum;
    };
    return out;
  }

  Var pick(Var a, int i) {
    Var out = push({nodes_[a.id].val[i]}, nullptr);
    nodes_[out.id].back = [this, out, a, i]() {
      nodes_[a.id].grad[i] += nodes_[out.id].grad[0];
    };
    return out;
  }

  // sum_i q_i * a_i with constant q
  Var dot_const(std::vector<double> q, Var a) {
    const auto& av = nodes_[a.id].val;
    if (q.size() != av.size()) throw DimMismatch("dot_const size");
    double s = 0.0;
    for (size_t i = 0; i < q.size(); ++i) s += q[i] * av[i];
    Var out = push({s}, nullptr);
    nodes_[out.id].back = [this, out, a, q = std::move(q)]() {
      double go = nodes_[out.id].grad[0];
      auto& ga = nodes_[a.id].grad;
      for (size_t i = 0; i < q.size(); ++i) ga[i] += q[i] * go;
    };
    return out;
  }

  // --- scalar ops (length-1 vars) ---

  Var s_add(Var a, Var b) { return add(a, b); }

  Var s_sub(Var a, Var b) {
    Var out = push({scalar(a) - scalar(b)}, nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      double go = nodes_[out.id].grad[0];
      nodes_[a.id].grad[0] += go;
      nodes_[b.id].grad[0] -= go;
    };
    return out;
  }

  Var s_mul(Var a, Var b) {
    Var out = push({scalar(a) * scalar(b)}, nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      double go = nodes_[out.id].grad[0];
      nodes_[a.id].grad[0] += nodes_[b.id].val[0] * go;
      nodes_[b.id].grad[0] += nodes_[a.id].val[0] * go;
    };
    return out;
  }

  Var s_scale(Var a, double c) {
    Var out = push({scalar(a) * c}, nullptr);
    nodes_[out.id].back = [this, out, a, c]() {
      nodes_[a.id].grad[0] += c * nodes_[out.id].grad[0];
    };
    return out;
  }

  Var s_addc(Var a, double c) {
    Var out = push({scalar(a) + c}, nullptr);
    nodes_[out.id].back = [this, out, a]() {
      nodes_[a.id].grad[0] += nodes_[out.id].grad[0];
    };
    return out;
  }

  Var s_exp(Var a) {
    Var out = push({std::exp(scalar(a))}, nullptr);
    nodes_[out.id].back = [this, out, a]() {
      nodes_[a.id].grad[0] += nodes_[out.id].val[0] * nodes_[out.id].grad[0];
    };
    return out;
  }

  // branch selected by value; gradient flows through the chosen argument
  Var s_min(Var a, Var b) {
    bool pick_a = scalar(a) <= scalar(b);
    Var out = push({pick_a ? scalar(a) : scalar(b)}, nullptr);
    nodes_[out.id].back = [this, out, a, b, pick_a]() {
      nodes_[pick_a ? a.id : b.id].grad[0] += nodes_[out.id].grad[0];
    };
    return out;
  }

  // gradient is zero while clipped
  Var s_clip(Var a, double lo, double hi) {
    double v = scalar(a);
    bool inside = v > lo && v < hi;
    Var out = push({std::min(std::max(v, lo), hi)}, nullptr);
    nodes_[out.id].back = [this, out, a, inside]() {
      if (inside) nodes_[a.id].grad[0] += nodes_[out.id].grad[0];
    };
    return out;
  }

  Var s_mean(const std::vector<Var>& xs) {
    double s = 0.0;
    for (Var x : xs) s += scalar(x);
    double inv = 1.0 / static_cast<double>(xs.size());
    Var out = push({s * inv}, nullptr);
    nodes_[out.id].back = [this, out, xs, inv]() {
      double go = nodes_[out.id].grad[0] * inv;
      for (Var x : xs) nodes_[x.id].grad[0] += go;
    };
    return out;
  }

  // Reverse sweep from a scalar loss node. Throws on non-finite loss.
  void backward(Var loss) {
    if (!std::isfinite(scalar(loss))) throw NonFiniteLoss("loss is not finite");
    nodes_[loss.id].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

 private:
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void()> back;
  };

  Var push(std::vector<double> v, std::function<void()> back) {
    Node n;
    n.grad.assign(v.size(), 0.0);
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace echodistill
