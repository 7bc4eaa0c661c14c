#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dyn/error.hpp"
#include "dyn/parallel.hpp"
#include "dyn/render.hpp"

namespace dyn::ad {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Every differentiable op built by the tape. The gradient-check suite walks
// this list, so additions here are covered automatically; the tape asserts at
// build time that each op it records is registered.
inline const std::vector<std::string>& op_registry() {
  static const std::vector<std::string> ops = {
      "add",        "mul",         "matmul",     "conv2d",       "transposed_conv2d",
      "leaky_relu", "sigmoid",     "tanh",       "softmax",      "l1",
      "cross_entropy", "concat",   "slice",      "bilinear_resize", "uv_gather",
      "unit_normalize", "scale",   "sum",
  };
  return ops;
}

// Reverse-mode tape. Nodes are appended in evaluation order (hence already
// topologically sorted); backward walks them once in reverse.
template <class S>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<int> inputs;
    std::function<void(Tape&, Node&)> backward;
  };

  int size() const { return int(nodes_.size()); }
  Node& node(int id) { return nodes_[size_t(id)]; }
  const Node& node(int id) const { return nodes_[size_t(id)]; }
  const std::vector<S>& value(int id) const { return nodes_[size_t(id)].value; }
  const std::vector<S>& grad(int id) const { return nodes_[size_t(id)].grad; }
  const Shape& shape(int id) const { return nodes_[size_t(id)].shape; }

  int leaf(Shape shape, std::vector<S> data, bool requires_grad = false) {
    require(long(data.size()) == numel(shape), "leaf: data length != shape product");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int constant(Shape shape, S fill) {
    return leaf(std::move(shape), std::vector<S>(size_t(numel(shape)), fill), false);
  }

  // ---- elementwise binaries with numpy-style broadcasting ----
  int add(int a, int b) { return binary("add", a, b, [](S x, S y) { return x + y; },
                                        [](S, S) { return S(1); }, [](S, S) { return S(1); }); }
  int mul(int a, int b) {
    return binary("mul", a, b, [](S x, S y) { return x * y; },
                  [](S, S y) { return y; }, [](S x, S) { return x; });
  }

  int scale(int a, S k) {
    int out = unary("scale", a, [k](S x) { return k * x; });
    Node& n = node(out);
    n.backward = [k, a](Tape& t, Node& self) {
      t.accumulate(a, self.grad, [k](S g) { return k * g; });
    };
    return out;
  }

  int sub(int a, int b) { return add(a, scale(b, S(-1))); }

  int sum(int a) {
    check_op("sum");
    Node n;
    n.shape = {1};
    n.op = "sum";
    n.inputs = {a};
    n.requires_grad = node(a).requires_grad;
    S acc = 0;
    for (S v : node(a).value) acc += v;
    n.value = {acc};
    n.backward = [a](Tape& t, Node& self) {
      S g = self.grad[0];
      t.accumulate(a, g);
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int mean(int a) { return scale(sum(a), S(1) / S(node(a).value.size())); }

  // ---- activations ----
  int leaky_relu(int a, S alpha = S(0.2)) {
    check_op("leaky_relu");
    int out = unary("leaky_relu", a, [alpha](S x) { return x >= S(0) ? x : alpha * x; });
    Node& n = node(out);
    n.backward = [a, alpha](Tape& t, Node& self) {
      const auto& x = t.node(a).value;
      t.ensure_grad(a);
      auto& ga = t.node(a).grad;
      for (size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * (x[i] >= S(0) ? S(1) : alpha);
    };
    return out;
  }

  int sigmoid(int a) {
    check_op("sigmoid");
    int out = unary("sigmoid", a, [](S x) { return S(1) / (S(1) + std::exp(-x)); });
    Node& n = node(out);
    int self_id = out;
    n.backward = [a, self_id](Tape& t, Node& self) {
      const auto& y = t.node(self_id).value;
      t.ensure_grad(a);
      for (size_t i = 0; i < y.size(); ++i)
        t.node(a).grad[i] += self.grad[i] * y[i] * (S(1) - y[i]);
    };
    return out;
  }

  int tanh_op(int a) {
    check_op("tanh");
    int out = unary("tanh", a, [](S x) { return std::tanh(x); });
    Node& n = node(out);
    int self_id = out;
    n.backward = [a, self_id](Tape& t, Node& self) {
      const auto& y = t.node(self_id).value;
      t.ensure_grad(a);
      for (size_t i = 0; i < y.size(); ++i)
        t.node(a).grad[i] += self.grad[i] * (S(1) - y[i] * y[i]);
    };
    return out;
  }

  // softmax along `axis`; values sum to 1 on that axis.
  int softmax(int a, int axis) {
    check_op("softmax");
    const Shape& sh = shape(a);
    require(axis >= 0 && axis < int(sh.size()), "softmax: bad axis");
    long inner = 1, outer = 1;
    for (int i = 0; i < axis; ++i) outer *= sh[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < sh.size(); ++i) inner *= sh[i];
    long c = sh[size_t(axis)];

    Node n;
    n.shape = sh;
    n.op = "softmax";
    n.inputs = {a};
    n.requires_grad = node(a).requires_grad;
    n.value.resize(node(a).value.size());
    const auto& x = node(a).value;
    for (long o = 0; o < outer; ++o)
      for (long i = 0; i < inner; ++i) {
        S mx = -std::numeric_limits<S>::infinity();
        for (long k = 0; k < c; ++k) mx = std::max(mx, x[size_t((o * c + k) * inner + i)]);
        S denom = 0;
        for (long k = 0; k < c; ++k) {
          S e = std::exp(x[size_t((o * c + k) * inner + i)] - mx);
          n.value[size_t((o * c + k) * inner + i)] = e;
          denom += e;
        }
        for (long k = 0; k < c; ++k) n.value[size_t((o * c + k) * inner + i)] /= denom;
      }
    int self_id = size();
    n.backward = [a, self_id, outer, inner, c](Tape& t, Node& self) {
      const auto& y = t.node(self_id).value;
      t.ensure_grad(a);
      auto& ga = t.node(a).grad;
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
          S dot = 0;
          for (long k = 0; k < c; ++k) {
            size_t idx = size_t((o * c + k) * inner + i);
            dot += self.grad[idx] * y[idx];
          }
          for (long k = 0; k < c; ++k) {
            size_t idx = size_t((o * c + k) * inner + i);
            ga[idx] += y[idx] * (self.grad[idx] - dot);
          }
        }
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  // Weighted mean absolute difference; weights (optional, non-differentiable)
  // must match shape.
  int l1(int a, int b, int weights = -1) {
    check_op("l1");
    require(shape(a) == shape(b), "l1: shape mismatch " + shape_str(shape(a)) + " vs " +
                                      shape_str(shape(b)));
    const auto& xa = node(a).value;
    const auto& xb = node(b).value;
    const std::vector<S>* w = weights >= 0 ? &node(weights).value : nullptr;
    if (w) require(w->size() == xa.size(), "l1: weight shape mismatch");
    S wsum = 0, acc = 0;
    for (size_t i = 0; i < xa.size(); ++i) {
      S wi = w ? (*w)[i] : S(1);
      acc += wi * std::abs(xa[i] - xb[i]);
      wsum += wi;
    }
    if (wsum == S(0)) wsum = S(1);
    Node n;
    n.shape = {1};
    n.op = "l1";
    n.inputs = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = {acc / wsum};
    n.backward = [a, b, weights, wsum](Tape& t, Node& self) {
      S g = self.grad[0] / wsum;
      const auto& xa = t.node(a).value;
      const auto& xb = t.node(b).value;
      const std::vector<S>* w = weights >= 0 ? &t.node(weights).value : nullptr;
      t.ensure_grad(a);
      t.ensure_grad(b);
      auto& ga = t.node(a).grad;
      auto& gb = t.node(b).grad;
      for (size_t i = 0; i < xa.size(); ++i) {
        S d = xa[i] - xb[i];
        S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
        S wi = w ? (*w)[i] : S(1);
        ga[i] += g * wi * sgn;
        gb[i] -= g * wi * sgn;
      }
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  // Mean per-position cross entropy of logits [N,C,...] against integer
  // labels (host data, length N*spatial).
  int cross_entropy(int logits, std::vector<int32_t> labels) {
    check_op("cross_entropy");
    const Shape& sh = shape(logits);
    require(sh.size() >= 2, "cross_entropy: logits need at least [N,C]");
    long n = sh[0], c = sh[1];
    long inner = 1;
    for (size_t i = 2; i < sh.size(); ++i) inner *= sh[i];
    require(long(labels.size()) == n * inner, "cross_entropy: label count mismatch");

    const auto& x = node(logits).value;
    long count = n * inner;
    S total = 0;
    std::vector<S> lse(static_cast<size_t>(count));
    std::vector<S> mx(static_cast<size_t>(count));
    for (long o = 0; o < n; ++o)
      for (long i = 0; i < inner; ++i) {
        long pos = o * inner + i;
        S m = -std::numeric_limits<S>::infinity();
        for (long k = 0; k < c; ++k) m = std::max(m, x[size_t((o * c + k) * inner + i)]);
        S denom = 0;
        for (long k = 0; k < c; ++k) denom += std::exp(x[size_t((o * c + k) * inner + i)] - m);
        mx[size_t(pos)] = m;
        lse[size_t(pos)] = m + std::log(denom);
        int32_t lab = labels[size_t(pos)];
        require(lab >= 0 && lab < c, "cross_entropy: label out of range");
        total += lse[size_t(pos)] - x[size_t((o * c + lab) * inner + i)];
      }

    Node node_;
    node_.shape = {1};
    node_.op = "cross_entropy";
    node_.inputs = {logits};
    node_.requires_grad = node(logits).requires_grad;
    node_.value = {total / S(count)};
    node_.backward = [logits, labels = std::move(labels), n, c, inner, count](Tape& t, Node& self) {
      S g = self.grad[0] / S(count);
      const auto& x = t.node(logits).value;
      t.ensure_grad(logits);
      auto& gx = t.node(logits).grad;
      for (long o = 0; o < n; ++o)
        for (long i = 0; i < inner; ++i) {
          S m = -std::numeric_limits<S>::infinity();
          for (long k = 0; k < c; ++k) m = std::max(m, x[size_t((o * c + k) * inner + i)]);
          S denom = 0;
          for (long k = 0; k < c; ++k) denom += std::exp(x[size_t((o * c + k) * inner + i)] - m);
          int32_t lab = labels[size_t(o * inner + i)];
          for (long k = 0; k < c; ++k) {
            size_t idx = size_t((o * c + k) * inner + i);
            S p = std::exp(x[idx] - m) / denom;
            gx[idx] += g * (p - S(k == lab));
          }
        }
    };
    nodes_.push_back(std::move(node_));
    return size() - 1;
  }

  int concat(std::span<const int> parts, int axis) {
    check_op("concat");
    require(!parts.empty(), "concat: no inputs");
    Shape sh = shape(parts[0]);
    require(axis >= 0 && axis < int(sh.size()), "concat: bad axis");
    long total_axis = 0;
    for (int p : parts) {
      const Shape& ps = shape(p);
      require(ps.size() == sh.size(), "concat: rank mismatch");
      for (size_t i = 0; i < sh.size(); ++i)
        require(int(i) == axis || ps[i] == sh[i], "concat: shape mismatch off-axis");
      total_axis += ps[size_t(axis)];
    }
    Shape out_shape = sh;
    out_shape[size_t(axis)] = int(total_axis);

    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sh[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < sh.size(); ++i) inner *= sh[i];

    Node n;
    n.shape = out_shape;
    n.op = "concat";
    n.inputs.assign(parts.begin(), parts.end());
    n.value.resize(size_t(numel(out_shape)));
    for (int p : parts) n.requires_grad = n.requires_grad || node(p).requires_grad;
    long offset = 0;
    for (int p : parts) {
      long ca = shape(p)[size_t(axis)];
      const auto& src = node(p).value;
      for (long o = 0; o < outer; ++o)
        std::copy(src.begin() + o * ca * inner, src.begin() + (o + 1) * ca * inner,
                  n.value.begin() + (o * total_axis + offset) * inner);
      offset += ca;
    }
    std::vector<int> part_ids(parts.begin(), parts.end());
    n.backward = [part_ids, axis, outer, inner, total_axis](Tape& t, Node& self) {
      long offset = 0;
      for (int p : part_ids) {
        long ca = t.shape(p)[size_t(axis)];
        t.ensure_grad(p);
        auto& gp = t.node(p).grad;
        for (long o = 0; o < outer; ++o)
          for (long i = 0; i < ca * inner; ++i)
            gp[size_t(o * ca * inner + i)] += self.grad[size_t((o * total_axis + offset) * inner + i)];
        offset += ca;
      }
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int slice(int a, int axis, int start, int len) {
    check_op("slice");
    Shape sh = shape(a);
    require(axis >= 0 && axis < int(sh.size()), "slice: bad axis");
    require(start >= 0 && len > 0 && start + len <= sh[size_t(axis)], "slice: range out of bounds");
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sh[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < sh.size(); ++i) inner *= sh[i];
    long ca = sh[size_t(axis)];

    Shape out_shape = sh;
    out_shape[size_t(axis)] = len;
    Node n;
    n.shape = out_shape;
    n.op = "slice";
    n.inputs = {a};
    n.requires_grad = node(a).requires_grad;
    n.value.resize(size_t(numel(out_shape)));
    const auto& src = node(a).value;
    for (long o = 0; o < outer; ++o)
      std::copy(src.begin() + (o * ca + start) * inner, src.begin() + (o * ca + start + len) * inner,
                n.value.begin() + o * len * inner);
    n.backward = [a, outer, inner, ca, start, len](Tape& t, Node& self) {
      t.ensure_grad(a);
      auto& ga = t.node(a).grad;
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < len * inner; ++i)
          ga[size_t((o * ca + start) * inner + i)] += self.grad[size_t(o * len * inner + i)];
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int matmul(int a, int b) {
    check_op("matmul");
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
            "matmul: need [M,K]x[K,N], got " + shape_str(sa) + " x " + shape_str(sb));
    long m = sa[0], k = sa[1], nn = sb[1];
    Node n;
    n.shape = {int(m), int(nn)};
    n.op = "matmul";
    n.inputs = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value.assign(size_t(m * nn), S(0));
    const auto& xa = node(a).value;
    const auto& xb = node(b).value;
    for (long i = 0; i < m; ++i)
      for (long kk = 0; kk < k; ++kk) {
        S av = xa[size_t(i * k + kk)];
        for (long j = 0; j < nn; ++j) n.value[size_t(i * nn + j)] += av * xb[size_t(kk * nn + j)];
      }
    n.backward = [a, b, m, k, nn](Tape& t, Node& self) {
      const auto& xa = t.node(a).value;
      const auto& xb = t.node(b).value;
      t.ensure_grad(a);
      t.ensure_grad(b);
      auto& ga = t.node(a).grad;
      auto& gb = t.node(b).grad;
      for (long i = 0; i < m; ++i)
        for (long j = 0; j < nn; ++j) {
          S g = self.grad[size_t(i * nn + j)];
          if (g == S(0)) continue;
          for (long kk = 0; kk < k; ++kk) {
            ga[size_t(i * k + kk)] += g * xb[size_t(kk * nn + j)];
            gb[size_t(kk * nn + j)] += g * xa[size_t(i * k + kk)];
          }
        }
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int conv2d(int x, int w, int bias, int stride, int pad);
  int transposed_conv2d(int x, int w, int bias, int stride, int pad);
  int bilinear_resize(int x, int oh, int ow);
  int uv_gather(int grid, const render::GatherTable& table, int out_h, int out_w);
  int unit_normalize(int x, S eps = S(1e-6));

  int concat(std::initializer_list<int> parts, int axis) {
    return concat(std::span<const int>(parts.begin(), parts.size()), axis);
  }

  // Seeds d(loss) = 1 and pulls gradients back through every node once.
  void backward(int loss) {
    require(node(loss).value.size() == 1, "backward: loss must be scalar");
    for (auto& n : nodes_) n.grad.clear();
    ensure_grad(loss);
    node(loss).grad[0] = S(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (n.grad.empty() || !n.backward) continue;
      if (!n.requires_grad && n.inputs.empty()) continue;
      n.backward(*this, n);
    }
  }

  void ensure_grad(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
  }

  void accumulate(int id, S g) {
    ensure_grad(id);
    for (auto& v : node(id).grad) v += g;
  }

  template <class F>
  void accumulate(int id, const std::vector<S>& grad, F&& f) {
    ensure_grad(id);
    auto& dst = node(id).grad;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += f(grad[i]);
  }

  bool has_nan(int id) const {
    for (S v : node(id).value)
      if (!std::isfinite(double(v))) return true;
    return false;
  }

 private:
  static void check_op(const char* name) {
    const auto& reg = op_registry();
    bool found = std::find(reg.begin(), reg.end(), name) != reg.end();
    if (!found) throw UsageError(std::string("op not registered: ") + name);
  }

  template <class F>
  int unary(const char* op, int a, F&& f) {
    check_op(op);
    Node n;
    n.shape = shape(a);
    n.op = op;
    n.inputs = {a};
    n.requires_grad = node(a).requires_grad;
    n.value.resize(node(a).value.size());
    const auto& x = node(a).value;
    for (size_t i = 0; i < x.size(); ++i) n.value[i] = f(x[i]);
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  // numpy-style broadcast helper for binary elementwise ops
  template <class F, class DA, class DB>
  int binary(const char* op, int a, int b, F&& f, DA&& dfda, DB&& dfdb) {
    check_op(op);
    Shape sa = shape(a), sb = shape(b);
    size_t rank = std::max(sa.size(), sb.size());
    Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
    std::copy(sa.begin(), sa.end(), pa.begin() + long(rank - sa.size()));
    std::copy(sb.begin(), sb.end(), pb.begin() + long(rank - sb.size()));
    for (size_t i = 0; i < rank; ++i) {
      require(pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1,
              std::string(op) + ": shapes not broadcastable " + shape_str(sa) + " vs " + shape_str(sb));
      out[i] = std::max(pa[i], pb[i]);
    }
    Node n;
    n.shape = out;
    n.op = op;
    n.inputs = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    long total = numel(out);
    n.value.resize(size_t(total));

    std::vector<long> stra(rank), strb(rank), stro(rank);
    long acca = 1, accb = 1, acco = 1;
    for (size_t i = rank; i-- > 0;) {
      stra[i] = pa[i] == 1 ? 0 : acca;
      strb[i] = pb[i] == 1 ? 0 : accb;
      stro[i] = acco;
      acca *= pa[i];
      accb *= pb[i];
      acco *= out[i];
    }
    const auto& xa = node(a).value;
    const auto& xb = node(b).value;
    for (long idx = 0; idx < total; ++idx) {
      long ia = 0, ib = 0, rem = idx;
      for (size_t i = 0; i < rank; ++i) {
        long c = rem / stro[i];
        rem %= stro[i];
        ia += c * stra[i];
        ib += c * strb[i];
      }
      n.value[size_t(idx)] = f(xa[size_t(ia)], xb[size_t(ib)]);
    }
    n.backward = [a, b, stra, strb, stro, rank, total, dfda, dfdb](Tape& t, Node& self) {
      const auto& xa = t.node(a).value;
      const auto& xb = t.node(b).value;
      t.ensure_grad(a);
      t.ensure_grad(b);
      auto& ga = t.node(a).grad;
      auto& gb = t.node(b).grad;
      for (long idx = 0; idx < total; ++idx) {
        long ia = 0, ib = 0, rem = idx;
        for (size_t i = 0; i < rank; ++i) {
          long c = rem / stro[i];
          rem %= stro[i];
          ia += c * stra[i];
          ib += c * strb[i];
        }
        S g = self.grad[size_t(idx)];
        ga[size_t(ia)] += g * dfda(xa[size_t(ia)], xb[size_t(ib)]);
        gb[size_t(ib)] += g * dfdb(xa[size_t(ia)], xb[size_t(ib)]);
      }
    };
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  std::vector<Node> nodes_;
};

// ---- conv2d / transposed_conv2d / resize / gather / normalize ----

template <class S>
int Tape<S>::conv2d(int x, int w, int bias, int stride, int pad) {
  check_op("conv2d");
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  require(sx.size() == 4 && sw.size() == 4, "conv2d: need x [N,C,H,W], w [OC,IC,KH,KW]");
  require(sx[1] == sw[1], "conv2d: input channels mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  long n = sx[0], ic = sx[1], ih = sx[2], iw = sx[3];
  long oc = sw[0], kh = sw[2], kw = sw[3];
  long oh = (ih + 2 * pad - kh) / stride + 1;
  long ow = (iw + 2 * pad - kw) / stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d: output would be empty");
  if (bias >= 0)
    require(shape(bias) == Shape{int(oc)}, "conv2d: bias must be [OC]");

  Node node_;
  node_.shape = {int(n), int(oc), int(oh), int(ow)};
  node_.op = "conv2d";
  node_.inputs = bias >= 0 ? std::vector<int>{x, w, bias} : std::vector<int>{x, w};
  node_.requires_grad = node(x).requires_grad || node(w).requires_grad ||
                        (bias >= 0 && node(bias).requires_grad);
  node_.value.assign(size_t(n * oc * oh * ow), S(0));

  const auto& xv = node(x).value;
  const auto& wv = node(w).value;
  const S* bv = bias >= 0 ? node(bias).value.data() : nullptr;
  S* out = node_.value.data();

  parallel_for(0, n * oc, [&](long lo, long hi) {
    for (long no = lo; no < hi; ++no) {
      long nn = no / oc, o = no % oc;
      S* oplane = out + (nn * oc + o) * oh * ow;
      if (bv)
        for (long i = 0; i < oh * ow; ++i) oplane[i] = bv[o];
      for (long c = 0; c < ic; ++c) {
        const S* iplane = xv.data() + (nn * ic + c) * ih * iw;
        const S* wplane = wv.data() + ((o * ic + c) * kh) * kw;
        for (long ky = 0; ky < kh; ++ky) {
          for (long kx = 0; kx < kw; ++kx) {
            S wgt = wplane[ky * kw + kx];
            if (wgt == S(0)) continue;
            for (long oy = 0; oy < oh; ++oy) {
              long iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= ih) continue;
              const S* irow = iplane + iy * iw;
              S* orow = oplane + oy * ow;
              long num = iw - 1 + pad - kx;
              if (num < 0) continue;
              long ox0 = std::max<long>(0, (pad - kx + stride - 1) / stride);
              long ox1 = std::min<long>(ow - 1, num / stride);
              for (long ox = ox0; ox <= ox1; ++ox) orow[ox] += wgt * irow[ox * stride + kx - pad];
            }
          }
        }
      }
    }
  });

  node_.backward = [x, w, bias, stride, pad, n, ic, ih, iw, oc, kh, kw, oh, ow](Tape& t,
                                                                                Node& self) {
    const auto& xv = t.node(x).value;
    const auto& wv = t.node(w).value;
    const auto& go = self.grad;
    t.ensure_grad(x);
    t.ensure_grad(w);
    auto& gx = t.node(x).grad;
    auto& gw = t.node(w).grad;
    if (bias >= 0) {
      t.ensure_grad(bias);
      auto& gb = t.node(bias).grad;
      for (long nn = 0; nn < n; ++nn)
        for (long o = 0; o < oc; ++o) {
          const S* gplane = go.data() + (nn * oc + o) * oh * ow;
          S acc = 0;
          for (long i = 0; i < oh * ow; ++i) acc += gplane[i];
          gb[size_t(o)] += acc;
        }
    }
    // weight grads: per (o,c,ky,kx) dot of grad-out rows with input rows
    parallel_for(0, oc, [&](long olo, long ohi) {
      for (long o = olo; o < ohi; ++o)
        for (long nn = 0; nn < n; ++nn) {
          const S* gplane = go.data() + (nn * oc + o) * oh * ow;
          for (long c = 0; c < ic; ++c) {
            const S* iplane = xv.data() + (nn * ic + c) * ih * iw;
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                S acc = 0;
                for (long oy = 0; oy < oh; ++oy) {
                  long iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= ih) continue;
                  const S* irow = iplane + iy * iw;
                  const S* grow = gplane + oy * ow;
                  long num = iw - 1 + pad - kx;
                  if (num < 0) continue;
                  long ox0 = std::max<long>(0, (pad - kx + stride - 1) / stride);
                  long ox1 = std::min<long>(ow - 1, num / stride);
                  for (long ox = ox0; ox <= ox1; ++ox) acc += grow[ox] * irow[ox * stride + kx - pad];
                }
                gw[size_t(((o * ic + c) * kh + ky) * kw + kx)] += acc;
              }
          }
        }
    });
    // input grads: gather formulation, parallel over input channels
    parallel_for(0, ic, [&](long clo, long chi) {
      for (long c = clo; c < chi; ++c)
        for (long nn = 0; nn < n; ++nn) {
          S* gxplane = gx.data() + (nn * ic + c) * ih * iw;
          for (long o = 0; o < oc; ++o) {
            const S* gplane = go.data() + (nn * oc + o) * oh * ow;
            const S* wplane = wv.data() + ((o * ic + c) * kh) * kw;
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                S wgt = wplane[ky * kw + kx];
                if (wgt == S(0)) continue;
                for (long oy = 0; oy < oh; ++oy) {
                  long iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= ih) continue;
                  S* gxrow = gxplane + iy * iw;
                  const S* grow = gplane + oy * ow;
                  long num = iw - 1 + pad - kx;
                  if (num < 0) continue;
                  long ox0 = std::max<long>(0, (pad - kx + stride - 1) / stride);
                  long ox1 = std::min<long>(ow - 1, num / stride);
                  for (long ox = ox0; ox <= ox1; ++ox) gxrow[ox * stride + kx - pad] += wgt * grow[ox];
                }
              }
          }
        }
    });
  };
  nodes_.push_back(std::move(node_));
  return size() - 1;
}

template <class S>
int Tape<S>::transposed_conv2d(int x, int w, int bias, int stride, int pad) {
  check_op("transposed_conv2d");
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  require(sx.size() == 4 && sw.size() == 4, "transposed_conv2d: need x [N,C,H,W], w [IC,OC,KH,KW]");
  require(sx[1] == sw[0], "transposed_conv2d: input channels mismatch");
  long n = sx[0], ic = sx[1], ih = sx[2], iw = sx[3];
  long oc = sw[1], kh = sw[2], kw = sw[3];
  long oh = (ih - 1) * stride - 2 * pad + kh;
  long ow = (iw - 1) * stride - 2 * pad + kw;
  require(oh >= 1 && ow >= 1, "transposed_conv2d: output would be empty");
  if (bias >= 0) require(shape(bias) == Shape{int(oc)}, "transposed_conv2d: bias must be [OC]");

  Node node_;
  node_.shape = {int(n), int(oc), int(oh), int(ow)};
  node_.op = "transposed_conv2d";
  node_.inputs = bias >= 0 ? std::vector<int>{x, w, bias} : std::vector<int>{x, w};
  node_.requires_grad = node(x).requires_grad || node(w).requires_grad ||
                        (bias >= 0 && node(bias).requires_grad);
  node_.value.assign(size_t(n * oc * oh * ow), S(0));
  const auto& xv = node(x).value;
  const auto& wv = node(w).value;
  const S* bv = bias >= 0 ? node(bias).value.data() : nullptr;
  S* out = node_.value.data();

  parallel_for(0, oc, [&](long olo, long ohi) {
    for (long o = olo; o < ohi; ++o)
      for (long nn = 0; nn < n; ++nn) {
        S* oplane = out + (nn * oc + o) * oh * ow;
        if (bv)
          for (long i = 0; i < oh * ow; ++i) oplane[i] = bv[o];
        for (long c = 0; c < ic; ++c) {
          const S* iplane = xv.data() + (nn * ic + c) * ih * iw;
          const S* wplane = wv.data() + ((c * oc + o) * kh) * kw;
          for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
              S wgt = wplane[ky * kw + kx];
              if (wgt == S(0)) continue;
              for (long iy = 0; iy < ih; ++iy) {
                long oy = iy * stride + ky - pad;
                if (oy < 0 || oy >= oh) continue;
                const S* irow = iplane + iy * iw;
                S* orow = oplane + oy * ow;
                for (long ix = 0; ix < iw; ++ix) {
                  long ox = ix * stride + kx - pad;
                  if (ox < 0 || ox >= ow) continue;
                  orow[ox] += wgt * irow[ix];
                }
              }
            }
        }
      }
  });

  node_.backward = [x, w, bias, stride, pad, n, ic, ih, iw, oc, kh, kw, oh, ow](Tape& t,
                                                                                Node& self) {
    const auto& xv = t.node(x).value;
    const auto& wv = t.node(w).value;
    const auto& go = self.grad;
    t.ensure_grad(x);
    t.ensure_grad(w);
    auto& gx = t.node(x).grad;
    auto& gw = t.node(w).grad;
    if (bias >= 0) {
      t.ensure_grad(bias);
      auto& gb = t.node(bias).grad;
      for (long nn = 0; nn < n; ++nn)
        for (long o = 0; o < oc; ++o) {
          const S* gplane = go.data() + (nn * oc + o) * oh * ow;
          S acc = 0;
          for (long i = 0; i < oh * ow; ++i) acc += gplane[i];
          gb[size_t(o)] += acc;
        }
    }
    parallel_for(0, ic, [&](long clo, long chi) {
      for (long c = clo; c < chi; ++c)
        for (long nn = 0; nn < n; ++nn) {
          S* gxplane = gx.data() + (nn * ic + c) * ih * iw;
          for (long o = 0; o < oc; ++o) {
            const S* gplane = go.data() + (nn * oc + o) * oh * ow;
            const S* wplane = wv.data() + ((c * oc + o) * kh) * kw;
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                S wgt = wplane[ky * kw + kx];
                if (wgt == S(0)) continue;
                for (long iy = 0; iy < ih; ++iy) {
                  long oy = iy * stride + ky - pad;
                  if (oy < 0 || oy >= oh) continue;
                  S* gxrow = gxplane + iy * iw;
                  const S* grow = gplane + oy * ow;
                  for (long ix = 0; ix < iw; ++ix) {
                    long ox = ix * stride + kx - pad;
                    if (ox < 0 || ox >= ow) continue;
                    gxrow[ix] += wgt * grow[ox];
                  }
                }
              }
          }
        }
    });
    // weight grads
    for (long c = 0; c < ic; ++c)
      for (long o = 0; o < oc; ++o)
        for (long ky = 0; ky < kh; ++ky)
          for (long kx = 0; kx < kw; ++kx) {
            S acc = 0;
            for (long nn = 0; nn < n; ++nn) {
              const S* iplane = xv.data() + (nn * ic + c) * ih * iw;
              const S* gplane = go.data() + (nn * oc + o) * oh * ow;
              for (long iy = 0; iy < ih; ++iy) {
                long oy = iy * stride + ky - pad;
                if (oy < 0 || oy >= oh) continue;
                for (long ix = 0; ix < iw; ++ix) {
                  long ox = ix * stride + kx - pad;
                  if (ox < 0 || ox >= ow) continue;
                  acc += iplane[iy * iw + ix] * gplane[oy * ow + ox];
                }
              }
            }
            gw[size_t(((c * oc + o) * kh + ky) * kw + kx)] += acc;
          }
  };
  nodes_.push_back(std::move(node_));
  return size() - 1;
}

template <class S>
int Tape<S>::bilinear_resize(int x, int oh, int ow) {
  check_op("bilinear_resize");
  const Shape& sx = shape(x);
  require(sx.size() == 4, "bilinear_resize: need [N,C,H,W]");
  long n = sx[0], c = sx[1], ih = sx[2], iw = sx[3];
  require(oh >= 1 && ow >= 1, "bilinear_resize: bad target size");

  struct Tap {
    long i0, i1;
    S w0, w1;
  };
  auto make_taps = [](long in, long out) {
    std::vector<Tap> taps(static_cast<size_t>(out));
    for (long o = 0; o < out; ++o) {
      double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
      long i0 = long(std::floor(src));
      double a = src - double(i0);
      long i1 = std::clamp(i0 + 1, 0l, in - 1);
      i0 = std::clamp(i0, 0l, in - 1);
      taps[size_t(o)] = {i0, i1, S(1.0 - a), S(a)};
    }
    return taps;
  };
  auto ty = make_taps(ih, oh);
  auto tx = make_taps(iw, ow);

  Node node_;
  node_.shape = {int(n), int(c), oh, ow};
  node_.op = "bilinear_resize";
  node_.inputs = {x};
  node_.requires_grad = node(x).requires_grad;
  node_.value.assign(size_t(n * c * oh * ow), S(0));
  const auto& xv = node(x).value;
  for (long pc = 0; pc < n * c; ++pc) {
    const S* iplane = xv.data() + pc * ih * iw;
    S* oplane = node_.value.data() + pc * oh * ow;
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        const Tap& a = ty[size_t(oy)];
        const Tap& b = tx[size_t(ox)];
        oplane[oy * ow + ox] = a.w0 * (b.w0 * iplane[a.i0 * iw + b.i0] + b.w1 * iplane[a.i0 * iw + b.i1]) +
                               a.w1 * (b.w0 * iplane[a.i1 * iw + b.i0] + b.w1 * iplane[a.i1 * iw + b.i1]);
      }
  }
  node_.backward = [x, n, c, ih, iw, oh, ow, ty, tx](Tape& t, Node& self) {
    t.ensure_grad(x);
    auto& gx = t.node(x).grad;
    for (long pc = 0; pc < n * c; ++pc) {
      S* gplane = gx.data() + pc * ih * iw;
      const S* oplane = self.grad.data() + pc * oh * ow;
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          const Tap& a = ty[size_t(oy)];
          const Tap& b = tx[size_t(ox)];
          S g = oplane[oy * ow + ox];
          gplane[a.i0 * iw + b.i0] += g * a.w0 * b.w0;
          gplane[a.i0 * iw + b.i1] += g * a.w0 * b.w1;
          gplane[a.i1 * iw + b.i0] += g * a.w1 * b.w0;
          gplane[a.i1 * iw + b.i1] += g * a.w1 * b.w1;
        }
    }
  };
  nodes_.push_back(std::move(node_));
  return size() - 1;
}

// Transport II as a differentiable op: grid [1,C,GH,GW] -> image [1,C,H,W]
// through a fixed bilinear gather table; backward scatters.
template <class S>
int Tape<S>::uv_gather(int grid, const render::GatherTable& table, int out_h, int out_w) {
  check_op("uv_gather");
  const Shape& sg = shape(grid);
  require(sg.size() == 4 && sg[0] == 1, "uv_gather: grid must be [1,C,GH,GW]");
  require(sg[2] == table.grid_h && sg[3] == table.grid_w, "uv_gather: table/grid size mismatch");
  require(long(out_h) * long(out_w) == long(table.out_pixels), "uv_gather: output size mismatch");
  long c = sg[1];
  long texels = long(table.grid_w) * long(table.grid_h);
  long pixels = table.out_pixels;

  Node node_;
  node_.shape = {1, int(c), out_h, out_w};
  node_.op = "uv_gather";
  node_.inputs = {grid};
  node_.requires_grad = node(grid).requires_grad;
  node_.value.assign(size_t(c * pixels), S(0));
  const auto& gv = node(grid).value;
  for (long p = 0; p < pixels; ++p) {
    const auto& e = table.entries[size_t(p)];
    for (int slot = 0; slot < 4 && e.texel[slot] >= 0; ++slot) {
      S w = S(e.weight[slot]);
      long tix = e.texel[slot];
      for (long ch = 0; ch < c; ++ch) node_.value[size_t(ch * pixels + p)] += w * gv[size_t(ch * texels + tix)];
    }
  }
  const render::GatherTable* tbl = &table;
  node_.backward = [grid, c, pixels, texels, tbl](Tape& t, Node& self) {
    t.ensure_grad(grid);
    auto& gg = t.node(grid).grad;
    for (long p = 0; p < pixels; ++p) {
      const auto& e = tbl->entries[size_t(p)];
      for (int slot = 0; slot < 4 && e.texel[slot] >= 0; ++slot) {
        S w = S(e.weight[slot]);
        long tix = e.texel[slot];
        for (long ch = 0; ch < c; ++ch) gg[size_t(ch * texels + tix)] += w * self.grad[size_t(ch * pixels + p)];
      }
    }
  };
  nodes_.push_back(std::move(node_));
  return size() - 1;
}

// Normalizes channel vectors (axis 1 of [N,C,H,W]) to unit length.
template <class S>
int Tape<S>::unit_normalize(int x, S eps) {
  check_op("unit_normalize");
  const Shape& sx = shape(x);
  require(sx.size() == 4, "unit_normalize: need [N,C,H,W]");
  long n = sx[0], c = sx[1];
  long inner = long(sx[2]) * long(sx[3]);

  Node node_;
  node_.shape = sx;
  node_.op = "unit_normalize";
  node_.inputs = {x};
  node_.requires_grad = node(x).requires_grad;
  node_.value.resize(node(x).value.size());
  const auto& xv = node(x).value;
  std::vector<S> norms(size_t(n * inner));
  for (long nn = 0; nn < n; ++nn)
    for (long i = 0; i < inner; ++i) {
      S sq = 0;
      for (long ch = 0; ch < c; ++ch) {
        S v = xv[size_t((nn * c + ch) * inner + i)];
        sq += v * v;
      }
      S norm = std::sqrt(sq) + eps;
      norms[size_t(nn * inner + i)] = norm;
      for (long ch = 0; ch < c; ++ch)
        node_.value[size_t((nn * c + ch) * inner + i)] = xv[size_t((nn * c + ch) * inner + i)] / norm;
    }
  node_.backward = [x, n, c, inner, norms = std::move(norms)](Tape& t, Node& self) {
    const auto& xv = t.node(x).value;
    t.ensure_grad(x);
    auto& gx = t.node(x).grad;
    for (long nn = 0; nn < n; ++nn)
      for (long i = 0; i < inner; ++i) {
        S norm = norms[size_t(nn * inner + i)];
        S dot = 0;
        for (long ch = 0; ch < c; ++ch) {
          size_t idx = size_t((nn * c + ch) * inner + i);
          dot += self.grad[idx] * xv[idx];
        }
        for (long ch = 0; ch < c; ++ch) {
          size_t idx = size_t((nn * c + ch) * inner + i);
          gx[idx] += self.grad[idx] / norm - xv[idx] * dot / (norm * norm * norm);
        }
      }
  };
  nodes_.push_back(std::move(node_));
  return size() - 1;
}

// ---- Adam ----

// Bias-corrected Adam over a set of named parameter tensors.
template <class S>
struct AdamState {
  S lr = S(1e-3), beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);
  long step = 0;
  std::vector<std::vector<S>> m, v;

  void init(const std::vector<size_t>& sizes) {
    m.clear();
    v.clear();
    for (size_t s : sizes) {
      m.emplace_back(s, S(0));
      v.emplace_back(s, S(0));
    }
    step = 0;
  }

  void update(size_t param_index, std::vector<S>& values, const std::vector<S>& grads,
              const std::string& name, S bc1, S bc2) {
    auto& mi = m[param_index];
    auto& vi = v[param_index];
    require(values.size() == grads.size() && values.size() == mi.size(),
            "adam: size mismatch for " + name);
    for (size_t i = 0; i < values.size(); ++i) {
      S g = grads[i];
      if (!std::isfinite(double(g))) throw NumericFault("adam: NaN gradient in " + name);
      mi[i] = beta1 * mi[i] + (S(1) - beta1) * g;
      vi[i] = beta2 * vi[i] + (S(1) - beta2) * g * g;
      S mhat = mi[i] / bc1;
      S vhat = vi[i] / bc2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

// One named training parameter living outside the tape.
template <class S>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<S>> values;
  AdamState<S> adam;

  int add(std::string name, Shape shape, std::vector<S> init) {
    require(long(init.size()) == numel(shape), "param init size mismatch: " + name);
    names.push_back(std::move(name));
    shapes.push_back(std::move(shape));
    values.push_back(std::move(init));
    return int(values.size()) - 1;
  }

  void init_adam(S lr) {
    std::vector<size_t> sizes;
    for (const auto& v : values) sizes.push_back(v.size());
    adam.init(sizes);
    adam.lr = lr;
  }

  // Binds every parameter as a leaf on a fresh tape; returns node ids.
  std::vector<int> bind(Tape<S>& tape) const {
    std::vector<int> ids;
    ids.reserve(values.size());
    for (size_t i = 0; i < values.size(); ++i)
      ids.push_back(tape.leaf(shapes[i], values[i], true));
    return ids;
  }

  // Pulls grads off the tape and applies one Adam step.
  void adam_step(const Tape<S>& tape, const std::vector<int>& ids) {
    ++adam.step;
    S bc1 = S(1) - std::pow(adam.beta1, S(adam.step));
    S bc2 = S(1) - std::pow(adam.beta2, S(adam.step));
    for (size_t i = 0; i < values.size(); ++i) {
      const auto& g = tape.grad(ids[i]);
      if (g.empty()) continue;  // parameter unused in this graph
      adam.update(i, values[i], g, names[i], bc1, bc2);
    }
  }
};

}  // namespace dyn::ad
