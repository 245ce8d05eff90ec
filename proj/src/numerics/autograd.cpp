#include "mld/numerics/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "mld/error.hpp"

namespace mld {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using SMapR = Eigen::Map<RowMat, 0, Strided>;
using CSMapR = Eigen::Map<const RowMat, 0, Strided>;

std::atomic<uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

CMapR cmap(const Tensor& t) { return CMapR(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MapR mmap(Tensor& t) { return MapR(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

std::shared_ptr<Node> new_node(Tensor value, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void require_finite(const Node& n) {
  if (!n.value.all_finite())
    throw NonFiniteError(std::string("non-finite value produced by ") + n.op + "#" + std::to_string(n.id));
}

bool tracking(std::initializer_list<const Var*> in) {
  if (!g_grad_enabled) return false;
  for (const Var* v : in)
    if (v->requires_grad()) return true;
  return false;
}

Var finish(Tensor value, const char* op, std::vector<std::shared_ptr<Node>> inputs,
           std::function<void(Node&)> fn) {
  auto n = new_node(std::move(value), op);
  require_finite(*n);
  if (fn) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

/// Gradient buffer of an input, allocated on first use; nullptr if it takes no gradient.
Tensor* gbuf(Node& in) {
  if (!in.requires_grad) return nullptr;
  if (in.grad.empty()) in.grad = Tensor(in.value.dims());
  return &in.grad;
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
}

void check_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(a.dims()));
}

template <typename F, typename D>
Var unary(const Var& a, const char* op, F f, D df) {
  Tensor out(a.dims());
  const auto in = a.value().data();
  auto o = out.data();
  for (size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  if (!tracking({&a})) return finish(std::move(out), op, {}, nullptr);
  return finish(std::move(out), op, {a.ptr()}, [df](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    const auto x = self.inputs[0]->value.data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    auto gx = g->data();
    for (size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * df(x[i], y[i]);
  });
}

}  // namespace

std::string Var::label() const {
  if (!node_) return "<null>";
  return std::string(node_->op) + "#" + std::to_string(node_->id);
}

void Var::assign(Tensor value) const {
  if (!node_->inputs.empty()) throw Error("assign() on a non-leaf node " + label());
  if (value.dims() != node_->value.dims())
    throw ShapeError("assign " + shape_str(value.dims()) + " into " + shape_str(node_->value.dims()));
  node_->value = std::move(value);
}

void Var::set_requires_grad(bool on) const {
  if (!node_->inputs.empty()) throw Error("set_requires_grad() on a non-leaf node " + label());
  node_->requires_grad = on;
}

Var constant(Tensor value) {
  auto n = new_node(std::move(value), "const");
  require_finite(*n);
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = new_node(std::move(value), "param");
  require_finite(*n);
  n->requires_grad = true;
  return Var(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

namespace {
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}
}  // namespace

void backward(const Var& loss) {
  if (!loss) throw Error("backward on null var");
  if (loss.value().size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.dims()));
  if (!loss.requires_grad()) return;
  auto order = topo_order(loss.node());
  for (Node* n : order) n->grad = Tensor();
  loss.node()->grad = Tensor::filled(loss.dims(), real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    if (!n->grad.all_finite())
      throw NonFiniteError(std::string("non-finite gradient at ") + n->op + "#" + std::to_string(n->id));
    n->backward_fn(*n);
  }
  for (Node* n : order)
    if (n->inputs.empty() && !n->grad.empty() && !n->grad.all_finite())
      throw NonFiniteError(std::string("non-finite gradient at ") + n->op + "#" + std::to_string(n->id));
}

std::vector<Tensor> reverse_gradients(const Var& loss, std::span<const Var> params) {
  for (const auto& p : params) p.node()->grad = Tensor();
  backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.grad().empty() ? Tensor(p.dims()) : p.grad());
  return out;
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out = a.value();
  mmap(out).array() += cmap(b.value()).array();
  if (!tracking({&a, &b})) return finish(std::move(out), "add", {}, nullptr);
  return finish(std::move(out), "add", {a.ptr(), b.ptr()}, [](Node& self) {
    for (auto& in : self.inputs)
      if (Tensor* g = gbuf(*in)) mmap(*g) += cmap(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out = a.value();
  mmap(out).array() -= cmap(b.value()).array();
  if (!tracking({&a, &b})) return finish(std::move(out), "sub", {}, nullptr);
  return finish(std::move(out), "sub", {a.ptr(), b.ptr()}, [](Node& self) {
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g) += cmap(self.grad);
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g) -= cmap(self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out = a.value();
  mmap(out).array() *= cmap(b.value()).array();
  if (!tracking({&a, &b})) return finish(std::move(out), "mul", {}, nullptr);
  return finish(std::move(out), "mul", {a.ptr(), b.ptr()}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).array() += cmap(self.grad).array() * cmap(bv).array();
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g).array() += cmap(self.grad).array() * cmap(av).array();
  });
}

Var scale(const Var& a, double s) {
  const real k = real(s);
  return unary(a, "scale", [k](real x) { return k * x; }, [k](real, real) { return k; });
}

Var add_scalar(const Var& a, double s) {
  const real k = real(s);
  return unary(a, "add_scalar", [k](real x) { return x + k; }, [](real, real) { return real(1); });
}

Var add_row(const Var& a, const Var& row) {
  check_matrix(a, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row: row " + shape_str(row.dims()) + " vs " + shape_str(a.dims()));
  Tensor out = a.value();
  mmap(out).rowwise() += cmap(row.value()).row(0);
  if (!tracking({&a, &row})) return finish(std::move(out), "add_row", {}, nullptr);
  return finish(std::move(out), "add_row", {a.ptr(), row.ptr()}, [](Node& self) {
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g) += cmap(self.grad);
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g) += cmap(self.grad).colwise().sum();
  });
}

Var square(const Var& a) {
  return unary(a, "square", [](real x) { return x * x; }, [](real x, real) { return 2 * x; });
}

Var exp(const Var& a) {
  return unary(a, "exp", [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Var tanh(const Var& a) {
  return unary(a, "tanh", [](real x) { return std::tanh(x); }, [](real, real y) { return 1 - y * y; });
}

Var gelu(const Var& a) {
  constexpr real c = real(0.7978845608028654);  // sqrt(2/pi)
  constexpr real k = real(0.044715);
  return unary(
      a, "gelu",
      [](real x) { return real(0.5) * x * (1 + std::tanh(c * (x + k * x * x * x))); },
      [](real x, real) {
        const real u = c * (x + k * x * x * x);
        const real t = std::tanh(u);
        return real(0.5) * (1 + t) + real(0.5) * x * (1 - t * t) * c * (1 + 3 * k * x * x);
      });
}

Var silu(const Var& a) {
  return unary(
      a, "silu", [](real x) { return x / (1 + std::exp(-x)); },
      [](real x, real) {
        const real s = 1 / (1 + std::exp(-x));
        return s * (1 + x * (1 - s));
      });
}

Var relu(const Var& a) {
  return unary(a, "relu", [](real x) { return x > 0 ? x : real(0); }, [](real x, real) { return x > 0 ? real(1) : real(0); });
}

Var clamp(const Var& a, double lo, double hi) {
  const real l = real(lo), h = real(hi);
  return unary(
      a, "clamp", [l, h](real x) { return std::clamp(x, l, h); },
      [l, h](real x, real) { return (x >= l && x <= h) ? real(1) : real(0); });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + shape_str(a.dims()) + " x " + shape_str(b.dims()));
  Tensor out({a.rows(), b.cols()});
  mmap(out).noalias() = cmap(a.value()) * cmap(b.value());
  if (!tracking({&a, &b})) return finish(std::move(out), "matmul", {}, nullptr);
  return finish(std::move(out), "matmul", {a.ptr(), b.ptr()}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).noalias() += cmap(self.grad) * cmap(bv).transpose();
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g).noalias() += cmap(av).transpose() * cmap(self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + shape_str(a.dims()) + " x " + shape_str(b.dims()) + "^T");
  Tensor out({a.rows(), b.rows()});
  mmap(out).noalias() = cmap(a.value()) * cmap(b.value()).transpose();
  if (!tracking({&a, &b})) return finish(std::move(out), "matmul_nt", {}, nullptr);
  return finish(std::move(out), "matmul_nt", {a.ptr(), b.ptr()}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).noalias() += cmap(self.grad) * cmap(bv);
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g).noalias() += cmap(self.grad).transpose() * cmap(av);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_matrix(x, "linear");
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("linear: x " + shape_str(x.dims()) + ", W " + shape_str(w.dims()) + ", b " +
                     shape_str(b.dims()));
  Tensor out({x.rows(), w.cols()});
  auto o = mmap(out);
  o.noalias() = cmap(x.value()) * cmap(w.value());
  o.rowwise() += cmap(b.value()).row(0);
  if (!tracking({&x, &w, &b})) return finish(std::move(out), "linear", {}, nullptr);
  return finish(std::move(out), "linear", {x.ptr(), w.ptr(), b.ptr()}, [](Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    const auto gy = cmap(self.grad);
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).noalias() += gy * cmap(wv).transpose();
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g).noalias() += cmap(xv).transpose() * gy;
    if (Tensor* g = gbuf(*self.inputs[2])) mmap(*g) += gy.colwise().sum();
  });
}

Var pairwise_sqdist(const Var& a, const Var& b) {
  check_matrix(a, "pairwise_sqdist");
  check_matrix(b, "pairwise_sqdist");
  if (a.cols() != b.cols()) throw ShapeError("pairwise_sqdist width mismatch");
  const auto A = cmap(a.value());
  const auto B = cmap(b.value());
  Tensor out({a.rows(), b.rows()});
  auto o = mmap(out);
  o.noalias() = real(-2) * A * B.transpose();
  o.colwise() += A.rowwise().squaredNorm();
  o.rowwise() += B.rowwise().squaredNorm().transpose();
  o = o.cwiseMax(real(0));
  if (!tracking({&a, &b})) return finish(std::move(out), "pairwise_sqdist", {}, nullptr);
  return finish(std::move(out), "pairwise_sqdist", {a.ptr(), b.ptr()}, [](Node& self) {
    const auto A = cmap(self.inputs[0]->value);
    const auto B = cmap(self.inputs[1]->value);
    const auto G = cmap(self.grad);
    // d/dA_i = 2 sum_j G_ij (A_i - B_j); d/dB_j = 2 sum_i G_ij (B_j - A_i)
    if (Tensor* g = gbuf(*self.inputs[0])) {
      auto ga = mmap(*g);
      ga.noalias() += real(2) * (G.rowwise().sum().asDiagonal() * A);
      ga.noalias() -= real(2) * G * B;
    }
    if (Tensor* g = gbuf(*self.inputs[1])) {
      auto gb = mmap(*g);
      gb.noalias() += real(2) * (G.colwise().sum().transpose().asDiagonal() * B);
      gb.noalias() -= real(2) * G.transpose() * A;
    }
  });
}

// ---------------------------------------------------------------- structural

Var concat_cols(const Var& a, const Var& b) {
  check_matrix(a, "concat_cols");
  check_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) throw ShapeError("concat_cols row mismatch");
  const size_t ca = a.cols(), cb = b.cols();
  Tensor out({a.rows(), ca + cb});
  auto o = mmap(out);
  o.leftCols(Eigen::Index(ca)) = cmap(a.value());
  o.rightCols(Eigen::Index(cb)) = cmap(b.value());
  if (!tracking({&a, &b})) return finish(std::move(out), "concat_cols", {}, nullptr);
  return finish(std::move(out), "concat_cols", {a.ptr(), b.ptr()}, [ca, cb](Node& self) {
    const auto G = cmap(self.grad);
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g) += G.leftCols(Eigen::Index(ca));
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g) += G.rightCols(Eigen::Index(cb));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  bool track = false;
  for (const auto& p : parts) {
    check_matrix(p, "concat_rows");
    values.push_back(p.value());
    track = track || (g_grad_enabled && p.requires_grad());
  }
  Tensor out = mld::concat_rows(std::span<const Tensor>(values));
  if (!track) return finish(std::move(out), "concat_rows", {}, nullptr);
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) inputs.push_back(p.ptr());
  return finish(std::move(out), "concat_rows", std::move(inputs), [](Node& self) {
    size_t offset = 0;
    const size_t c = self.value.cols();
    for (auto& in : self.inputs) {
      const size_t n = in->value.size();
      if (Tensor* g = gbuf(*in)) {
        auto gd = g->data();
        const real* src = self.grad.ptr() + offset * c;
        for (size_t i = 0; i < n; ++i) gd[i] += src[i];
      }
      offset += in->value.rows();
    }
  });
}

Var gather_rows(const Var& x, std::span<const size_t> index) {
  check_matrix(x, "gather_rows");
  if (index.empty()) throw ShapeError("gather_rows with empty index");
  const size_t c = x.cols();
  Tensor out({index.size(), c});
  for (size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows()) throw ShapeError("gather_rows index out of range");
    std::copy_n(x.value().ptr() + index[r] * c, c, out.ptr() + r * c);
  }
  if (!tracking({&x})) return finish(std::move(out), "gather_rows", {}, nullptr);
  std::vector<size_t> idx(index.begin(), index.end());
  return finish(std::move(out), "gather_rows", {x.ptr()}, [idx = std::move(idx), c](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    for (size_t r = 0; r < idx.size(); ++r) {
      real* dst = g->ptr() + idx[r] * c;
      const real* src = self.grad.ptr() + r * c;
      for (size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var slice_rows(const Var& x, size_t begin, size_t count) {
  std::vector<size_t> idx(count);
  for (size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return gather_rows(x, idx);
}

Var segment_mean(const Var& x, std::span<const std::pair<size_t, size_t>> segments) {
  check_matrix(x, "segment_mean");
  if (segments.empty()) throw ShapeError("segment_mean with no segments");
  const size_t c = x.cols();
  Tensor out({segments.size(), c});
  for (size_t s = 0; s < segments.size(); ++s) {
    const auto [b, e] = segments[s];
    if (e <= b || e > x.rows()) throw ShapeError("segment_mean: bad segment");
    auto o = out.row(s);
    for (size_t r = b; r < e; ++r) {
      auto in = x.value().row(r);
      for (size_t j = 0; j < c; ++j) o[j] += in[j];
    }
    const real inv = real(1) / real(e - b);
    for (auto& v : o) v *= inv;
  }
  if (!tracking({&x})) return finish(std::move(out), "segment_mean", {}, nullptr);
  std::vector<std::pair<size_t, size_t>> segs(segments.begin(), segments.end());
  return finish(std::move(out), "segment_mean", {x.ptr()}, [segs = std::move(segs), c](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    for (size_t s = 0; s < segs.size(); ++s) {
      const auto [b, e] = segs[s];
      const real inv = real(1) / real(e - b);
      auto gs = self.grad.row(s);
      for (size_t r = b; r < e; ++r) {
        auto gr = g->row(r);
        for (size_t j = 0; j < c; ++j) gr[j] += gs[j] * inv;
      }
    }
  });
}

// ---------------------------------------------------------------- normalization

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_matrix(x, "layer_norm");
  const size_t n = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw ShapeError("layer_norm: affine params must be 1 x " + std::to_string(c));
  Tensor out({n, c});
  Tensor xhat({n, c});
  RealBuffer rstd(n);
  const real* gm = gamma.value().ptr();
  const real* bt = beta.value().ptr();
  for (size_t r = 0; r < n; ++r) {
    const real* in = x.value().ptr() + r * c;
    double m = 0;
    for (size_t j = 0; j < c; ++j) m += in[j];
    m /= double(c);
    double var = 0;
    for (size_t j = 0; j < c; ++j) var += (in[j] - m) * (in[j] - m);
    var /= double(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = real(rs);
    real* xh = xhat.ptr() + r * c;
    real* o = out.ptr() + r * c;
    for (size_t j = 0; j < c; ++j) {
      xh[j] = real((in[j] - m) * rs);
      o[j] = xh[j] * gm[j] + bt[j];
    }
  }
  if (!tracking({&x, &gamma, &beta})) return finish(std::move(out), "layer_norm", {}, nullptr);
  return finish(std::move(out), "layer_norm", {x.ptr(), gamma.ptr(), beta.ptr()},
                [xhat = std::move(xhat), rstd = std::move(rstd), n, c](Node& self) {
                  const real* gy = self.grad.ptr();
                  const real* gm = self.inputs[1]->value.ptr();
                  if (Tensor* g = gbuf(*self.inputs[1]))
                    mmap(*g) += (cmap(self.grad).array() * cmap(xhat).array()).matrix().colwise().sum();
                  if (Tensor* g = gbuf(*self.inputs[2])) mmap(*g) += cmap(self.grad).colwise().sum();
                  Tensor* gx = gbuf(*self.inputs[0]);
                  if (!gx) return;
                  std::vector<double> dxh(c);
                  for (size_t r = 0; r < n; ++r) {
                    const real* xh = xhat.ptr() + r * c;
                    const real* g = gy + r * c;
                    double m1 = 0, m2 = 0;
                    for (size_t j = 0; j < c; ++j) {
                      dxh[j] = double(g[j]) * gm[j];
                      m1 += dxh[j];
                      m2 += dxh[j] * xh[j];
                    }
                    m1 /= double(c);
                    m2 /= double(c);
                    real* o = gx->ptr() + r * c;
                    for (size_t j = 0; j < c; ++j) o[j] += real(rstd[r] * (dxh[j] - m1 - xh[j] * m2));
                  }
                });
}

namespace {
void softmax_row(const real* in, real* out, size_t c) {
  real mx = in[0];
  for (size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double s = 0;
  for (size_t j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    s += out[j];
  }
  const real inv = real(1.0 / s);
  for (size_t j = 0; j < c; ++j) out[j] *= inv;
}

void log_softmax_row(const real* in, real* out, size_t c) {
  real mx = in[0];
  for (size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double s = 0;
  for (size_t j = 0; j < c; ++j) s += std::exp(double(in[j] - mx));
  const double lse = double(mx) + std::log(s);
  for (size_t j = 0; j < c; ++j) out[j] = real(in[j] - lse);
}
}  // namespace

Var softmax_rows(const Var& x) {
  check_matrix(x, "softmax_rows");
  const size_t n = x.rows(), c = x.cols();
  Tensor out({n, c});
  for (size_t r = 0; r < n; ++r) softmax_row(x.value().ptr() + r * c, out.ptr() + r * c, c);
  if (!tracking({&x})) return finish(std::move(out), "softmax", {}, nullptr);
  return finish(std::move(out), "softmax", {x.ptr()}, [n, c](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    for (size_t r = 0; r < n; ++r) {
      const real* p = self.value.ptr() + r * c;
      const real* gy = self.grad.ptr() + r * c;
      double dot = 0;
      for (size_t j = 0; j < c; ++j) dot += double(gy[j]) * p[j];
      real* o = g->ptr() + r * c;
      for (size_t j = 0; j < c; ++j) o[j] += p[j] * real(gy[j] - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  check_matrix(x, "log_softmax_rows");
  const size_t n = x.rows(), c = x.cols();
  Tensor out({n, c});
  for (size_t r = 0; r < n; ++r) log_softmax_row(x.value().ptr() + r * c, out.ptr() + r * c, c);
  if (!tracking({&x})) return finish(std::move(out), "log_softmax", {}, nullptr);
  return finish(std::move(out), "log_softmax", {x.ptr()}, [n, c](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    for (size_t r = 0; r < n; ++r) {
      const real* ls = self.value.ptr() + r * c;
      const real* gy = self.grad.ptr() + r * c;
      double s = 0;
      for (size_t j = 0; j < c; ++j) s += gy[j];
      real* o = g->ptr() + r * c;
      for (size_t j = 0; j < c; ++j) o[j] += real(gy[j] - std::exp(double(ls[j])) * s);
    }
  });
}

// ---------------------------------------------------------------- attention

Var attention(const Var& q, const Var& k, const Var& v, std::span<const AttnSegment> segments, size_t heads) {
  check_matrix(q, "attention");
  check_matrix(k, "attention");
  check_matrix(v, "attention");
  const size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw ShapeError("attention: q " + shape_str(q.dims()) + ", k " + shape_str(k.dims()) + ", v " +
                     shape_str(v.dims()));
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: heads must divide width");
  const size_t dh = d / heads;
  const real sc = real(1.0 / std::sqrt(double(dh)));
  const Eigen::Index D = Eigen::Index(d), DH = Eigen::Index(dh);

  std::vector<AttnSegment> segs;
  size_t prob_size = 0;
  for (const auto& s : segments) {
    if (s.q_end > q.rows() || s.k_end > k.rows() || s.q_begin > s.q_end || s.k_begin > s.k_end)
      throw ShapeError("attention: segment out of range");
    if (s.q_end == s.q_begin || s.k_end == s.k_begin) continue;
    segs.push_back(s);
    prob_size += (s.q_end - s.q_begin) * (s.k_end - s.k_begin) * heads;
  }

  Tensor out({q.rows(), d});
  RealBuffer probs(prob_size);
  size_t off = 0;
  for (const auto& s : segs) {
    const Eigen::Index nq = Eigen::Index(s.q_end - s.q_begin), nk = Eigen::Index(s.k_end - s.k_begin);
    for (size_t h = 0; h < heads; ++h) {
      CSMapR Q(q.value().ptr() + s.q_begin * d + h * dh, nq, DH, Strided(D));
      CSMapR K(k.value().ptr() + s.k_begin * d + h * dh, nk, DH, Strided(D));
      CSMapR V(v.value().ptr() + s.k_begin * d + h * dh, nk, DH, Strided(D));
      MapR P(probs.data() + off, nq, nk);
      P.noalias() = sc * Q * K.transpose();
      for (Eigen::Index r = 0; r < nq; ++r) softmax_row(P.row(r).data(), P.row(r).data(), size_t(nk));
      SMapR O(out.ptr() + s.q_begin * d + h * dh, nq, DH, Strided(D));
      O.noalias() = P * V;
      off += size_t(nq * nk);
    }
  }
  if (!tracking({&q, &k, &v})) return finish(std::move(out), "attention", {}, nullptr);
  return finish(std::move(out), "attention", {q.ptr(), k.ptr(), v.ptr()},
                [segs = std::move(segs), probs = std::move(probs), heads, d, dh, sc](Node& self) {
                  const Eigen::Index D = Eigen::Index(d), DH = Eigen::Index(dh);
                  Tensor* gq = gbuf(*self.inputs[0]);
                  Tensor* gk = gbuf(*self.inputs[1]);
                  Tensor* gv = gbuf(*self.inputs[2]);
                  const Tensor& qv = self.inputs[0]->value;
                  const Tensor& kv = self.inputs[1]->value;
                  const Tensor& vv = self.inputs[2]->value;
                  size_t off = 0;
                  RowMat dP;
                  for (const auto& s : segs) {
                    const Eigen::Index nq = Eigen::Index(s.q_end - s.q_begin);
                    const Eigen::Index nk = Eigen::Index(s.k_end - s.k_begin);
                    for (size_t h = 0; h < heads; ++h) {
                      const size_t qo = s.q_begin * d + h * dh, ko = s.k_begin * d + h * dh;
                      CMapR P(probs.data() + off, nq, nk);
                      CSMapR dO(self.grad.ptr() + qo, nq, DH, Strided(D));
                      if (gv) {
                        SMapR dV(gv->ptr() + ko, nk, DH, Strided(D));
                        dV.noalias() += P.transpose() * dO;
                      }
                      if (gq || gk) {
                        CSMapR V(vv.ptr() + ko, nk, DH, Strided(D));
                        dP.noalias() = dO * V.transpose();
                        // dS = P .* (dP - rowsum(dP .* P))
                        for (Eigen::Index r = 0; r < nq; ++r) {
                          const real dot = dP.row(r).dot(P.row(r));
                          dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
                        }
                        if (gq) {
                          CSMapR K(kv.ptr() + ko, nk, DH, Strided(D));
                          SMapR dQ(gq->ptr() + qo, nq, DH, Strided(D));
                          dQ.noalias() += sc * dP * K;
                        }
                        if (gk) {
                          CSMapR Q(qv.ptr() + qo, nq, DH, Strided(D));
                          SMapR dK(gk->ptr() + ko, nk, DH, Strided(D));
                          dK.noalias() += sc * dP.transpose() * Q;
                        }
                      }
                      off += size_t(nq * nk);
                    }
                  }
                });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0;
  for (real v : a.value().data()) s += v;
  Tensor out = Tensor::scalar(real(s));
  if (!tracking({&a})) return finish(std::move(out), "sum", {}, nullptr);
  return finish(std::move(out), "sum", {a.ptr()}, [](Node& self) {
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).array() += self.grad[0];
  });
}

Var mean(const Var& a) {
  double s = 0;
  for (real v : a.value().data()) s += v;
  const double n = double(a.value().size());
  Tensor out = Tensor::scalar(real(s / n));
  if (!tracking({&a})) return finish(std::move(out), "mean", {}, nullptr);
  return finish(std::move(out), "mean", {a.ptr()}, [n](Node& self) {
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).array() += real(self.grad[0] / n);
  });
}

Var mse(const Var& a, const Var& b) {
  check_same(a, b, "mse");
  const auto av = a.value().data(), bv = b.value().data();
  double s = 0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double e = double(av[i]) - double(bv[i]);
    s += e * e;
  }
  const double n = double(av.size());
  Tensor out = Tensor::scalar(real(s / n));
  if (!tracking({&a, &b})) return finish(std::move(out), "mse", {}, nullptr);
  return finish(std::move(out), "mse", {a.ptr(), b.ptr()}, [n](Node& self) {
    const real k = real(2.0 * self.grad[0] / n);
    const auto A = cmap(self.inputs[0]->value).array();
    const auto B = cmap(self.inputs[1]->value).array();
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).array() += k * (A - B);
    if (Tensor* g = gbuf(*self.inputs[1])) mmap(*g).array() -= k * (A - B);
  });
}

Var cross_entropy(const Var& logits, std::span<const size_t> labels) {
  check_matrix(logits, "cross_entropy");
  const size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy: one label per row required");
  RealBuffer ls(c);
  double total = 0;
  for (size_t r = 0; r < n; ++r) {
    if (labels[r] >= c) throw ShapeError("cross_entropy: label out of range");
    log_softmax_row(logits.value().ptr() + r * c, ls.data(), c);
    total -= ls[labels[r]];
  }
  Tensor out = Tensor::scalar(real(total / double(n)));
  if (!tracking({&logits})) return finish(std::move(out), "cross_entropy", {}, nullptr);
  std::vector<size_t> lab(labels.begin(), labels.end());
  return finish(std::move(out), "cross_entropy", {logits.ptr()}, [lab = std::move(lab), n, c](Node& self) {
    Tensor* g = gbuf(*self.inputs[0]);
    if (!g) return;
    const real k = real(self.grad[0] / double(n));
    RealBuffer p(c);
    for (size_t r = 0; r < n; ++r) {
      softmax_row(self.inputs[0]->value.ptr() + r * c, p.data(), c);
      p[lab[r]] -= 1;
      real* o = g->ptr() + r * c;
      for (size_t j = 0; j < c; ++j) o[j] += k * p[j];
    }
  });
}

Var kl_standard_normal(const Var& mu, const Var& log_sigma) {
  check_same(mu, log_sigma, "kl_standard_normal");
  const auto m = mu.value().data(), ls = log_sigma.value().data();
  double s = 0;
  for (size_t i = 0; i < m.size(); ++i) {
    const double l = ls[i];
    s += 0.5 * (std::exp(2 * l) + double(m[i]) * m[i] - 1.0 - 2 * l);
  }
  Tensor out = Tensor::scalar(real(s));
  if (!tracking({&mu, &log_sigma})) return finish(std::move(out), "kl", {}, nullptr);
  return finish(std::move(out), "kl", {mu.ptr(), log_sigma.ptr()}, [](Node& self) {
    const real g0 = self.grad[0];
    if (Tensor* g = gbuf(*self.inputs[0])) mmap(*g).array() += g0 * cmap(self.inputs[0]->value).array();
    if (Tensor* g = gbuf(*self.inputs[1]))
      mmap(*g).array() += g0 * ((real(2) * cmap(self.inputs[1]->value).array()).exp() - real(1));
  });
}

}  // namespace mld
