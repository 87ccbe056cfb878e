#include "nestner/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "nestner/errors.hpp"

namespace nestner {

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFinite("constant contains NaN or Inf");
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
  return Var{nodes_.size() - 1};
}

Var Tape::constant_ref(const Tensor& value) {
  nodes_.push_back(Node{{}, &value, {}, {}, false});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(const Parameter& param) {
  if (auto it = leaves_.find(&param); it != leaves_.end()) return Var{it->second};
  if (!param.value.all_finite()) throw NonFinite("parameter '" + param.name + "' contains NaN or Inf");
  nodes_.push_back(Node{{}, &param.value, {}, {}, true});
  leaves_.emplace(&param, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  if (!value.all_finite()) throw NonFinite("op produced NaN or Inf");
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.index].requires_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var root) {
  const Tensor& out = value(root);
  if (out.size() != 1) throw ShapeMismatch("backward() needs a 1x1 root, got " + shape_string(out.shape()));
  nodes_[root.index].grad = Tensor(out.shape(), {1.0});
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.index];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad = Tensor(value(v).shape());
  return n.grad.data();
}

void Tape::accumulate(Var v, const Tensor& g) {
  auto buf = grad_buffer(v);
  if (buf.empty()) return;
  if (buf.size() != g.size()) throw ShapeMismatch("gradient shape mismatch during backward");
  auto src = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += src[i];
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.index];
  if (n.grad.empty()) return Tensor(value(v).shape());
  return n.grad;
}

Tensor Tape::gradient(const Parameter& param) const {
  auto it = leaves_.find(&param);
  if (it == leaves_.end()) return Tensor(param.value.shape());
  return grad(Var{it->second});
}

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeMismatch(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b) || is_scalar(a) || is_scalar(b)) return;
  throw ShapeMismatch(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                      shape_string(b.shape()));
}

// Reduces a gradient of the broadcast result back to the operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& operand) {
  if (g.same_shape(operand)) return g;
  double total = 0.0;
  for (double v : g.data()) total += v;
  return Tensor(operand.shape(), {total});
}

template <typename F>
Tensor binary_values(const Tensor& a, const Tensor& b, F f) {
  const Tensor& big = is_scalar(a) && !is_scalar(b) ? b : a;
  Tensor out(big.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double x = is_scalar(a) ? a[0] : a[i];
    double y = is_scalar(b) ? b[0] : b[i];
    o[i] = f(x, y);
  }
  return out;
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

// out[r×c] = a[r×k] · b[k×c], optionally transposing either operand.
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
  const std::size_t r = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t c = tb ? b.rows() : b.cols();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  auto A = a.data();
  auto B = b.data();
  auto O = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? A[p * lda + i] : A[i * lda + p];
      if (av == 0.0) continue;
      double* orow = &O[i * c];
      if (!tb) {
        const double* brow = &B[p * ldb];
        for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < c; ++j) orow[j] += av * B[j * ldb + p];
      }
    }
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) {
    throw ShapeMismatch("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out = Tensor::zeros(A.rows(), B.cols());
  gemm(A, false, B, false, out);
  Var parents[] = {a, b};
  return t.push(std::move(out), parents, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor ga = Tensor::zeros(A.rows(), A.cols());
      gemm(g, false, B, true, ga);
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Tensor gb = Tensor::zeros(B.rows(), B.cols());
      gemm(A, true, g, false, gb);
      tp.accumulate(b, gb);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  check_broadcast(A, B, "add");
  Var parents[] = {a, b};
  return t.push(binary_values(A, B, std::plus<>()), parents, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a)));
    tp.accumulate(b, reduce_to(g, tp.value(b)));
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  check_broadcast(A, B, "sub");
  Var parents[] = {a, b};
  return t.push(binary_values(A, B, std::minus<>()), parents, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a)));
    tp.accumulate(b, reduce_to(map_values(g, [](double v) { return -v; }), tp.value(b)));
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  check_broadcast(A, B, "mul");
  Var parents[] = {a, b};
  return t.push(binary_values(A, B, std::multiplies<>()), parents, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.requires_grad(a)) tp.accumulate(a, reduce_to(binary_values(g, B, std::multiplies<>()), A));
    if (tp.requires_grad(b)) tp.accumulate(b, reduce_to(binary_values(g, A, std::multiplies<>()), B));
  });
}

Var add_row(Tape& t, Var x, Var r) {
  const Tensor& X = t.value(x);
  const Tensor& R = t.value(r);
  require_rank2(X, "add_row");
  if (R.rows() != 1 || R.cols() != X.cols()) {
    throw ShapeMismatch("add_row: row " + shape_string(R.shape()) + " does not fit " + shape_string(X.shape()));
  }
  Tensor out = X;
  const std::size_t cols = X.cols();
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += R[j];
  }
  Var parents[] = {x, r};
  return t.push(std::move(out), parents, [x, r, cols](Tape& tp, const Tensor& g) {
    tp.accumulate(x, g);
    auto gr = tp.grad_buffer(r);
    if (gr.empty()) return;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < cols; ++j) gr[j] += g.at(i, j);
    }
  });
}

Var scale(Tape& t, Var x, double factor) {
  Var parents[] = {x};
  return t.push(map_values(t.value(x), [factor](double v) { return v * factor; }), parents,
                [x, factor](Tape& tp, const Tensor& g) {
                  tp.accumulate(x, map_values(g, [factor](double v) { return v * factor; }));
                });
}

Var tanh(Tape& t, Var x) {
  Var parents[] = {x};
  const Var self{t.size()};
  return t.push(map_values(t.value(x), [](double v) { return std::tanh(v); }), parents,
                [x, self](Tape& tp, const Tensor& g) {
                  const Tensor& y = tp.value(self);
                  Tensor gx(g.shape());
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
                  tp.accumulate(x, gx);
                });
}

Var sigmoid(Tape& t, Var x) {
  auto f = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  Var parents[] = {x};
  const Var self{t.size()};
  return t.push(map_values(t.value(x), f), parents, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
    tp.accumulate(x, gx);
  });
}

Var relu(Tape& t, Var x) {
  Var parents[] = {x};
  return t.push(map_values(t.value(x), [](double v) { return v > 0 ? v : 0.0; }), parents,
                [x](Tape& tp, const Tensor& g) {
                  const Tensor& X = tp.value(x);
                  Tensor gx(g.shape());
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] = X[i] > 0 ? g[i] : 0.0;
                  tp.accumulate(x, gx);
                });
}

Var dropout_mask_apply(Tape& t, Var x, const Tensor& mask) {
  const Tensor& X = t.value(x);
  if (!X.same_shape(mask)) {
    throw ShapeMismatch("dropout mask " + shape_string(mask.shape()) + " does not match " + shape_string(X.shape()));
  }
  Var parents[] = {x};
  return t.push(binary_values(X, mask, std::multiplies<>()), parents, [x, mask](Tape& tp, const Tensor& g) {
    tp.accumulate(x, binary_values(g, mask, std::multiplies<>()));
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  if (x.cols() < 2) throw ShapeMismatch("softmax_rows needs at least two columns");
  Tensor out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  return out;
}

Var softmax_rows(Tape& t, Var x) {
  Var parents[] = {x};
  const Var self{t.size()};
  return t.push(softmax_rows(t.value(x)), parents, [x, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor gx(g.shape());
    const std::size_t c = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
    }
    tp.accumulate(x, gx);
  });
}

Var sum(Tape& t, Var x) {
  double total = 0.0;
  for (double v : t.value(x).data()) total += v;
  Var parents[] = {x};
  return t.push(Tensor::scalar(total), parents, [x](Tape& tp, const Tensor& g) {
    auto buf = tp.grad_buffer(x);
    for (double& v : buf) v += g[0];
  });
}

Var row(Tape& t, Var x, std::size_t r) {
  const Tensor& X = t.value(x);
  require_rank2(X, "row");
  if (r >= X.rows()) throw ShapeMismatch("row index out of range");
  const std::size_t c = X.cols();
  std::vector<double> data(X.data().begin() + r * c, X.data().begin() + (r + 1) * c);
  Var parents[] = {x};
  return t.push(Tensor({1, c}, std::move(data)), parents, [x, r, c](Tape& tp, const Tensor& g) {
    auto buf = tp.grad_buffer(x);
    for (std::size_t j = 0; j < c; ++j) buf[r * c + j] += g[j];
  });
}

Var slice_cols(Tape& t, Var x, std::size_t offset, std::size_t count) {
  const Tensor& X = t.value(x);
  require_rank2(X, "slice_cols");
  if (count == 0 || offset + count > X.cols()) throw ShapeMismatch("slice_cols: range out of bounds");
  const std::size_t rows = X.rows();
  const std::size_t cols = X.cols();
  Tensor out = Tensor::zeros(rows, count);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = X.at(i, offset + j);
  }
  Var parents[] = {x};
  return t.push(std::move(out), parents, [x, offset, count, rows, cols](Tape& tp, const Tensor& g) {
    auto buf = tp.grad_buffer(x);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < count; ++j) buf[i * cols + offset + j] += g.at(i, j);
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const std::size_t cols = t.value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    require_rank2(t.value(p), "concat_rows");
    if (t.value(p).cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += t.value(p).rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) data.insert(data.end(), t.value(p).data().begin(), t.value(p).data().end());
  std::vector<Var> captured(parts.begin(), parts.end());
  return t.push(Tensor({rows, cols}, std::move(data)), parts, [captured](Tape& tp, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : captured) {
      const std::size_t n = tp.value(p).size();
      auto buf = tp.grad_buffer(p);
      if (!buf.empty()) {
        for (std::size_t i = 0; i < n; ++i) buf[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_rank2(A, "concat_cols");
  require_rank2(B, "concat_cols");
  if (A.rows() != B.rows()) throw ShapeMismatch("concat_cols: row counts differ");
  const std::size_t rows = A.rows();
  const std::size_t ca = A.cols();
  const std::size_t cb = B.cols();
  Tensor out = Tensor::zeros(rows, ca + cb);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = A.at(i, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = B.at(i, j);
  }
  Var parents[] = {a, b};
  return t.push(std::move(out), parents, [a, b, rows, ca, cb](Tape& tp, const Tensor& g) {
    auto ga = tp.grad_buffer(a);
    auto gb = tp.grad_buffer(b);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!ga.empty()) {
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g.at(i, j);
      }
      if (!gb.empty()) {
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g.at(i, ca + j);
      }
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const std::size_t> indices) {
  const Tensor& T = t.value(table);
  require_rank2(T, "gather_rows");
  if (indices.empty()) throw ShapeMismatch("gather_rows: no indices");
  const std::size_t d = T.cols();
  Tensor out = Tensor::zeros(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= T.rows()) throw ShapeMismatch("gather_rows: index out of range");
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = T.at(indices[i], j);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Var parents[] = {table};
  return t.push(std::move(out), parents, [table, idx, d](Tape& tp, const Tensor& g) {
    auto buf = tp.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) buf[idx[i] * d + j] += g.at(i, j);
    }
  });
}

namespace {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double evaluate(const std::function<Var(Tape&)>& f) {
  Tape tape;
  const Tensor& out = tape.value(f(tape));
  if (out.size() != 1) throw ShapeMismatch("check_gradient: function must return a 1x1 value");
  if (!std::isfinite(out[0])) throw NonFinite("check_gradient: function value is not finite");
  return out[0];
}

}  // namespace

double check_gradient(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double eps,
                      Stencil stencil) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var out = f(tape);
    if (!std::isfinite(tape.value(out)[0])) throw NonFinite("check_gradient: function value is not finite");
    tape.backward(out);
    for (Parameter* p : params) analytic.push_back(tape.gradient(*p));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& x = params[k]->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      auto at = [&](double offset) {
        x[i] = saved + offset;
        return evaluate(f);
      };
      double numeric = 0.0;
      try {
        if (stencil == Stencil::ThreePoint) {
          numeric = (at(eps) - at(-eps)) / (2.0 * eps);
        } else {
          numeric = (at(-2 * eps) - 8.0 * at(-eps) + 8.0 * at(eps) - at(2 * eps)) / (12.0 * eps);
        }
      } catch (...) {
        x[i] = saved;
        throw;
      }
      x[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
  }
  return worst;
}

double check_gradient(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps, Stencil stencil) {
  Parameter p{"x", x};
  Parameter* ptrs[] = {&p};
  return check_gradient([&](Tape& t) { return f(t, t.leaf(p)); }, ptrs, eps, stencil);
}

}  // namespace nestner
