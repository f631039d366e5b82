#include "prom3e/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "prom3e/error.hpp"

namespace prom3e {

Var Graph::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Graph::parameter(Tensor value) { return record(std::move(value), grad_enabled_, nullptr); }

Var Graph::record(Tensor value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v); }

bool Graph::any_requires_grad(std::initializer_list<Var> vs) const {
  return std::any_of(vs.begin(), vs.end(), [&](Var v) { return nodes_[v.id].requires_grad; });
}

void Graph::backward(Var loss) {
  const Tensor& lv = nodes_.at(loss.id).value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + lv.shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this);
  }
}

namespace ops {
namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

void require_scalar(const char* op, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw ShapeError(std::string(op) + ": expected scalar [1x1], got " + s.shape_str());
  }
}

// Record a unary elementwise op y = f(x) with derivative computed from (x, y).
template <class F, class D>
Var unary(Graph& g, Var a, F f, D dfdx) {
  const Tensor& x = g.value(a);
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const bool rg = g.requires_grad(a);
  const Var out{g.size()};
  return g.record(std::move(y), rg, [a, out, dfdx](Graph& gg) {
    const Tensor& x = gg.value(a);
    const Tensor& y = gg.value(out);
    const Tensor& dy = gg.grad_buffer(out);
    Tensor& dx = gg.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (A.cols() != B.rows()) shape_fail("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  gemm_nn(A.data(), B.data(), C.data(), m, k, n);
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, b}), [a, b, out, m, k, n](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    if (gg.requires_grad(a)) {
      gemm_nt(dC.data(), gg.value(b).data(), gg.grad_buffer(a).data(), m, n, k);
    }
    if (gg.requires_grad(b)) {
      gemm_tn(gg.value(a).data(), dC.data(), gg.grad_buffer(b).data(), m, k, n);
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  const bool broadcast = !A.same_shape(B);
  if (broadcast && !(B.rows() == 1 && B.cols() == A.cols())) shape_fail("add", A, B);
  Tensor C = A;
  const std::size_t n = A.cols();
  if (broadcast) {
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) C(r, c) += B[c];
  } else {
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  }
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, b}), [a, b, out, broadcast, n](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    if (gg.requires_grad(a)) {
      Tensor& dA = gg.grad_buffer(a);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
    }
    if (gg.requires_grad(b)) {
      Tensor& dB = gg.grad_buffer(b);
      if (broadcast) {
        for (std::size_t r = 0; r < dC.rows(); ++r)
          for (std::size_t c = 0; c < n; ++c) dB[c] += dC(r, c);
      } else {
        for (std::size_t i = 0; i < dC.size(); ++i) dB[i] += dC[i];
      }
    }
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (!A.same_shape(B)) shape_fail("sub", A, B);
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, b}), [a, b, out](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    if (gg.requires_grad(a)) {
      Tensor& dA = gg.grad_buffer(a);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
    }
    if (gg.requires_grad(b)) {
      Tensor& dB = gg.grad_buffer(b);
      for (std::size_t i = 0; i < dC.size(); ++i) dB[i] -= dC[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (!A.same_shape(B)) shape_fail("mul", A, B);
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, b}), [a, b, out](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    if (gg.requires_grad(a)) {
      const Tensor& B = gg.value(b);
      Tensor& dA = gg.grad_buffer(a);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * B[i];
    }
    if (gg.requires_grad(b)) {
      const Tensor& A = gg.value(a);
      Tensor& dB = gg.grad_buffer(b);
      for (std::size_t i = 0; i < dC.size(); ++i) dB[i] += dC[i] * A[i];
    }
  });
}

Var scale(Graph& g, Var a, double c) {
  return unary(
      g, a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var mul_scalar(Graph& g, Var a, Var s) {
  const Tensor& A = g.value(a);
  require_scalar("mul_scalar", g.value(s));
  const double sv = g.value(s)[0];
  Tensor C = A;
  for (double& v : C.data()) v *= sv;
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, s}), [a, s, out](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    const Tensor& A = gg.value(a);
    if (gg.requires_grad(a)) {
      const double sv = gg.value(s)[0];
      Tensor& dA = gg.grad_buffer(a);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * sv;
    }
    if (gg.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < dC.size(); ++i) acc += dC[i] * A[i];
      gg.grad_buffer(s)[0] += acc;
    }
  });
}

Var add_scalar(Graph& g, Var a, Var s) {
  require_scalar("add_scalar", g.value(s));
  const double sv = g.value(s)[0];
  Tensor C = g.value(a);
  for (double& v : C.data()) v += sv;
  const Var out{g.size()};
  return g.record(std::move(C), g.any_requires_grad({a, s}), [a, s, out](Graph& gg) {
    const Tensor& dC = gg.grad_buffer(out);
    if (gg.requires_grad(a)) {
      Tensor& dA = gg.grad_buffer(a);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
    }
    if (gg.requires_grad(s)) {
      double acc = 0.0;
      for (double v : dC.data()) acc += v;
      gg.grad_buffer(s)[0] += acc;
    }
  });
}

Var gelu(Graph& g, Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const Tensor& x = g.value(a);
  Tensor y(x.rows(), x.cols());
  const bool rg = g.requires_grad(a);
  // derivative kept from the forward pass: cdf(x) + x pdf(x)
  std::vector<double> deriv(rg ? x.size() : 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
    y[i] = x[i] * cdf;
    if (rg) deriv[i] = cdf + x[i] * inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
  }
  const Var out{g.size()};
  return g.record(std::move(y), rg, [a, out, deriv = std::move(deriv)](Graph& gg) {
    const Tensor& dy = gg.grad_buffer(out);
    Tensor& dx = gg.grad_buffer(a);
    for (std::size_t i = 0; i < deriv.size(); ++i) dx[i] += dy[i] * deriv[i];
  });
}

Var exp(Graph& g, Var a) {
  return unary(
      g, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Graph& g, Var a) {
  return unary(
      g, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias) {
  constexpr double eps = 1e-9;
  const Tensor& X = g.value(x);
  const Tensor& G = g.value(gain);
  const Tensor& Bv = g.value(bias);
  const std::size_t m = X.rows(), n = X.cols();
  if (G.rows() != 1 || G.cols() != n) shape_fail("layer_norm gain", X, G);
  if (Bv.rows() != 1 || Bv.cols() != n) shape_fail("layer_norm bias", X, Bv);
  Tensor xhat(m, n);
  std::vector<double> inv_std(m);
  Tensor Y(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    const auto row = X.row_span(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (row[c] - mu) * is;
      Y(r, c) = xhat(r, c) * G[c] + Bv[c];
    }
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.any_requires_grad({x, gain, bias}),
                  [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Graph& gg) {
                    const Tensor& dY = gg.grad_buffer(out);
                    const std::size_t m = dY.rows(), n = dY.cols();
                    if (gg.requires_grad(gain)) {
                      Tensor& dG = gg.grad_buffer(gain);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) dG[c] += dY(r, c) * xhat(r, c);
                    }
                    if (gg.requires_grad(bias)) {
                      Tensor& dB = gg.grad_buffer(bias);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) dB[c] += dY(r, c);
                    }
                    if (gg.requires_grad(x)) {
                      const Tensor& G = gg.value(gain);
                      Tensor& dX = gg.grad_buffer(x);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < m; ++r) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dxh = dY(r, c) * G[c];
                          s1 += dxh;
                          s2 += dxh * xhat(r, c);
                        }
                        s1 *= inv_n;
                        s2 *= inv_n;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dxh = dY(r, c) * G[c];
                          dX(r, c) += inv_std[r] * (dxh - s1 - xhat(r, c) * s2);
                        }
                      }
                    }
                  });
}

Var softmax_rows(Graph& g, Var a) {
  const Tensor& X = g.value(a);
  Tensor Y(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto row = X.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < X.cols(); ++c) z += (Y(r, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < X.cols(); ++c) Y(r, c) /= z;
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(a), [a, out](Graph& gg) {
    const Tensor& Y = gg.value(out);
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(a);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += dY(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) dX(r, c) += Y(r, c) * (dY(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Graph& g, Var a) {
  const Tensor& X = g.value(a);
  Tensor Y(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto row = X.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < X.cols(); ++c) Y(r, c) = row[c] - lse;
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(a), [a, out](Graph& gg) {
    const Tensor& Y = gg.value(out);
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(a);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) s += dY(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) dX(r, c) += dY(r, c) - std::exp(Y(r, c)) * s;
    }
  });
}

Var l2_normalize_rows(Graph& g, Var a) {
  const Tensor& X = g.value(a);
  Tensor Y(X.rows(), X.cols());
  std::vector<double> norms(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double s = 0.0;
    for (double v : X.row_span(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (norms[r] > 0.0)
      for (std::size_t c = 0; c < X.cols(); ++c) Y(r, c) = X(r, c) / norms[r];
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(a), [a, out, norms = std::move(norms)](Graph& gg) {
    const Tensor& Y = gg.value(out);
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(a);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      if (norms[r] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += dY(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c)
        dX(r, c) += (dY(r, c) - Y(r, c) * dot) / norms[r];
    }
  });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  const Var out{g.size()};
  return g.record(Tensor::scalar(s), g.requires_grad(a), [a, out](Graph& gg) {
    const double d = gg.grad_buffer(out)[0];
    for (double& v : gg.grad_buffer(a).data()) v += d;
  });
}

Var mean(Graph& g, Var a) {
  const double n = static_cast<double>(g.value(a).size());
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  const Var out{g.size()};
  return g.record(Tensor::scalar(s / n), g.requires_grad(a), [a, out, n](Graph& gg) {
    const double d = gg.grad_buffer(out)[0] / n;
    for (double& v : gg.grad_buffer(a).data()) v += d;
  });
}

Var sum_cols(Graph& g, Var a) {
  const Tensor& X = g.value(a);
  Tensor Y(X.rows(), 1);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double s = 0.0;
    for (double v : X.row_span(r)) s += v;
    Y[r] = s;
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(a), [a, out](Graph& gg) {
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(a);
    for (std::size_t r = 0; r < dX.rows(); ++r)
      for (double& v : dX.row_span(r)) v += dY[r];
  });
}

Var diagonal(Graph& g, Var a) {
  const Tensor& X = g.value(a);
  if (X.rows() != X.cols()) throw ShapeError("diagonal: expected square matrix, got " + X.shape_str());
  Tensor Y(X.rows(), 1);
  for (std::size_t i = 0; i < X.rows(); ++i) Y[i] = X(i, i);
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(a), [a, out](Graph& gg) {
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(a);
    for (std::size_t i = 0; i < dY.rows(); ++i) dX(i, i) += dY[i];
  });
}

Var stack_tokens(Graph& g, const std::vector<Var>& tokens) {
  if (tokens.empty()) throw ShapeError("stack_tokens: empty token list");
  const Tensor& first = g.value(tokens.front());
  const std::size_t b = first.rows(), e = first.cols(), t = tokens.size();
  bool rg = false;
  for (Var v : tokens) {
    if (!g.value(v).same_shape(first)) shape_fail("stack_tokens", first, g.value(v));
    rg = rg || g.requires_grad(v);
  }
  Tensor Y(b * t, e);
  for (std::size_t k = 0; k < t; ++k) {
    const Tensor& X = g.value(tokens[k]);
    for (std::size_t r = 0; r < b; ++r) {
      auto src = X.row_span(r);
      std::copy(src.begin(), src.end(), Y.row_span(r * t + k).begin());
    }
  }
  const Var out{g.size()};
  return g.record(std::move(Y), rg, [tokens, out, b, t](Graph& gg) {
    const Tensor& dY = gg.grad_buffer(out);
    for (std::size_t k = 0; k < t; ++k) {
      if (!gg.requires_grad(tokens[k])) continue;
      Tensor& dX = gg.grad_buffer(tokens[k]);
      for (std::size_t r = 0; r < b; ++r) {
        auto src = dY.row_span(r * t + k);
        auto dst = dX.row_span(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    }
  });
}

Var select_token(Graph& g, Var x, std::size_t tokens, std::size_t index) {
  const Tensor& X = g.value(x);
  if (tokens == 0 || index >= tokens || X.rows() % tokens != 0) {
    throw ShapeError("select_token: token " + std::to_string(index) + " of " +
                     std::to_string(tokens) + " from " + X.shape_str());
  }
  const std::size_t b = X.rows() / tokens;
  Tensor Y(b, X.cols());
  for (std::size_t r = 0; r < b; ++r) {
    auto src = X.row_span(r * tokens + index);
    std::copy(src.begin(), src.end(), Y.row_span(r).begin());
  }
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(x), [x, out, tokens, index](Graph& gg) {
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dX = gg.grad_buffer(x);
    for (std::size_t r = 0; r < dY.rows(); ++r) {
      auto src = dY.row_span(r);
      auto dst = dX.row_span(r * tokens + index);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var broadcast_rows(Graph& g, Var row, std::size_t rows) {
  const Tensor& R = g.value(row);
  if (R.rows() != 1) throw ShapeError("broadcast_rows: expected a single row, got " + R.shape_str());
  Tensor Y(rows, R.cols());
  for (std::size_t r = 0; r < rows; ++r) std::copy(R.data().begin(), R.data().end(), Y.row_span(r).begin());
  const Var out{g.size()};
  return g.record(std::move(Y), g.requires_grad(row), [row, out](Graph& gg) {
    const Tensor& dY = gg.grad_buffer(out);
    Tensor& dR = gg.grad_buffer(row);
    for (std::size_t r = 0; r < dY.rows(); ++r)
      for (std::size_t c = 0; c < dY.cols(); ++c) dR[c] += dY(r, c);
  });
}

Var attention(Graph& g, Var q, Var k, Var v, std::size_t tokens, std::size_t heads) {
  const Tensor& Q = g.value(q);
  const Tensor& K = g.value(k);
  const Tensor& V = g.value(v);
  if (!Q.same_shape(K)) shape_fail("attention q/k", Q, K);
  if (!Q.same_shape(V)) shape_fail("attention q/v", Q, V);
  const std::size_t e = Q.cols();
  if (tokens == 0 || Q.rows() % tokens != 0 || heads == 0 || e % heads != 0) {
    throw ShapeError("attention: " + Q.shape_str() + " with " + std::to_string(tokens) +
                     " tokens and " + std::to_string(heads) + " heads");
  }
  const std::size_t nb = Q.rows() / tokens, t = tokens, dh = e / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs layout: [record][head][t][t]
  std::vector<double> probs(nb * heads * t * t);
  Tensor O(Q.rows(), e);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + ((b * heads + h) * t * t);
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < t; ++i) {
        const double* qi = &Q(b * t + i, c0);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < t; ++j) {
          const double* kj = &K(b * t + j, c0);
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          P[i * t + j] = s * sc;
          mx = std::max(mx, P[i * t + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < t; ++j) z += (P[i * t + j] = std::exp(P[i * t + j] - mx));
        for (std::size_t j = 0; j < t; ++j) P[i * t + j] /= z;
        double* oi = &O(b * t + i, c0);
        for (std::size_t j = 0; j < t; ++j) {
          const double p = P[i * t + j];
          const double* vj = &V(b * t + j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  const Var out{g.size()};
  return g.record(
      std::move(O), g.any_requires_grad({q, k, v}),
      [q, k, v, out, nb, t, heads, dh, sc, probs = std::move(probs)](Graph& gg) {
        const Tensor& Q = gg.value(q);
        const Tensor& K = gg.value(k);
        const Tensor& V = gg.value(v);
        const Tensor& dO = gg.grad_buffer(out);
        Tensor* dQ = gg.requires_grad(q) ? &gg.grad_buffer(q) : nullptr;
        Tensor* dK = gg.requires_grad(k) ? &gg.grad_buffer(k) : nullptr;
        Tensor* dV = gg.requires_grad(v) ? &gg.grad_buffer(v) : nullptr;
        std::vector<double> dS(t * t);
        for (std::size_t b = 0; b < nb; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + ((b * heads + h) * t * t);
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < t; ++i) {
              const double* doi = &dO(b * t + i, c0);
              double dot = 0.0;
              for (std::size_t j = 0; j < t; ++j) {
                const double* vj = &V(b * t + j, c0);
                double dp = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
                dS[i * t + j] = dp;
                dot += dp * P[i * t + j];
                if (dV) {
                  double* dvj = &(*dV)(b * t + j, c0);
                  const double p = P[i * t + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * doi[c];
                }
              }
              for (std::size_t j = 0; j < t; ++j) dS[i * t + j] = P[i * t + j] * (dS[i * t + j] - dot) * sc;
            }
            for (std::size_t i = 0; i < t; ++i) {
              for (std::size_t j = 0; j < t; ++j) {
                const double d = dS[i * t + j];
                if (dQ) {
                  double* dqi = &(*dQ)(b * t + i, c0);
                  const double* kj = &K(b * t + j, c0);
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += d * kj[c];
                }
                if (dK) {
                  double* dkj = &(*dK)(b * t + j, c0);
                  const double* qi = &Q(b * t + i, c0);
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += d * qi[c];
                }
              }
            }
          }
        }
      });
}

Var pairwise_distance(Graph& g, Var pred, Var truth) {
  const Tensor& P = g.value(pred);
  const Tensor& T = g.value(truth);
  if (P.cols() != T.cols()) shape_fail("pairwise_distance", P, T);
  const std::size_t n = P.rows(), m = T.rows(), d = P.cols();
  Tensor D(n, m);
  for (std::size_t j = 0; j < n; ++j) {
    const double* pj = &P(j, 0);
    for (std::size_t p = 0; p < m; ++p) {
      const double* tp = &T(p, 0);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = pj[c] - tp[c];
        s += diff * diff;
      }
      D(j, p) = std::sqrt(s);
    }
  }
  const Var out{g.size()};
  return g.record(std::move(D), g.any_requires_grad({pred, truth}), [pred, truth, out](Graph& gg) {
    const Tensor& P = gg.value(pred);
    const Tensor& T = gg.value(truth);
    const Tensor& D = gg.value(out);
    const Tensor& dD = gg.grad_buffer(out);
    Tensor* dP = gg.requires_grad(pred) ? &gg.grad_buffer(pred) : nullptr;
    Tensor* dT = gg.requires_grad(truth) ? &gg.grad_buffer(truth) : nullptr;
    const std::size_t n = D.rows(), m = D.cols(), d = P.cols();
    // dD/dp_j = (p_j - t_p) / D(j,p), so with W = dD / D (0 where D = 0):
    //   dP = diag(rowsum W) P - W T,   dT = diag(colsum W) T - W^T P
    Tensor W(n, m);
    std::vector<double> row_w(n, 0.0), col_w(m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < m; ++p) {
        const double dist = D(j, p);
        const double w = dist == 0.0 ? 0.0 : dD(j, p) / dist;  // subgradient 0 at coincident points
        W(j, p) = w;
        row_w[j] += w;
        col_w[p] += w;
      }
    }
    if (dP) {
      Tensor wt(n, d);
      gemm_nn(W.data(), T.data(), wt.data(), n, m, d);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) (*dP)(j, c) += row_w[j] * P(j, c) - wt(j, c);
    }
    if (dT) {
      Tensor wp(m, d);
      gemm_tn(W.data(), P.data(), wp.data(), n, m, d);
      for (std::size_t p = 0; p < m; ++p)
        for (std::size_t c = 0; c < d; ++c) (*dT)(p, c) += col_w[p] * T(p, c) - wp(p, c);
    }
  });
}

}  // namespace ops
}  // namespace prom3e
