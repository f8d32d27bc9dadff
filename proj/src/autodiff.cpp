#include "avdis/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avdis/errors.hpp"

namespace avdis {

namespace {

void require_rank(const DenseArray& a, std::size_t rank, std::string_view op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(a.shape()));
  }
}

// c += a * b for row-major a [m x k], b [k x n].
void gemm_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c += a * b^T for a [m x n], b [k x n] -> c [m x k].
void gemm_abt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * b[p * n + j];
      c[i * k + p] += s;
    }
  }
}

// c += a^T * b for a [m x k], b [m x n] -> c [k x n].
void gemm_atb_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* crow = c.data() + p * n;
      const double* brow = b.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

Var Tape::push(std::string_view op, std::vector<std::size_t> inputs, DenseArray value,
               BackwardFn backward) {
  check_finite(op, value);
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::nullopt, std::move(backward)});
  return Var{nodes_.size() - 1};
}

void Tape::check_finite(std::string_view op, const DenseArray& value) const {
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": non-finite value produced");
  }
}

DenseArray& Tape::grad_slot(std::size_t id) {
  auto& node = nodes_[id];
  if (!node.grad) node.grad.emplace(node.value.shape(), 0.0);
  return *node.grad;
}

void Tape::accumulate(std::size_t id, const DenseArray& delta) {
  auto& g = grad_slot(id);
  auto dst = g.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Tape::leaf(DenseArray value) { return push("leaf", {}, std::move(value), nullptr); }

Var Tape::matmul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  if (bv.extent(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_to_string(av.shape()) +
                         " and " + shape_to_string(bv.shape()));
  }
  DenseArray out({m, n});
  gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return push("matmul", {ia, ib}, std::move(out),
              [ia, ib, m, k, n](Tape& t, const DenseArray& g) {
                // a.grad += g b^T ; b.grad += a^T g
                gemm_abt_acc(g.data(), t.nodes_[ib].value.data(), t.grad_slot(ia).data(), m, n, k);
                gemm_atb_acc(t.nodes_[ia].value.data(), g.data(), t.grad_slot(ib).data(), m, k, n);
              });
}

Var Tape::add_bias(Var x, Var bias) {
  const auto& xv = value(x);
  const auto& bv = value(bias);
  require_rank(xv, 2, "add_bias");
  require_rank(bv, 1, "add_bias");
  const std::size_t m = xv.extent(0), n = xv.extent(1);
  if (bv.extent(0) != n) {
    throw DimensionError("add_bias: bias " + shape_to_string(bv.shape()) + " does not fit " +
                         shape_to_string(xv.shape()));
  }
  DenseArray out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  const std::size_t ix = x.id, ib = bias.id;
  return push("add_bias", {ix, ib}, std::move(out), [ix, ib, m, n](Tape& t, const DenseArray& g) {
    t.accumulate(ix, g);
    auto& gb = t.grad_slot(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
  });
}

Var Tape::elementwise(Elementwise op, Var a) {
  const auto& av = value(a);
  DenseArray out(av.shape());
  const std::size_t ia = a.id;
  switch (op) {
    case Elementwise::relu:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      return push("relu", {ia}, std::move(out), [ia](Tape& t, const DenseArray& g) {
        const auto& x = t.nodes_[ia].value;
        auto& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
      });
    case Elementwise::log:
      for (std::size_t i = 0; i < av.size(); ++i) {
        if (!(av[i] > 0.0)) {
          throw DomainError("log: non-positive input " + std::to_string(av[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(av[i]);
      }
      return push("log", {ia}, std::move(out), [ia](Tape& t, const DenseArray& g) {
        const auto& x = t.nodes_[ia].value;
        auto& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] / x[i];
      });
    case Elementwise::exp: {
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
      const std::size_t self = nodes_.size();
      return push("exp", {ia}, std::move(out), [ia, self](Tape& t, const DenseArray& g) {
        const auto& y = t.nodes_[self].value;
        auto& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i];
      });
    }
    default:
      throw ConfigError("elementwise: binary op called with one argument");
  }
}

Var Tape::elementwise(Elementwise op, Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("elementwise: shapes " + shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()) + " differ");
  }
  DenseArray out(av.shape());
  const std::size_t ia = a.id, ib = b.id;
  switch (op) {
    case Elementwise::add:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
      return push("add", {ia, ib}, std::move(out), [ia, ib](Tape& t, const DenseArray& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
      });
    case Elementwise::sub:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
      return push("sub", {ia, ib}, std::move(out), [ia, ib](Tape& t, const DenseArray& g) {
        t.accumulate(ia, g);
        auto& gb = t.grad_slot(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      });
    case Elementwise::mul:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
      return push("mul", {ia, ib}, std::move(out), [ia, ib](Tape& t, const DenseArray& g) {
        const auto& x = t.nodes_[ia].value;
        const auto& y = t.nodes_[ib].value;
        {
          auto& gx = t.grad_slot(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
        }
        auto& gy = t.grad_slot(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
      });
    default:
      throw ConfigError("elementwise: unary op called with two arguments");
  }
}

Var Tape::scale(Var a, double factor) {
  const auto& av = value(a);
  DenseArray out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = factor * av[i];
  const std::size_t ia = a.id;
  return push("scale", {ia}, std::move(out), [ia, factor](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var Tape::sum(Var a) {
  const auto& av = value(a);
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.id;
  return push("sum", {ia}, DenseArray::scalar(s), [ia](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ia);
    for (auto& v : gx.data()) v += g[0];
  });
}

Var Tape::mean(Var a) {
  const auto& av = value(a);
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.id;
  return push("mean", {ia}, DenseArray::scalar(s / n), [ia, n](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ia);
    const double share = g[0] / n;
    for (auto& v : gx.data()) v += share;
  });
}

Var Tape::row_mean(Var a) {
  const auto& av = value(a);
  require_rank(av, 2, "row_mean");
  const std::size_t rows = av.extent(0), cols = av.extent(1);
  DenseArray out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += av.at(i, j);
    out[i] = s / static_cast<double>(cols);
  }
  const std::size_t ia = a.id;
  return push("row_mean", {ia}, std::move(out), [ia, rows, cols](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ia);
    for (std::size_t i = 0; i < rows; ++i) {
      const double share = g[i] / static_cast<double>(cols);
      for (std::size_t j = 0; j < cols; ++j) gx.at(i, j) += share;
    }
  });
}

Var Tape::pick(Var x, std::span<const int> index) {
  const auto& xv = value(x);
  require_rank(xv, 2, "pick");
  const std::size_t rows = xv.extent(0), cols = xv.extent(1);
  if (index.size() != rows) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                         shape_to_string(xv.shape()));
  }
  std::vector<std::size_t> idx(rows);
  DenseArray out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= cols) {
      throw DimensionError("pick: index " + std::to_string(index[i]) + " outside [0, " +
                           std::to_string(cols) + ")");
    }
    idx[i] = static_cast<std::size_t>(index[i]);
    out[i] = xv.at(i, idx[i]);
  }
  const std::size_t ix = x.id;
  return push("pick", {ix}, std::move(out), [ix, idx = std::move(idx)](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.at(i, idx[i]) += g[i];
  });
}

Var Tape::log_softmax(Var x) {
  const auto& xv = value(x);
  require_rank(xv, 2, "log_softmax");
  const std::size_t rows = xv.extent(0), cols = xv.extent(1);
  if (cols < 2) throw DimensionError("log_softmax: need at least 2 classes");
  DenseArray out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double top = xv.at(i, 0);
    for (std::size_t j = 1; j < cols; ++j) top = std::max(top, xv.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(xv.at(i, j) - top);
    const double lse = top + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = xv.at(i, j) - lse;
  }
  const std::size_t ix = x.id;
  const std::size_t self = nodes_.size();
  return push("log_softmax", {ix}, std::move(out),
              [ix, self, rows, cols](Tape& t, const DenseArray& g) {
                // dx = g - softmax * sum(g)
                const auto& y = t.nodes_[self].value;
                auto& gx = t.grad_slot(ix);
                for (std::size_t i = 0; i < rows; ++i) {
                  double gs = 0.0;
                  for (std::size_t j = 0; j < cols; ++j) gs += g.at(i, j);
                  for (std::size_t j = 0; j < cols; ++j)
                    gx.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gs;
                }
              });
}

Var Tape::masked_mean_pool(Var x, const DenseArray& mask) {
  const auto& xv = value(x);
  require_rank(xv, 3, "masked_mean_pool");
  require_rank(mask, 2, "masked_mean_pool mask");
  const std::size_t b = xv.extent(0), n = xv.extent(1), d = xv.extent(2);
  if (mask.extent(0) != b || mask.extent(1) != n) {
    throw DimensionError("masked_mean_pool: mask " + shape_to_string(mask.shape()) +
                         " does not match " + shape_to_string(xv.shape()));
  }
  std::vector<double> counts(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < n; ++s) {
      const double m = mask.at(i, s);
      if (m != 0.0 && m != 1.0) throw DomainError("masked_mean_pool: mask entries must be 0 or 1");
      counts[i] += m;
    }
    if (counts[i] == 0.0) {
      throw DataError("masked_mean_pool: clip " + std::to_string(i) + " has no unmasked segment");
    }
  }
  DenseArray out({b, d});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < n; ++s) {
      if (mask.at(i, s) == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) out.at(i, k) += xv.at(i, s, k);
    }
    for (std::size_t k = 0; k < d; ++k) out.at(i, k) /= counts[i];
  }
  const std::size_t ix = x.id;
  return push("masked_mean_pool", {ix}, std::move(out),
              [ix, mask, counts = std::move(counts), b, n, d](Tape& t, const DenseArray& g) {
                auto& gx = t.grad_slot(ix);
                for (std::size_t i = 0; i < b; ++i)
                  for (std::size_t s = 0; s < n; ++s) {
                    if (mask.at(i, s) == 0.0) continue;
                    for (std::size_t k = 0; k < d; ++k) gx.at(i, s, k) += g.at(i, k) / counts[i];
                  }
              });
}

Var Tape::concat(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require_rank(av, 2, "concat");
  require_rank(bv, 2, "concat");
  const std::size_t rows = av.extent(0), d1 = av.extent(1), d2 = bv.extent(1);
  if (bv.extent(0) != rows) {
    throw DimensionError("concat: batch extents differ for " + shape_to_string(av.shape()) +
                         " and " + shape_to_string(bv.shape()));
  }
  if (d2 == 0) return a;
  DenseArray out({rows, d1 + d2});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d1; ++j) out.at(i, j) = av.at(i, j);
    for (std::size_t j = 0; j < d2; ++j) out.at(i, d1 + j) = bv.at(i, j);
  }
  const std::size_t ia = a.id, ib = b.id;
  return push("concat", {ia, ib}, std::move(out),
              [ia, ib, rows, d1, d2](Tape& t, const DenseArray& g) {
                {
                  auto& ga = t.grad_slot(ia);
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < d1; ++j) ga.at(i, j) += g.at(i, j);
                }
                auto& gb = t.grad_slot(ib);
                for (std::size_t i = 0; i < rows; ++i)
                  for (std::size_t j = 0; j < d2; ++j) gb.at(i, j) += g.at(i, d1 + j);
              });
}

Var Tape::reshape(Var x, Shape shape) {
  DenseArray out = value(x).reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return push("reshape", {ix}, std::move(out), [ix](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var Tape::grad_reverse(Var x, double lambda) {
  if (!(lambda > 0.0)) {
    throw ConfigError("grad_reverse: lambda must be positive, got " + std::to_string(lambda));
  }
  DenseArray out = value(x);
  const std::size_t ix = x.id;
  return push("grad_reverse", {ix}, std::move(out), [ix, lambda](Tape& t, const DenseArray& g) {
    auto& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= lambda * g[i];
  });
}

void Tape::backward(Var loss) {
  const auto& lv = value(loss);
  if (lv.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_to_string(lv.shape()));
  }
  for (auto& node : nodes_) node.grad.reset();
  nodes_[loss.id].grad.emplace(lv.shape(), 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.grad || !node.backward) continue;
    // Parents may be touched with a zero contribution so they count as reached.
    for (auto in : node.inputs) grad_slot(in);
    nodes_[id].backward(*this, *nodes_[id].grad);
  }
}

DenseArray tape_gradient(const ScalarFn& f, const DenseArray& x) {
  Tape tape;
  const Var in = tape.leaf(x);
  const Var out = f(tape, in);
  tape.backward(out);
  const auto& g = tape.grad(in);
  return g ? *g : DenseArray(x.shape(), 0.0);
}

DenseArray numeric_gradient(const ScalarFn& f, const DenseArray& x, double eps) {
  auto eval = [&f](const DenseArray& at) {
    Tape tape;
    return tape.value(f(tape, tape.leaf(at)))[0];
  };
  DenseArray g(x.shape());
  DenseArray probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval(probe);
    probe[i] = x[i] - eps;
    const double down = eval(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double finite_diff_check(const ScalarFn& f, const DenseArray& x, double eps) {
  const DenseArray ad = tape_gradient(f, x);
  const DenseArray fd = numeric_gradient(f, x, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(ad[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
  }
  return worst;
}

}  // namespace avdis
