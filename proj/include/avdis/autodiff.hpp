#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "avdis/dense_array.hpp"

namespace avdis {

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::size_t id = 0;
};

enum class Elementwise { add, sub, mul, relu, log, exp };

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order so
// every input id is smaller than the id of the node consuming it; backward()
// walks the node list once in reverse.
//
// A tape is single-threaded. Build a fresh tape for every forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(DenseArray value);

  Var matmul(Var a, Var b);
  // x [m x n] + bias [n] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var elementwise(Elementwise op, Var a);
  Var elementwise(Elementwise op, Var a, Var b);
  Var add(Var a, Var b) { return elementwise(Elementwise::add, a, b); }
  Var sub(Var a, Var b) { return elementwise(Elementwise::sub, a, b); }
  Var mul(Var a, Var b) { return elementwise(Elementwise::mul, a, b); }
  Var relu(Var a) { return elementwise(Elementwise::relu, a); }
  Var log(Var a) { return elementwise(Elementwise::log, a); }
  Var exp(Var a) { return elementwise(Elementwise::exp, a); }
  Var scale(Var a, double factor);

  Var sum(Var a);
  Var mean(Var a);
  // Per-row mean of a [B x K] -> [B].
  Var row_mean(Var a);
  // out[b] = x[b, index[b]] for x [B x K].
  Var pick(Var x, std::span<const int> index);

  Var log_softmax(Var x);
  // x [B x N x D], mask [B x N] of 0/1 -> mean over unmasked segments [B x D].
  Var masked_mean_pool(Var x, const DenseArray& mask);
  // Column-wise concatenation of [B x D1] and [B x D2].
  Var concat(Var a, Var b);
  Var reshape(Var x, Shape shape);
  // Identity forward; backward multiplies the upstream gradient by -lambda.
  Var grad_reverse(Var x, double lambda);

  // Seeds d(loss)/d(loss) = 1 and propagates to every ancestor of loss.
  // Gradients from earlier backward calls are discarded.
  void backward(Var loss);

  const DenseArray& value(Var v) const { return nodes_.at(v.id).value; }
  // Absent for nodes that are not ancestors of the last backward() target.
  const std::optional<DenseArray>& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }
  std::span<const std::size_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

 private:
  using BackwardFn = std::function<void(Tape&, const DenseArray& upstream)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    DenseArray value;
    std::optional<DenseArray> grad;
    BackwardFn backward;
  };

  Var push(std::string_view op, std::vector<std::size_t> inputs, DenseArray value,
           BackwardFn backward);
  // grad[id] += delta, allocating on first touch.
  void accumulate(std::size_t id, const DenseArray& delta);
  DenseArray& grad_slot(std::size_t id);
  void check_finite(std::string_view op, const DenseArray& value) const;

  std::vector<Node> nodes_;
};

// f maps a leaf holding x to a scalar loss on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Gradient of f at x by reverse mode.
DenseArray tape_gradient(const ScalarFn& f, const DenseArray& x);
// Central-difference gradient of f at x.
DenseArray numeric_gradient(const ScalarFn& f, const DenseArray& x, double eps);
// max_i |g_ad - g_fd| / max(1, |g_fd|).
double finite_diff_check(const ScalarFn& f, const DenseArray& x, double eps);

}  // namespace avdis
