#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stablegnn/rng.hpp"
#include "stablegnn/tensor.hpp"

namespace stablegnn::ad {

// Handle into a Tape node.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A named trainable tensor. Freezing drops it out of gradient flow entirely:
// the tape records it as a constant, so it accumulates no gradient and the
// optimizer skips it.
struct Parameter {
  Tensor value;
  bool requires_grad = true;
  std::string name;

  Parameter() = default;
  Parameter(Tensor v, std::string n) : value(std::move(v)), name(std::move(n)) {}
};

// Reverse-mode tape, rebuilt every forward pass (define-by-run). Nodes are
// recorded in topological order; backward() walks them in exact reverse
// insertion order. Gradients are allocated lazily and accumulate across
// repeated backward() calls.
class Tape {
 public:
  // Leaves.
  Value constant(Tensor t, const char* op = "const");
  Value param(Parameter& p);

  // Elementwise and structural ops. All differentiable ops propagate
  // gradients only into inputs that need them.
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value matmul(Value a, Value b);
  Value concat(Value a, Value b, int axis);
  Value leaky_relu(Value x, double slope);
  Value elu(Value x);
  Value sigmoid(Value x);
  Value neg_log_sigmoid(Value x);  // -log(sigmoid(x)), numerically stable
  Value dropout(Value x, double rate, Rng& rng, bool training);

  // Graph-structured ops. `offsets` is a CSR row-pointer array; segment k of a
  // length-E vector covers [offsets[k], offsets[k+1]).
  Value segment_softmax(Value logits, std::vector<int> offsets);
  Value segment_sum(Value x, std::vector<int> offsets);
  Value gather_rows(Value x, std::vector<int> idx);
  Value row_scale(Value x, Value s);  // x[r,:] *= s[r]
  Value row_sum(Value x);             // [R x C] -> [R]

  // Reductions.
  Value sum(Value x);
  Value mean(Value x);
  Value masked_mean(Value x, const std::vector<std::uint8_t>& mask);

  // Per-node cross-entropy losses: -log softmax(logits)[label] on masked
  // rows, 0 elsewhere. Pair with masked_mean for the scalar objective.
  Value masked_cross_entropy(Value logits, const std::vector<int>& labels,
                             const std::vector<std::uint8_t>& mask);

  // Copies the value onto the tape as a constant; gradients stop here.
  Value detach(Value x);

  void backward(Value root);

  const Tensor& val(Value v) const;
  const Tensor* grad(Value v) const;  // nullptr if never touched
  const Tensor* grad_of(const Parameter& p) const;

  // Parameters registered via param() this pass, in first-use order.
  const std::vector<std::pair<Parameter*, int>>& params() const { return params_; }

  std::size_t size() const { return nodes_.size(); }

  // Smallest |x| fed into nodes of the given op kind. Gradient checks use it
  // to reject probes that straddle a subgradient point of elu/leaky_relu.
  double min_abs_input(const char* op) const;

 private:
  struct Node {
    Tensor value;
    const char* op;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> back;  // null for leaves
    bool needs_grad = false;
  };

  int push(Tensor value, const char* op, std::vector<int> inputs,
           std::function<void(Tape&, int)> back, bool needs_grad);
  bool needs(int id) const { return nodes_[id].needs_grad; }
  // Accumulation target inside the active backward pass.
  Tensor& grad_buf(int id);
  // Gradient flowing into a node during the active backward pass.
  const Tensor& incoming(int id) const { return *(*pass_)[id]; }

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::vector<std::optional<Tensor>>* pass_ = nullptr;
  std::vector<std::pair<Parameter*, int>> params_;
  std::unordered_map<const Parameter*, int> param_leaf_;
};

}  // namespace stablegnn::ad
