#include "stablegnn/tape.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string_view>

namespace stablegnn::ad {

namespace {

// C (+)= A[m x k] * B[k x n]
void mul_ab(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    double* ci = c + static_cast<long>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (+)= A^T[k x m] * B[m x n], A given as [m x k]
void mul_atb(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    const double* bi = b + static_cast<long>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// C (+)= A[m x k] * B^T[k x n], B given as [n x k]
void mul_abt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * k;
      double dot = 0.0;
      for (int p = 0; p < k; ++p) dot += ai[p] * bj[p];
      ci[j] += dot;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

int Tape::push(Tensor value, const char* op, std::vector<int> inputs,
               std::function<void(Tape&, int)> back, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), op, std::move(inputs), std::move(back), needs_grad});
  grads_.emplace_back(std::nullopt);
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
  auto& store = pass_ ? *pass_ : grads_;
  if (!store[id]) store[id] = Tensor::zeros_like(nodes_[id].value);
  return *store[id];
}

const Tensor& Tape::val(Value v) const { return nodes_.at(v.id).value; }

const Tensor* Tape::grad(Value v) const {
  const auto& g = grads_.at(v.id);
  return g ? &*g : nullptr;
}

const Tensor* Tape::grad_of(const Parameter& p) const {
  auto it = param_leaf_.find(&p);
  if (it == param_leaf_.end()) return nullptr;
  return grad(Value{it->second});
}

Value Tape::constant(Tensor t, const char* op) {
  return Value{push(std::move(t), op, {}, nullptr, false)};
}

Value Tape::param(Parameter& p) {
  auto it = param_leaf_.find(&p);
  if (it != param_leaf_.end()) return Value{it->second};
  int id = push(p.value, "param", {}, nullptr, p.requires_grad);
  param_leaf_.emplace(&p, id);
  params_.emplace_back(&p, id);
  return Value{id};
}

Value Tape::detach(Value x) { return constant(val(x), "detach"); }

Value Tape::add(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (long i = 0; i < out.numel(); ++i) out[i] += tb[i];
  bool ng = needs(a.id) || needs(b.id);
  auto back = [a, b](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    if (t.needs(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (long i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  };
  return Value{push(std::move(out), "add", {a.id, b.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::sub(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (long i = 0; i < out.numel(); ++i) out[i] -= tb[i];
  bool ng = needs(a.id) || needs(b.id);
  auto back = [a, b](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    if (t.needs(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (long i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  };
  return Value{push(std::move(out), "sub", {a.id, b.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (long i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  bool ng = needs(a.id) || needs(b.id);
  auto back = [a, b](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    if (t.needs(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.needs(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  };
  return Value{push(std::move(out), "mul", {a.id, b.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::scale(Value a, double c) {
  Tensor out = val(a);
  for (long i = 0; i < out.numel(); ++i) out[i] *= c;
  bool ng = needs(a.id);
  auto back = [a, c](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& ga = t.grad_buf(a.id);
    for (long i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  };
  return Value{push(std::move(out), "scale", {a.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() > 2 || tb.rank() > 2 || ta.rank() < 1 || tb.rank() < 1) {
    throw std::invalid_argument("matmul: needs rank 1 or 2 operands, got " + ta.shape_str() +
                                " and " + tb.shape_str());
  }
  // Rank-1 a acts as a row vector, rank-1 b as a column vector.
  int m = ta.rank() == 1 ? 1 : ta.shape()[0];
  int ka = ta.rank() == 1 ? ta.shape()[0] : ta.shape()[1];
  int kb = tb.shape()[0];
  int n = tb.rank() == 1 ? 1 : tb.shape()[1];
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + ta.shape_str() + " vs " +
                                tb.shape_str());
  }
  std::vector<int> out_shape;
  if (ta.rank() == 2 && tb.rank() == 2) out_shape = {m, n};
  else if (ta.rank() == 1 && tb.rank() == 2) out_shape = {n};
  else if (ta.rank() == 2 && tb.rank() == 1) out_shape = {m};
  else out_shape = {1};
  Tensor out = Tensor::zeros(out_shape);
  mul_ab(ta.data().data(), tb.data().data(), out.data().data(), m, ka, n);
  bool ng = needs(a.id) || needs(b.id);
  auto back = [a, b, m, k = ka, n](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    if (t.needs(a.id)) {  // dA += dC * B^T
      Tensor& ga = t.grad_buf(a.id);
      mul_abt(g.data().data(), vb.data().data(), ga.data().data(), m, n, k);
    }
    if (t.needs(b.id)) {  // dB += A^T * dC
      Tensor& gb = t.grad_buf(b.id);
      mul_atb(va.data().data(), g.data().data(), gb.data().data(), m, k, n);
    }
  };
  return Value{push(std::move(out), "matmul", {a.id, b.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::concat(Value a, Value b, int axis) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != tb.rank()) {
    throw std::invalid_argument("concat: rank mismatch " + ta.shape_str() + " vs " +
                                tb.shape_str());
  }
  Tensor out;
  if (ta.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("concat: axis out of range for rank-1");
    std::vector<double> vals(ta.data());
    vals.insert(vals.end(), tb.data().begin(), tb.data().end());
    out = Tensor::row_vector(std::move(vals));
  } else if (ta.rank() == 2 && axis == 0) {
    if (ta.shape()[0] > 0 && tb.shape()[0] > 0 && ta.shape()[1] != tb.shape()[1]) {
      throw std::invalid_argument("concat axis 0: column mismatch " + ta.shape_str() + " vs " +
                                  tb.shape_str());
    }
    int cols = ta.shape()[0] > 0 ? ta.shape()[1] : tb.shape()[1];
    std::vector<double> vals(ta.data());
    vals.insert(vals.end(), tb.data().begin(), tb.data().end());
    out = Tensor({ta.shape()[0] + tb.shape()[0], cols}, std::move(vals));
  } else if (ta.rank() == 2 && axis == 1) {
    if (ta.shape()[1] > 0 && tb.shape()[1] > 0 && ta.shape()[0] != tb.shape()[0]) {
      throw std::invalid_argument("concat axis 1: row mismatch " + ta.shape_str() + " vs " +
                                  tb.shape_str());
    }
    int rows = std::max(ta.shape()[0], tb.shape()[0]);
    int ca = ta.shape()[1], cb = tb.shape()[1];
    out = Tensor::zeros({rows, ca + cb});
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < ca; ++c) out.at(r, c) = ta.at(r, c);
      for (int c = 0; c < cb; ++c) out.at(r, ca + c) = tb.at(r, c);
    }
  } else {
    throw std::invalid_argument("concat: unsupported rank/axis");
  }
  bool ng = needs(a.id) || needs(b.id);
  auto back = [a, b, axis](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& ta2 = t.val(a);
    const Tensor& tb2 = t.val(b);
    if (ta2.rank() == 1 || axis == 0) {
      long na = ta2.numel();
      if (t.needs(a.id)) {
        Tensor& ga = t.grad_buf(a.id);
        for (long i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (t.needs(b.id)) {
        Tensor& gb = t.grad_buf(b.id);
        for (long i = 0; i < tb2.numel(); ++i) gb[i] += g[na + i];
      }
    } else {
      int rows = g.shape()[0];
      int ca = ta2.shape()[1], cb = tb2.shape()[1];
      if (t.needs(a.id)) {
        Tensor& ga = t.grad_buf(a.id);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (t.needs(b.id)) {
        Tensor& gb = t.grad_buf(b.id);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cb; ++c) gb.at(r, c) += g.at(r, ca + c);
      }
    }
  };
  return Value{push(std::move(out), "concat", {a.id, b.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::leaky_relu(Value x, double slope) {
  if (slope < 0.0) throw std::invalid_argument("leaky_relu: slope must be >= 0");
  const Tensor& tx = val(x);
  Tensor out = tx;
  for (long i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) out[i] *= slope;
  }
  bool ng = needs(x.id);
  auto back = [x, slope](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& vx = t.val(x);
    Tensor& gx = t.grad_buf(x.id);
    // Subgradient at 0 takes the positive branch.
    for (long i = 0; i < g.numel(); ++i) gx[i] += vx[i] >= 0.0 ? g[i] : slope * g[i];
  };
  return Value{push(std::move(out), "leaky_relu", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::elu(Value x) {
  const Tensor& tx = val(x);
  Tensor out = tx;
  for (long i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) out[i] = std::expm1(out[i]);
  }
  bool ng = needs(x.id);
  auto back = [x](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& vx = t.val(x);
    const Tensor& vy = t.val(Value{self});
    Tensor& gx = t.grad_buf(x.id);
    for (long i = 0; i < g.numel(); ++i) gx[i] += vx[i] >= 0.0 ? g[i] : g[i] * (vy[i] + 1.0);
  };
  return Value{push(std::move(out), "elu", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::sigmoid(Value x) {
  const Tensor& tx = val(x);
  Tensor out = tx;
  for (long i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
  bool ng = needs(x.id);
  auto back = [x](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& vy = t.val(Value{self});
    Tensor& gx = t.grad_buf(x.id);
    for (long i = 0; i < g.numel(); ++i) gx[i] += g[i] * vy[i] * (1.0 - vy[i]);
  };
  return Value{push(std::move(out), "sigmoid", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::neg_log_sigmoid(Value x) {
  const Tensor& tx = val(x);
  Tensor out = tx;
  for (long i = 0; i < out.numel(); ++i) {
    double v = out[i];
    out[i] = v >= 0.0 ? std::log1p(std::exp(-v)) : -v + std::log1p(std::exp(v));
  }
  bool ng = needs(x.id);
  auto back = [x](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& vx = t.val(x);
    Tensor& gx = t.grad_buf(x.id);
    for (long i = 0; i < g.numel(); ++i) gx[i] -= g[i] * stable_sigmoid(-vx[i]);
  };
  return Value{push(std::move(out), "neg_log_sigmoid", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::dropout(Value x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;  // eval mode is the identity
  const Tensor& tx = val(x);
  double keep = 1.0 - rate;
  double inv = 1.0 / keep;
  std::vector<double> mask(tx.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : inv;
  Tensor out = tx;
  for (long i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  bool ng = needs(x.id);
  auto back = [x, mask = std::move(mask)](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    for (long i = 0; i < g.numel(); ++i) gx[i] += g[i] * mask[i];
  };
  return Value{push(std::move(out), "dropout", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::segment_softmax(Value logits, std::vector<int> offsets) {
  const Tensor& tl = val(logits);
  if (tl.rank() != 1) throw std::invalid_argument("segment_softmax: logits must be rank-1");
  if (offsets.empty() || offsets.back() != tl.shape()[0]) {
    throw std::invalid_argument("segment_softmax: offsets do not cover logits");
  }
  Tensor out = tl;
  int num_seg = static_cast<int>(offsets.size()) - 1;
  for (int s = 0; s < num_seg; ++s) {
    int lo = offsets[s], hi = offsets[s + 1];
    if (lo == hi) continue;
    double mx = out[lo];
    for (int i = lo + 1; i < hi; ++i) mx = std::max(mx, out[i]);
    double denom = 0.0;
    for (int i = lo; i < hi; ++i) {
      out[i] = std::exp(out[i] - mx);
      denom += out[i];
    }
    for (int i = lo; i < hi; ++i) out[i] /= denom;
  }
  bool ng = needs(logits.id);
  auto back = [logits, offsets = std::move(offsets)](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& y = t.val(Value{self});
    Tensor& gx = t.grad_buf(logits.id);
    int num_seg = static_cast<int>(offsets.size()) - 1;
    for (int s = 0; s < num_seg; ++s) {
      int lo = offsets[s], hi = offsets[s + 1];
      double dot = 0.0;
      for (int i = lo; i < hi; ++i) dot += g[i] * y[i];
      for (int i = lo; i < hi; ++i) gx[i] += y[i] * (g[i] - dot);
    }
  };
  return Value{push(std::move(out), "segment_softmax", {logits.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::segment_sum(Value x, std::vector<int> offsets) {
  const Tensor& tx = val(x);
  int rows = tx.shape()[0];
  int cols = tx.rank() == 1 ? 1 : tx.shape()[1];
  if (offsets.empty() || offsets.back() != rows) {
    throw std::invalid_argument("segment_sum: offsets do not cover rows");
  }
  int num_seg = static_cast<int>(offsets.size()) - 1;
  Tensor out = tx.rank() == 1 ? Tensor::zeros({num_seg}) : Tensor::zeros({num_seg, cols});
  for (int s = 0; s < num_seg; ++s) {
    for (int r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (int c = 0; c < cols; ++c) out[static_cast<long>(s) * cols + c] += tx[static_cast<long>(r) * cols + c];
    }
  }
  bool ng = needs(x.id);
  auto back = [x, offsets = std::move(offsets), cols](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    int num_seg = static_cast<int>(offsets.size()) - 1;
    for (int s = 0; s < num_seg; ++s) {
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) {
        for (int c = 0; c < cols; ++c) gx[static_cast<long>(r) * cols + c] += g[static_cast<long>(s) * cols + c];
      }
    }
  };
  return Value{push(std::move(out), "segment_sum", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::gather_rows(Value x, std::vector<int> idx) {
  const Tensor& tx = val(x);
  int src_rows = tx.shape()[0];
  int cols = tx.rank() == 1 ? 1 : tx.shape()[1];
  for (int i : idx) {
    if (i < 0 || i >= src_rows) throw std::invalid_argument("gather_rows: index out of range");
  }
  int out_rows = static_cast<int>(idx.size());
  Tensor out = tx.rank() == 1 ? Tensor::zeros({out_rows}) : Tensor::zeros({out_rows, cols});
  for (int r = 0; r < out_rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<long>(r) * cols + c] = tx[static_cast<long>(idx[r]) * cols + c];
  }
  bool ng = needs(x.id);
  auto back = [x, idx = std::move(idx), cols](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    for (size_t r = 0; r < idx.size(); ++r) {
      for (int c = 0; c < cols; ++c) gx[static_cast<long>(idx[r]) * cols + c] += g[static_cast<long>(r) * cols + c];
    }
  };
  return Value{push(std::move(out), "gather_rows", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::row_scale(Value x, Value s) {
  const Tensor& tx = val(x);
  const Tensor& ts = val(s);
  if (tx.rank() != 2) throw std::invalid_argument("row_scale: x must be rank-2");
  if (ts.numel() != tx.shape()[0]) {
    throw std::invalid_argument("row_scale: scale length " + ts.shape_str() +
                                " does not match rows of " + tx.shape_str());
  }
  int rows = tx.shape()[0], cols = tx.shape()[1];
  Tensor out = tx;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.at(r, c) *= ts[r];
  }
  bool ng = needs(x.id) || needs(s.id);
  auto back = [x, s, rows, cols](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    const Tensor& vx = t.val(x);
    const Tensor& vs = t.val(s);
    if (t.needs(x.id)) {
      Tensor& gx = t.grad_buf(x.id);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) gx.at(r, c) += g.at(r, c) * vs[r];
    }
    if (t.needs(s.id)) {
      Tensor& gs = t.grad_buf(s.id);
      for (int r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += g.at(r, c) * vx.at(r, c);
        gs[r] += dot;
      }
    }
  };
  return Value{push(std::move(out), "row_scale", {x.id, s.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::row_sum(Value x) {
  const Tensor& tx = val(x);
  if (tx.rank() != 2) throw std::invalid_argument("row_sum: x must be rank-2");
  int rows = tx.shape()[0], cols = tx.shape()[1];
  Tensor out = Tensor::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[r] += tx.at(r, c);
  }
  bool ng = needs(x.id);
  auto back = [x, rows, cols](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) gx.at(r, c) += g[r];
  };
  return Value{push(std::move(out), "row_sum", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::sum(Value x) {
  const Tensor& tx = val(x);
  double total = 0.0;
  for (long i = 0; i < tx.numel(); ++i) total += tx[i];
  bool ng = needs(x.id);
  auto back = [x](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    for (long i = 0; i < gx.numel(); ++i) gx[i] += g[0];
  };
  return Value{push(Tensor::scalar(total), "sum", {x.id}, ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::mean(Value x) {
  long n = val(x).numel();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Value Tape::masked_mean(Value x, const std::vector<std::uint8_t>& mask) {
  const Tensor& tx = val(x);
  if (tx.rank() != 1 || static_cast<size_t>(tx.shape()[0]) != mask.size()) {
    throw std::invalid_argument("masked_mean: mask size does not match vector");
  }
  long count = 0;
  double total = 0.0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      total += tx[i];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("masked_mean: empty mask");
  bool ng = needs(x.id);
  auto back = [x, mask, count](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gx = t.grad_buf(x.id);
    double w = g[0] / static_cast<double>(count);
    for (size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) gx[i] += w;
    }
  };
  return Value{push(Tensor::scalar(total / static_cast<double>(count)), "masked_mean", {x.id},
                    ng ? back : std::function<void(Tape&, int)>(), ng)};
}

Value Tape::masked_cross_entropy(Value logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>& mask) {
  const Tensor& tz = val(logits);
  if (tz.rank() != 2) throw std::invalid_argument("masked_cross_entropy: logits must be rank-2");
  int n = tz.shape()[0], c = tz.shape()[1];
  if (static_cast<int>(labels.size()) != n || static_cast<int>(mask.size()) != n) {
    throw std::invalid_argument("masked_cross_entropy: labels/mask size mismatch");
  }
  bool any = false;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    any = true;
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::invalid_argument("masked_cross_entropy: label " + std::to_string(labels[i]) +
                                  " outside [0," + std::to_string(c) + ") at node " +
                                  std::to_string(i));
    }
  }
  if (!any) throw std::invalid_argument("masked_cross_entropy: no labeled nodes");

  Tensor losses = Tensor::zeros({n});
  Tensor probs = Tensor::zeros({n, c});  // saved for backward, masked rows only
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double mx = tz.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, tz.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(tz.at(i, j) - mx);
    double lse = mx + std::log(denom);
    losses[i] = lse - tz.at(i, labels[i]);
    for (int j = 0; j < c; ++j) probs.at(i, j) = std::exp(tz.at(i, j) - lse);
  }
  bool ng = needs(logits.id);
  auto back = [logits, labels, mask, probs = std::move(probs), n, c](Tape& t, int self) {
    const Tensor& g = t.incoming(self);
    Tensor& gz = t.grad_buf(logits.id);
    for (int i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      for (int j = 0; j < c; ++j) {
        double p = probs.at(i, j) - (j == labels[i] ? 1.0 : 0.0);
        gz.at(i, j) += g[i] * p;
      }
    }
  };
  return Value{push(std::move(losses), "masked_cross_entropy", {logits.id},
                    ng ? back : std::function<void(Tape&, int)>(), ng)};
}

double Tape::min_abs_input(const char* op) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Node& node : nodes_) {
    if (std::string_view(node.op) != op || node.inputs.empty()) continue;
    const Tensor& in = nodes_[node.inputs[0]].value;
    for (long i = 0; i < in.numel(); ++i) best = std::min(best, std::fabs(in[i]));
  }
  return best;
}

void Tape::backward(Value root) {
  if (!root.valid() || root.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("backward: invalid root");
  }
  if (nodes_[root.id].value.numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                nodes_[root.id].value.shape_str());
  }
  // Each call propagates a fresh unit seed through a pass-local buffer and
  // then folds it into the persistent gradients, so repeated calls accumulate
  // without re-propagating earlier seeds.
  std::vector<std::optional<Tensor>> pass(nodes_.size());
  pass_ = &pass;
  grad_buf(root.id)[0] += 1.0;
  for (int id = root.id; id >= 0; --id) {
    const Node& node = nodes_[id];
    if (node.back && node.needs_grad && pass[id]) node.back(*this, id);
  }
  pass_ = nullptr;
  for (size_t id = 0; id < pass.size(); ++id) {
    if (!pass[id]) continue;
    if (!grads_[id]) {
      grads_[id] = std::move(pass[id]);
    } else {
      Tensor& dst = *grads_[id];
      const Tensor& src = *pass[id];
      for (long i = 0; i < dst.numel(); ++i) dst[i] += src[i];
    }
  }
}

}  // namespace stablegnn::ad
