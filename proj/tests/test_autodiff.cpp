#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "stablegnn/adam.hpp"
#include "stablegnn/tape.hpp"

using namespace stablegnn;
using ad::Parameter;
using ad::Tape;
using ad::Value;
using oracles::finite_difference;
using oracles::max_rel_error;
using oracles::random_tensor;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("matmul forward: identity and hand arithmetic") {
  Tape t;
  Value a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Value eye = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Value c = t.matmul(a, eye);
  CHECK(t.val(c).data() == std::vector<double>{1, 2, 3, 4});

  Value ones = t.constant(Tensor::matrix(2, 1, {1, 1}));
  Value d = t.matmul(a, ones);
  CHECK(t.val(d).at(0, 0) == doctest::Approx(3.0));
  CHECK(t.val(d).at(1, 0) == doctest::Approx(7.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Value a = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Value b = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b),
                       doctest::Contains("inner dimensions differ"), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Parameter a(random_tensor({3, 4}, rng), "a");
    Parameter b(random_tensor({4, 2}, rng), "b");
    auto eval = [&] {
      Tape t;
      Value c = t.matmul(t.param(a), t.param(b));
      return t.val(t.sum(t.mul(c, c)))[0];
    };
    Tape t;
    Value c = t.matmul(t.param(a), t.param(b));
    t.backward(t.sum(t.mul(c, c)));
    CHECK(max_rel_error(*t.grad_of(a), finite_difference(eval, a.value)) < kGradTol);
    CHECK(max_rel_error(*t.grad_of(b), finite_difference(eval, b.value)) < kGradTol);
  }
}

TEST_CASE("leaky_relu values and slope") {
  Tape t;
  Value x = t.constant(Tensor::row_vector({2.0, -1.0, 0.0}));
  Value y = t.leaky_relu(x, 0.2);
  CHECK(t.val(y)[0] == doctest::Approx(2.0));
  CHECK(t.val(y)[1] == doctest::Approx(-0.2));
  CHECK(t.val(y)[2] == doctest::Approx(0.0));
  CHECK_THROWS_AS(t.leaky_relu(x, -0.1), std::invalid_argument);
}

TEST_CASE("leaky_relu gradient at +-0.5") {
  for (double v : {0.5, -0.5}) {
    Parameter x(Tensor::row_vector({v}), "x");
    auto eval = [&] {
      Tape t;
      Value y = t.leaky_relu(t.param(x), 0.2);
      return t.val(t.sum(y))[0];
    };
    Tape t;
    t.backward(t.sum(t.leaky_relu(t.param(x), 0.2)));
    CHECK(max_rel_error(*t.grad_of(x), finite_difference(eval, x.value)) < kGradTol);
  }
}

TEST_CASE("sigmoid symmetry, saturation, gradient") {
  Tape t;
  Value x = t.constant(Tensor::row_vector({0.0, 40.0, -40.0}));
  Value y = t.sigmoid(x);
  CHECK(t.val(y)[0] == doctest::Approx(0.5));
  CHECK(std::fabs(t.val(y)[1] - 1.0) < 1e-12);
  CHECK(t.val(y)[2] >= 0.0);
  CHECK(t.val(y).all_finite());

  Rng rng(3);
  Parameter p(random_tensor({4}, rng), "p");
  auto eval = [&] {
    Tape tp;
    return tp.val(tp.sum(tp.sigmoid(tp.param(p))))[0];
  };
  Tape tp;
  Value out = tp.sum(tp.sigmoid(tp.param(p)));
  tp.backward(out);
  Tensor fd = finite_difference(eval, p.value);
  CHECK(max_rel_error(*tp.grad_of(p), fd) < kGradTol);
  // Analytic check: d sigma = sigma (1 - sigma).
  Tape ta;
  Value sv = ta.sigmoid(ta.param(p));
  ta.backward(ta.sum(sv));
  for (long i = 0; i < p.value.numel(); ++i) {
    double sig = ta.val(sv)[i];
    CHECK((*ta.grad_of(p))[i] == doctest::Approx(sig * (1 - sig)).epsilon(1e-10));
  }
}

TEST_CASE("segment_softmax closed forms and invariants") {
  Tape t;
  SUBCASE("single-edge segment is 1") {
    Value y = t.segment_softmax(t.constant(Tensor::row_vector({3.7})), {0, 1});
    CHECK(t.val(y)[0] == doctest::Approx(1.0));
  }
  SUBCASE("{0, ln 2} -> {1/3, 2/3}") {
    Value y = t.segment_softmax(t.constant(Tensor::row_vector({0.0, std::log(2.0)})), {0, 2});
    CHECK(t.val(y)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(t.val(y)[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("per-segment sums are 1 within 1e-12 and shift-invariant within 1e-10") {
    Rng rng(7);
    std::vector<int> offsets = {0, 3, 3, 7, 12};
    Tensor logits = random_tensor({12}, rng);
    Value y = t.segment_softmax(t.constant(logits), offsets);
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
      double sum = 0.0;
      for (int k = offsets[s]; k < offsets[s + 1]; ++k) sum += t.val(y)[k];
      if (offsets[s] != offsets[s + 1]) CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
    Tensor shifted = logits;
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
      for (int k = offsets[s]; k < offsets[s + 1]; ++k) shifted[k] += 10.0 + 3.0 * s;
    }
    Value y2 = t.segment_softmax(t.constant(shifted), offsets);
    for (long i = 0; i < 12; ++i) CHECK(std::fabs(t.val(y)[i] - t.val(y2)[i]) < 1e-10);
  }
  SUBCASE("gradient vs finite differences") {
    Rng rng(9);
    Parameter logits(random_tensor({6}, rng), "logits");
    std::vector<int> offsets = {0, 2, 6};
    Tensor weight = random_tensor({6}, rng);
    auto eval = [&] {
      Tape tp;
      Value y = tp.segment_softmax(tp.param(logits), offsets);
      return tp.val(tp.sum(tp.mul(y, tp.constant(weight))))[0];
    };
    Tape tp;
    Value y = tp.segment_softmax(tp.param(logits), offsets);
    tp.backward(tp.sum(tp.mul(y, tp.constant(weight))));
    CHECK(max_rel_error(*tp.grad_of(logits), finite_difference(eval, logits.value)) < kGradTol);
  }
}

TEST_CASE("concat values and gradient split") {
  Tape t;
  SUBCASE("concat with empty is identity") {
    Value x = t.constant(Tensor::row_vector({1, 2, 3}));
    Value e = t.constant(Tensor::row_vector({}));
    CHECK(t.val(t.concat(x, e, 0)).data() == std::vector<double>{1, 2, 3});
    CHECK(t.val(t.concat(e, x, 0)).data() == std::vector<double>{1, 2, 3});
  }
  SUBCASE("[1,2] || [3]") {
    Value y = t.concat(t.constant(Tensor::row_vector({1, 2})),
                       t.constant(Tensor::row_vector({3})), 0);
    CHECK(t.val(y).data() == std::vector<double>{1, 2, 3});
  }
  SUBCASE("row mismatch on axis 1 throws") {
    Value a = t.constant(Tensor::zeros({2, 3}));
    Value b = t.constant(Tensor::zeros({3, 3}));
    CHECK_THROWS_AS(t.concat(a, b, 1), std::invalid_argument);
  }
  SUBCASE("gradient split vs finite differences") {
    Rng rng(13);
    Parameter a(random_tensor({3, 2}, rng), "a");
    Parameter b(random_tensor({3, 4}, rng), "b");
    Tensor w = random_tensor({3, 6}, rng);
    auto eval = [&] {
      Tape tp;
      Value c = tp.concat(tp.param(a), tp.param(b), 1);
      return tp.val(tp.sum(tp.mul(c, tp.constant(w))))[0];
    };
    Tape tp;
    Value c = tp.concat(tp.param(a), tp.param(b), 1);
    tp.backward(tp.sum(tp.mul(c, tp.constant(w))));
    CHECK(max_rel_error(*tp.grad_of(a), finite_difference(eval, a.value)) < kGradTol);
    CHECK(max_rel_error(*tp.grad_of(b), finite_difference(eval, b.value)) < kGradTol);
  }
}

TEST_CASE("dropout semantics") {
  Rng rng(21);
  Tape t;
  Tensor x = Tensor::full({1000}, 1.0);
  SUBCASE("rate 0 and eval mode are the identity") {
    Value v = t.constant(x);
    CHECK(t.dropout(v, 0.0, rng, true).id == v.id);
    CHECK(t.dropout(v, 0.7, rng, false).id == v.id);
  }
  SUBCASE("rate >= 1 is a config error") {
    Value v = t.constant(x);
    CHECK_THROWS_AS(t.dropout(v, 1.0, rng, true), std::invalid_argument);
  }
  SUBCASE("kept fraction approximately 1 - rate") {
    Tensor big = Tensor::full({100000}, 1.0);
    Value y = t.dropout(t.constant(big), 0.6, rng, true);
    long kept = 0;
    for (long i = 0; i < t.val(y).numel(); ++i) {
      if (t.val(y)[i] != 0.0) {
        ++kept;
        CHECK(t.val(y)[i] == doctest::Approx(1.0 / 0.4));
      }
    }
    double frac = static_cast<double>(kept) / 100000.0;
    CHECK(frac == doctest::Approx(0.4).epsilon(0.025));
  }
}

TEST_CASE("masked cross entropy closed forms") {
  SUBCASE("one-hot with huge margin has ~0 loss") {
    Tape t;
    Tensor logits = Tensor::matrix(1, 3, {100.0, 0.0, 0.0});
    Value per = t.masked_cross_entropy(t.constant(logits), {0}, {1});
    CHECK(t.val(per)[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform logits give ln C per node") {
    Tape t;
    Tensor logits = Tensor::zeros({4, 6});
    Value per = t.masked_cross_entropy(t.constant(logits), {0, 1, 2, 3}, {1, 1, 1, 0});
    for (int i = 0; i < 3; ++i) CHECK(t.val(per)[i] == doctest::Approx(std::log(6.0)));
    CHECK(t.val(per)[3] == 0.0);  // unmasked rows contribute nothing
    Value loss = t.masked_mean(per, {1, 1, 1, 0});
    CHECK(t.val(loss)[0] == doctest::Approx(std::log(6.0)));
  }
  SUBCASE("empty mask errors") {
    Tape t;
    CHECK_THROWS_WITH_AS(
        t.masked_cross_entropy(t.constant(Tensor::zeros({2, 3})), {0, 1}, {0, 0}),
        doctest::Contains("no labeled nodes"), std::invalid_argument);
  }
  SUBCASE("gradient vs finite differences on 3x4 logits") {
    Rng rng(31);
    Parameter logits(random_tensor({3, 4}, rng), "logits");
    std::vector<int> labels = {2, 0, 3};
    std::vector<std::uint8_t> mask = {1, 0, 1};
    auto eval = [&] {
      Tape tp;
      Value per = tp.masked_cross_entropy(tp.param(logits), labels, mask);
      return tp.val(tp.masked_mean(per, mask))[0];
    };
    Tape tp;
    Value per = tp.masked_cross_entropy(tp.param(logits), labels, mask);
    tp.backward(tp.masked_mean(per, mask));
    CHECK(max_rel_error(*tp.grad_of(logits), finite_difference(eval, logits.value)) < kGradTol);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("root = sum of parameter gives all-ones gradient") {
    Parameter p(Tensor::matrix(2, 2, {1, 2, 3, 4}), "p");
    Tape t;
    t.backward(t.sum(t.param(p)));
    for (long i = 0; i < 4; ++i) CHECK((*t.grad_of(p))[i] == 1.0);
  }
  SUBCASE("non-scalar root is an error") {
    Tape t;
    Value v = t.constant(Tensor::row_vector({1, 2}));
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
  }
  SUBCASE("composite sigmoid(Wx) matches finite differences") {
    Rng rng(41);
    Parameter w(random_tensor({3, 3}, rng), "w");
    Parameter x(random_tensor({3, 1}, rng), "x");
    auto eval = [&] {
      Tape tp;
      Value y = tp.sigmoid(tp.matmul(tp.param(w), tp.param(x)));
      return tp.val(tp.sum(y))[0];
    };
    Tape tp;
    Value y = tp.sigmoid(tp.matmul(tp.param(w), tp.param(x)));
    tp.backward(tp.sum(y));
    CHECK(max_rel_error(*tp.grad_of(w), finite_difference(eval, w.value)) < kGradTol);
    CHECK(max_rel_error(*tp.grad_of(x), finite_difference(eval, x.value)) < kGradTol);
  }
  SUBCASE("detached tensors receive no gradient") {
    Parameter p(Tensor::row_vector({1, 2}), "p");
    Tape t;
    Value v = t.param(p);
    Value d = t.detach(v);
    Value loss = t.sum(t.mul(d, v));
    t.backward(loss);
    CHECK(t.grad(d) == nullptr);
    CHECK((*t.grad_of(p))[0] == doctest::Approx(1.0));  // only the direct path
  }
  SUBCASE("repeated backward accumulates") {
    Parameter p(Tensor::row_vector({2.0}), "p");
    Tape t;
    Value loss = t.sum(t.param(p));
    t.backward(loss);
    t.backward(loss);
    CHECK((*t.grad_of(p))[0] == doctest::Approx(2.0));
  }
  SUBCASE("frozen parameters accumulate nothing") {
    Parameter p(Tensor::row_vector({1.0}), "p");
    p.requires_grad = false;
    Tape t;
    t.backward(t.sum(t.scale(t.param(p), 3.0)));
    CHECK(t.grad_of(p) == nullptr);
  }
}

TEST_CASE("elu, neg_log_sigmoid, row ops gradients") {
  Rng rng(51);
  SUBCASE("elu") {
    Parameter x(random_tensor({6}, rng, true), "x");
    auto eval = [&] {
      Tape tp;
      return tp.val(tp.sum(tp.elu(tp.param(x))))[0];
    };
    Tape tp;
    tp.backward(tp.sum(tp.elu(tp.param(x))));
    CHECK(max_rel_error(*tp.grad_of(x), finite_difference(eval, x.value)) < kGradTol);
  }
  SUBCASE("neg_log_sigmoid matches -log(sigmoid) and its gradient") {
    Parameter x(random_tensor({5}, rng), "x");
    Tape t;
    Value y = t.neg_log_sigmoid(t.param(x));
    for (long i = 0; i < 5; ++i) {
      double expect = -std::log(1.0 / (1.0 + std::exp(-x.value[i])));
      CHECK(t.val(y)[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    auto eval = [&] {
      Tape tp;
      return tp.val(tp.sum(tp.neg_log_sigmoid(tp.param(x))))[0];
    };
    Tape tp;
    tp.backward(tp.sum(tp.neg_log_sigmoid(tp.param(x))));
    CHECK(max_rel_error(*tp.grad_of(x), finite_difference(eval, x.value)) < kGradTol);
  }
  SUBCASE("gather, row_scale, segment_sum, row_sum chain") {
    Parameter h(random_tensor({4, 3}, rng), "h");
    Parameter s(random_tensor({5}, rng), "s");
    std::vector<int> idx = {0, 2, 2, 3, 1};
    std::vector<int> offsets = {0, 2, 2, 5};
    auto eval = [&] {
      Tape tp;
      Value g = tp.gather_rows(tp.param(h), idx);
      Value sc = tp.row_scale(g, tp.param(s));
      Value agg = tp.segment_sum(sc, offsets);
      return tp.val(tp.sum(tp.mul(agg, agg)))[0];
    };
    Tape tp;
    Value g = tp.gather_rows(tp.param(h), idx);
    Value sc = tp.row_scale(g, tp.param(s));
    Value agg = tp.segment_sum(sc, offsets);
    tp.backward(tp.sum(tp.mul(agg, agg)));
    CHECK(max_rel_error(*tp.grad_of(h), finite_difference(eval, h.value)) < kGradTol);
    CHECK(max_rel_error(*tp.grad_of(s), finite_difference(eval, s.value)) < kGradTol);
  }
}

TEST_CASE("adam closed-form steps") {
  SUBCASE("zero gradient leaves the parameter unchanged") {
    Parameter p(Tensor::row_vector({1.5}), "p");
    ad::Adam opt({&p}, {0.1});
    Tensor zero = Tensor::zeros({1});
    opt.step_with({&zero});
    CHECK(p.value[0] == 1.5);
  }
  SUBCASE("first step is approximately -lr * sign(g)") {
    Parameter p(Tensor::row_vector({1.0, -2.0}), "p");
    ad::Adam opt({&p}, {0.1});
    Tensor g = Tensor::row_vector({0.3, -0.7});
    opt.step_with({&g});
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
  }
  SUBCASE("frozen parameter with nonzero grad is untouched") {
    Parameter p(Tensor::row_vector({1.0}), "p");
    p.requires_grad = false;
    ad::Adam opt({&p}, {0.1});
    Tensor g = Tensor::row_vector({5.0});
    opt.step_with({&g});
    CHECK(p.value[0] == 1.0);
  }
  SUBCASE("identical seeds give bit-identical trajectories") {
    auto train = [] {
      Rng rng(77);
      Parameter p(oracles::random_tensor({3, 3}, rng), "p");
      ad::Adam opt({&p}, {0.05});
      for (int step = 0; step < 25; ++step) {
        Tape t;
        Value v = t.param(p);
        Value loss = t.sum(t.mul(v, v));
        t.backward(loss);
        opt.step(t);
      }
      return p.value;
    };
    Tensor a = train();
    Tensor b = train();
    CHECK(a.data() == b.data());
  }
}

TEST_CASE("min_abs_input reports the closest kink approach") {
  Tape t;
  Value x = t.constant(Tensor::row_vector({-0.5, 0.002, 1.0}));
  t.leaky_relu(x, 0.2);
  CHECK(t.min_abs_input("leaky_relu") == doctest::Approx(0.002));
  CHECK(t.min_abs_input("elu") == std::numeric_limits<double>::infinity());
}

TEST_CASE("gradient suite over random instances") {
  // Each differentiable op on fresh random inputs, several times.
  Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    Parameter a(random_tensor({2, 3}, rng), "a");
    Parameter b(random_tensor({2, 3}, rng), "b");
    auto eval = [&] {
      Tape tp;
      Value s = tp.sub(tp.param(a), tp.param(b));
      Value m = tp.mul(s, tp.param(a));
      return tp.val(tp.mean(m))[0];
    };
    Tape tp;
    Value s = tp.sub(tp.param(a), tp.param(b));
    tp.backward(tp.mean(tp.mul(s, tp.param(a))));
    CHECK(max_rel_error(*tp.grad_of(a), finite_difference(eval, a.value)) < kGradTol);
    CHECK(max_rel_error(*tp.grad_of(b), finite_difference(eval, b.value)) < kGradTol);
  }
}
