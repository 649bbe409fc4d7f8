#include "gradcheck.hpp"
#include "spottrip/autodiff.hpp"
#include "spottrip/nn.hpp"

#include <gtest/gtest.h>

using namespace spottrip;
using ad::Tape;
using ad::Var;

namespace {

// Reduces an op's output to a scalar through fixed random weights so every
// output entry contributes a distinct gradient.
double contract(Tape& tape, const Var& out, bool with_grad) {
  Rng rng(99);
  Var w = tape.constant(uniform_matrix(out.rows(), out.cols(), 1.0, rng));
  Var loss = ad::sum(ad::mul(out, w));
  if (with_grad) tape.backward(loss);
  return loss.scalar();
}

void expect_op_gradients(ParameterStore& store, const std::function<Var(Tape&)>& op, double tol = 1e-6) {
  auto report = gradcheck::check(store.all(), [&](bool g) {
    Tape tape;
    return contract(tape, op(tape), g);
  });
  EXPECT_LT(report.worst(), tol) << report.worst_name();
}

struct Fixture : ::testing::Test {
  Rng rng{3};
  ParameterStore store;
  Parameter& a = store.add("a", uniform_matrix(3, 4, 1.0, rng));
  Parameter& b = store.add("b", uniform_matrix(3, 4, 1.0, rng));
  Parameter& m = store.add("m", uniform_matrix(4, 2, 1.0, rng));
  Parameter& row = store.add("row", uniform_matrix(1, 4, 1.0, rng));
  Parameter& col = store.add("col", uniform_matrix(3, 1, 1.0, rng));
};

}  // namespace

TEST_F(Fixture, ElementwiseArithmetic) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    return ad::mul(x + y, x - y) + ad::scale(-x, 0.3) + ad::add_scalar(y, 2.0);
  });
}

TEST_F(Fixture, MatmulTransposeBroadcast) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = ad::add_row(t.param(a), t.param(row));
    return ad::matmul(ad::scale_rows(x, t.param(col)), t.param(m)) + ad::transpose(ad::matmul(ad::transpose(t.param(m)), ad::transpose(t.param(b))));
  });
}

TEST_F(Fixture, Nonlinearities) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = t.param(a);
    Var pos = ad::add_scalar(ad::square(t.param(b)), 0.5);
    return ad::exp(x) + ad::log(pos) + ad::sqrt(pos) + ad::sigmoid(x) + ad::silu(x) + ad::tanh(x) + ad::relu(x) +
           ad::leaky_relu(x, 0.01) + ad::abs(x);
  });
}

TEST_F(Fixture, Reductions) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    Var r = ad::repeat_rows(ad::mean_rows(x), 3);
    Var s = ad::repeat_rows(ad::transpose(ad::row_sum(y)), 1);
    return ad::concat_cols({r, ad::rowwise_dot(x, y), ad::matmul(ad::transpose(s), t.param(row))});
  });
}

TEST_F(Fixture, StructuralOps) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    const Index idx[] = {2, 0, 2, 1};
    const std::pair<Index, Index> cells[] = {{0, 1}, {2, 3}, {0, 1}, {1, 0}};
    Var stacked = ad::concat_rows({x, y});
    Var g = ad::gather_rows(stacked, idx);
    Var sl = ad::slice_cols(ad::slice_rows(stacked, 1, 4), 1, 2);
    return ad::concat_cols({ad::slice_cols(g, 0, 2) + sl, ad::pick(x, cells)});
  });
}

TEST_F(Fixture, SoftmaxFamilyAndLayerNorm) {
  expect_op_gradients(store, [&](Tape& t) {
    Var x = t.param(a);
    return ad::softmax_rows(x) + ad::log_softmax_rows(t.param(b)) +
           ad::layer_norm_rows(ad::mul(x, t.param(b)), t.param(row), t.param(row));
  });
}

TEST_F(Fixture, SegmentOps) {
  expect_op_gradients(store, [&](Tape& t) {
    const Index seg[] = {0, 0, 2};
    Var alpha = ad::segment_softmax(t.param(col), seg, 3);
    return ad::concat_cols({ad::segment_sum(ad::scale_rows(t.param(a), alpha), seg, 3), alpha});
  });
}

TEST_F(Fixture, LincombSkipsZeroCoefficients) {
  expect_op_gradients(store, [&](Tape& t) {
    const Var terms[] = {t.param(a), t.param(b), t.param(a)};
    const double coeffs[] = {0.5, 0.0, -1.25};
    return ad::lincomb(terms, coeffs);
  });
  Tape t;
  const Var terms[] = {t.param(a), t.param(b)};
  const double coeffs[] = {2.0, 0.0};
  EXPECT_TRUE(ad::lincomb(terms, coeffs).value().isApprox(2.0 * a.value));
}

TEST(Autodiff, SegmentSoftmaxSumsToOnePerSegment) {
  Tape t;
  Var s = t.constant((Matrix(5, 1) << 0.3, -2.0, 7.0, 1.0, 1.0).finished());
  const Index seg[] = {1, 1, 1, 3, 3};
  Matrix alpha = ad::segment_softmax(s, seg, 4).value();
  EXPECT_NEAR(alpha.topRows(3).sum(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(alpha(3, 0), 0.5);
  EXPECT_DOUBLE_EQ(alpha(4, 0), 0.5);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  Tape t;
  Var v = t.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(v), std::invalid_argument);
}

TEST(Autodiff, FrozenParameterGetsNoGradient) {
  ParameterStore store;
  Parameter& p = store.add("frozen", Matrix::Ones(2, 2), false);
  Tape t;
  Var x = t.param(p);
  Var loss = ad::sum(ad::square(x));
  t.backward(loss);
  EXPECT_TRUE(p.grad.isZero());
}

TEST(Autodiff, ParamNodeSharedWithinTape) {
  ParameterStore store;
  Parameter& p = store.add("p", Matrix::Constant(1, 1, 3.0));
  Tape t;
  Var loss = ad::mul(t.param(p), t.param(p));
  t.backward(loss);
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 6.0);
}

TEST(AdamW, ZeroLearningRateLeavesValues) {
  ParameterStore store;
  Rng rng(1);
  Parameter& p = store.add("p", uniform_matrix(3, 3, 1.0, rng));
  const Matrix before = p.value;
  p.grad.setOnes();
  AdamW opt(AdamW::Options{.lr = 0.0});
  for (int i = 0; i < 5; ++i) opt.step(store.all());
  EXPECT_EQ(p.value, before);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParameterStore store;
  Parameter& p = store.add("p", Matrix::Constant(1, 2, 1.0));
  p.grad << 4.0, -0.5;
  AdamW opt(AdamW::Options{.lr = 0.1, .weight_decay = 0.0});
  opt.step(store.all());
  // Bias-corrected first step is lr * g/|g| up to eps.
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p.value(0, 1), 1.1, 1e-7);
}

TEST(Nn, TransformerLayerGradients) {
  ParameterStore store;
  Rng rng(5);
  nn::TransformerEncoder enc(store, "enc", 2, 8, 2, 16, rng);
  Parameter& input = store.add("input", uniform_matrix(4, 8, 1.0, rng));
  auto report = gradcheck::check(store.all(), [&](bool g) {
    Tape tape;
    return contract(tape, enc(tape, tape.param(input)), g);
  });
  EXPECT_LT(report.worst(), 1e-4) << report.worst_name();
}

TEST(Nn, MlpGradients) {
  ParameterStore store;
  Rng rng(6);
  nn::Mlp3 mlp(store, "mlp", 3, 7, 2, nn::Activation::kTanh, rng);
  Parameter& input = store.add("input", uniform_matrix(5, 3, 1.0, rng));
  auto report = gradcheck::check(store.all(), [&](bool g) {
    Tape tape;
    return contract(tape, mlp(tape, tape.param(input)), g);
  });
  EXPECT_LT(report.worst(), 1e-6) << report.worst_name();
}
