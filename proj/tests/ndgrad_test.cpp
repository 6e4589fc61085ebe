#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "seqcl/ndgrad/checkpoint.hpp"
#include "seqcl/ndgrad/gradcheck.hpp"
#include "seqcl/ndgrad/ops.hpp"
#include "seqcl/ndgrad/param_vector.hpp"
#include "seqcl/ndgrad/tape.hpp"
#include "support.hpp"

using namespace seqcl;

namespace {

ParamVector vec_param(std::vector<double> v) {
  ParamVector p;
  p.add("x", Tensor::vector(std::move(v)));
  return p;
}

ParamVector mat_param(std::size_t r, std::size_t c, std::uint64_t seed) {
  ParamVector p;
  p.add("a", Tensor::matrix(r, c));
  return test::random_params(p, seed);
}

}  // namespace

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape t;
  const Var x = t.constant(Tensor(Shape{1, 2}, {0.0, 0.0}));
  const Tensor y = ops::softmax_rows(x).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Ops, AffineWithIdentity) {
  Tape t;
  const Var x = t.constant(Tensor(Shape{1, 2}, {1.0, 2.0}));
  const Var w = t.constant(Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const Var b = t.constant(Tensor(Shape{2}, 0.0));
  const Tensor y = ops::affine(x, w, b).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
}

TEST(Ops, SquaredNorm) {
  Tape t;
  EXPECT_DOUBLE_EQ(ops::squared_l2(t.constant(Tensor::vector({3.0, 4.0}))).value().item(), 25.0);
}

TEST(Ops, LogSoftmaxRowsNormalize) {
  Tape t;
  const Tensor m = test::random_params(mat_param(3, 4, 0), 9)[0];
  const Tensor y = ops::log_softmax_rows(t.constant(m)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (double v : y.row(r)) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, ShapeMismatchThrows) {
  Tape t;
  const Var a = t.constant(Tensor::vector({1.0, 2.0}));
  const Var b = t.constant(Tensor::vector({1.0, 2.0, 3.0}));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  EXPECT_THROW(ops::matmul(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(2, 3))), ShapeError);
}

TEST(Ops, NonFiniteForwardThrows) {
  Tape t;
  const Var a = t.constant(Tensor::vector({1000.0}));
  EXPECT_THROW(ops::exp(a), NumericError);
}

TEST(Backward, SumGivesOnes) {
  const auto g = grad(vec_param({1, 2, 3}), [](Tape&, const ParamVars& pv) { return ops::sum(pv[0]); });
  for (double v : g[0].data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, SquaredNormGradient) {
  const auto g = grad(vec_param({3, 4}), [](Tape&, const ParamVars& pv) { return ops::squared_l2(pv[0]); });
  EXPECT_DOUBLE_EQ(g[0][0], 6.0);
  EXPECT_DOUBLE_EQ(g[0][1], 8.0);
}

TEST(Backward, ConstantRootGivesZeros) {
  const auto g = grad(vec_param({3, 4}), [](Tape& t, const ParamVars&) { return t.constant(Tensor::scalar(2.0)); });
  for (double v : g[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarRootThrows) {
  EXPECT_THROW(grad(vec_param({1, 2}), [](Tape&, const ParamVars& pv) { return pv[0]; }), ShapeError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // f = sum(x*x) + sum(x), so df/dx = 2x + 1
  const auto g = grad(vec_param({1.5, -2}), [](Tape&, const ParamVars& pv) {
    return ops::add(ops::sum(ops::mul(pv[0], pv[0])), ops::sum(pv[0]));
  });
  EXPECT_DOUBLE_EQ(g[0][0], 4.0);
  EXPECT_DOUBLE_EQ(g[0][1], -3.0);
}

TEST(GradCheck, SquaredNorm) {
  const auto r = finite_diff_check([](Tape&, const ParamVars& pv) { return ops::squared_l2(pv[0]); },
                                   test::random_params(vec_param({0, 0, 0, 0}), 3));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, ConstantIsExact) {
  const auto r = finite_diff_check([](Tape& t, const ParamVars&) { return t.constant(Tensor::scalar(1.0)); },
                                   vec_param({1, 2}));
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, RejectsBadEps) {
  auto f = [](Tape&, const ParamVars& pv) { return ops::sum(pv[0]); };
  EXPECT_THROW(finite_diff_check(f, vec_param({1}), 1e-9), ConfigError);
  EXPECT_THROW(finite_diff_check(f, vec_param({1}), 1e-2), ConfigError);
}

// Every differentiable op against central differences.
TEST(GradCheck, EveryOp) {
  ParamVector p;
  p.add("a", Tensor::matrix(3, 4));
  p.add("b", Tensor::matrix(4, 2));
  p.add("c", Tensor(Shape{2}));
  p.add("k", Tensor::matrix(3, 4));
  p = test::random_params(p, 17, 0.7);
  const Tensor w = test::random_params(mat_param(3, 4, 0), 5)[0];
  const Tensor anchor = test::random_params(mat_param(3, 4, 0), 6)[0];
  Tensor basis = Tensor::matrix(12, 2);
  for (std::size_t i = 0; i < 12; ++i) basis.at(i, i % 2) = 0.1 * static_cast<double>(i + 1);

  using F = std::function<Var(Tape&, const ParamVars&)>;
  const std::vector<std::pair<const char*, F>> cases{
      {"affine+tanh", [](Tape&, const ParamVars& pv) { return ops::sum(ops::tanh(ops::affine(pv[0], pv[1], pv[2]))); }},
      {"matmul_nt", [](Tape&, const ParamVars& pv) { return ops::sum(ops::exp(ops::scale(ops::matmul_nt(pv[0], pv[3]), 0.3))); }},
      {"log_softmax", [](Tape&, const ParamVars& pv) { return ops::sum(ops::mul(ops::log_softmax_rows(pv[0]), pv[3])); }},
      {"softmax", [](Tape&, const ParamVars& pv) { return ops::sum(ops::mul(ops::softmax_rows(pv[0]), pv[3])); }},
      {"pick+embedding", [](Tape&, const ParamVars& pv) {
         return ops::sum(ops::pick(ops::embedding(pv[0], {2, 0, 2}), {1, 3, 0}));
       }},
      {"concat", [](Tape&, const ParamVars& pv) { return ops::squared_l2(ops::concat_cols(pv[0], pv[3])); }},
      {"context", [](Tape&, const ParamVars& pv) { return ops::squared_l2(ops::tanh(ops::stack_context(pv[0], 1))); }},
      {"attention", [](Tape&, const ParamVars& pv) { return ops::sum(ops::tanh(ops::attention(pv[0], pv[3], pv[3]))); }},
      {"scale_by", [](Tape&, const ParamVars& pv) { return ops::scale_by(ops::sum(pv[0]), ops::mean(pv[2])); }},
      {"sub+relu", [](Tape&, const ParamVars& pv) { return ops::sum(ops::relu(ops::sub(pv[0], pv[3]))); }},
      {"weighted", [w](Tape&, const ParamVars& pv) { return ops::weighted_sum(ops::mul(pv[0], pv[0]), w); }},
      {"weighted_sq_dist", [w, anchor](Tape&, const ParamVars& pv) { return ops::weighted_sq_dist(pv[0], anchor, w); }},
      {"project_offset", [anchor, basis](Tape&, const ParamVars& pv) {
         return ops::squared_l2(ops::project_offset(pv[0], anchor, basis));
       }},
      {"const_matvec", [w](Tape&, const ParamVars& pv) {
         return ops::squared_l2(ops::const_matvec(w, ops::pick(pv[1], {0, 1, 1, 0})));
       }},
  };
  for (const auto& [name, f] : cases) {
    const auto r = finite_diff_check(f, p);
    EXPECT_LT(r.max_rel_error, 1e-5) << name << " worst index " << r.worst_index;
  }
}

TEST(ParamVector, FlattenRoundTrip) {
  ParamVector p;
  p.add("w", Tensor::matrix(2, 3, 1.5));
  p.add("b", Tensor::vector({1, 2}));
  const auto flat = p.flatten();
  ASSERT_EQ(flat.size(), 8u);
  EXPECT_EQ(p.unflatten(flat), p);
  EXPECT_EQ(p.offset(1), 6u);
  EXPECT_DOUBLE_EQ(p.dot(p), 6 * 2.25 + 5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamVector p;
  p.add("enc0.W", Tensor::matrix(2, 3));
  p.add("enc0.b", Tensor(Shape{3}));
  p.add("s", Tensor::scalar(0.0));
  p = test::random_params(p, 4);
  p[0][0] = 1.0 / 3.0;
  p[2][0] = -0.0;
  std::stringstream ss;
  write_checkpoint(ss, p);
  const ParamVector q = read_checkpoint(ss);
  ASSERT_TRUE(p.same_layout(q));
  for (std::size_t i = 0; i < p.num_segments(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) EXPECT_EQ(std::signbit(p[i][j]), std::signbit(q[i][j]));
  EXPECT_EQ(p, q);
}

TEST(Checkpoint, TruncatedFileIsDataError) {
  std::stringstream ss;
  write_checkpoint(ss, test::random_params(mat_param(3, 3, 0), 1));
  const std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 5));
  EXPECT_THROW(read_checkpoint(cut), DataError);
}

TEST(Checkpoint, NewerVersionIsVersionError) {
  std::stringstream ss;
  write_checkpoint(ss, mat_param(1, 1, 0));
  std::string s = ss.str();
  s.replace(s.find("v1"), 2, "v2");
  std::stringstream in(s);
  EXPECT_THROW(read_checkpoint(in), VersionError);
}

TEST(Checkpoint, WrongMagicIsDataError) {
  std::stringstream in("NOT-A-CKPT v1\n");
  EXPECT_THROW(read_checkpoint(in), DataError);
}
