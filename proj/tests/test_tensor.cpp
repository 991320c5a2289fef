#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "deiqt/autograd.hpp"
#include "deiqt/gradcheck.hpp"
#include "deiqt/layers.hpp"
#include "deiqt/model.hpp"
#include "oracles.hpp"

using namespace deiqt;

namespace {

Tensor<double> param_tensor(Shape shape, std::vector<double> values) {
  Tensor<double> t(std::move(shape), std::move(values));
  t.requires_grad = true;
  return t;
}

}  // namespace

TEST(Tensor, ShapeMustMatchElementCount) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
}

TEST(Tensor, CheckFiniteNamesTheTensor) {
  Tensor<float> t({2}, std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()});
  EXPECT_FALSE(t.all_finite());
  try {
    t.check_finite("weights");
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
  }
  Tensor<double> inf({1}, std::vector<double>{-INFINITY});
  EXPECT_FALSE(inf.all_finite());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs = differs || x != c.normal();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformIndexInRange) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.uniform_index(7), 7u);
}

TEST(Matmul, IdentityAndClosedForm) {
  Tape<double> tape;
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = tape.constant(Tensor<double>({2, 2}, {3, 4, 5, 6}));
  EXPECT_EQ(matmul(eye, b).value().data, (std::vector<double>{3, 4, 5, 6}));
  auto row = tape.constant(Tensor<double>({1, 2}, {1, 2}));
  auto col = tape.constant(Tensor<double>({2, 1}, {3, 4}));
  const auto c = matmul(row, col);
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, ShapeMismatchIsDescriptive) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, MatchesTripleLoopOn20Shapes) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(9), k = 1 + rng.uniform_index(9), n = 1 + rng.uniform_index(9);
    const auto a = random_normal<double>({m, k}, rng);
    const auto b = random_normal<double>({k, n}, rng);
    Tape<double> tape;
    const auto got = matmul(tape.constant(a), tape.constant(b)).value();
    const auto want = oracle::matmul(oracle::from(a), oracle::from(b));
    EXPECT_LE(oracle::max_abs_diff(got.data, want.v), 1e-12);

    Tape<float> ftape;
    const auto fgot = matmul(ftape.constant(a.cast<float>()), ftape.constant(b.cast<float>())).value();
    EXPECT_LE(oracle::max_abs_diff(std::vector<double>(fgot.data.begin(), fgot.data.end()), want.v), 1e-4);
  }
}

TEST(Matmul, RandomFiveBySevenBySeven) {
  Rng rng(11);
  const auto a = random_normal<double>({5, 7}, rng);
  const auto b = random_normal<double>({7, 3}, rng);
  Tape<double> tape;
  const auto got = matmul(tape.constant(a), tape.constant(b)).value();
  EXPECT_LE(oracle::max_abs_diff(got.data, oracle::matmul(oracle::from(a), oracle::from(b)).v), 1e-12);
}

TEST(Matmul, RejectsNonFiniteOperand) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({1, 1}, {NAN}));
  auto b = tape.constant(Tensor<double>({1, 1}, {1}));
  EXPECT_THROW(matmul(a, b), NonFiniteError);
}

TEST(Softmax, WorkedExamples) {
  Tape<double> tape;
  auto half = softmax_lastdim(tape.constant(Tensor<double>({1, 2}, {0, 0}))).value().data;
  EXPECT_EQ(half, (std::vector<double>{0.5, 0.5}));
  auto thirds = softmax_lastdim(tape.constant(Tensor<double>({1, 2}, {std::log(2.0), 0}))).value().data;
  EXPECT_NEAR(thirds[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(thirds[1], 1.0 / 3.0, 1e-12);
  auto big = softmax_lastdim(tape.constant(Tensor<double>({1, 2}, {1000, 0}))).value().data;
  EXPECT_EQ(big[0], 1.0);
  EXPECT_EQ(big[1], 0.0);
}

TEST(Softmax, RowsAreDistributions) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    const auto x = random_normal<double>({4, 1 + rng.uniform_index(8)}, rng, 5.0);
    const auto y = softmax_lastdim(tape.constant(x)).value();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (double v : y.row(r)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, WorkedExamples) {
  Tape<double> tape;
  auto gain = tape.constant(Tensor<double>({3}, {1, 1, 1}));
  auto bias = tape.constant(Tensor<double>({3}, {0, 0, 0}));
  auto flat = layer_norm(tape.constant(Tensor<double>({1, 3}, {1, 1, 1})), gain, bias, 1e-6).value().data;
  EXPECT_EQ(flat, (std::vector<double>{0, 0, 0}));
  auto g2 = tape.constant(Tensor<double>({2}, {1, 1}));
  auto b2 = tape.constant(Tensor<double>({2}, {0, 0}));
  auto pair = layer_norm(tape.constant(Tensor<double>({1, 2}, {1, 3})), g2, b2, 1e-12).value().data;
  EXPECT_NEAR(pair[0], -1.0, 1e-9);
  EXPECT_NEAR(pair[1], 1.0, 1e-9);
  EXPECT_THROW(layer_norm(tape.constant(Tensor<double>({1, 2}, {1, 3})), g2, b2, 0.0), ContractError);
}

TEST(LayerNorm, OutputRowsHaveZeroMean) {
  Rng rng(5);
  Tape<double> tape;
  auto gain = tape.constant(Tensor<double>({6}, 1.0));
  auto bias = tape.constant(Tensor<double>({6}, 0.0));
  const auto y = layer_norm(tape.constant(random_normal<double>({5, 6}, rng, 3.0)), gain, bias, 1e-6).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (double v : y.row(r)) s += v;
    EXPECT_NEAR(s / 6.0, 0.0, 1e-6);
  }
}

TEST(Gelu, Asymptotes) {
  EXPECT_EQ(gelu_value(0.0), 0.0);
  EXPECT_NEAR(gelu_value(10.0), 10.0, 1e-6);
  EXPECT_NEAR(gelu_value(-10.0), 0.0, 1e-6);
  for (double x : {-2.0, -0.3, 0.7, 1.9}) EXPECT_NEAR(gelu_value(x), oracle::gelu(x), 1e-15);
}

TEST(Backward, SumAndSquare) {
  auto x = param_tensor({3}, {1, 2, 3});
  Tape<double> tape;
  tape.backward(sum(tape.param(x)));
  EXPECT_EQ(x.grad, (std::vector<double>{1, 1, 1}));

  auto y = param_tensor({2}, {1, 2});
  auto v = tape.param(y);
  tape.backward(sum(mul(v, v)));
  EXPECT_EQ(y.grad, (std::vector<double>{2, 4}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, NonScalarLossIsContractViolation) {
  auto x = param_tensor({3}, {1, 2, 3});
  Tape<double> tape;
  EXPECT_THROW(tape.backward(tape.param(x)), ContractError);
}

TEST(Backward, IsLinear) {
  Rng rng(9);
  auto w = random_normal<double>({4, 3}, rng);
  w.requires_grad = true;
  const auto x = random_normal<double>({2, 4}, rng);
  auto f = [&](Tape<double>& t) { return sum(gelu(matmul(t.constant(x), t.param(w)))); };
  auto g = [&](Tape<double>& t) {
    auto h = matmul(t.constant(x), t.param(w));
    return mean(mul(h, h));
  };
  auto grad_of = [&](auto&& fn) {
    w.zero_grad();
    Tape<double> t;
    t.backward(fn(t));
    return w.grad;
  };
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  const double alpha = 0.7, beta = -1.3;
  const auto gc = grad_of([&](Tape<double>& t) { return add(scale(f(t), alpha), scale(g(t), beta)); });
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], alpha * gf[i] + beta * gg[i], 1e-10);
}

TEST(GradCheck, QuadraticIsExact) {
  auto theta = param_tensor({4}, {0.5, -1.0, 2.0, 0.1});
  const std::vector<NamedTensor<double>> params{{"theta", &theta}};
  const auto r = grad_check(
      [&](Tape<double>& t) {
        auto v = t.param(theta);
        return add(sum(mul(v, v)), scale(sum(v), 3.0));
      },
      params, 1e-4);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.elements_checked, 4u);
  EXPECT_EQ(theta.data, (std::vector<double>{0.5, -1.0, 2.0, 0.1}));
}

TEST(GradCheck, NonFiniteLossNamesParameter) {
  auto theta = param_tensor({1}, {1.0});
  const std::vector<NamedTensor<double>> params{{"theta", &theta}};
  try {
    grad_check(
        [&](Tape<double>& t) {
          auto v = t.param(theta);
          return scale(sum(v), theta.data[0] > 1.0 ? std::numeric_limits<double>::infinity() : 1.0);
        },
        params, 1e-4);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, SingleAttentionBlockEightTokens) {
  Rng rng(21);
  const ModelConfig cfg = ModelConfig::toy();
  DeiqtModel<double> model = init_model<double>(cfg, rng);
  const auto x = random_normal<double>({8, 16}, rng);
  AttentionParams<double>& attn = model.encoder[0].attn;
  std::vector<NamedTensor<double>> params;
  for (auto [name, lin] : {std::pair{"query", &attn.query}, {"key", &attn.key}, {"value", &attn.value},
                            {"out", &attn.out}}) {
    params.push_back({std::string(name) + ".weight", &lin->weight});
    params.push_back({std::string(name) + ".bias", &lin->bias});
  }
  // Key biases have an exactly zero gradient, so the loss stays small to
  // keep their central differences near roundoff.
  const auto readout = random_normal<double>({8, 16}, rng);
  const auto r = grad_check(
      [&](Tape<double>& t) {
        auto y = multi_head_attention(t.constant(x), t.constant(x), attn, cfg.heads).output;
        return sum(mul(y, t.constant(readout)));
      },
      params, 1e-4);
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst_param << "[" << r.worst_index << "]";
}
