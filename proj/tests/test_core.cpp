#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nvpf/core/blob.hpp"
#include "nvpf/core/grad_check.hpp"
#include "nvpf/core/ops.hpp"
#include "nvpf/core/params.hpp"

using namespace nvpf;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  return uniform_tensor(std::move(shape), lo, hi, rng);
}

// Direct nested-loop same-padding convolution used as an oracle.
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t h, std::size_t w,
                               std::size_t c, const std::vector<double>& k, std::size_t kh,
                               std::size_t kw, std::size_t co) {
  std::vector<double> out(h * w * co, 0.0);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long xx = 0; xx < static_cast<long>(w); ++xx)
      for (std::size_t o = 0; o < co; ++o) {
        double acc = 0.0;
        for (long dy = 0; dy < static_cast<long>(kh); ++dy)
          for (long dx = 0; dx < static_cast<long>(kw); ++dx) {
            const long iy = y + dy - ph, ix = xx + dx - pw;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            for (std::size_t ci = 0; ci < c; ++ci)
              acc += x[(iy * w + ix) * c + ci] * k[((dy * kw + dx) * c + ci) * co + o];
          }
        out[(y * w + xx) * co + o] = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({0, 2}, {}), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Matmul, IdentityAndHandSum) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, a).values(), a.values());
  EXPECT_EQ(matmul(a, eye).values(), a.values());
  Tensor r({1, 2}, {1, 2});
  Tensor c({2, 1}, {3, 4});
  EXPECT_DOUBLE_EQ(matmul(r, c).item(), 11.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Tensor b = random_tensor({4, 2}, 2);
  const double err_a = grad_check([&](const Tensor& a) { return sum(matmul(a, b)); },
                                  random_tensor({3, 4}, 1));
  Tensor a = random_tensor({3, 4}, 3);
  const double err_b = grad_check([&](const Tensor& x) { return sum(matmul(a, x)); }, b);
  EXPECT_LE(err_a, 1e-6);
  EXPECT_LE(err_b, 1e-6);
}

TEST(Elementwise, Basics) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  Tensor x = Tensor::scalar(0.0, true);
  Tensor y = exp(x);
  EXPECT_DOUBLE_EQ(y.item(), 1.0);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::vector({-1.0})), DomainError);
  const double err = grad_check([](const Tensor& v) { return sum(tanh(v)); }, Tensor::scalar(0.7));
  EXPECT_LE(err, 1e-6);
}

TEST(Elementwise, ScalarBroadcastOnly) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ((a * Tensor::scalar(2.0)).values(), (std::vector<double>{2, 4, 6, 8}));
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(hadamard(a, Tensor::scalar(1.0)), ShapeError);
  const std::vector<Tensor> args = {a, a};
  EXPECT_EQ(elementwise(ElementwiseOp::hadamard, args).values(),
            (std::vector<double>{1, 4, 9, 16}));
}

TEST(Reduce, SumMeanAndGradient) {
  EXPECT_DOUBLE_EQ(sum(Tensor::vector({1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(Tensor::zeros({5})).item(), 0.0);
  Tensor x = Tensor::vector({1, 2, 3, 4, 5, 6, 7}, true);
  backward(mean(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 7.0);
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sum(m, 0).values(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(mean(m, 1).values(), (std::vector<double>{2, 5}));
  EXPECT_THROW(sum(m, 2), ShapeError);
}

TEST(Backward, SquareAndDeterminism) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(square(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_THROW(backward(Tensor::vector({1, 2})), ShapeError);

  Tensor a = random_tensor({3, 3}, 11);
  Tensor b = random_tensor({3, 3}, 12);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum(matmul(a, b)));
  const std::vector<double> first(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  backward(sum(matmul(a, b)));
  const std::vector<double> second(a.grad().begin(), a.grad().end());
  EXPECT_EQ(first, second);

  const double err = grad_check([&](const Tensor& v) { return sum(matmul(v, b)); }, a);
  EXPECT_LE(err, 1e-6);
}

TEST(Backward, TapeIsTopological) {
  Tensor x = Tensor::vector({0.3, -0.2}, true);
  Tensor y = tanh(x);
  Tensor z = add(y, exp(y));
  Tensor loss = sum(mul(z, y));
  Tape tape(loss);
  const auto& order = tape.order();
  for (std::size_t i = 0; i < order.size(); ++i)
    for (const auto& p : order[i]->parents) {
      if (!p->requires_grad) continue;
      auto it = std::find(order.begin(), order.end(), p.get());
      ASSERT_NE(it, order.end());
      EXPECT_LT(static_cast<std::size_t>(it - order.begin()), i);
    }
  // Shared subexpression y appears once.
  EXPECT_EQ(std::count(order.begin(), order.end(), y.node().get()), 1);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  EXPECT_FALSE(exp(x).requires_grad());
}

TEST(GradCheck, ContractExamples) {
  EXPECT_LE(grad_check([](const Tensor& v) { return sum(v); }, random_tensor({5}, 4)), 1e-9);
  const double err = grad_check([](const Tensor& v) { return sum(exp(v)); },
                                random_tensor({4}, 5, -1.0, 1.0));
  EXPECT_LE(err, 1e-5);
  EXPECT_THROW(grad_check([](const Tensor& v) { return sum(v); }, Tensor::scalar(1.0), 1e-2),
               DomainError);
}

// Property: every differentiable op passes grad_check on random inputs.
TEST(GradCheck, EveryOpManySeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor other = random_tensor({3, 2}, 1000 + seed);
    Tensor sq = random_tensor({2, 2}, 2000 + seed);
    Tensor kern = random_tensor({3, 3, 2, 3}, 3000 + seed);
    Tensor dkern = random_tensor({3, 3, 2, 1}, 4000 + seed);
    Tensor img = random_tensor({4, 5, 2}, 5000 + seed);
    Tensor scv = random_tensor({2}, 6000 + seed);
    Tensor shv = random_tensor({2}, 7000 + seed);
    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
        {"add", [&](const Tensor& v) { return sum(square(add(v, other))); }},
        {"sub", [&](const Tensor& v) { return sum(square(sub(v, other))); }},
        {"mul", [&](const Tensor& v) { return sum(mul(v, other)); }},
        {"mul_scalar", [&](const Tensor& v) { return sum(mul(v, Tensor::scalar(1.7))); }},
        {"exp", [](const Tensor& v) { return sum(exp(v)); }},
        {"tanh", [](const Tensor& v) { return sum(tanh(v)); }},
        {"sigmoid", [](const Tensor& v) { return sum(sigmoid(v)); }},
        {"log", [](const Tensor& v) { return sum(log(shift(square(v), 0.5))); }},
        {"neg", [](const Tensor& v) { return sum(square(neg(v))); }},
        {"relu", [](const Tensor& v) { return sum(mul(relu(v), v)); }},
        {"matmul", [&](const Tensor& v) { return sum(square(matmul(reshape(v, {2, 3}), other))); }},
        {"reduce_axis", [](const Tensor& v) { return sum(square(mean(v, 1))); }},
        {"log_softmax", [](const Tensor& v) { return select(log_softmax(flatten(v)), 2); }},
        {"concat", [&](const Tensor& v) { return sum(square(concat_last({v, other}))); }},
    };
    Tensor x = random_tensor({3, 2}, seed);
    for (const auto& [name, f] : cases) EXPECT_LE(grad_check(f, x), 1e-4) << name << " seed " << seed;
    EXPECT_LE(grad_check([&](const Tensor& k) { return sum(square(conv2d(img, k, 1))); }, kern), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& v) { return sum(square(conv2d(v, kern, 2))); }, img), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& v) { return sum(square(conv2d(v, dkern, 1, true))); }, img), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& k) { return sum(square(conv2d(img, k, 2, true))); }, dkern), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& v) { return sum(square(channel_affine(v, scv, shv))); }, img), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& a) { return sum(square(channel_affine(img, a, shv))); }, scv), 1e-4);
    EXPECT_LE(grad_check([](const Tensor& v) { return sum(square(v)); }, sq), 1e-4);
  }
}

TEST(Conv2d, IdentityKernelAndShapes) {
  Tensor x = random_tensor({4, 4, 1}, 7);
  Tensor one({1, 1, 1, 1}, {1.0});
  EXPECT_EQ(conv2d(x, one).values(), x.values());

  // 3x3 delta kernel at stride 1 reproduces the input exactly.
  std::vector<double> delta(9, 0.0);
  delta[4] = 1.0;
  EXPECT_EQ(conv2d(x, Tensor({3, 3, 1, 1}, delta)).values(), x.values());

  Tensor face = Tensor::zeros({112, 112, 3});
  Tensor k = Tensor::zeros({3, 3, 3, 64});
  EXPECT_EQ(conv2d(face, k, 2).shape(), (Shape{56, 56, 64}));
  EXPECT_EQ(conv2d(Tensor::zeros({7, 5, 2}), Tensor::zeros({3, 3, 2, 1}), 2, true).shape(),
            (Shape{4, 3, 2}));
  EXPECT_THROW(conv2d(face, Tensor::zeros({3, 3, 2, 8})), ShapeError);
  EXPECT_THROW(conv2d(face, Tensor::zeros({2, 2, 3, 8})), ShapeError);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Tensor x = random_tensor({5, 5, 1}, 21);
  Tensor k({3, 3, 1, 1}, {0.5, -1.0, 2.0, 0.25, 1.0, -0.75, 3.0, 0.0, -2.0});
  auto expected = naive_conv(x.values(), 5, 5, 1, k.values(), 3, 3, 1);
  EXPECT_EQ(conv2d(x, k).values(), expected);

  Tensor x3 = random_tensor({4, 6, 3}, 22);
  Tensor k3 = random_tensor({3, 3, 3, 2}, 23);
  auto exp3 = naive_conv(x3.values(), 4, 6, 3, k3.values(), 3, 3, 2);
  auto got = conv2d(x3, k3).values();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], exp3[i], 1e-12);
}

TEST(Blob, HeaderAndRoundTrip) {
  Tensor t({2, 3}, {1.5, -2.0, 3.25, 0.0, 1e-300, -7.0});
  const std::string bytes = blob::encode(t);
  EXPECT_EQ(bytes.substr(0, bytes.find('\n')), "TENSOR v1 2 2 3");
  EXPECT_EQ(bytes.size(), std::string("TENSOR v1 2 2 3\n").size() + 48);
  Tensor back = blob::decode(bytes);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.values(), t.values());
  EXPECT_THROW(blob::decode(bytes.substr(0, bytes.size() - 1)), FormatError);
  std::string v2 = bytes;
  v2.replace(7, 2, "v2");
  EXPECT_THROW(blob::decode(v2), VersionError);
}
