#include <gtest/gtest.h>

#include <cstring>
#include <numeric>
#include <random>

#include "eacnet/gradcheck.hpp"
#include "eacnet/tensor.hpp"

using namespace eacnet;
using T64 = Tensor<double>;

namespace {

T64 ramp(Shape s, double start = 1) {
  T64 t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + double(i);
  return t;
}

T64 random_tensor(Shape s, std::mt19937_64& rng) {
  return gradcheck::detail::uniform(s, rng);
}

bool bit_equal(const T64& a, const T64& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(T64(Shape{}), ShapeError);
  EXPECT_THROW(T64({1, 2, 3, 4, 5}), ShapeError);
  EXPECT_THROW(T64({2, 0}), ShapeError);
  EXPECT_THROW(T64({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  T64 t({2, 3});
  EXPECT_EQ(t.size(), 6u);
}

TEST(Conv2d, HandComputedSums) {
  const T64 in({1, 1, 2, 2}, {1, 2, 3, 4});
  const T64 k({1, 1, 2, 2}, 1.0);
  const T64 out = conv2d(in, k);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out[0], 10.0);

  const T64 in3 = ramp({1, 1, 3, 3});
  EXPECT_EQ(conv2d(in3, T64({1, 1, 3, 3}, 1.0))[0], 45.0);
}

TEST(Conv2d, IdentityKernelIsExact) {
  std::mt19937_64 rng(3);
  const T64 x = random_tensor({2, 3, 5, 4}, rng);
  T64 k({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) k.at(c, c, 0, 0) = 1;
  EXPECT_TRUE(bit_equal(conv2d(x, k), x));
}

TEST(Conv2d, OutputExtentWithStrideAndPadding) {
  const T64 x({1, 1, 7, 6});
  EXPECT_EQ(conv2d(x, T64({2, 1, 3, 3}), Conv2dConfig{2, 1}).shape(), (Shape{1, 2, 4, 3}));
  EXPECT_EQ(conv2d(x, T64({2, 1, 3, 3}), Conv2dConfig{1, 0}).shape(), (Shape{1, 2, 5, 4}));
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  try {
    conv2d(T64({1, 3, 4, 4}), T64({2, 2, 3, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1x3x4x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x2x3x3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, KernelGradientOnSinglePixel) {
  const T64 x({1, 1, 1, 1}, {0.7});
  const T64 k({1, 1, 1, 1}, {0.3});
  const T64 up({1, 1, 1, 1}, {-2.0});
  const auto g = conv2d_backward(x, k, false, {}, up);
  EXPECT_DOUBLE_EQ(g.kernel[0], 0.7 * -2.0);
  EXPECT_DOUBLE_EQ(g.input[0], 0.3 * -2.0);
}

TEST(Conv2d, BackwardRejectsWrongUpstream) {
  const T64 x({1, 1, 4, 4}), k({1, 1, 3, 3});
  EXPECT_THROW(conv2d_backward(x, k, false, {}, T64({1, 1, 3, 3})), ShapeError);
}

TEST(Conv2d, BiasIsAddedPerChannel) {
  const T64 x({1, 1, 2, 2}, 0.0);
  const T64 k({2, 1, 1, 1}, 1.0);
  const T64 b({2}, {1.5, -2.0});
  const T64 out = conv2d(x, k, b);
  EXPECT_EQ(out.at(0, 0, 1, 1), 1.5);
  EXPECT_EQ(out.at(0, 1, 0, 0), -2.0);
}

TEST(MaxPool2, Examples) {
  const auto p = maxpool2(T64({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(p.output[0], 4.0);

  const auto r = maxpool2(ramp({1, 1, 4, 4}));
  EXPECT_EQ(r.output.values(), (std::vector<double>{6, 8, 14, 16}));

  const auto c = maxpool2(T64({2, 3, 4, 6}, 2.5));
  EXPECT_EQ(c.output.shape(), (Shape{2, 3, 2, 3}));
  for (double v : c.output.data()) EXPECT_EQ(v, 2.5);
}

TEST(MaxPool2, OddExtentRejected) {
  EXPECT_THROW(maxpool2(T64({1, 1, 3, 4})), ShapeError);
  EXPECT_THROW(maxpool2(T64({1, 1, 4, 5})), ShapeError);
}

TEST(MaxPool2, BackwardRoutesOnlyToArgmaxAndConservesMass) {
  std::mt19937_64 rng(5);
  const T64 x = random_tensor({2, 3, 6, 8}, rng);
  const auto p = maxpool2(x);
  const T64 up = random_tensor(p.output.shape(), rng);
  const T64 dx = maxpool2_backward<double>(x.shape(), p.argmax, up);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (dx[i] != 0) {
      ++nonzero;
      EXPECT_NE(std::find(p.argmax.begin(), p.argmax.end(), i), p.argmax.end());
    }
  EXPECT_EQ(nonzero, p.output.size());
  EXPECT_NEAR(sum(dx), sum(up), 1e-12);
}

TEST(Elementwise, Basics) {
  const T64 a({3}, {1, -2, 3}), b({3}, {4, 5, -6});
  EXPECT_EQ(add(a, b).values(), (std::vector<double>{5, 3, -3}));
  EXPECT_EQ(mul(a, b).values(), (std::vector<double>{4, -10, -18}));
  EXPECT_EQ(scale(a, 2.0).values(), (std::vector<double>{2, -4, 6}));
  EXPECT_EQ(relu(a).values(), (std::vector<double>{1, 0, 3}));
  EXPECT_THROW(add(a, T64({2})), ShapeError);
}

TEST(Matmul, SmallProduct) {
  const T64 a({2, 3}, {1, 2, 3, 4, 5, 6});
  const T64 b({3, 2}, {7, 8, 9, 10, 11, 12});
  EXPECT_EQ(matmul(a, b).values(), (std::vector<double>{58, 64, 139, 154}));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Relu, BackwardIsZeroForNegativeInput) {
  const T64 x({3}, {-1, -0.5, 2});
  const T64 up({3}, {7, -3, 4});
  EXPECT_EQ(relu_backward(x, up).values(), (std::vector<double>{0, 0, 4}));
}

TEST(Sigmoid, BackwardAtZero) {
  const T64 x({1}, {0.0});
  EXPECT_DOUBLE_EQ(sigmoid(x)[0], 0.5);
  EXPECT_DOUBLE_EQ(sigmoid_backward(x, T64({1}, {1.0}))[0], 0.25);
}

TEST(Sigmoid, StaysFiniteForLargeLogits) {
  const T64 x({4}, {-1000, -50, 50, 1000});
  const T64 s = sigmoid(x);
  EXPECT_TRUE(s.all_finite());
  EXPECT_GE(s[0], 0.0);
  EXPECT_LE(s[3], 1.0);
  EXPECT_TRUE(sigmoid_backward(x, T64({4}, 1.0)).all_finite());
}

TEST(Upscale, ReplicatesBlocks) {
  const T64 x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(nearest_upscale2x(x).values(),
            (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(BilinearResize, Examples) {
  const T64 r = bilinear_resize(T64({1, 2}, {0, 1}), 1, 3);
  EXPECT_EQ(r.values(), (std::vector<double>{0, 0.5, 1}));

  const T64 c = bilinear_resize(T64({3, 4}, 0.3), 7, 2);
  for (double v : c.data()) EXPECT_EQ(v, 0.3);
}

TEST(BilinearResize, CornersPreservedAndNoOvershoot) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const T64 m = random_tensor({5, 7}, rng);
    const T64 r = bilinear_resize(m, 13, 4);
    EXPECT_EQ(r.at(0, 0), m.at(0, 0));
    EXPECT_EQ(r.at(0, 3), m.at(0, 6));
    EXPECT_EQ(r.at(12, 0), m.at(4, 0));
    EXPECT_EQ(r.at(12, 3), m.at(4, 6));
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    for (double v : r.data()) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(Columns, ConcatAndSliceRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<T64> parts = {random_tensor({3, 2}, rng), random_tensor({3, 5}, rng)};
  const T64 all = concat_columns<double>(parts);
  EXPECT_EQ(all.shape(), (Shape{3, 7}));
  EXPECT_EQ(slice_columns(all, 0, 2), parts[0]);
  EXPECT_EQ(slice_columns(all, 2, 5), parts[1]);
}

TEST(Determinism, ConvIsIdenticalAcrossWorkerCounts) {
  std::mt19937_64 rng(11);
  const T64 x = random_tensor({4, 3, 10, 10}, rng);
  const T64 k = random_tensor({5, 3, 3, 3}, rng);
  const T64 up = random_tensor({4, 5, 10, 10}, rng);
  setenv("EAC_THREADS", "1", 1);
  const auto g1 = conv2d_backward(x, k, true, {1, 1}, up);
  const T64 f1 = conv2d(x, k, Conv2dConfig{1, 1});
  setenv("EAC_THREADS", "3", 1);
  const auto g3 = conv2d_backward(x, k, true, {1, 1}, up);
  const T64 f3 = conv2d(x, k, Conv2dConfig{1, 1});
  unsetenv("EAC_THREADS");
  EXPECT_TRUE(bit_equal(f1, f3));
  EXPECT_TRUE(bit_equal(g1.kernel, g3.kernel));
  EXPECT_TRUE(bit_equal(g1.input, g3.input));
  EXPECT_TRUE(bit_equal(g1.bias, g3.bias));
}

TEST(GradientSuite, TensorOpsPass) {
  const auto rep = gradcheck::tensor_suite();
  for (const auto& r : rep.results) EXPECT_TRUE(r.passed()) << gradcheck::format_result(r);
  // at least five shapes per op
  std::map<std::string, int> per_op;
  for (const auto& r : rep.results) ++per_op[r.op];
  for (const auto& [op, n] : per_op) EXPECT_GE(n, 5) << op;
}
