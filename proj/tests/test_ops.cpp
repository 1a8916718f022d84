#include <cmath>
#include <functional>
#include <string>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hgd/gradcheck.hpp"
#include "hgd/ops.hpp"
#include "oracles.hpp"

namespace hgd {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

TEST(Conv1x1, IdentityKernelReturnsInput) {
  std::mt19937_64 rng(1);
  Graph<double> g;
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  const auto x = random_tensor({3, 4, 5}, rng);
  const auto y = ops::conv1x1(g.constant(x), g.constant(eye), g.constant(Tensor<double>({3})));
  EXPECT_EQ(y.value().storage(), x.storage());
}

TEST(Conv1x1, ZeroKernelBroadcastsBias) {
  std::mt19937_64 rng(2);
  Graph<double> g;
  const auto y = ops::conv1x1(g.constant(random_tensor({2, 2, 2}, rng)),
                              g.constant(Tensor<double>({2, 2})),
                              g.constant(Tensor<double>({2}, {3.0, -1.0})));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(y.value()[i], 3.0);
    EXPECT_EQ(y.value()[4 + i], -1.0);
  }
}

TEST(Conv1x1, MatchesLoopOracleOnSmallShapes) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> extent(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ci = extent(rng), co = extent(rng), h = extent(rng), w = extent(rng);
    const auto x = random_tensor({ci, h, w}, rng);
    const auto wt = random_tensor({co, ci}, rng);
    const auto b = random_tensor({co}, rng);
    Graph<double> g;
    const auto y = ops::conv1x1(g.constant(x), g.constant(wt), g.constant(b));
    EXPECT_LE(max_abs_diff(y.value(), testing::conv1x1_oracle(x, wt, b)), 1e-12);
  }
}

TEST(Conv1x1, ChannelMismatchNamesTheAxis) {
  Graph<double> g;
  try {
    ops::conv1x1(g.constant(Tensor<double>({3, 2, 2})), g.constant(Tensor<double>({2, 4})),
                 g.constant(Tensor<double>({2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv3x3, MatchesLoopOracleWithStride) {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1u, 2u}) {
    const auto x = random_tensor({2, 6, 5}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    Graph<double> g;
    const auto y = ops::conv3x3(g.constant(x), g.constant(w), g.constant(b), stride);
    const std::size_t ho = (6 + stride - 1) / stride, wo = (5 + stride - 1) / stride;
    ASSERT_EQ(y.dims(), (Shape{3, ho, wo}));
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = b[o];
          for (std::size_t i = 0; i < 2; ++i)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long sy = static_cast<long>(oy * stride) + dy;
                const long sx = static_cast<long>(ox * stride) + dx;
                if (sy < 0 || sx < 0 || sy >= 6 || sx >= 5) continue;
                acc += w[((o * 2 + i) * 3 + (dy + 1)) * 3 + (dx + 1)] * x.at(i, sy, sx);
              }
          EXPECT_NEAR(y.value().at(o, oy, ox), acc, 1e-12);
        }
  }
}

TEST(BilinearResize, PreservesConstants) {
  Graph<double> g;
  const auto y = ops::bilinear_resize(g.constant(Tensor<double>({2, 3, 5}, 0.7)), 7, 2);
  ASSERT_EQ(y.dims(), (Shape{2, 7, 2}));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(BilinearResize, SinglePixelUpsample) {
  Graph<double> g;
  const auto y = ops::bilinear_resize(g.constant(Tensor<double>({1, 1, 1}, 4.5)), 2, 2);
  for (double v : y.value().data()) EXPECT_EQ(v, 4.5);
}

TEST(BilinearResize, RampMatchesHalfPixelFormula) {
  Graph<double> g;
  const auto y =
      ops::bilinear_resize(g.constant(Tensor<double>({1, 1, 4}, {0.0, 1.0, 2.0, 3.0})), 1, 7);
  for (std::size_t d = 0; d < 7; ++d) {
    const double src = std::clamp((d + 0.5) * 4.0 / 7.0 - 0.5, 0.0, 3.0);
    // On a ramp the interpolated value equals the source coordinate.
    EXPECT_NEAR(y.value()[d], src, 1e-14) << "dst " << d;
  }
}

TEST(BilinearResize, IsLinear) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({2, 5, 3}, rng);
  const auto z = random_tensor({2, 5, 3}, rng);
  const double alpha = 0.3, beta = -1.7;
  Tensor<double> mix(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = alpha * x[i] + beta * z[i];
  Graph<double> g;
  const auto rx = ops::bilinear_resize(g.constant(x), 8, 7);
  const auto rz = ops::bilinear_resize(g.constant(z), 8, 7);
  const auto rm = ops::bilinear_resize(g.constant(mix), 8, 7);
  for (std::size_t i = 0; i < rm.value().size(); ++i) {
    EXPECT_NEAR(rm.value()[i], alpha * rx.value()[i] + beta * rz.value()[i], 1e-10);
  }
}

TEST(BilinearResize, RejectsZeroTarget) {
  Graph<double> g;
  EXPECT_THROW(ops::bilinear_resize(g.constant(Tensor<double>({1, 2, 2})), 0, 2), DimensionError);
}

TEST(SoftmaxSpatial, ZeroLogitsGiveUniformWeights) {
  Graph<double> g;
  const auto y = ops::softmax_spatial(g.constant(Tensor<double>({1, 2, 2})));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SoftmaxSpatial, TwoCellClosedForm) {
  Graph<double> g;
  const auto y = ops::softmax_spatial(g.constant(Tensor<double>({1, 1, 2}, {0.0, std::log(3.0)})));
  EXPECT_NEAR(y.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.value()[1], 0.75, 1e-15);
}

TEST(SoftmaxSpatial, ShiftInvariantAndNormalised) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor({3, 4, 5}, rng, -5, 5);
  Tensor<double> shifted = x;
  for (std::size_t i = 0; i < 20; ++i) shifted[i] += 5.0;  // channel 0 only
  Graph<double> g;
  const auto a = ops::softmax_spatial(g.constant(x));
  const auto b = ops::softmax_spatial(g.constant(shifted));
  EXPECT_LE(max_abs_diff(a.value(), b.value()), 1e-12);
  for (std::size_t c = 0; c < 3; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < 20; ++i) total += a.value()[c * 20 + i];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SoftmaxSpatial, FloatChannelsSumToOne) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor({4, 6, 6}, rng, -10, 10).cast<float>();
  Graph<float> g;
  const auto a = ops::softmax_spatial(g.constant(x));
  for (std::size_t c = 0; c < 4; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < 36; ++i) total += a.value()[c * 36 + i];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Matmul, IdentityAndOnes) {
  std::mt19937_64 rng(8);
  const auto m = random_tensor({3, 4}, rng);
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  Graph<double> g;
  EXPECT_EQ(ops::matmul(g.constant(eye), g.constant(m)).value().storage(), m.storage());
  const auto q = ops::matmul(g.constant(Tensor<double>({1, 6}, 1.0)),
                             g.constant(Tensor<double>({6, 1}, 1.0)));
  EXPECT_EQ(q.value()[0], 6.0);
}

TEST(Matmul, MatchesLoopOracle) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> extent(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = extent(rng), q = extent(rng), r = extent(rng);
    const auto a = random_tensor({p, q}, rng);
    const auto b = random_tensor({q, r}, rng);
    Graph<double> g;
    EXPECT_LE(max_abs_diff(ops::matmul(g.constant(a), g.constant(b)).value(),
                           testing::matmul_oracle(a, b)),
              1e-12);
  }
}

TEST(Matmul, InnerMismatchThrows) {
  Graph<double> g;
  EXPECT_THROW(ops::matmul(g.constant(Tensor<double>({2, 3})), g.constant(Tensor<double>({4, 2}))),
               DimensionError);
}

TEST(Primitives, ConcatPreservesChannelOrder) {
  std::mt19937_64 rng(10);
  const auto a = random_tensor({2, 3, 4}, rng);
  const auto b = random_tensor({3, 3, 4}, rng);
  Graph<double> g;
  const std::vector<Var<double>> parts = {g.constant(a), g.constant(b)};
  const auto y = ops::concat_channels<double>(parts);
  ASSERT_EQ(y.dims(), (Shape{5, 3, 4}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(y.value()[i], a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(y.value()[a.size() + i], b[i]);
}

TEST(Primitives, ConcatRejectsSpatialMismatch) {
  Graph<double> g;
  const std::vector<Var<double>> parts = {g.constant(Tensor<double>({1, 2, 2})),
                                          g.constant(Tensor<double>({1, 2, 3}))};
  EXPECT_THROW(ops::concat_channels<double>(parts), DimensionError);
}

TEST(Primitives, WeightedSumSelector) {
  std::mt19937_64 rng(11);
  Graph<double> g;
  std::vector<Var<double>> maps;
  std::vector<Tensor<double>> values;
  for (int i = 0; i < 3; ++i) {
    values.push_back(random_tensor({2, 3, 3}, rng));
    maps.push_back(g.constant(values.back()));
  }
  const auto y = ops::weighted_sum<double>(maps, g.constant(Tensor<double>({3}, {1.0, 0.0, 0.0})));
  EXPECT_EQ(y.value().storage(), values[0].storage());
}

TEST(Primitives, NearestMaxpoolAverageBroadcast) {
  Graph<double> g;
  const Tensor<double> x({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const auto up = ops::nearest_resize(g.constant(x), 4, 4);
  EXPECT_EQ(up.value().at(0, 3, 3), 4.0);
  EXPECT_EQ(up.value().at(0, 0, 1), 1.0);
  EXPECT_EQ(up.value().at(0, 1, 2), 2.0);
  const auto pooled = ops::maxpool2x2(up);
  EXPECT_EQ(pooled.value().storage(), x.storage());
  const auto odd = ops::maxpool2x2(g.constant(Tensor<double>({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9})));
  EXPECT_EQ(odd.value().storage(), (std::vector<double>{5, 6, 8, 9}));
  const auto avg = ops::global_avg_spatial(g.constant(x));
  EXPECT_EQ(avg.value()[0], 2.5);
  const auto shifted = ops::broadcast_add_channel(g.constant(x), g.constant(Tensor<double>({1}, 10.0)));
  EXPECT_EQ(shifted.value().storage(), (std::vector<double>{11, 12, 13, 14}));
  const auto r = ops::relu(g.constant(Tensor<double>({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(r.value().storage(), (std::vector<double>{0, 0, 2}));
  const auto sc = ops::scale(g.constant(x), 2.0);
  EXPECT_EQ(sc.value()[3], 8.0);
}

TEST(Primitives, MaxpoolGradientRoutesToArgmax) {
  Tensor<double> x({1, 2, 2}, {0.1, 0.9, 0.3, 0.2});
  x.set_requires_grad(true);
  Graph<double> g;
  g.backward(ops::sum(ops::maxpool2x2(g.param(x))));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0, 1, 0, 0}));
  GradcheckOptions options;
  options.step = 1e-6;
  const auto report = gradcheck(
      [&](Graph<double>& h) { return ops::sum(ops::maxpool2x2(h.param(x))); }, {{"x", &x}},
      options);
  EXPECT_TRUE(report.passed) << report.to_string();
}

TEST(Primitives, MaxpoolTiesGoToFirstElement) {
  Tensor<double> x({1, 2, 2}, 1.0);
  x.set_requires_grad(true);
  Graph<double> g;
  g.backward(ops::sum(ops::maxpool2x2(g.param(x))));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{1, 0, 0, 0}));
}

// sum(x * w) for a fixed random w, built from primitives.
Var<double> readout(Var<double> x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = x.value().size();
  const auto flat = ops::reshape(x, {1, n});
  const auto col = x.graph().constant(random_tensor({n, 1}, rng));
  return ops::reshape(ops::matmul(flat, col), {1});
}

struct PrimitiveCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)> build;
};

class PrimitiveGradients : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  const auto& c = GetParam();
  std::mt19937_64 rng(13);
  std::vector<Tensor<double>> tensors;
  for (const auto& dims : c.inputs) {
    tensors.push_back(random_tensor(dims, rng));
    tensors.back().set_requires_grad(true);
  }
  std::vector<NamedParam<double>> params;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    params.push_back({"in" + std::to_string(i), &tensors[i]});
  }
  const auto report = gradcheck(
      [&](Graph<double>& g) {
        std::vector<Var<double>> vars;
        for (auto& t : tensors) vars.push_back(g.param(t));
        return readout(c.build(g, vars), 99);
      },
      params);
  EXPECT_TRUE(report.passed) << report.to_string();
}

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<Var<double>>;
  return {
      {"conv1x1", {{3, 4, 5}, {2, 3}, {2}},
       [](Graph<double>&, V& v) { return ops::conv1x1(v[0], v[1], v[2]); }},
      {"conv3x3", {{2, 5, 4}, {3, 2, 3, 3}, {3}},
       [](Graph<double>&, V& v) { return ops::conv3x3(v[0], v[1], v[2], 2); }},
      {"bilinear_up", {{2, 3, 4}},
       [](Graph<double>&, V& v) { return ops::bilinear_resize(v[0], 7, 9); }},
      {"bilinear_down", {{2, 8, 6}},
       [](Graph<double>&, V& v) { return ops::bilinear_resize(v[0], 2, 3); }},
      {"nearest", {{2, 3, 3}},
       [](Graph<double>&, V& v) { return ops::nearest_resize(v[0], 5, 6); }},
      {"maxpool", {{2, 5, 4}}, [](Graph<double>&, V& v) { return ops::maxpool2x2(v[0]); }},
      {"softmax_spatial", {{3, 3, 4}},
       [](Graph<double>&, V& v) { return ops::softmax_spatial(v[0]); }},
      {"matmul", {{4, 3}, {3, 5}}, [](Graph<double>&, V& v) { return ops::matmul(v[0], v[1]); }},
      {"transpose", {{4, 3}}, [](Graph<double>&, V& v) { return ops::transpose(v[0]); }},
      {"relu", {{3, 4, 4}}, [](Graph<double>&, V& v) { return ops::relu(v[0]); }},
      {"concat", {{2, 3, 3}, {1, 3, 3}},
       [](Graph<double>&, V& v) { return ops::concat_channels<double>(v); }},
      {"add", {{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, V& v) { return ops::add(v[0], v[1]); }},
      {"scale", {{2, 3, 3}}, [](Graph<double>&, V& v) { return ops::scale(v[0], -1.5); }},
      {"weighted_sum", {{2, 3, 3}, {2, 3, 3}, {2, 3, 3}, {3}},
       [](Graph<double>&, V& v) {
         const V maps = {v[0], v[1], v[2]};
         return ops::weighted_sum<double>(maps, v[3]);
       }},
      {"global_avg", {{3, 4, 2}}, [](Graph<double>&, V& v) { return ops::global_avg_spatial(v[0]); }},
      {"broadcast_add", {{3, 2, 4}, {3}},
       [](Graph<double>&, V& v) { return ops::broadcast_add_channel(v[0], v[1]); }},
      {"mean", {{3, 2, 2}}, [](Graph<double>&, V& v) { return ops::mean(v[0]); }},
      {"cross_entropy", {{4, 3, 3}},
       [](Graph<double>&, V& v) {
         static const std::vector<std::uint8_t> labels = {0, 1, 2, 3, 255, 1, 0, 2, 3};
         return ops::cross_entropy<double>(v[0], labels);
       }},
      {"conv1x1_softmax", {{3, 4, 4}, {2, 3}, {2}},
       [](Graph<double>&, V& v) { return ops::softmax_spatial(ops::conv1x1(v[0], v[1], v[2])); }},
  };
}

INSTANTIATE_TEST_SUITE_P(Ops, PrimitiveGradients, ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Primitives, CrossEntropyOfUniformLogitsIsLogClasses) {
  Graph<double> g;
  const std::vector<std::uint8_t> labels = {0, 1, 255, 2};
  const auto loss = ops::cross_entropy<double>(g.constant(Tensor<double>({3, 2, 2})), labels);
  EXPECT_NEAR(loss.value()[0], std::log(3.0), 1e-15);
}

}  // namespace
}  // namespace hgd
