// Copyright 2026 The edit3k Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "edit3k/gradcheck.hpp"
#include "edit3k/rng.hpp"

using namespace edit3k;
using G = ad::Graph<double>;
using V = ad::Var<double>;

namespace {

BasicTensor<double> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  BasicTensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST(Tensor, RejectsDataLengthMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), std::invalid_argument);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<float>(6)));
}

TEST(Tensor, Edt3RoundTripIsExact) {
  Tensor t({2, 3, 4});
  Rng rng(3);
  for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
  std::stringstream ss;
  edt3::write(ss, t);
  EXPECT_EQ(ss.str().size(), edt3::encoded_size(t.shape()));
  EXPECT_EQ(ss.str().substr(0, 4), "EDT3");
  auto back = edt3::read(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.storage(), t.storage());
}

TEST(Tensor, Edt3RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(edt3::read(bad), std::runtime_error);
  Tensor t({4}, 1.0f);
  std::stringstream ss;
  edt3::write(ss, t);
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  EXPECT_THROW(edt3::read(cut), std::runtime_error);
}

TEST(Primitives, MatmulIdentity) {
  G g(false);
  auto a = g.constant(BasicTensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(BasicTensor<double>({2, 1}, {2, 3}));
  auto c = ad::matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.value()[0], 2);
  EXPECT_DOUBLE_EQ(c.value()[1], 3);
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
  G g(false);
  auto s = ad::softmax(g.constant(BasicTensor<double>({1, 3})));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.value()[i], 1.0 / 3, 1e-15);
}

TEST(Primitives, L2NormalizeThreeFourFive) {
  G g(false);
  auto n = ad::l2_normalize(g.constant(BasicTensor<double>({1, 2}, {3, 4})));
  EXPECT_NEAR(n.value()[0], 0.6, 1e-15);
  EXPECT_NEAR(n.value()[1], 0.8, 1e-15);
}

TEST(Primitives, L2NormalizeDegenerateRowIsZeroAndFlagged) {
  G g(true);
  auto x = g.leaf(BasicTensor<double>({2, 2}, {1e-10, 0, 1, 1}));
  auto n = ad::l2_normalize(x);
  EXPECT_EQ(n.value()[0], 0.0);
  EXPECT_EQ(n.value()[1], 0.0);
  auto flags = ad::degenerate_rows(n);
  EXPECT_TRUE(flags[0]);
  EXPECT_FALSE(flags[1]);
  g.backward(ad::sum(n));
  EXPECT_EQ(g.grad(x)[0], 0.0);
}

TEST(Primitives, ShapeMismatchNamesPrimitiveAndShapes) {
  G g(false);
  auto a = g.constant(BasicTensor<double>({2, 3}));
  auto b = g.constant(BasicTensor<double>({2, 2}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, b), std::invalid_argument);
}

TEST(Backward, SumOfSquares) {
  G g;
  auto x = g.leaf(BasicTensor<double>({2}, {1, 2}));
  g.backward(ad::sum(ad::mul(x, x)));
  auto gx = g.grad(x);
  EXPECT_DOUBLE_EQ(gx[0], 2);
  EXPECT_DOUBLE_EQ(gx[1], 4);
}

TEST(Backward, MeanGradient) {
  G g;
  auto x = g.leaf(BasicTensor<double>({4}, {1, 2, 3, 4}));
  g.backward(ad::mean(x));
  const auto gx = g.grad(x);
  for (double v : gx.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Backward, AccumulatesOverMultipleConsumers) {
  G g;
  auto x = g.leaf(BasicTensor<double>({3}, {1, 2, 3}));
  auto y = ad::add(ad::add(x, x), ad::scale(x, 3.0));  // 5x
  g.backward(ad::sum(y));
  const auto gx = g.grad(x);
  for (double v : gx.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(Backward, RejectsNonScalarAndSecondCall) {
  G g;
  auto x = g.leaf(BasicTensor<double>({2}, {1, 2}));
  EXPECT_THROW(g.backward(x), std::invalid_argument);
  auto s = ad::sum(x);
  g.backward(s);
  EXPECT_THROW(g.backward(s), std::logic_error);
  g.reset();
  EXPECT_NO_THROW(g.backward(s));
}

TEST(GradCheck, SumOfSquares) {
  auto x = random_tensor({5}, 1);
  EXPECT_LT(grad_check([](G&, V v) { return ad::sum(ad::mul(v, v)); }, x), 1e-4);
}

TEST(GradCheck, LayerNormEightVector) {
  auto x = random_tensor({1, 8}, 2);
  auto f = [](G& g, V v) {
    auto gain = g.constant(random_tensor({8}, 3));
    auto bias = g.constant(random_tensor({8}, 4));
    auto w = g.constant(random_tensor({1, 8}, 5));
    return ad::sum(ad::mul(ad::layer_norm(v, gain, bias), w));
  };
  EXPECT_LT(grad_check(f, x), 1e-3);
}

TEST(GradCheck, ConstantFunction) {
  auto x = random_tensor({4}, 6);
  auto r = grad_check_detailed([](G& g, V) { return g.constant(BasicTensor<double>({1}, 2.5)); }, x);
  for (double v : r.analytic.data()) EXPECT_EQ(v, 0.0);
  for (double v : r.numeric.data()) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(GradCheck, RejectsNonScalar) {
  auto x = random_tensor({3}, 7);
  EXPECT_THROW(grad_check([](G&, V v) { return v; }, x), std::invalid_argument);
}

// Every primitive, random small shapes, 10 seeds. Each function reduces to a
// scalar through a fixed random weighting so the gradient is non-trivial.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, RelativeErrorBelowThreshold) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed * 7919);
  const std::size_t r = 1 + rng.index(3), c = 2 + rng.index(4);
  auto weighted = [seed](G& g, V y) {
    return ad::sum(ad::mul(y, g.constant(random_tensor(y.shape(), seed + 1000))));
  };
  auto other = random_tensor({r, c}, seed + 1);
  auto positive = random_tensor({r, c}, seed + 2);
  for (auto& v : positive.storage()) v = std::abs(v) + 0.5;

  struct Case {
    const char* name;
    std::function<V(G&, V)> f;
    BasicTensor<double> x;
  };
  std::vector<Case> cases = {
      {"add", [&](G& g, V x) { return weighted(g, ad::add(x, g.constant(other))); }, random_tensor({r, c}, seed)},
      {"sub", [&](G& g, V x) { return weighted(g, ad::sub(g.constant(other), x)); }, random_tensor({r, c}, seed)},
      {"mul", [&](G& g, V x) { return weighted(g, ad::mul(x, g.constant(other))); }, random_tensor({r, c}, seed)},
      {"scale", [&](G& g, V x) { return weighted(g, ad::scale(x, -1.7)); }, random_tensor({r, c}, seed)},
      {"add_bias", [&](G& g, V x) { return weighted(g, ad::add_bias(g.constant(other), x)); },
       random_tensor({c}, seed)},
      {"matmul", [&](G& g, V x) { return weighted(g, ad::matmul(x, g.constant(random_tensor({c, 3}, seed + 5)))); },
       random_tensor({r, c}, seed)},
      {"matmul_rhs", [&](G& g, V x) { return weighted(g, ad::matmul(g.constant(other), x)); },
       random_tensor({c, 2}, seed)},
      {"matmul_nt", [&](G& g, V x) { return weighted(g, ad::matmul_nt(x, g.constant(other))); },
       random_tensor({2, c}, seed)},
      {"reshape", [&](G& g, V x) { return weighted(g, ad::reshape(x, {c, r})); }, random_tensor({r, c}, seed)},
      {"concat", [&](G& g, V x) { return weighted(g, ad::concat(std::vector<V>{x, g.constant(other), x}, 1)); },
       random_tensor({r, c}, seed)},
      {"slice", [&](G& g, V x) { return weighted(g, ad::slice(x, 1, 1, c)); }, random_tensor({r, c}, seed)},
      {"repeat", [&](G& g, V x) { return weighted(g, ad::repeat(x, 3)); }, random_tensor({r, c}, seed)},
      {"mean_axis", [&](G& g, V x) { return weighted(g, ad::mean_axis(x, 0)); }, random_tensor({r, c}, seed)},
      {"exp", [&](G& g, V x) { return weighted(g, ad::exp(x)); }, random_tensor({r, c}, seed, 0.5)},
      {"log", [&](G& g, V x) { return weighted(g, ad::log(x)); }, positive},
      {"softmax", [&](G& g, V x) { return weighted(g, ad::softmax(x)); }, random_tensor({r, c}, seed)},
      {"log_softmax", [&](G& g, V x) { return weighted(g, ad::log_softmax(x)); }, random_tensor({r, c}, seed)},
      {"pick", [&](G& g, V x) { return weighted(g, ad::pick(x, std::vector<std::size_t>(r, c - 1))); },
       random_tensor({r, c}, seed)},
      {"layer_norm",
       [&](G& g, V x) {
         return weighted(g, ad::layer_norm(x, g.constant(random_tensor({c}, seed + 9)),
                                           g.constant(random_tensor({c}, seed + 10))));
       },
       random_tensor({r, c}, seed)},
      {"gelu", [&](G& g, V x) { return weighted(g, ad::gelu(x)); }, random_tensor({r, c}, seed)},
      {"l2_normalize", [&](G& g, V x) { return weighted(g, ad::l2_normalize(x)); }, random_tensor({r, c}, seed)},
      {"attention",
       [&](G& g, V x) {
         auto k = g.constant(random_tensor({1, 3, 4}, seed + 11));
         auto v = g.constant(random_tensor({1, 3, 4}, seed + 12));
         return weighted(g, ad::attention(x, k, v, 2));
       },
       random_tensor({1, 2, 4}, seed)},
      {"attention_kv",
       [&](G& g, V x) {
         auto q = g.constant(random_tensor({2, 2, 4}, seed + 13));
         return weighted(g, ad::attention(q, x, ad::scale(x, 0.5), 2));
       },
       random_tensor({2, 3, 4}, seed)},
  };
  for (auto& cs : cases) {
    ASSERT_LE(cs.x.size(), 64u) << cs.name;
    EXPECT_LT(grad_check(cs.f, cs.x, 1e-5), 1e-3) << cs.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, PrimitiveGrad, ::testing::Range(0, 10));

TEST(Properties, SoftmaxRowsAreDistributions) {
  for (int seed = 0; seed < 10; ++seed) {
    G g(false);
    auto s = ad::softmax(g.constant(random_tensor({4, 7}, seed, 5.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double tot = 0;
      for (double v : s.value().row(r)) {
        EXPECT_GE(v, 0.0);
        tot += v;
      }
      EXPECT_NEAR(tot, 1.0, 1e-6);
    }
  }
}

TEST(Properties, L2NormalizeUnitNorm) {
  for (int seed = 0; seed < 10; ++seed) {
    ad::Graph<float> g(false);
    auto x = random_tensor({5, 9}, seed, std::pow(10.0, seed - 5)).cast<float>();
    auto n = ad::l2_normalize(g.constant(x));
    for (std::size_t r = 0; r < 5; ++r) {
      double ss = 0;
      for (float v : n.value().row(r)) ss += static_cast<double>(v) * v;
      EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
    }
  }
}

TEST(Properties, ForwardIsBitIdenticalAcrossRuns) {
  auto run = [] {
    ad::Graph<float> g(false);
    auto q = g.constant(random_tensor({2, 5, 8}, 1).cast<float>());
    auto k = g.constant(random_tensor({2, 6, 8}, 2).cast<float>());
    return ad::attention(q, k, k, 2).value();
  };
  EXPECT_EQ(run().storage(), run().storage());
}

TEST(Properties, ExposedOpsStayFinite) {
  ad::Graph<float> g(false);
  auto x = g.constant(random_tensor({3, 6}, 4, 50.0).cast<float>());
  for (const auto& t : {ad::softmax(x).value(), ad::log_softmax(x).value(), ad::gelu(x).value(),
                        ad::l2_normalize(x).value()}) {
    EXPECT_TRUE(t.all_finite());
  }
}
