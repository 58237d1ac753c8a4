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

#include "edit3k/contrastive.hpp"
#include "edit3k/gradcheck.hpp"

using namespace edit3k;
using G = ad::Graph<double>;

namespace {

using Rows = std::vector<std::vector<double>>;

// Scalar reference implementations, written without the tensor library.
double oracle_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double oracle_nll(const std::vector<double>& logits, std::size_t target) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[target] - mx - std::log(z));
}

double oracle_batch(const Rows& q, const Rows& k, double tau) {
  double s = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> l;
    for (const auto& kj : k) l.push_back(oracle_dot(q[i], kj) / tau);
    s += oracle_nll(l, i);
  }
  return s / static_cast<double>(q.size());
}

double oracle_queue(const Rows& q, const std::vector<int>& ids, const std::map<int, std::vector<double>>& refs,
                    double tau) {
  double s = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!refs.count(ids[i])) continue;
    std::vector<double> l;
    std::size_t target = 0;
    for (const auto& [id, r] : refs) {
      if (id == ids[i]) target = l.size();
      l.push_back(oracle_dot(q[i], r) / tau);
    }
    s += oracle_nll(l, target);
    ++used;
  }
  return used ? s / static_cast<double>(used) : 0.0;
}

std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

BasicTensor<double> to_tensor(const Rows& rows) {
  BasicTensor<double> t({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[0].size(); ++j) t[i * rows[0].size() + j] = rows[i][j];
  return t;
}

double batch_loss(const Rows& q, const Rows& k, double tau = kDefaultTemperature) {
  G g(false);
  return loss_batch(g.constant(to_tensor(q)), g.constant(to_tensor(k)), tau).value()[0];
}

References make_refs(const std::map<int, std::vector<double>>& rows) {
  References r;
  for (const auto& [id, v] : rows) {
    r.dim = v.size();
    r.rows[id] = std::vector<float>(v.begin(), v.end());
  }
  return r;
}

}  // namespace

TEST(LossBatch, SingletonBatchIsExactlyZero) {
  EXPECT_EQ(batch_loss({{0.6, 0.8}}, {{1.0, 0.0}}), 0.0);
}

TEST(LossBatch, TwoOrthogonalPairsWorkedExample) {
  const double l = batch_loss({{1, 0}, {0, 1}}, {{1, 0}, {0, 1}});
  EXPECT_NEAR(l, std::log(1 + std::exp(-1 / 0.7)), 1e-12);
  EXPECT_NEAR(l, 0.2148, 5e-4);
}

TEST(LossBatch, DuplicatingTheBatchIncreasesLoss) {
  const Rows q{{1, 0}, {0, 1}};
  EXPECT_GT(batch_loss({q[0], q[1], q[0], q[1]}, {q[0], q[1], q[0], q[1]}), batch_loss(q, q));
}

TEST(LossBatch, RejectsUnnormalizedRows) {
  EXPECT_THROW(batch_loss({{1, 1}}, {{1, 0}}), std::invalid_argument);
  EXPECT_THROW(batch_loss({{1, 0}}, {{1, 0}}, 0.0), std::invalid_argument);
}

TEST(LossBatch, MatchesOracleOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(6), d = 2 + rng.index(6);
    Rows q, k;
    for (std::size_t i = 0; i < n; ++i) {
      q.push_back(random_unit(rng, d));
      k.push_back(random_unit(rng, d));
    }
    const double tau = trial % 2 ? kDefaultTemperature : 0.1 + rng.uniform();
    const double l = batch_loss(q, k, tau);
    EXPECT_NEAR(l, oracle_batch(q, k, tau), 1e-6);
    EXPECT_GE(l, 0.0);
  }
}

TEST(LossBatch, InvariantToJointRowPermutation) {
  Rng rng(2);
  Rows q, k;
  for (int i = 0; i < 5; ++i) {
    q.push_back(random_unit(rng, 4));
    k.push_back(random_unit(rng, 4));
  }
  Rows qp{q[3], q[0], q[4], q[1], q[2]}, kp{k[3], k[0], k[4], k[1], k[2]};
  EXPECT_NEAR(batch_loss(q, k), batch_loss(qp, kp), 1e-12);
}

TEST(LossBatch, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Rows k;
  for (int i = 0; i < 3; ++i) k.push_back(random_unit(rng, 4));
  BasicTensor<double> x({3, 4});
  for (auto& v : x.storage()) v = rng.normal();
  const double err = grad_check(
      [&](G& g, ad::Var<double> raw) { return loss_batch(ad::l2_normalize(raw), g.constant(to_tensor(k))); }, x,
      1e-6);
  EXPECT_LT(err, 1e-3);
}

TEST(LossQueue, SingleReferenceIsZero) {
  G g(false);
  auto q = g.constant(to_tensor({{0.6, 0.8}, {1, 0}}));
  EXPECT_EQ(loss_queue(q, {3, 3}, make_refs({{3, {0, 1}}})).value()[0], 0.0);
}

TEST(LossQueue, ColdStartIsZeroWithoutError) {
  G g(false);
  auto q = g.constant(to_tensor({{1, 0}}));
  EXPECT_EQ(loss_queue(q, {0}, References{}).value()[0], 0.0);
}

TEST(LossQueue, WorkedExampleMatchesBatchForm) {
  G g(false);
  auto q = g.constant(to_tensor({{1, 0}}));
  EXPECT_NEAR(loss_queue(q, {1}, make_refs({{1, {1, 0}}, {2, {0, 1}}})).value()[0],
              std::log(1 + std::exp(-1 / 0.7)), 1e-7);
}

TEST(LossQueue, MatchesOracleOnRandomInputs) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(5), d = 2 + rng.index(5);
    std::map<int, std::vector<double>> refs;
    for (int id = 0; id < 6; ++id)
      if (rng.uniform() < 0.6) {
        auto r = random_unit(rng, d);
        std::vector<float> f(r.begin(), r.end());
        normalize_in_place(f);
        refs[id] = std::vector<double>(f.begin(), f.end());
      }
    Rows q;
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) {
      q.push_back(random_unit(rng, d));
      ids.push_back(static_cast<int>(rng.index(6)));
    }
    G g(false);
    const double got = loss_queue(g.constant(to_tensor(q)), ids, make_refs(refs)).value()[0];
    EXPECT_NEAR(got, oracle_queue(q, ids, refs, kDefaultTemperature), 1e-6) << "trial " << trial;
  }
}

TEST(LossTotal, SumsTerms) {
  G g(false);
  auto lb = g.constant(BasicTensor<double>({1}, {0.25}));
  auto lq = g.constant(BasicTensor<double>({1}, {0.5}));
  EXPECT_DOUBLE_EQ(loss_total(lb, std::optional(lq)).value()[0], 0.75);
  EXPECT_DOUBLE_EQ(loss_total(lb, std::optional<ad::Var<double>>{}).value()[0], 0.25);
  auto zero = g.constant(BasicTensor<double>({1}));
  EXPECT_EQ(loss_total(zero, std::optional(zero)).value()[0], 0.0);
}

TEST(QueueSet, KeepsLastFiveInOrder) {
  QueueSet qs(2, {{7, 0}});
  for (int i = 1; i <= 6; ++i) qs.push(7, std::vector<float>{static_cast<float>(i), 1});
  const auto& e = qs.entries(7);
  ASSERT_EQ(e.size(), kQueueCapacity);
  EXPECT_EQ(kQueueCapacity, 5u);
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double x = static_cast<double>(i + 2);
    EXPECT_NEAR(e[i][0], x / std::hypot(x, 1.0), 1e-7);
  }
}

TEST(QueueSet, EntriesAreUnitNorm) {
  Rng rng(3);
  QueueSet qs(8, {{0, 0}, {1, 1}});
  for (int i = 0; i < 40; ++i) {
    std::vector<float> v(8);
    for (auto& x : v) x = static_cast<float>(rng.normal(0, 1 + 100 * rng.uniform()));
    qs.push(i % 2, v);
  }
  for (int id : {0, 1})
    for (const auto& e : qs.entries(id)) {
      double n = 0;
      for (float x : e) n += static_cast<double>(x) * x;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
}

TEST(QueueSet, NormalizesOnPush) {
  QueueSet qs(3, {{0, 0}});
  qs.push(0, std::vector<float>{3, 4, 0});
  EXPECT_FLOAT_EQ(qs.entries(0)[0][0], 0.6f);
  EXPECT_FLOAT_EQ(qs.entries(0)[0][1], 0.8f);
  EXPECT_FLOAT_EQ(qs.entries(0)[0][2], 0.0f);
}

TEST(QueueSet, RejectsBadPushes) {
  QueueSet qs(2, {{0, 0}});
  EXPECT_THROW(qs.push(5, std::vector<float>{1, 0}), std::out_of_range);
  EXPECT_THROW(qs.push(0, std::vector<float>{1, 0, 0}), std::invalid_argument);
  EXPECT_THROW(qs.push(0, std::vector<float>{NAN, 0}), std::invalid_argument);
  EXPECT_THROW(qs.push(0, std::vector<float>{0, 0}), std::invalid_argument);
}

TEST(References, MeanThenNormalize) {
  QueueSet qs(2, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  qs.push(0, std::vector<float>{1, 0});
  qs.push(0, std::vector<float>{0, 1});
  qs.push(1, std::vector<float>{1, 0});
  qs.push(1, std::vector<float>{-1, 0});
  qs.push(2, std::vector<float>{0, 2});
  const auto r = qs.references();
  ASSERT_TRUE(r.has(0));
  EXPECT_NEAR(r.rows.at(0)[0], 1 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(r.rows.at(0)[1], 1 / std::sqrt(2.0), 1e-7);
  EXPECT_FALSE(r.has(1));
  EXPECT_FLOAT_EQ(r.rows.at(2)[1], 1.0f);
  EXPECT_FALSE(r.has(3));
}

TEST(QueueSet, SnapshotBeforePushOrdering) {
  // The loss must be computed from references captured before this step's
  // embeddings enter the queues.
  QueueSet qs(2, {{0, 0}, {1, 1}});
  qs.push(0, std::vector<float>{0, 1});
  qs.push(1, std::vector<float>{1, 0});
  const Rows q{{1, 0}};
  const auto before = qs.references();
  G g(false);
  const double pre = loss_queue(g.constant(to_tensor(q)), {0}, before).value()[0];
  qs.push(0, std::vector<float>{1, 0});
  const auto after = qs.references();
  const double post = loss_queue(g.constant(to_tensor(q)), {0}, after).value()[0];
  EXPECT_NEAR(pre, oracle_queue(q, {0}, {{0, {0, 1}}, {1, {1, 0}}}, kDefaultTemperature), 1e-7);
  EXPECT_NE(pre, post);
  EXPECT_NE(before.rows.at(0), after.rows.at(0));
}

TEST(Centers, SixTypesMeansAndColdStart) {
  const auto refs = make_refs({{0, {1, 0}}, {1, {0, 1}}, {2, {0, 1}}});
  const auto c = centers_six_types(refs, {{0, 2}, {1, 2}, {2, 4}});
  ASSERT_EQ(c.shape(), (Shape{6, 2}));
  EXPECT_NEAR(c[2 * 2 + 0], 1 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(c[2 * 2 + 1], 1 / std::sqrt(2.0), 1e-7);
  EXPECT_FLOAT_EQ(c[4 * 2 + 1], 1.0f);
  for (std::size_t r : {0u, 1u, 3u, 5u}) {
    EXPECT_EQ(c[r * 2], 0.0f);
    EXPECT_EQ(c[r * 2 + 1], 0.0f);
  }
  References empty;
  empty.dim = 2;
  const auto z = centers_six_types(empty, {});
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Centers, RowsUnitOrZero) {
  Rng rng(4);
  std::map<int, std::vector<double>> rows;
  std::map<int, int> cats;
  for (int id = 0; id < 20; ++id) {
    rows[id] = random_unit(rng, 5);
    cats[id] = static_cast<int>(rng.index(4));
  }
  const auto c = centers_six_types(make_refs(rows), cats);
  for (std::size_t r = 0; r < 6; ++r) {
    double n = 0;
    for (float v : c.row(r)) n += static_cast<double>(v) * v;
    EXPECT_TRUE(n == 0.0 || std::abs(std::sqrt(n) - 1) < 1e-6);
  }
}

TEST(Centers, KMeansRecoversSeparatedClusters) {
  Rng rng(9);
  std::map<int, std::vector<double>> rows;
  std::vector<double> m0(2, 0), m1(2, 0);
  for (int id = 0; id < 20; ++id) {
    const double a = (id < 10 ? 0.0 : std::acos(0.0)) + rng.normal(0, 0.01);
    rows[id] = {std::cos(a), std::sin(a)};
    auto& m = id < 10 ? m0 : m1;
    m[0] += std::cos(a) / 10;
    m[1] += std::sin(a) / 10;
  }
  const auto c = centers_kmeans(make_refs(rows), 2, 1);
  auto near = [&](const std::vector<double>& m) {
    const double n = std::hypot(m[0], m[1]);
    for (std::size_t r = 0; r < 2; ++r)
      if (std::hypot(c[r * 2] - m[0] / n, c[r * 2 + 1] - m[1] / n) < 0.01) return true;
    return false;
  };
  EXPECT_TRUE(near(m0));
  EXPECT_TRUE(near(m1));
  EXPECT_THROW(centers_kmeans(make_refs({{0, {1, 0}}}), 2, 1), std::invalid_argument);
}
