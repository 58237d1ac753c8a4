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

#include "edit3k/recommend.hpp"

using namespace edit3k;

namespace {

synth::RenderConfig small_render() {
  synth::RenderConfig r;
  r.height = r.width = 16;
  return r;
}

RecBenchmark small_bench(std::size_t transitions, std::uint64_t seed) {
  RecBenchmarkConfig cfg;
  cfg.transitions = transitions;
  cfg.train_pairs = 6;
  cfg.eval_pairs = 2;
  cfg.render = small_render();
  cfg.seed = seed;
  return make_rec_benchmark(cfg);
}

}  // namespace

TEST(RecData, ContextExcludesTransitionWindow) {
  synth::RenderConfig rc;
  ASSERT_EQ(rc.frames, 16u);
  const std::vector<std::size_t> want{0, 1, 2, 3, 12, 13, 14, 15};
  EXPECT_EQ(context_frame_indices(rc), want);
}

TEST(RecData, DownsampleAveragesBlocks) {
  Tensor f({1, 4, 4, 3});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(i % 7);
  const auto d = downsample(f, 2);
  ASSERT_EQ(d.shape(), (Shape{1, 2, 2, 3}));
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t y = 2 * oy; y < 2 * oy + 2; ++y)
          for (std::size_t x = 2 * ox; x < 2 * ox + 2; ++x) s += f[(y * 4 + x) * 3 + c];
        EXPECT_NEAR(d[(oy * 2 + ox) * 3 + c], s / 4, 1e-6);
      }
  EXPECT_THROW(downsample(f, 3), std::invalid_argument);
}

TEST(RecData, BuildKeepsOnlyTransitions) {
  synth::DatasetConfig cfg;
  cfg.counts = {1, 1, 2, 1, 1, 1};
  cfg.pairs = 2;
  cfg.eval_pairs = 1;
  cfg.render = small_render();
  const auto root = std::filesystem::temp_directory_path() / "edit3k_rec_data";
  std::filesystem::remove_all(root);
  const auto ds = synth::build_dataset(cfg, root);
  const auto a = build_rec_dataset(ds), b = build_rec_dataset(ds);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(ds.component(a[i].transition_id).category, synth::Category::kTransition);
    EXPECT_EQ(a[i].context.shape(), (Shape{8, 4, 4, 3}));
    EXPECT_EQ(a[i].context.storage(), b[i].context.storage());
  }
}

TEST(RecBenchmark, HoldsOutOneTransitionPerFamily) {
  const auto b = small_bench(12, 1);
  std::set<int> fams;
  for (const auto& c : b.bank) fams.insert(transition_family(c));
  EXPECT_EQ(b.held_out.size(), fams.size());
  for (const auto& s : b.train) EXPECT_EQ(b.held_out.count(s.transition_id), 0u);
  EXPECT_EQ(b.eval.size(), 24u);
}

TEST(RecTrain, TableIsFrozen) {
  const auto b = small_bench(6, 2);
  std::vector<int> ids;
  for (const auto& c : b.bank) ids.push_back(c.id);
  const auto table = random_table(ids, 16, 3);
  RecConfig cfg;
  cfg.steps = 5;
  cfg.batch = 8;
  const auto before = table.rows.storage();
  const auto r = rec_train(b.train, table, cfg);
  for (const auto& s : r.steps) EXPECT_EQ(s.table_grad_norm, 0.0);
  EXPECT_EQ(table.rows.storage(), before);
}

TEST(RecTrain, SingleTransitionHasZeroLoss) {
  const auto b = small_bench(1, 1);
  RecConfig cfg;
  cfg.steps = 3;
  std::vector<RecSample> all = b.eval;
  const auto r = rec_train(all, random_table({b.bank[0].id}, 8, 1), cfg);
  for (const auto& s : r.steps) EXPECT_NEAR(s.loss, 0.0, 1e-6);
}

TEST(RecTrain, LossDecreasesOnToyTransitions) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    RecBenchmarkConfig bc;
    bc.transitions = 8;
    bc.train_pairs = 8;
    bc.eval_pairs = 1;
    bc.palette_bias = 1.0;
    bc.render = small_render();
    auto b = make_rec_benchmark(bc);
    std::vector<int> ids;
    for (const auto& c : b.bank) ids.push_back(c.id);
    RecConfig cfg;
    cfg.steps = 50;
    cfg.batch = 16;
    cfg.seed = seed;
    const auto r = rec_train(b.train, random_table(ids, 16, seed), cfg);
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      head += r.steps[i].loss;
      tail += r.steps[45 + i].loss;
    }
    EXPECT_LT(tail, head) << "seed " << seed;
  }
}

TEST(RecEval, PerfectScorerAndErrors) {
  const auto m = rec_metrics_from_ranks({1, 1, 1});
  EXPECT_DOUBLE_EQ(m.r1, 1.0);
  EXPECT_DOUBLE_EQ(m.mean_rank, 1.0);
  const auto k = rec_metrics_from_ranks({1, 3, 11});
  EXPECT_DOUBLE_EQ(k.r5, 2.0 / 3);
  EXPECT_DOUBLE_EQ(k.mean_rank, 5.0);
  Recommender model;
  EXPECT_THROW(rec_eval(model, {}, TransitionTable{}), std::invalid_argument);
}

TEST(RecEval, UniformRandomScorerMeanRank) {
  for (std::size_t n : {12u, 30u}) {
    Rng rng(n);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
    const std::size_t trials = 10000;
    std::vector<std::size_t> ranks;
    for (std::size_t t = 0; t < trials; ++t) {
      std::vector<double> s(n);
      for (auto& v : s) v = rng.uniform();
      ranks.push_back(rank_of(s, ids, rng.index(n)));
    }
    const double expect = (n + 1) / 2.0;
    const double sigma = std::sqrt((static_cast<double>(n) * n - 1) / 12.0 / trials);
    EXPECT_NEAR(mean_rank(ranks), expect, 3 * sigma) << "N=" << n;
  }
}
