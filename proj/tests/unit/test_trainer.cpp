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
#include <fstream>
#include <sstream>

#include "edit3k/trainer.hpp"

using namespace edit3k;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("edit3k_trainer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

synth::DatasetConfig tiny_data() {
  synth::DatasetConfig cfg;
  cfg.counts = {2, 2, 2, 2, 2, 2};
  cfg.pairs = 4;
  cfg.eval_pairs = 1;
  cfg.render.height = cfg.render.width = 16;
  cfg.render.frames = 4;
  return cfg;
}

const synth::Dataset& tiny_dataset() {
  static const synth::Dataset ds = synth::build_dataset(tiny_data(), temp_dir("data"));
  return ds;
}

ModelConfig tiny_model() {
  auto c = ModelConfig::micro();
  c.height = c.width = 16;
  c.frames = 4;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_components = 4;
  t.epochs = 1;
  t.validate = false;
  return t;
}

}  // namespace

TEST(CosineLr, EndpointsMidpointAndMonotone) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-15);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), 1e-15);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, 1e-3, 1e-5), cosine_lr(s - 1, 100, 1e-3, 1e-5));
  EXPECT_THROW(cosine_lr(0, 0, 1, 0), std::invalid_argument);
  EXPECT_THROW(cosine_lr(5, 4, 1, 0), std::invalid_argument);
}

TEST(SampleBatch, DistinctComponentsOnDistinctPairs) {
  std::map<int, std::vector<int>> pairs_of;
  for (int id = 0; id < 10; ++id) pairs_of[id] = {0, 1, 2, 3};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto b = sample_batch(pairs_of, 8, rng);
    ASSERT_EQ(b.size(), 8u);
    std::set<int> ids;
    for (const auto& it : b) {
      ids.insert(it.component);
      EXPECT_NE(it.pair_q, it.pair_k);
      EXPECT_EQ(it.pair_q, it.pair_q2);
      EXPECT_EQ(it.pair_k, it.pair_k2);
    }
    EXPECT_EQ(ids.size(), 8u);
  }
}

TEST(SampleBatch, SharedPairsAndMixing) {
  std::map<int, std::vector<int>> pairs_of;
  for (int id = 0; id < 6; ++id) pairs_of[id] = {0, 1, 2, 3, 4};
  Rng rng(3);
  const auto b = sample_batch(pairs_of, 6, rng, {1, 2}, true);
  for (const auto& it : b) {
    EXPECT_EQ(it.pair_q, b[0].pair_q);
    EXPECT_EQ(it.pair_k, b[0].pair_k);
    if (it.component != 1 && it.component != 2) {
      EXPECT_EQ(it.pair_q2, it.pair_q);
      EXPECT_EQ(it.pair_k2, it.pair_k);
    }
    EXPECT_NE(it.pair_q2, it.pair_k2);
  }
}

TEST(SampleBatch, Errors) {
  Rng rng(1);
  EXPECT_THROW(sample_batch({{0, {0, 1}}, {1, {0, 1}}}, 3, rng), std::invalid_argument);
  EXPECT_THROW(sample_batch({{0, {0}}, {1, {0, 1}}}, 1, rng), std::invalid_argument);
  EXPECT_THROW(sample_batch({{0, {0, 1}}, {1, {2, 3}}}, 2, rng, {}, true), std::invalid_argument);
}

TEST(VideoStore, StackSlotsSplicesAtSlotBoundary) {
  const auto& ds = tiny_dataset();
  VideoStore store(ds);
  const auto out = store.stack_slots({{0, 0}, {1, 1}}, {{0, 2}, {1, 1}});
  const auto& a = store.get(0, 0);
  const auto& b = store.get(0, 2);
  const auto& c = store.get(1, 1);
  const std::size_t fsz = a.size() / 4, n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(out[i], (i < 2 * fsz ? a : b)[i]);
    EXPECT_EQ(out[n + i], c[i]);
  }
}

TEST(TrainStep, ColdStartQueuesAndShapeCheck) {
  const auto& ds = tiny_dataset();
  const auto split = make_train_split(ds, false);
  auto s = init_state(tiny_model(), tiny_train(), split.categories, 5);
  for (float v : s.guidance.data()) EXPECT_EQ(v, 0.0f);
  VideoStore store(ds);
  std::vector<std::pair<int, int>> keys{{0, 0}, {3, 0}, {0, 1}, {3, 1}};
  const auto rep = train_step(s, store.stack(keys), {0, 3}, 1e-3);
  ASSERT_TRUE(rep.loss_queue.has_value());
  EXPECT_EQ(*rep.loss_queue, 0.0);
  EXPECT_EQ(s.queues.entries(0).size(), 2u);
  EXPECT_EQ(s.queues.entries(3).size(), 2u);
  EXPECT_EQ(s.step, 1u);
  EXPECT_THROW(train_step(s, store.stack(keys), {0}, 1e-3), std::invalid_argument);
}

TEST(Fit, ResumeMatchesStraightRunByteForByte) {
  const auto& ds = tiny_dataset();
  const auto straight = temp_dir("straight"), parted = temp_dir("parted");
  fit(ds, tiny_model(), tiny_train(), {straight, std::nullopt, {}});
  auto first = tiny_train();
  first.stop_after = 2;
  fit(ds, tiny_model(), first, {parted, std::nullopt, {}});
  fit(ds, tiny_model(), tiny_train(), {parted, (parted / "checkpoint.ckpt").string(), {}});
  EXPECT_EQ(slurp(straight / "checkpoint.ckpt"), slurp(parted / "checkpoint.ckpt"));
  EXPECT_EQ(slurp(straight / "metrics.csv"), slurp(parted / "metrics.csv"));
}

TEST(Fit, ReloadAndResaveIsByteIdentical) {
  const auto& ds = tiny_dataset();
  const auto dir = temp_dir("resave");
  fit(ds, tiny_model(), tiny_train(), {dir, std::nullopt, {}});
  save_state((dir / "again.ckpt").string(), load_state((dir / "checkpoint.ckpt").string()));
  EXPECT_EQ(slurp(dir / "checkpoint.ckpt"), slurp(dir / "again.ckpt"));
}

TEST(Fit, IndependentRunsAreIdentical) {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_train();
  cfg.stop_after = 3;
  const auto a = fit(ds, tiny_model(), cfg), b = fit(ds, tiny_model(), cfg);
  ASSERT_EQ(a.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.metrics[i].loss_batch, b.metrics[i].loss_batch);
}

TEST(Fit, LossDecreasesOnToyData) {
  const auto& ds = tiny_dataset();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto cfg = tiny_train();
    cfg.epochs = 12;
    cfg.tau = 0.2;
    cfg.seed = seed;
    const auto r = fit(ds, tiny_model(), cfg);
    const std::size_t n = r.metrics.size(), w = 10;
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < w; ++i) {
      head += r.metrics[i].loss_batch;
      tail += r.metrics[n - w + i].loss_batch;
    }
    EXPECT_LT(tail, head) << "seed " << seed;
  }
}

TEST(TrainConfig, KeyValueRoundTripAndValidation) {
  TrainConfig c;
  c.centers = "kmeans";
  c.tau = 0.3;
  KeyValues kv;
  to_kv(c, kv);
  const auto back = train_config_from_kv(kv);
  EXPECT_EQ(back.centers, "kmeans");
  EXPECT_DOUBLE_EQ(back.tau, 0.3);
  c.centers = "median";
  EXPECT_THROW(c.validate_config(), std::invalid_argument);
  c = TrainConfig{};
  c.tau = 0;
  EXPECT_THROW(c.validate_config(), std::invalid_argument);
}
