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
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "edit3k/dataset.hpp"

using namespace edit3k;
using namespace edit3k::synth;

namespace {

double mean_abs_diff(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return s / static_cast<double>(a.size());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

MaterialPair test_pair(int id = 0) {
  return make_material_pairs(static_cast<std::size_t>(id) + 1, 5).at(static_cast<std::size_t>(id));
}

EditComponent make_component(Category c, ComponentParams p) {
  EditComponent e;
  e.category = c;
  e.params = std::move(p);
  return e;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("edit3k_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Material, StaticIsConstantOverTime) {
  const auto m = gen_material(1, MaterialKind::kStatic);
  const auto f0 = render_material(m, 0.0, 32, 32), f5 = render_material(m, 5.0, 32, 32);
  EXPECT_EQ(f0.storage(), f5.storage());
}

TEST(Material, MovingClipVaries) {
  const auto m = gen_material(1, MaterialKind::kMoving);
  const auto f0 = render_material(m, 0.0, 32, 32), f5 = render_material(m, 5.0, 32, 32);
  EXPECT_GT(mean_abs_diff(f0.data(), f5.data()), 1e-3);
}

TEST(Material, DeterministicAndInUnitRange) {
  for (auto kind : {MaterialKind::kStatic, MaterialKind::kMoving}) {
    const auto a = render_material(gen_material(1, kind), 0.7, 24, 24);
    const auto b = render_material(gen_material(1, kind), 0.7, 24, 24);
    EXPECT_EQ(a.storage(), b.storage());
    for (float v : a.data()) {
      EXPECT_GE(v, 0.f);
      EXPECT_LE(v, 1.f);
    }
  }
}

TEST(ComponentBank, CountContract) {
  const auto bank = gen_component_bank(std::map<std::string, std::size_t>{{"filter", 2}}, 3);
  ASSERT_EQ(bank.size(), 2u);
  for (const auto& c : bank) EXPECT_EQ(c.category, Category::kFilter);
}

TEST(ComponentBank, PaperScaleCountsTotal) {
  const auto bank = gen_component_bank(CategoryCounts{888, 176, 204, 228, 1000, 598}, 1);
  EXPECT_EQ(bank.size(), 3094u);
  std::array<std::size_t, kNumCategories> seen{};
  for (const auto& c : bank) ++seen[static_cast<std::size_t>(c.category)];
  EXPECT_EQ(seen, (std::array<std::size_t, kNumCategories>{888, 176, 204, 228, 1000, 598}));
}

TEST(ComponentBank, DeterministicAndDistinct) {
  const CategoryCounts counts{4, 4, 4, 4, 4, 4};
  const auto a = gen_component_bank(counts, 9), b = gen_component_bank(counts, 9);
  ASSERT_EQ(a.size(), b.size());
  std::set<std::string> descriptions;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(describe(a[i]), describe(b[i]));
    EXPECT_EQ(a[i].params, b[i].params);
    EXPECT_EQ(a[i].params.index(), static_cast<std::size_t>(a[i].category));
    descriptions.insert(describe(a[i]));
  }
  EXPECT_EQ(descriptions.size(), a.size());
}

TEST(ComponentBank, RejectsUnknownCategory) {
  EXPECT_THROW(gen_component_bank(std::map<std::string, std::size_t>{{"lens_flare", 1}}, 1),
               std::invalid_argument);
}

TEST(Render, IdentityFilterLeavesMaterialUntouched) {
  const auto pair = test_pair();
  const RenderConfig cfg;
  const auto v = render_video(pair, make_component(Category::kFilter, FilterParams{}), cfg);
  const std::size_t fsz = cfg.height * cfg.width * 3;
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const double t = cfg.frame_time(i);
    const auto raw = t < 2.0 ? render_material(pair.a, t, cfg.height, cfg.width)
                             : render_material(pair.b, t - 2.0, cfg.height, cfg.width);
    for (std::size_t j = 0; j < fsz; ++j) ASSERT_NEAR(v.frames[i * fsz + j], raw[j], 1e-6);
  }
}

TEST(Render, CrossfadeMidpointIsEvenBlend) {
  const auto pair = test_pair();
  const RenderConfig cfg;
  TransitionParams tp;
  tp.kind = TransitionKind::kCrossfade;
  const auto comp = make_component(Category::kTransition, tp);
  const auto frame = render_frame(pair, comp, 2.0, cfg);
  const auto a = render_material(pair.a, 2.0, cfg.height, cfg.width);
  const auto b = render_material(pair.b, 1.0, cfg.height, cfg.width);
  for (std::size_t j = 0; j < frame.size(); ++j) ASSERT_NEAR(frame[j], 0.5 * a[j] + 0.5 * b[j], 1e-6);
}

TEST(Render, TransitionFrameLayout) {
  const auto pair = test_pair(1);
  const RenderConfig cfg;
  TransitionParams tp;
  tp.kind = TransitionKind::kWipe;
  const auto comp = make_component(Category::kTransition, tp);
  for (std::size_t i = 0; i < 16; ++i) {
    const double t = cfg.frame_time(i);
    const auto f = render_frame(pair, comp, t, cfg);
    if (i <= 3) {
      EXPECT_EQ(f.storage(), render_material(pair.a, t, cfg.height, cfg.width).storage()) << i;
      EXPECT_FALSE(in_transition_window(t));
    } else if (i >= 12) {
      EXPECT_EQ(f.storage(), render_material(pair.b, t - 1.0, cfg.height, cfg.width).storage()) << i;
      EXPECT_FALSE(in_transition_window(t));
    } else {
      EXPECT_TRUE(in_transition_window(t)) << i;
    }
  }
}

TEST(Render, UniformTimestampsOverFourSeconds) {
  const RenderConfig cfg;
  for (std::size_t i = 0; i < cfg.frames; ++i) EXPECT_DOUBLE_EQ(cfg.frame_time(i), 0.25 * static_cast<double>(i));
}

TEST(Render, RejectsBadResolution) {
  RenderConfig cfg;
  cfg.height = 4;
  EXPECT_THROW(render_video(test_pair(), make_component(Category::kFilter, FilterParams{}), cfg),
               std::invalid_argument);
}

TEST(Render, WipeDirectionsMirror) {
  const auto pair = test_pair();
  TransitionParams l, r;
  l.kind = r.kind = TransitionKind::kWipe;
  l.direction = Direction::kLeft;
  r.direction = Direction::kRight;
  const auto a = render_material(pair.a, 0, 32, 32), b = render_material(pair.b, 0, 32, 32);
  const auto fl = apply_transition(a, b, l, 0.3), fr = apply_transition(a, b, r, 0.3);
  // Left wipe reveals B at the right edge first; right wipe at the left edge.
  EXPECT_NEAR(fl[(16 * 32 + 31) * 3], b[(16 * 32 + 31) * 3], 1e-6);
  EXPECT_NEAR(fl[(16 * 32 + 0) * 3], a[(16 * 32 + 0) * 3], 1e-6);
  EXPECT_NEAR(fr[(16 * 32 + 0) * 3], b[(16 * 32 + 0) * 3], 1e-6);
  EXPECT_NEAR(fr[(16 * 32 + 31) * 3], a[(16 * 32 + 31) * 3], 1e-6);
}

TEST(Render, SameCategoryComponentsAreDistinguishable) {
  const auto bank = gen_component_bank(CategoryCounts{4, 4, 4, 4, 4, 4}, 1);
  const auto pair = test_pair(2);
  RenderConfig cfg;
  std::map<int, Tensor> videos;
  for (const auto& c : bank) videos.emplace(c.id, render_video(pair, c, cfg).frames);
  for (const auto& x : bank)
    for (const auto& y : bank) {
      if (x.id >= y.id || x.category != y.category) continue;
      EXPECT_GT(mean_abs_diff(videos.at(x.id).data(), videos.at(y.id).data()), 1e-3)
          << describe(x) << " vs " << describe(y);
    }
}

TEST(Render, FramesStayInUnitRange) {
  const auto bank = gen_component_bank(CategoryCounts{1, 1, 1, 1, 1, 1}, 4);
  RenderConfig cfg;
  cfg.height = cfg.width = 32;
  for (const auto& c : bank) {
    const auto v = render_video(test_pair(1), c, cfg);
    EXPECT_EQ(v.frames.dim(0), cfg.frames);
    for (float x : v.frames.data()) {
      ASSERT_GE(x, 0.f);
      ASSERT_LE(x, 1.f);
    }
  }
}

TEST(Sticker, BoundingBoxCoversSprite) {
  const auto bank = gen_component_bank(std::map<std::string, std::size_t>{{"sticker", 4}}, 2);
  const auto pair = test_pair();
  RenderConfig cfg;
  for (const auto& c : bank) {
    const auto& sp = std::get<StickerParams>(c.params);
    const double t = 1.25;
    const auto with = render_frame(pair, c, t, cfg);
    const auto raw = render_material(pair.a, t, cfg.height, cfg.width);
    const auto box = sticker_bbox(sp, t, cfg.height, cfg.width);
    ASSERT_TRUE(box.has_value());
    EXPECT_LT(static_cast<double>(box->area()), 0.1 * cfg.height * cfg.width);
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const std::size_t i = (y * cfg.width + x) * 3;
        const bool changed = with[i] != raw[i] || with[i + 1] != raw[i + 1] || with[i + 2] != raw[i + 2];
        if (changed) EXPECT_TRUE(box->contains(x + 0.5, y + 0.5)) << describe(c) << " at " << x << "," << y;
      }
  }
}

TEST(Dataset, ManifestArithmeticAndSplits) {
  DatasetConfig cfg;
  const auto ds = assemble_dataset(cfg);
  EXPECT_EQ(ds.manifest.records.size(), 192u);
  std::set<std::pair<int, int>> combos;
  std::set<int> train, eval;
  for (const auto& r : ds.manifest.records) {
    combos.insert({r.component_id, r.pair_id});
    (r.openset_split == "train" ? train : eval).insert(r.component_id);
    EXPECT_EQ(r.split, r.pair_id >= 6 ? "eval" : "train");
  }
  EXPECT_EQ(combos.size(), 192u);
  EXPECT_EQ(train.size(), 12u);
  EXPECT_EQ(eval.size(), 12u);
  for (int id : train) EXPECT_EQ(eval.count(id), 0u);
}

TEST(Dataset, LabelsIndependentOfPairing) {
  DatasetConfig a, b;
  b.pairing_seed = a.pairing_seed + 100;
  const auto da = assemble_dataset(a), db = assemble_dataset(b);
  ASSERT_EQ(da.manifest.records.size(), db.manifest.records.size());
  for (std::size_t i = 0; i < da.manifest.records.size(); ++i) {
    EXPECT_EQ(da.manifest.records[i].component_id, db.manifest.records[i].component_id);
    EXPECT_EQ(da.manifest.records[i].category, db.manifest.records[i].category);
  }
}

TEST(Dataset, ManifestRoundTripAndErrors) {
  const auto ds = assemble_dataset(DatasetConfig{});
  std::stringstream ss;
  write_manifest(ss, ds.manifest);
  const auto back = read_manifest(ss);
  ASSERT_EQ(back.records.size(), ds.manifest.records.size());
  EXPECT_EQ(back.records[17].path, ds.manifest.records[17].path);
  std::stringstream bad("0\t1\tfilter\n");
  try {
    read_manifest(bad, "m.tsv");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("m.tsv:1"), std::string::npos);
  }
}

TEST(Dataset, RebuildIsByteIdentical) {
  DatasetConfig cfg;
  cfg.counts = {1, 1, 1, 1, 1, 1};
  cfg.pairs = 3;
  cfg.eval_pairs = 1;
  cfg.render.height = cfg.render.width = 16;
  cfg.render.frames = 4;
  const auto r1 = temp_dir("rebuild1"), r2 = temp_dir("rebuild2");
  const auto d1 = build_dataset(cfg, r1);
  build_dataset(cfg, r2);
  validate_manifest(d1.manifest, r1);
  EXPECT_EQ(slurp(r1 / "manifest.tsv"), slurp(r2 / "manifest.tsv"));
  for (const auto& r : d1.manifest.records) EXPECT_EQ(slurp(r1 / r.path), slurp(r2 / r.path));
  const auto loaded = load_dataset(r1);
  EXPECT_EQ(loaded.manifest.records.size(), 18u);
  std::filesystem::remove(r1 / loaded.manifest.records[3].path);
  EXPECT_THROW(validate_manifest(loaded.manifest, r1), std::runtime_error);
  std::filesystem::remove_all(r1);
  std::filesystem::remove_all(r2);
}
