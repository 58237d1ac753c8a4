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


#pragma once

// Dataset assembly: material pairs x component bank -> EDT3 frame files plus
// a tab-separated manifest.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edit3k/kv.hpp"
#include "edit3k/synth.hpp"

namespace edit3k::synth {

struct DatasetConfig {
  CategoryCounts counts{4, 4, 4, 4, 4, 4};
  std::size_t pairs = 8;
  std::size_t eval_pairs = 2;  // the last `eval_pairs` pairs are held out
  RenderConfig render;
  std::uint64_t seed = 1;  // materials and bank
  std::uint64_t pairing_seed = 7;
  std::uint64_t split_seed = 11;
  bool export_ppm = false;
};

inline void to_kv(const DatasetConfig& c, KeyValues& kv) {
  std::string counts;
  for (std::size_t i = 0; i < kNumCategories; ++i)
    counts += (i ? "," : "") + std::to_string(c.counts[i]);
  kv.set("data.counts", counts);
  kv.set("data.pairs", c.pairs);
  kv.set("data.eval_pairs", c.eval_pairs);
  kv.set("data.height", c.render.height);
  kv.set("data.width", c.render.width);
  kv.set("data.frames", c.render.frames);
  kv.set("data.text", c.render.text);
  kv.set("data.seed", c.seed);
  kv.set("data.pairing_seed", c.pairing_seed);
  kv.set("data.split_seed", c.split_seed);
  kv.set("data.export_ppm", c.export_ppm);
}

inline DatasetConfig dataset_config_from_kv(const KeyValues& kv) {
  DatasetConfig c;
  auto counts = kv.get_list<std::size_t>("data.counts");
  if (counts.size() != kNumCategories) {
    throw std::invalid_argument("data.counts needs 6 comma-separated values (" +
                                std::string("video_effect,animation,transition,filter,sticker,text)"));
  }
  std::copy(counts.begin(), counts.end(), c.counts.begin());
  c.pairs = kv.get<std::size_t>("data.pairs");
  c.eval_pairs = kv.get<std::size_t>("data.eval_pairs");
  c.render.height = kv.get<std::size_t>("data.height");
  c.render.width = kv.get<std::size_t>("data.width");
  c.render.frames = kv.get<std::size_t>("data.frames");
  c.render.text = kv.get<std::string>("data.text");
  c.seed = kv.get<std::uint64_t>("data.seed");
  c.pairing_seed = kv.get<std::uint64_t>("data.pairing_seed");
  c.split_seed = kv.get<std::uint64_t>("data.split_seed");
  c.export_ppm = kv.get<bool>("data.export_ppm");
  return c;
}

struct ManifestRecord {
  int sample_id = 0;
  int component_id = 0;
  Category category = Category::kFilter;
  int pair_id = 0;
  std::string path;  // relative to the dataset root
  std::uint64_t seed = 0;
  std::size_t height = 0, width = 0, frames = 0;
  std::string split;          // train | eval (material pair held out)
  std::string openset_split;  // train | eval (component half)
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<int> component_ids() const {
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.component_id);
    return {ids.begin(), ids.end()};
  }
  std::vector<int> pair_ids() const {
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.pair_id);
    return {ids.begin(), ids.end()};
  }
  const ManifestRecord* find(int component, int pair) const {
    for (const auto& r : records)
      if (r.component_id == component && r.pair_id == pair) return &r;
    return nullptr;
  }
};

inline constexpr const char* kManifestHeader =
    "#sample_id\tcomponent_id\tcategory\tpair_id\tpath\tseed\tH\tW\tN_v\tsplit\topenset_split";

inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    os << r.sample_id << '\t' << r.component_id << '\t' << category_name(r.category) << '\t'
       << r.pair_id << '\t' << r.path << '\t' << r.seed << '\t' << r.height << '\t'
       << r.width << '\t' << r.frames << '\t' << r.split << '\t' << r.openset_split << '\n';
  }
}

inline DatasetManifest read_manifest(std::istream& is, const std::string& origin = "manifest") {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 11) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected 11 tab-separated fields, got " +
                               std::to_string(f.size()));
    }
    try {
      ManifestRecord r;
      r.sample_id = std::stoi(f[0]);
      r.component_id = std::stoi(f[1]);
      r.category = parse_category(f[2]);
      r.pair_id = std::stoi(f[3]);
      r.path = f[4];
      r.seed = std::stoull(f[5]);
      r.height = std::stoul(f[6]);
      r.width = std::stoul(f[7]);
      r.frames = std::stoul(f[8]);
      r.split = f[9];
      r.openset_split = f[10];
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

/// Two materials per pair; kinds alternate static / moving per pair.
inline std::vector<MaterialPair> make_material_pairs(std::size_t pairs, std::uint64_t seed) {
  std::vector<MaterialPair> out;
  for (std::size_t p = 0; p < pairs; ++p) {
    MaterialPair mp;
    mp.pair_id = static_cast<int>(p);
    const auto kind = (p % 2 == 0) ? MaterialKind::kStatic : MaterialKind::kMoving;
    mp.a = gen_material(derive_seed(seed, {0x50u, p, 0}), kind, static_cast<int>(2 * p));
    mp.b = gen_material(derive_seed(seed, {0x50u, p, 1}), kind, static_cast<int>(2 * p + 1));
    out.push_back(std::move(mp));
  }
  return out;
}

/// Component-level half/half split: ids shuffled with `seed`, first half train.
inline std::map<int, std::string> openset_split(const std::vector<int>& ids, std::uint64_t seed) {
  std::vector<int> order = ids;
  Rng rng(derive_seed(seed, {0x4F50454Eu}));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::map<int, std::string> split;
  for (std::size_t i = 0; i < order.size(); ++i)
    split[order[i]] = i < order.size() / 2 ? "train" : "eval";
  return split;
}

inline std::string sample_relpath(int component, int pair) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "samples/c%04d_p%03d.edt3", component, pair);
  return buf;
}

/// In-memory handle on a generated dataset.
struct Dataset {
  DatasetConfig config;
  std::vector<EditComponent> bank;
  std::vector<MaterialPair> pairs;
  DatasetManifest manifest;
  std::filesystem::path root;

  const EditComponent& component(int id) const {
    for (const auto& c : bank)
      if (c.id == id) return c;
    throw std::out_of_range("unknown component id " + std::to_string(id));
  }
  Tensor load_frames(const ManifestRecord& r) const { return edt3::load((root / r.path).string()); }
};

inline Dataset assemble_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  ds.bank = gen_component_bank(cfg.counts, cfg.seed);
  ds.pairs = make_material_pairs(cfg.pairs, derive_seed(cfg.seed, {cfg.pairing_seed}));
  if (ds.pairs.size() < 1 || cfg.pairs * 2 < 2) {
    throw std::invalid_argument("dataset: need at least 2 materials");
  }
  if (cfg.eval_pairs >= cfg.pairs) {
    throw std::invalid_argument("dataset: eval_pairs must leave at least one training pair");
  }
  std::vector<int> ids;
  for (const auto& c : ds.bank) ids.push_back(c.id);
  const auto osplit = openset_split(ids, cfg.split_seed);
  for (const auto& c : ds.bank) {
    for (const auto& p : ds.pairs) {
      ManifestRecord r;
      r.component_id = c.id;
      r.category = c.category;
      r.pair_id = p.pair_id;
      r.sample_id = c.id * static_cast<int>(cfg.pairs) + p.pair_id;
      r.path = sample_relpath(c.id, p.pair_id);
      r.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(c.id),
                                      static_cast<std::uint64_t>(p.pair_id)});
      r.height = cfg.render.height;
      r.width = cfg.render.width;
      r.frames = cfg.render.frames;
      r.split = static_cast<std::size_t>(p.pair_id) + cfg.eval_pairs >= cfg.pairs ? "eval" : "train";
      r.openset_split = osplit.at(c.id);
      ds.manifest.records.push_back(std::move(r));
    }
  }
  return ds;
}

/// Renders every manifest row to disk under `root` and writes manifest.tsv
/// and components.tsv. Existing files are overwritten.
inline Dataset build_dataset(const DatasetConfig& cfg, const std::filesystem::path& root) {
  Dataset ds = assemble_dataset(cfg);
  ds.root = root;
  std::error_code ec;
  std::filesystem::create_directories(root / "samples", ec);
  if (ec) throw std::runtime_error("cannot create " + (root / "samples").string() + ": " + ec.message());
  for (const auto& r : ds.manifest.records) {
    const auto& comp = ds.component(r.component_id);
    const auto& pair = ds.pairs.at(static_cast<std::size_t>(r.pair_id));
    VideoSample v = render_video(pair, comp, cfg.render, r.seed);
    const auto path = (root / r.path).string();
    edt3::save(path, v.frames);
    if (cfg.export_ppm) {
      const std::size_t fsz = cfg.render.height * cfg.render.width * 3;
      for (std::size_t i = 0; i < cfg.render.frames; ++i) {
        std::vector<float> f(v.frames.data().begin() + static_cast<std::ptrdiff_t>(i * fsz),
                             v.frames.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * fsz));
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_f%02zu.ppm", i);
        write_ppm(path.substr(0, path.size() - 5) + suffix,
                  Tensor({cfg.render.height, cfg.render.width, 3}, std::move(f)));
      }
    }
  }
  {
    std::ofstream os(root / "manifest.tsv", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (root / "manifest.tsv").string());
    write_manifest(os, ds.manifest);
  }
  {
    KeyValues kv;
    to_kv(cfg, kv);
    kv.save((root / "dataset.cfg").string());
  }
  {
    std::ofstream os(root / "components.tsv", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (root / "components.tsv").string());
    os << "#component_id\tcategory\tparams\n";
    for (const auto& c : ds.bank)
      os << c.id << '\t' << category_name(c.category) << '\t' << describe(c) << '\n';
  }
  return ds;
}

/// Reopens a dataset written by build_dataset(): the bank and materials are
/// regenerated from dataset.cfg, the manifest is read from manifest.tsv.
inline Dataset load_dataset(const std::filesystem::path& root) {
  const auto cfg_path = root / "dataset.cfg";
  if (!std::filesystem::exists(cfg_path)) {
    throw std::runtime_error(cfg_path.string() + ": missing (expected key=value dataset config)");
  }
  Dataset ds = assemble_dataset(dataset_config_from_kv(KeyValues::load(cfg_path.string())));
  ds.root = root;
  std::ifstream is(root / "manifest.tsv");
  if (!is) throw std::runtime_error((root / "manifest.tsv").string() + ": missing (expected TSV manifest)");
  ds.manifest = read_manifest(is, (root / "manifest.tsv").string());
  return ds;
}

/// Checks every manifest row points at a parseable EDT3 file of the recorded
/// geometry and that (component, pair) combinations are unique.
inline void validate_manifest(const DatasetManifest& m, const std::filesystem::path& root) {
  std::set<std::pair<int, int>> seen;
  for (const auto& r : m.records) {
    if (!seen.insert({r.component_id, r.pair_id}).second) {
      throw std::runtime_error("manifest: duplicate (component " + std::to_string(r.component_id) +
                               ", pair " + std::to_string(r.pair_id) + ")");
    }
    const auto t = edt3::load((root / r.path).string());
    if (t.shape() != Shape{r.frames, r.height, r.width, 3}) {
      throw std::runtime_error((root / r.path).string() + ": shape " + shape_str(t.shape()) +
                               " does not match manifest");
    }
  }
}

}  // namespace edit3k::synth
