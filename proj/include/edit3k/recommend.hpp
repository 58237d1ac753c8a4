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

// Transition recommendation: a small temporal encoder reads the frames
// around a missing transition and scores a frozen table of transition
// embeddings by scaled cosine similarity.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "edit3k/eval.hpp"

namespace edit3k {

struct RecSample {
  Tensor context;  // [N_c, h, w, 3], slot A tail then slot B head
  int transition_id = 0;
  int pair_id = 0;
};

/// Frames whose timestamp lies outside the transition window.
inline std::vector<std::size_t> context_frame_indices(const synth::RenderConfig& rc) {
  std::vector<std::size_t> idx;
  const double wb = rc.duration * 0.25, we = rc.duration * 0.75;
  for (std::size_t i = 0; i < rc.frames; ++i) {
    const double t = rc.frame_time(i);
    if (t < wb || t >= we) idx.push_back(i);
  }
  return idx;
}

/// Average-pools a [N, H, W, 3] stack by an integer factor.
inline Tensor downsample(const Tensor& frames, std::size_t factor) {
  const std::size_t n = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw std::invalid_argument("downsample: factor " + std::to_string(factor) + " does not divide " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = h / factor, ow = w / factor;
  Tensor out({n, oh, ow, 3});
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          out[((f * oh + y / factor) * ow + x / factor) * 3 + c] += frames[((f * h + y) * w + x) * 3 + c] * inv;
  return out;
}

inline Tensor select_frames(const Tensor& video, const std::vector<std::size_t>& idx) {
  const std::size_t fsz = video.size() / video.dim(0);
  Tensor out({idx.size(), video.dim(1), video.dim(2), video.dim(3)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(video.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * fsz), fsz,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * fsz));
  }
  return out;
}

/// One sample per transition video in the manifest (other categories are
/// skipped). Context = frames outside the transition window.
inline std::vector<RecSample> build_rec_dataset(const synth::Dataset& ds, std::size_t factor = 4,
                                                std::size_t min_context = 2) {
  const auto idx = context_frame_indices(ds.config.render);
  if (idx.size() < min_context) {
    throw std::runtime_error("rec dataset: only " + std::to_string(idx.size()) + " context frames");
  }
  std::vector<RecSample> out;
  for (const auto& r : ds.manifest.records) {
    if (r.category != synth::Category::kTransition) continue;
    out.push_back({downsample(select_frames(ds.load_frames(r), idx), factor), r.component_id, r.pair_id});
  }
  return out;
}

// --- synthetic benchmark -------------------------------------------------------

enum class TransitionFamily { kCrossfade = 0, kWipe = 1, kSlide = 2, kCircle = 3 };

inline int transition_family(const synth::EditComponent& c) {
  return static_cast<int>(std::get<synth::TransitionParams>(c.params).kind);
}

struct RecBenchmarkConfig {
  std::size_t transitions = 12;
  std::size_t train_pairs = 24;  // material pairs per transition for training
  std::size_t eval_pairs = 8;
  double palette_bias = 0.8;  // probability a pair uses its family palette
  std::size_t downsample = 4;
  std::uint64_t seed = 1;  // component bank seed (shared with the representation dataset)
  std::uint64_t material_seed = 21;
  synth::RenderConfig render;
};

struct RecBenchmark {
  std::vector<synth::EditComponent> bank;
  std::vector<RecSample> train;
  std::vector<RecSample> eval;
  std::set<int> held_out;  // transitions never seen in recommender training
};

/// Base colors per family: footage "style" that correlates with the
/// transition an editor picks.
inline synth::Rgb family_palette(int family, int slot) {
  static const synth::Rgb base[4][2] = {
      {{0.55f, 0.55f, 0.55f}, {0.35f, 0.35f, 0.4f}},
      {{0.85f, 0.25f, 0.2f}, {0.95f, 0.6f, 0.2f}},
      {{0.2f, 0.7f, 0.3f}, {0.6f, 0.85f, 0.3f}},
      {{0.2f, 0.3f, 0.85f}, {0.5f, 0.3f, 0.8f}},
  };
  return base[family & 3][slot & 1];
}

inline synth::Material tinted_material(std::uint64_t seed, int family, bool biased, int id) {
  auto m = synth::gen_material(seed, (seed & 1) ? synth::MaterialKind::kMoving : synth::MaterialKind::kStatic, id);
  if (!biased) return m;
  Rng rng(derive_seed(seed, {0x54494E54u}));
  for (int s = 0; s < 2; ++s) {
    auto c = family_palette(family, s);
    for (auto& v : c) v = std::clamp(v + static_cast<float>(rng.uniform(-0.12, 0.12)), 0.0f, 1.0f);
    m.gradient[static_cast<std::size_t>(s)] = c;
  }
  return m;
}

/// Renders each transition on its own family-biased material pairs and
/// holds the last member of every family out of recommender training.
inline RecBenchmark make_rec_benchmark(const RecBenchmarkConfig& cfg) {
  RecBenchmark b;
  synth::CategoryCounts counts{};
  counts[static_cast<std::size_t>(synth::Category::kTransition)] = cfg.transitions;
  b.bank = synth::gen_component_bank(counts, cfg.seed);
  std::map<int, int> last_of_family;
  for (const auto& c : b.bank) last_of_family[transition_family(c)] = c.id;
  for (const auto& [fam, id] : last_of_family) b.held_out.insert(id);

  const auto idx = context_frame_indices(cfg.render);
  for (const auto& comp : b.bank) {
    const int fam = transition_family(comp);
    const std::size_t total = cfg.train_pairs + cfg.eval_pairs;
    for (std::size_t p = 0; p < total; ++p) {
      const auto s = derive_seed(cfg.material_seed, {static_cast<std::uint64_t>(comp.id), p});
      Rng rng(s);
      const bool biased = rng.uniform() < cfg.palette_bias;
      synth::MaterialPair mp;
      mp.pair_id = static_cast<int>(p);
      mp.a = tinted_material(derive_seed(s, {0}), fam, biased, 0);
      mp.b = tinted_material(derive_seed(s, {1}), fam, biased, 1);
      auto v = synth::render_video(mp, comp, cfg.render, s);
      RecSample r{downsample(select_frames(v.frames, idx), cfg.downsample), comp.id, mp.pair_id};
      if (p >= cfg.train_pairs) {
        b.eval.push_back(std::move(r));
      } else if (!b.held_out.count(comp.id)) {
        b.train.push_back(std::move(r));
      }
    }
  }
  return b;
}

// --- recommender -----------------------------------------------------------------

struct TransitionTable {
  std::vector<int> ids;
  Tensor rows;  // [n, D], unit rows
};

inline TransitionTable table_from_centers(const ComponentCenters& c, const std::vector<int>& ids) {
  TransitionTable t;
  t.ids = ids;
  t.rows = Tensor({ids.size(), c.dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = c.rows.find(ids[i]);
    if (it == c.rows.end()) throw std::runtime_error("table: no center for transition " + std::to_string(ids[i]));
    std::copy(it->second.begin(), it->second.end(), t.rows.row(i).begin());
  }
  return t;
}

inline TransitionTable random_table(const std::vector<int>& ids, std::size_t dim, std::uint64_t seed) {
  TransitionTable t;
  t.ids = ids;
  t.rows = Tensor({ids.size(), dim});
  Rng rng(derive_seed(seed, {0x52414E44u}));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    normalize_in_place(v);
    std::copy(v.begin(), v.end(), t.rows.row(i).begin());
  }
  return t;
}

struct RecConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  double tau = 0.1;
  double lr = 1e-3;
  std::size_t steps = 300;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
};

/// Per-frame linear embedding + positional embedding, one self-attention
/// block, mean over frames, projection to the table dimension, l2 norm.
class Recommender {
 public:
  Recommender() = default;
  Recommender(std::size_t frames, std::size_t frame_dim, std::size_t table_dim, const RecConfig& cfg)
      : cfg_(cfg), frames_(frames), frame_dim_(frame_dim) {
    Rng rng(derive_seed(cfg.seed, {0x5245434Du}));
    const std::size_t d = cfg.dim;
    add("in.weight", {frame_dim, d}, rng, 1.0 / std::sqrt(static_cast<double>(frame_dim)));
    add("in.bias", {d}, rng, 0);
    add("pos", {frames, d}, rng, 0.02);
    for (const char* n : {"ln1", "ln2", "ln_f"}) {
      params_.emplace_back(std::string(n) + ".gain", Tensor({d}, 1.0f));
      params_.emplace_back(std::string(n) + ".bias", Tensor({d}));
    }
    add("qkv.weight", {d, 3 * d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    add("qkv.bias", {3 * d}, rng, 0);
    add("out.weight", {d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    add("out.bias", {d}, rng, 0);
    add("fc1.weight", {d, 4 * d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    add("fc1.bias", {4 * d}, rng, 0);
    add("fc2.weight", {4 * d, d}, rng, 1.0 / std::sqrt(static_cast<double>(4 * d)));
    add("fc2.bias", {d}, rng, 0);
    add("head.weight", {d, table_dim}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    add("head.bias", {table_dim}, rng, 0);
  }

  std::vector<Parameter<float>>& parameters() { return params_; }
  const RecConfig& config() const { return cfg_; }
  std::size_t frames() const { return frames_; }
  std::size_t frame_dim() const { return frame_dim_; }

  /// contexts [B, N_c, h, w, 3] -> unit context embeddings [B, table_dim].
  ad::Var<float> embed(ad::Graph<float>& g, const Tensor& contexts) {
    const std::size_t b = contexts.dim(0);
    if (contexts.size() != b * frames_ * frame_dim_) {
      throw std::invalid_argument("recommender: context shape " + shape_str(contexts.shape()) +
                                  " does not match " + std::to_string(frames_) + " frames of " +
                                  std::to_string(frame_dim_) + " values");
    }
    Tensor x = contexts.reshaped({b, frames_, frame_dim_});
    for (auto& v : x.storage()) v = (v - 0.5f) * 4.0f;
    const std::size_t d = cfg_.dim;
    auto h = ad::add_bias(ad::matmul(g.constant(std::move(x)), p(g, "in.weight")), p(g, "in.bias"));
    h = ad::add(h, ad::repeat(p(g, "pos"), b));
    auto n1 = ad::layer_norm(h, p(g, "ln1.gain"), p(g, "ln1.bias"));
    auto qkv = ad::add_bias(ad::matmul(n1, p(g, "qkv.weight")), p(g, "qkv.bias"));
    auto a = ad::attention(ad::slice(qkv, 2, 0, d), ad::slice(qkv, 2, d, 2 * d), ad::slice(qkv, 2, 2 * d, 3 * d),
                           cfg_.heads);
    h = ad::add(h, ad::add_bias(ad::matmul(a, p(g, "out.weight")), p(g, "out.bias")));
    auto n2 = ad::layer_norm(h, p(g, "ln2.gain"), p(g, "ln2.bias"));
    auto f = ad::add_bias(ad::matmul(ad::gelu(ad::add_bias(ad::matmul(n2, p(g, "fc1.weight")), p(g, "fc1.bias"))),
                                     p(g, "fc2.weight")),
                          p(g, "fc2.bias"));
    h = ad::layer_norm(ad::add(h, f), p(g, "ln_f.gain"), p(g, "ln_f.bias"));
    auto pooled = ad::mean_axis(h, 1);  // [B, d]
    return ad::l2_normalize(ad::add_bias(ad::matmul(pooled, p(g, "head.weight")), p(g, "head.bias")));
  }

 private:
  ad::Var<float> p(ad::Graph<float>& g, const std::string& name) {
    for (auto& prm : params_)
      if (prm.name == name) return g.param(prm);
    throw std::out_of_range("recommender: no parameter '" + name + "'");
  }

  void add(const std::string& name, Shape s, Rng& rng, double std) {
    Tensor t(std::move(s));
    if (std > 0)
      for (auto& v : t.storage()) v = static_cast<float>(rng.normal(0.0, std));
    params_.emplace_back(name, std::move(t));
  }

  RecConfig cfg_;
  std::size_t frames_ = 0, frame_dim_ = 0;
  std::vector<Parameter<float>> params_;
};

inline void to_kv(const RecConfig& c, KeyValues& kv) {
  kv.set("rec.dim", c.dim);
  kv.set("rec.heads", c.heads);
  kv.set("rec.tau", c.tau);
  kv.set("rec.lr", c.lr);
  kv.set("rec.steps", c.steps);
  kv.set("rec.batch", c.batch);
  kv.set("rec.seed", c.seed);
}

inline RecConfig rec_config_from_kv(const KeyValues& kv) {
  RecConfig c;
  c.dim = kv.get<std::size_t>("rec.dim");
  c.heads = kv.get<std::size_t>("rec.heads");
  c.tau = kv.get<double>("rec.tau");
  c.lr = kv.get<double>("rec.lr");
  c.steps = kv.get<std::size_t>("rec.steps");
  c.batch = kv.get<std::size_t>("rec.batch");
  c.seed = kv.get<std::uint64_t>("rec.seed");
  if (c.heads == 0 || c.dim % c.heads != 0) throw std::invalid_argument("rec: dim must be divisible by heads");
  if (!(c.tau > 0)) throw std::invalid_argument("rec: tau must be positive");
  return c;
}

/// Recommender weights plus the frozen table it was trained against.
inline Bundle recommender_to_bundle(Recommender& m, const TransitionTable& t) {
  Bundle b;
  to_kv(m.config(), b.meta);
  b.meta.set("rec.frames", m.frames());
  b.meta.set("rec.frame_dim", m.frame_dim());
  std::string ids;
  for (int id : t.ids) ids += (ids.empty() ? "" : ",") + std::to_string(id);
  b.meta.set("rec.table_ids", ids);
  for (const auto& p : m.parameters()) b.add("param/" + p.name, p.value);
  b.add("table", t.rows);
  return b;
}

inline std::pair<Recommender, TransitionTable> recommender_from_bundle(const Bundle& b) {
  TransitionTable t;
  t.ids = b.meta.get_list<int>("rec.table_ids");
  t.rows = b.get("table");
  if (t.rows.rows() != t.ids.size()) throw std::runtime_error("recommender: table rows do not match ids");
  Recommender m(b.meta.get<std::size_t>("rec.frames"), b.meta.get<std::size_t>("rec.frame_dim"), t.rows.cols(),
                rec_config_from_kv(b.meta));
  for (auto& p : m.parameters()) {
    const Tensor& v = b.get("param/" + p.name);
    if (v.shape() != p.value.shape()) throw std::runtime_error("recommender: shape mismatch for " + p.name);
    p.value = v;
  }
  return {std::move(m), std::move(t)};
}

inline Tensor stack_contexts(const std::vector<RecSample>& samples, const std::vector<std::size_t>& idx) {
  const Tensor& first = samples.at(idx.at(0)).context;
  Shape s{idx.size()};
  for (auto e : first.shape()) s.push_back(e);
  Tensor out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& c = samples[idx[i]].context;
    std::copy(c.data().begin(), c.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * first.size()));
  }
  return out;
}

struct RecStepReport {
  double loss = 0;
  double table_grad_norm = 0;
};

struct RecTrainResult {
  Recommender model;
  std::vector<RecStepReport> steps;
};

/// Softmax cross-entropy over cos(context, table row) / tau; the table is a
/// graph constant and never updated.
inline RecTrainResult rec_train(const std::vector<RecSample>& samples, const TransitionTable& table,
                                const RecConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("rec_train: no samples");
  std::map<int, std::size_t> col;
  for (std::size_t i = 0; i < table.ids.size(); ++i) col[table.ids[i]] = i;
  const auto& cs = samples[0].context.shape();
  const std::size_t frames = cs[0], frame_dim = cs[1] * cs[2] * cs[3];
  RecTrainResult res;
  res.model = Recommender(frames, frame_dim, table.rows.cols(), cfg);
  auto& params = res.model.parameters();
  Adam adam;
  adam.init(params);
  Rng rng(derive_seed(cfg.seed, {0x52545241u}));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    std::vector<std::size_t> target;
    while (idx.size() < std::min(cfg.batch, samples.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      const auto i = order[cursor++];
      auto it = col.find(samples[i].transition_id);
      if (it == col.end()) {
        throw std::runtime_error("rec_train: transition " + std::to_string(samples[i].transition_id) +
                                 " missing from table");
      }
      idx.push_back(i);
      target.push_back(it->second);
    }
    for (auto& prm : params) prm.zero_grad();
    ad::Graph<float> g(true);
    auto tab = g.constant(table.rows);
    auto c = res.model.embed(g, stack_contexts(samples, idx));
    auto logits = ad::scale(ad::matmul_nt(c, tab), static_cast<float>(1.0 / cfg.tau));
    auto loss = ad::scale(ad::mean(ad::pick(ad::log_softmax(logits), target)), -1.0f);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw std::runtime_error("rec_train: non-finite loss at step " + std::to_string(step));
    g.backward(loss);
    double tg = 0;
    const auto gt = g.grad(tab);
    for (float v : gt.data()) tg += static_cast<double>(v) * v;
    adam.step(params, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr * 0.01));
    res.steps.push_back({lv, std::sqrt(tg)});
  }
  return res;
}

struct RecMetrics {
  double r1 = 0;
  double r5 = 0;
  double mean_rank = 0;
  std::vector<std::size_t> ranks;
};

inline RecMetrics rec_metrics_from_ranks(std::vector<std::size_t> ranks) {
  RecMetrics m;
  m.r1 = recall_at(ranks, 1);
  m.r5 = recall_at(ranks, 5);
  m.mean_rank = mean_rank(ranks);
  m.ranks = std::move(ranks);
  return m;
}

inline RecMetrics rec_eval(Recommender& model, const std::vector<RecSample>& samples,
                           const TransitionTable& table) {
  if (samples.empty()) throw std::invalid_argument("rec_eval: empty evaluation set");
  std::map<int, std::size_t> col;
  for (std::size_t i = 0; i < table.ids.size(); ++i) col[table.ids[i]] = i;
  std::vector<std::size_t> ranks;
  for (std::size_t b = 0; b < samples.size(); b += 32) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(samples.size(), b + 32); ++i) idx.push_back(i);
    ad::Graph<float> g(false);
    auto c = model.embed(g, stack_contexts(samples, idx));
    const auto& cv = c.value();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> s(table.ids.size());
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = dot(cv.row(r), table.rows.row(j));
      ranks.push_back(rank_of(s, table.ids, col.at(samples[idx[r]].transition_id)));
    }
  }
  return rec_metrics_from_ranks(std::move(ranks));
}

}  // namespace edit3k
