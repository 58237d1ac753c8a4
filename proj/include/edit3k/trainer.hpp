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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edit3k/checkpoint.hpp"
#include "edit3k/contrastive.hpp"
#include "edit3k/dataset.hpp"
#include "edit3k/model.hpp"

namespace edit3k {

struct TrainConfig {
  std::size_t batch_components = 8;  // N_b
  std::size_t epochs = 30;
  double tau = kDefaultTemperature;
  double lr = 3e-4;
  double lr_min = 3e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
  bool queue_loss = true;
  bool guidance_tokens = true;
  bool guided_decoder = true;
  std::string centers = "six_type";    // six_type | kmeans
  std::size_t kmeans_k = 6;
  std::size_t kmeans_iters = 50;
  std::string guidance_refresh = "step";  // step | epoch
  bool slot_mix = false;  // recombine slots across pairs for non-transition components
  bool shared_pairs = false;  // all q share one material pair, all k another
  bool openset = false;  // train on the open-set train half only
  bool validate = true;  // per-epoch validation R@1
  std::size_t checkpoint_every = 0;  // epochs; 0 = final only
  std::size_t stop_after = 0;  // stop (and checkpoint) after this many steps; 0 = run to the end
  std::size_t eval_batch = 16;
  std::uint64_t seed = 1;

  void validate_config() const {
    if (batch_components == 0) throw std::invalid_argument("train: batch_components must be >= 1");
    if (!(tau > 0)) throw std::invalid_argument("train: tau must be positive");
    if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
    if (centers != "six_type" && centers != "kmeans") {
      throw std::invalid_argument("train: centers must be six_type or kmeans, got '" + centers + "'");
    }
    if (guidance_refresh != "step" && guidance_refresh != "epoch") {
      throw std::invalid_argument("train: guidance_refresh must be step or epoch");
    }
  }

  std::size_t guidance_count() const { return centers == "kmeans" ? kmeans_k : kCategoryCount; }
};

inline void to_kv(const TrainConfig& c, KeyValues& kv) {
  kv.set("train.batch_components", c.batch_components);
  kv.set("train.epochs", c.epochs);
  kv.set("train.tau", c.tau);
  kv.set("train.lr", c.lr);
  kv.set("train.lr_min", c.lr_min);
  kv.set("train.beta1", c.beta1);
  kv.set("train.beta2", c.beta2);
  kv.set("train.eps", c.eps);
  kv.set("train.clip_norm", c.clip_norm);
  kv.set("train.queue_loss", c.queue_loss);
  kv.set("train.guidance_tokens", c.guidance_tokens);
  kv.set("train.guided_decoder", c.guided_decoder);
  kv.set("train.centers", c.centers);
  kv.set("train.kmeans_k", c.kmeans_k);
  kv.set("train.kmeans_iters", c.kmeans_iters);
  kv.set("train.guidance_refresh", c.guidance_refresh);
  kv.set("train.slot_mix", c.slot_mix);
  kv.set("train.shared_pairs", c.shared_pairs);
  kv.set("train.openset", c.openset);
  kv.set("train.validate", c.validate);
  kv.set("train.checkpoint_every", c.checkpoint_every);
  kv.set("train.stop_after", c.stop_after);
  kv.set("train.eval_batch", c.eval_batch);
  kv.set("train.seed", c.seed);
}

inline TrainConfig train_config_from_kv(const KeyValues& kv) {
  TrainConfig c;
  c.batch_components = kv.get<std::size_t>("train.batch_components");
  c.epochs = kv.get<std::size_t>("train.epochs");
  c.tau = kv.get<double>("train.tau");
  c.lr = kv.get<double>("train.lr");
  c.lr_min = kv.get<double>("train.lr_min");
  c.beta1 = kv.get<double>("train.beta1");
  c.beta2 = kv.get<double>("train.beta2");
  c.eps = kv.get<double>("train.eps");
  c.clip_norm = kv.get<double>("train.clip_norm");
  c.queue_loss = kv.get<bool>("train.queue_loss");
  c.guidance_tokens = kv.get<bool>("train.guidance_tokens");
  c.guided_decoder = kv.get<bool>("train.guided_decoder");
  c.centers = kv.get<std::string>("train.centers");
  c.kmeans_k = kv.get<std::size_t>("train.kmeans_k");
  c.kmeans_iters = kv.get<std::size_t>("train.kmeans_iters");
  c.guidance_refresh = kv.get<std::string>("train.guidance_refresh");
  c.slot_mix = kv.get<bool>("train.slot_mix");
  c.shared_pairs = kv.get<bool>("train.shared_pairs");
  c.openset = kv.get<bool>("train.openset");
  c.validate = kv.get<bool>("train.validate");
  c.checkpoint_every = kv.get<std::size_t>("train.checkpoint_every");
  c.stop_after = kv.get<std::size_t>("train.stop_after");
  c.eval_batch = kv.get<std::size_t>("train.eval_batch");
  c.seed = kv.get<std::uint64_t>("train.seed");
  c.validate_config();
  return c;
}

/// Applies the ablation switches and guidance count to a model config.
inline ModelConfig resolve_model_config(ModelConfig m, const TrainConfig& t) {
  m.guided_spatial = t.guidance_tokens;
  m.guided_decoder = t.guided_decoder;
  m.guidance_tokens = t.guidance_count();
  m.validate();
  return m;
}

inline double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
  if (total == 0) throw std::invalid_argument("cosine_lr: total steps must be positive");
  if (step > total) throw std::invalid_argument("cosine_lr: step beyond total");
  const double x = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * x));
}

// --- optimizer ----------------------------------------------------------------

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m, v;

  void init(const std::vector<Parameter<float>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
    t = 0;
  }

  void step(std::vector<Parameter<float>>& params, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].value.storage();
      const auto& g = params[i].grad.storage();
      auto& mi = m[i].storage();
      auto& vi = v[i].storage();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        mi[j] = static_cast<float>(beta1 * mi[j] + (1 - beta1) * gj);
        vi[j] = static_cast<float>(beta2 * vi[j] + (1 - beta2) * gj * gj);
        const double mh = mi[j] / c1, vh = vi[j] / c2;
        w[j] = static_cast<float>(w[j] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }
};

inline double global_grad_norm(const std::vector<Parameter<float>>& params) {
  double ss = 0;
  for (const auto& p : params)
    for (float g : p.grad.data()) ss += static_cast<double>(g) * g;
  return std::sqrt(ss);
}

// --- data -------------------------------------------------------------------

/// In-memory cache of rendered videos keyed by (component, pair).
class VideoStore {
 public:
  explicit VideoStore(const synth::Dataset& ds) : ds_(&ds) {}

  const Tensor& get(int component, int pair) {
    auto key = std::make_pair(component, pair);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto* rec = ds_->manifest.find(component, pair);
    if (rec == nullptr) {
      throw std::runtime_error("dataset: no render for component " + std::to_string(component) +
                               " on pair " + std::to_string(pair));
    }
    return cache_.emplace(key, ds_->load_frames(*rec)).first->second;
  }

  /// Stacks videos into [n, N_v, H, W, 3].
  Tensor stack(const std::vector<std::pair<int, int>>& keys) {
    if (keys.empty()) throw std::invalid_argument("stack: no videos");
    const Tensor& first = get(keys[0].first, keys[0].second);
    Shape s{keys.size()};
    for (auto e : first.shape()) s.push_back(e);
    Tensor out(s);
    const std::size_t n = first.size();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const Tensor& v = get(keys[i].first, keys[i].second);
      if (v.shape() != first.shape()) throw std::runtime_error("stack: inconsistent video shapes");
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
  }

  /// Like stack(), but frame i of row r comes from `second[r]` once its
  /// timestamp reaches the slot boundary.
  Tensor stack_slots(const std::vector<std::pair<int, int>>& first,
                     const std::vector<std::pair<int, int>>& second) {
    if (first.size() != second.size()) throw std::invalid_argument("stack_slots: key count mismatch");
    Tensor out = stack(first);
    const auto& rc = ds_->config.render;
    const std::size_t n = out.size() / first.size(), fsz = n / rc.frames;
    std::size_t boundary = 0;
    while (boundary < rc.frames && rc.frame_time(boundary) < rc.duration / 2) ++boundary;
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (second[i] == first[i]) continue;
      const Tensor& v = get(second[i].first, second[i].second);
      std::copy(v.data().begin() + static_cast<std::ptrdiff_t>(boundary * fsz), v.data().end(),
                out.data().begin() + static_cast<std::ptrdiff_t>(i * n + boundary * fsz));
    }
    return out;
  }

  const synth::Dataset& dataset() const { return *ds_; }

 private:
  const synth::Dataset* ds_;
  std::map<std::pair<int, int>, Tensor> cache_;
};

struct BatchItem {
  int component = 0;
  int pair_q = 0;
  int pair_k = 0;
  int pair_q2 = 0;  // source of the second slot (equals pair_q unless mixed)
  int pair_k2 = 0;
};

/// N_b distinct components, each with two renders on distinct material pairs.
/// With `shared`, every q uses one pair and every k another (both drawn from
/// the pairs all chosen components share). Components in `mixable` also take
/// their second slot from an independently drawn pair.
inline std::vector<BatchItem> sample_batch(const std::map<int, std::vector<int>>& pairs_of,
                                           std::size_t n_b, Rng& rng,
                                           const std::set<int>& mixable = {}, bool shared = false) {
  std::vector<int> ids;
  for (const auto& [id, pairs] : pairs_of) {
    if (pairs.size() < 2) {
      throw std::invalid_argument("sample_batch: component " + std::to_string(id) +
                                  " has fewer than 2 training videos");
    }
    ids.push_back(id);
  }
  if (n_b > ids.size()) {
    throw std::invalid_argument("sample_batch: N_b=" + std::to_string(n_b) + " exceeds " +
                                std::to_string(ids.size()) + " components");
  }
  auto draw_two = [&rng](const std::vector<int>& pairs) {
    const std::size_t a = rng.index(pairs.size());
    std::size_t b = rng.index(pairs.size() - 1);
    if (b >= a) ++b;
    return std::make_pair(pairs[a], pairs[b]);
  };
  for (std::size_t i = 0; i < n_b; ++i) {
    const std::size_t j = i + rng.index(ids.size() - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n_b);

  std::vector<BatchItem> batch;
  if (shared) {
    std::vector<int> common = pairs_of.at(ids[0]);
    for (int id : ids) {
      const auto& p = pairs_of.at(id);
      std::vector<int> keep;
      std::set_intersection(common.begin(), common.end(), p.begin(), p.end(), std::back_inserter(keep));
      common = std::move(keep);
    }
    if (common.size() < 2) throw std::invalid_argument("sample_batch: components share fewer than 2 pairs");
    const auto [q, k] = draw_two(common);
    const auto [q2, k2] = draw_two(common);
    for (int id : ids) {
      const bool mix = mixable.count(id) != 0;
      batch.push_back({id, q, k, mix ? q2 : q, mix ? k2 : k});
    }
    return batch;
  }
  for (int id : ids) {
    const auto [q, k] = draw_two(pairs_of.at(id));
    BatchItem item{id, q, k, q, k};
    if (mixable.count(id)) std::tie(item.pair_q2, item.pair_k2) = draw_two(pairs_of.at(id));
    batch.push_back(item);
  }
  return batch;
}

struct TrainSplit {
  std::vector<int> components;
  std::vector<int> train_pairs;
  std::vector<int> eval_pairs;
  std::map<int, std::vector<int>> pairs_of;
  std::map<int, int> categories;
  std::set<int> slot_mixable;  // components whose two slots render independently
};

inline TrainSplit make_train_split(const synth::Dataset& ds, bool openset) {
  TrainSplit s;
  std::set<int> tp, ep;
  for (const auto& r : ds.manifest.records) {
    if (openset && r.openset_split != "train") continue;
    if (r.split == "train") {
      s.pairs_of[r.component_id].push_back(r.pair_id);
      tp.insert(r.pair_id);
    } else {
      ep.insert(r.pair_id);
    }
    s.categories[r.component_id] = static_cast<int>(r.category);
    if (r.category != synth::Category::kTransition) s.slot_mixable.insert(r.component_id);
  }
  for (auto& [id, p] : s.pairs_of) std::sort(p.begin(), p.end());
  for (const auto& [id, _] : s.categories) s.components.push_back(id);
  s.train_pairs.assign(tp.begin(), tp.end());
  s.eval_pairs.assign(ep.begin(), ep.end());
  if (s.components.empty()) throw std::runtime_error("dataset: no training components");
  return s;
}

// --- state ------------------------------------------------------------------

struct TrainState {
  ModelConfig model_config;
  TrainConfig train_config;
  Model<float> model;
  Adam adam;
  QueueSet queues;
  Tensor guidance;
  std::size_t step = 0;
  std::size_t steps_per_epoch = 1;
  std::size_t total_steps = 1;
};

inline Tensor compute_guidance(const QueueSet& queues, const TrainConfig& cfg, std::size_t step) {
  Tensor zeros({cfg.guidance_count(), queues.dim()});
  if (!cfg.guidance_tokens && !cfg.guided_decoder) return zeros;
  std::set<int> want, have;
  for (const auto& [id, cat] : queues.categories()) {
    want.insert(cat);
    if (!queues.entries(id).empty()) have.insert(cat);
  }
  if (have != want) return zeros;  // cold start
  const auto refs = queues.references();
  if (cfg.centers == "kmeans") {
    if (refs.size() < cfg.kmeans_k) return zeros;
    return centers_kmeans(refs, cfg.kmeans_k, derive_seed(cfg.seed, {0x4B4Du, step}), cfg.kmeans_iters);
  }
  return centers_six_types(refs, queues.categories());
}

inline TrainState init_state(const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const std::map<int, int>& categories, std::size_t steps_per_epoch) {
  cfg.validate_config();
  TrainState s;
  s.train_config = cfg;
  s.model_config = resolve_model_config(model_cfg, cfg);
  s.model = Model<float>(s.model_config, derive_seed(cfg.seed, {0x494E4954u}));
  s.adam.beta1 = cfg.beta1;
  s.adam.beta2 = cfg.beta2;
  s.adam.eps = cfg.eps;
  s.adam.init(s.model.parameters());
  s.queues = QueueSet(s.model_config.dim, categories);
  s.guidance = Tensor({cfg.guidance_count(), s.model_config.dim});
  s.steps_per_epoch = std::max<std::size_t>(1, steps_per_epoch);
  s.total_steps = s.steps_per_epoch * cfg.epochs;
  return s;
}

struct StepReport {
  std::size_t step = 0;
  double lr = 0;
  double loss_batch = 0;
  std::optional<double> loss_queue;
  double loss_total = 0;
  double grad_norm = 0;
  bool clipped = false;
};

/// One optimization step. `videos` holds the q-samples followed by the
/// k-samples: [2 N_b, N_v, H, W, 3]; `ids` the N_b component ids.
inline StepReport train_step(TrainState& s, const Tensor& videos, const std::vector<int>& ids,
                             double lr) {
  const auto& cfg = s.train_config;
  const std::size_t nb = ids.size();
  if (videos.dim(0) != 2 * nb) {
    throw std::invalid_argument("train_step: expected " + std::to_string(2 * nb) + " videos, got " +
                                std::to_string(videos.dim(0)));
  }
  const References refs = s.queues.references();  // pre-step snapshot
  StepReport rep;
  rep.step = s.step;
  rep.lr = lr;

  s.model.zero_grad();
  ad::Graph<float> g(true);
  auto out = s.model.forward(g, videos, s.guidance);
  auto q = ad::slice(out.embeddings, 0, 0, nb);
  auto k = ad::slice(out.embeddings, 0, nb, 2 * nb);
  auto lb = loss_batch(q, k, cfg.tau);
  std::optional<ad::Var<float>> lq;
  if (cfg.queue_loss) lq = loss_queue(q, ids, refs, cfg.tau);
  auto total = loss_total(lb, lq);
  rep.loss_batch = lb.value()[0];
  if (lq) rep.loss_queue = lq->value()[0];
  rep.loss_total = total.value()[0];
  if (!std::isfinite(rep.loss_total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at step " << s.step << " (components";
    for (int id : ids) os << ' ' << id;
    os << ")";
    throw std::runtime_error(os.str());
  }
  g.backward(total);

  auto& params = s.model.parameters();
  rep.grad_norm = global_grad_norm(params);
  if (!std::isfinite(rep.grad_norm)) {
    throw std::runtime_error("train_step: non-finite gradient at step " + std::to_string(s.step));
  }
  if (cfg.clip_norm > 0 && rep.grad_norm > cfg.clip_norm) {
    const float f = static_cast<float>(cfg.clip_norm / rep.grad_norm);
    for (auto& p : params)
      for (auto& gv : p.grad.storage()) gv *= f;
    rep.clipped = true;
  }
  s.adam.step(params, lr);

  const auto& emb = out.embeddings.value();
  const std::size_t d = s.model_config.dim;
  for (std::size_t i = 0; i < nb; ++i) {
    s.queues.push(ids[i], emb.data().subspan(i * d, d));
    s.queues.push(ids[i], emb.data().subspan((nb + i) * d, d));
  }
  ++s.step;
  return rep;
}

// --- embedding ---------------------------------------------------------------

/// Embeds every (component, pair) video without gradients: [n, D].
inline Tensor embed_videos(Model<float>& model, const Tensor& guidance, VideoStore& store,
                           const std::vector<std::pair<int, int>>& keys, std::size_t batch = 16) {
  const std::size_t d = model.config().dim;
  Tensor out({keys.size(), d});
  for (std::size_t b = 0; b < keys.size(); b += batch) {
    const std::size_t e = std::min(keys.size(), b + batch);
    std::vector<std::pair<int, int>> chunk(keys.begin() + static_cast<std::ptrdiff_t>(b),
                                           keys.begin() + static_cast<std::ptrdiff_t>(e));
    ad::Graph<float> g(false);
    auto res = model.forward(g, store.stack(chunk), guidance);
    const auto& ev = res.embeddings.value();
    std::copy(ev.data().begin(), ev.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

/// Fraction of query rows whose same-index candidate has the strictly best
/// rank (ties broken by ascending index).
inline double top1_rate(const Tensor& queries, const Tensor& cands) {
  const std::size_t n = queries.rows(), d = queries.cols();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto sim = [&](std::size_t j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(queries[i * d + c]) * cands[j * d + c];
      return s;
    };
    const double own = sim(i);
    bool top = true;
    for (std::size_t j = 0; j < n && top; ++j) {
      if (j == i) continue;
      const double sj = sim(j);
      if (sj > own || (sj == own && j < i)) top = false;
    }
    hits += top ? 1 : 0;
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

// --- checkpoints -------------------------------------------------------------

inline Bundle state_to_bundle(const TrainState& s) {
  Bundle b;
  to_kv(s.model_config, b.meta);
  to_kv(s.train_config, b.meta);
  b.meta.set("state.step", s.step);
  b.meta.set("state.steps_per_epoch", s.steps_per_epoch);
  b.meta.set("state.total_steps", s.total_steps);
  b.meta.set("adam.t", s.adam.t);
  std::string cats;
  for (const auto& [id, c] : s.queues.categories()) {
    cats += (cats.empty() ? "" : ",") + std::to_string(id) + ":" + std::to_string(c);
  }
  b.meta.set("queue.categories", cats);
  b.meta.set("queue.capacity", s.queues.capacity());
  const auto& params = s.model.parameters();
  for (const auto& p : params) b.add("param/" + p.name, p.value);
  for (std::size_t i = 0; i < params.size(); ++i) {
    b.add("adam.m/" + params[i].name, s.adam.m[i]);
    b.add("adam.v/" + params[i].name, s.adam.v[i]);
  }
  b.add("guidance", s.guidance);
  const std::size_t d = s.queues.dim();
  for (const auto& [id, c] : s.queues.categories()) {
    const auto& q = s.queues.entries(id);
    if (q.empty()) continue;
    Tensor t({q.size(), d});
    for (std::size_t i = 0; i < q.size(); ++i) std::copy(q[i].begin(), q[i].end(), t.row(i).begin());
    b.add("queue/" + std::to_string(id), std::move(t));
  }
  return b;
}

inline TrainState state_from_bundle(const Bundle& b) {
  TrainState s;
  s.model_config = model_config_from_kv(b.meta);
  s.train_config = train_config_from_kv(b.meta);
  s.model = Model<float>(s.model_config, 0);
  std::map<std::string, Tensor> values;
  for (auto& p : s.model.parameters()) values.emplace(p.name, b.get("param/" + p.name));
  s.model.load_values(values);
  s.adam.beta1 = s.train_config.beta1;
  s.adam.beta2 = s.train_config.beta2;
  s.adam.eps = s.train_config.eps;
  s.adam.init(s.model.parameters());
  s.adam.t = b.meta.get<std::size_t>("adam.t");
  for (std::size_t i = 0; i < s.model.parameters().size(); ++i) {
    const auto& name = s.model.parameters()[i].name;
    s.adam.m[i] = b.get("adam.m/" + name);
    s.adam.v[i] = b.get("adam.v/" + name);
  }
  s.step = b.meta.get<std::size_t>("state.step");
  s.steps_per_epoch = b.meta.get<std::size_t>("state.steps_per_epoch");
  s.total_steps = b.meta.get<std::size_t>("state.total_steps");
  std::map<int, int> cats;
  std::stringstream ss(b.meta.get<std::string>("queue.categories"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::runtime_error("checkpoint: bad queue.categories entry");
    cats[std::stoi(item.substr(0, colon))] = std::stoi(item.substr(colon + 1));
  }
  s.queues = QueueSet(s.model_config.dim, cats, b.meta.get<std::size_t>("queue.capacity"));
  for (const auto& [id, c] : cats) {
    const std::string name = "queue/" + std::to_string(id);
    if (!b.has(name)) continue;
    const Tensor& t = b.get(name);
    std::deque<std::vector<float>> q;
    for (std::size_t i = 0; i < t.rows(); ++i) q.emplace_back(t.row(i).begin(), t.row(i).end());
    s.queues.restore(id, std::move(q));
  }
  s.guidance = b.get("guidance");
  return s;
}

inline void save_state(const std::string& path, const TrainState& s) { save_bundle(path, state_to_bundle(s)); }
inline TrainState load_state(const std::string& path) { return state_from_bundle(load_bundle(path)); }

// --- fit ----------------------------------------------------------------------

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss_batch = 0;
  std::optional<double> loss_queue;
  double grad_norm = 0;
  std::optional<double> val_r1;
};

inline constexpr const char* kMetricsHeader = "step,epoch,lr,L_batch,L_queue,grad_norm,val_R@1";

inline std::string metrics_line(const MetricsRow& r) {
  char buf[256];
  std::string lq = r.loss_queue ? std::to_string(*r.loss_queue) : "";
  std::string vr = r.val_r1 ? std::to_string(*r.val_r1) : "";
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%s,%.9g,%s", r.step, r.epoch, r.lr, r.loss_batch,
                lq.c_str(), r.grad_norm, vr.c_str());
  return buf;
}

struct FitOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::optional<std::string> resume;
  std::function<void(const std::string&)> log;
};

struct FitResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
};

inline FitResult fit(const synth::Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const FitOptions& opt = {}) {
  cfg.validate_config();
  auto log = [&](const std::string& m) {
    if (opt.log) opt.log(m);
  };
  const TrainSplit split = make_train_split(ds, cfg.openset);
  std::size_t train_videos = 0;
  for (const auto& [id, p] : split.pairs_of) train_videos += p.size();
  const std::size_t per_step = 2 * cfg.batch_components;
  const std::size_t steps_per_epoch = (train_videos + per_step - 1) / per_step;

  FitResult res;
  if (opt.resume) {
    res.state = load_state(*opt.resume);
    res.state.train_config.stop_after = cfg.stop_after;
    log("resumed from " + *opt.resume + " at step " + std::to_string(res.state.step));
  } else {
    res.state = init_state(model_cfg, cfg, split.categories, steps_per_epoch);
  }
  TrainState& s = res.state;
  const auto& tc = s.train_config;

  std::ofstream metrics;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    const auto mpath = opt.out_dir / "metrics.csv";
    const bool append = opt.resume.has_value() && std::filesystem::exists(mpath);
    metrics.open(mpath, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + mpath.string());
    if (!append) metrics << kMetricsHeader << '\n';
  }

  VideoStore store(ds);
  std::vector<std::pair<int, int>> val_q, val_c;
  if (tc.validate && !split.eval_pairs.empty()) {
    for (int id : split.components) {
      val_q.emplace_back(id, split.eval_pairs.front());
      val_c.emplace_back(id, split.train_pairs.front());
    }
  }

  const std::size_t end = tc.stop_after > 0 ? std::min(tc.stop_after, s.total_steps) : s.total_steps;
  while (s.step < end) {
    const bool refresh = tc.guidance_refresh == "step" || s.step % s.steps_per_epoch == 0;
    if (refresh) s.guidance = compute_guidance(s.queues, tc, s.step);

    Rng rng(derive_seed(tc.seed, {0x42415443u, s.step}));
    auto batch = sample_batch(split.pairs_of, tc.batch_components, rng,
                              tc.slot_mix ? split.slot_mixable : std::set<int>{}, tc.shared_pairs);
    std::vector<std::pair<int, int>> keys, keys2;
    std::vector<int> ids;
    for (const auto& b : batch) {
      keys.emplace_back(b.component, b.pair_q);
      keys2.emplace_back(b.component, b.pair_q2);
      ids.push_back(b.component);
    }
    for (const auto& b : batch) {
      keys.emplace_back(b.component, b.pair_k);
      keys2.emplace_back(b.component, b.pair_k2);
    }
    const double lr = cosine_lr(s.step, s.total_steps, tc.lr, tc.lr_min);
    const auto rep = train_step(s, store.stack_slots(keys, keys2), ids, lr);
    if (rep.clipped) {
      log("step " + std::to_string(rep.step) + ": gradient norm " + std::to_string(rep.grad_norm) +
          " clipped to " + std::to_string(tc.clip_norm));
    }

    MetricsRow row;
    row.step = rep.step;
    row.epoch = rep.step / s.steps_per_epoch;
    row.lr = lr;
    row.loss_batch = rep.loss_batch;
    row.loss_queue = rep.loss_queue;
    row.grad_norm = rep.grad_norm;
    const bool epoch_end = s.step % s.steps_per_epoch == 0;
    if (epoch_end && !val_q.empty()) {
      auto eq = embed_videos(s.model, s.guidance, store, val_q, tc.eval_batch);
      auto ec = embed_videos(s.model, s.guidance, store, val_c, tc.eval_batch);
      row.val_r1 = top1_rate(eq, ec);
    }
    if (metrics.is_open()) metrics << metrics_line(row) << '\n';
    res.metrics.push_back(row);
    if (epoch_end) {
      const std::size_t epoch = s.step / s.steps_per_epoch;
      std::string m = "epoch " + std::to_string(epoch) + " step " + std::to_string(s.step) +
                      " L_batch " + std::to_string(rep.loss_batch);
      if (rep.loss_queue) m += " L_queue " + std::to_string(*rep.loss_queue);
      if (row.val_r1) m += " val_R@1 " + std::to_string(*row.val_r1);
      log(m);
      if (!opt.out_dir.empty() && tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_epoch%03zu.ckpt", epoch);
        save_state((opt.out_dir / name).string(), s);
      }
    }
  }
  // guidance used by inference reflects the final queues
  if (s.step == s.total_steps) s.guidance = compute_guidance(s.queues, tc, s.step);
  if (!opt.out_dir.empty()) save_state((opt.out_dir / "checkpoint.ckpt").string(), s);
  return res;
}

}  // namespace edit3k
