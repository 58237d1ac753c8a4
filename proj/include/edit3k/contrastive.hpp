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

// Per-component embedding queues, reference embeddings, guidance centers and
// the two InfoNCE-style loss terms.

#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edit3k/autodiff.hpp"
#include "edit3k/rng.hpp"
#include "edit3k/tensor.hpp"

namespace edit3k {

inline constexpr std::size_t kQueueCapacity = 5;
inline constexpr double kDefaultTemperature = 0.7;
inline constexpr std::size_t kCategoryCount = 6;

/// Scales v to unit length in place; returns false (and zeroes v) when the
/// norm is below the degenerate threshold.
inline bool normalize_in_place(std::vector<float>& v) {
  double ss = 0;
  for (float x : v) ss += static_cast<double>(x) * x;
  const double n = std::sqrt(ss);
  if (n < ad::kDegenerateNorm) {
    std::fill(v.begin(), v.end(), 0.0f);
    return false;
  }
  for (auto& x : v) x = static_cast<float>(x / n);
  return true;
}

/// r_j per component with a non-degenerate queue mean.
struct References {
  std::size_t dim = 0;
  std::map<int, std::vector<float>> rows;

  bool has(int id) const { return rows.count(id) != 0; }
  std::size_t size() const { return rows.size(); }
};

class QueueSet {
 public:
  QueueSet() = default;
  QueueSet(std::size_t dim, std::map<int, int> categories, std::size_t capacity = kQueueCapacity)
      : dim_(dim), capacity_(capacity), categories_(std::move(categories)) {
    if (capacity_ == 0) throw std::invalid_argument("queue: capacity must be positive");
    for (const auto& [id, cat] : categories_) queues_[id];
  }

  std::size_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  const std::map<int, int>& categories() const { return categories_; }

  void push(int id, std::span<const float> embedding) {
    auto it = queues_.find(id);
    if (it == queues_.end()) throw std::out_of_range("queue: unknown component id " + std::to_string(id));
    if (embedding.size() != dim_) {
      throw std::invalid_argument("queue: embedding dim " + std::to_string(embedding.size()) +
                                  " != " + std::to_string(dim_));
    }
    std::vector<float> v(embedding.begin(), embedding.end());
    for (float x : v) {
      if (!std::isfinite(x)) throw std::invalid_argument("queue: non-finite embedding");
    }
    if (!normalize_in_place(v)) throw std::invalid_argument("queue: zero embedding");
    auto& q = it->second;
    q.push_back(std::move(v));
    while (q.size() > capacity_) q.pop_front();
  }

  const std::deque<std::vector<float>>& entries(int id) const {
    auto it = queues_.find(id);
    if (it == queues_.end()) throw std::out_of_range("queue: unknown component id " + std::to_string(id));
    return it->second;
  }

  /// Installs a queue verbatim (checkpoint restore).
  void restore(int id, std::deque<std::vector<float>> entries) {
    if (!queues_.count(id)) throw std::out_of_range("queue: unknown component id " + std::to_string(id));
    queues_[id] = std::move(entries);
  }

  References references() const {
    References r;
    r.dim = dim_;
    for (const auto& [id, q] : queues_) {
      if (q.empty()) continue;
      std::vector<double> acc(dim_, 0.0);
      for (const auto& e : q)
        for (std::size_t j = 0; j < dim_; ++j) acc[j] += e[j];
      std::vector<float> mean(dim_);
      for (std::size_t j = 0; j < dim_; ++j) mean[j] = static_cast<float>(acc[j] / q.size());
      if (normalize_in_place(mean)) r.rows.emplace(id, std::move(mean));
    }
    return r;
  }

 private:
  std::size_t dim_ = 0;
  std::size_t capacity_ = kQueueCapacity;
  std::map<int, int> categories_;
  std::map<int, std::deque<std::vector<float>>> queues_;
};

/// One unit (or zero) row per category: normalized mean of its references.
inline Tensor centers_six_types(const References& refs, const std::map<int, int>& categories) {
  const std::size_t d = refs.dim;
  std::vector<std::vector<double>> acc(kCategoryCount, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(kCategoryCount, 0);
  for (const auto& [id, r] : refs.rows) {
    auto it = categories.find(id);
    if (it == categories.end()) continue;
    const auto c = static_cast<std::size_t>(it->second);
    for (std::size_t j = 0; j < d; ++j) acc[c][j] += r[j];
    ++count[c];
  }
  Tensor out({kCategoryCount, d});
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (count[c] == 0) continue;
    std::vector<float> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(acc[c][j] / count[c]);
    normalize_in_place(row);
    std::copy(row.begin(), row.end(), out.row(c).begin());
  }
  return out;
}

/// Lloyd's algorithm with k-means++ seeding over the reference rows.
inline Tensor centers_kmeans(const References& refs, std::size_t k, std::uint64_t seed,
                             std::size_t iters = 50) {
  const std::size_t n = refs.size(), d = refs.dim;
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (n < k) {
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " references < k=" + std::to_string(k));
  }
  std::vector<const std::vector<float>*> pts;
  for (const auto& [id, r] : refs.rows) pts.push_back(&r);
  auto dist2 = [d](const std::vector<float>& a, const std::vector<double>& c) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - c[j]) * (a[j] - c[j]);
    return s;
  };

  Rng rng(derive_seed(seed, {0x6B6Du}));
  std::vector<std::vector<double>> ctr;
  const std::size_t first = rng.index(n);
  ctr.emplace_back(pts[first]->begin(), pts[first]->end());
  std::vector<double> best(n);
  while (ctr.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : ctr) best[i] = std::min(best[i], dist2(*pts[i], c));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = rng.index(n);
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if ((u -= best[pick]) < 0) break;
      }
    }
    ctr.emplace_back(pts[pick]->begin(), pts[pick]->end());
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = dist2(*pts[i], ctr[c]);
        if (dd < bd) {
          bd = dd;
          assign[i] = c;
        }
      }
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> m(d, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != c) continue;
        for (std::size_t j = 0; j < d; ++j) m[j] += (*pts[i])[j];
        ++cnt;
      }
      if (cnt == 0) continue;  // empty cluster keeps its center
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) {
        m[j] /= static_cast<double>(cnt);
        s += (m[j] - ctr[c][j]) * (m[j] - ctr[c][j]);
      }
      shift = std::max(shift, std::sqrt(s));
      ctr[c] = std::move(m);
    }
    if (shift < 1e-6) break;
  }

  Tensor out({k, d});
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<float> row(ctr[c].begin(), ctr[c].end());
    normalize_in_place(row);
    std::copy(row.begin(), row.end(), out.row(c).begin());
  }
  return out;
}

namespace detail {

template <typename T>
void require_unit_rows(const BasicTensor<T>& x, const char* what) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0;
    for (T v : x.row(r)) ss += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) +
                                  " has norm " + std::to_string(std::sqrt(ss)) + ", expected 1");
    }
  }
}

}  // namespace detail

/// Batch InfoNCE: mean_i -log softmax_j(q_i . k_j / tau)[i].
template <typename T>
ad::Var<T> loss_batch(ad::Var<T> q, ad::Var<T> k, double tau = kDefaultTemperature) {
  if (!(tau > 0)) throw std::invalid_argument("loss_batch: temperature must be positive");
  if (q.shape() != k.shape() || q.shape().size() != 2) {
    ad::detail::shape_error("loss_batch", q.shape(), k.shape());
  }
  detail::require_unit_rows(q.value(), "loss_batch q");
  detail::require_unit_rows(k.value(), "loss_batch k");
  const std::size_t n = q.shape()[0];
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  auto logits = ad::scale(ad::matmul_nt(q, k), static_cast<T>(1.0 / tau));
  return ad::scale(ad::mean(ad::pick(ad::log_softmax(logits), diag)), T(-1));
}

/// Queue loss against a pre-step reference snapshot. Rows whose component
/// has no reference are skipped; the softmax runs over every present
/// reference. Returns an exact zero constant when nothing contributes.
template <typename T>
ad::Var<T> loss_queue(ad::Var<T> q, const std::vector<int>& ids, const References& refs,
                      double tau = kDefaultTemperature) {
  if (!(tau > 0)) throw std::invalid_argument("loss_queue: temperature must be positive");
  auto& g = *q.graph;
  const auto& qs = q.shape();
  if (qs.size() != 2 || qs[0] != ids.size()) {
    ad::detail::shape_error("loss_queue", qs, Shape{ids.size()});
  }
  std::vector<std::size_t> rows, cols;
  std::map<int, std::size_t> col_of;
  for (const auto& [id, r] : refs.rows) col_of.emplace(id, col_of.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = col_of.find(ids[i]);
    if (it == col_of.end()) continue;
    rows.push_back(i);
    cols.push_back(it->second);
  }
  if (rows.empty()) return g.constant(BasicTensor<T>({1}));
  if (refs.dim != qs[1]) throw std::invalid_argument("loss_queue: reference dim mismatch");
  detail::require_unit_rows(q.value(), "loss_queue q");

  BasicTensor<T> r({refs.size(), refs.dim});
  std::size_t c = 0;
  for (const auto& [id, row] : refs.rows) {
    for (std::size_t j = 0; j < refs.dim; ++j) r[c * refs.dim + j] = static_cast<T>(row[j]);
    ++c;
  }
  auto logits = ad::scale(ad::matmul_nt(q, g.constant(std::move(r))), static_cast<T>(1.0 / tau));
  auto lp = ad::log_softmax(logits);
  // gather the contributing rows, then their own-reference column
  std::vector<ad::Var<T>> kept;
  kept.reserve(rows.size());
  for (auto i : rows) kept.push_back(ad::slice(lp, 0, i, i + 1));
  auto sel = ad::concat(kept, 0);
  return ad::scale(ad::mean(ad::pick(sel, cols)), T(-1));
}

/// L = L_batch + L_queue (unweighted).
template <typename T>
ad::Var<T> loss_total(ad::Var<T> l_batch, std::optional<ad::Var<T>> l_queue) {
  return l_queue ? ad::add(ad::reshape(l_batch, {1}), ad::reshape(*l_queue, {1}))
                 : ad::reshape(l_batch, {1});
}

}  // namespace edit3k
