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

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edit3k/trainer.hpp"

namespace edit3k {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double recall_at(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw std::invalid_argument("recall_at: no ranks");
  std::size_t hit = 0;
  for (auto r : ranks) hit += r <= k ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

inline double mean_rank(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mean_rank: no ranks");
  double s = 0;
  for (auto r : ranks) {
    if (r < 1) throw std::invalid_argument("mean_rank: ranks start at 1");
    s += static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

/// 1-based rank of `target` among `scores`; equal scores are ordered by
/// ascending id.
inline std::size_t rank_of(const std::vector<double>& scores, const std::vector<int>& ids,
                           std::size_t target) {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == target) continue;
    if (scores[j] > scores[target] || (scores[j] == scores[target] && ids[j] < ids[target])) ++rank;
  }
  return rank;
}

struct RetrievalReport {
  std::array<double, kCategoryCount> r1{};
  std::array<double, kCategoryCount> r10{};
  std::array<std::size_t, kCategoryCount> count{};
  double avg_r1 = 0;  // unweighted mean over categories with queries
  double avg_r10 = 0;
  double query_r1 = 0;  // mean over individual queries
  double query_r10 = 0;
  std::size_t queries = 0;
  std::vector<int> query_ids;
  std::vector<std::size_t> ranks;
  std::string label;
};

/// Query row i is component ids[i]; candidate row i is the same component on
/// the other material pair.
inline RetrievalReport retrieval_from_embeddings(const std::vector<int>& ids,
                                                 const std::vector<int>& categories,
                                                 const Tensor& queries, const Tensor& cands) {
  const std::size_t n = ids.size();
  if (queries.rows() != n || cands.rows() != n || categories.size() != n) {
    throw std::invalid_argument("retrieval: query/candidate/id counts differ");
  }
  RetrievalReport rep;
  rep.queries = n;
  rep.query_ids = ids;
  std::array<std::size_t, kCategoryCount> h1{}, h10{};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) s[j] = dot(queries.row(i), cands.row(j));
    const auto r = rank_of(s, ids, i);
    rep.ranks.push_back(r);
    const auto c = static_cast<std::size_t>(categories[i]);
    ++rep.count.at(c);
    h1[c] += r <= 1 ? 1 : 0;
    h10[c] += r <= 10 ? 1 : 0;
  }
  std::size_t present = 0;
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (rep.count[c] == 0) continue;
    rep.r1[c] = static_cast<double>(h1[c]) / static_cast<double>(rep.count[c]);
    rep.r10[c] = static_cast<double>(h10[c]) / static_cast<double>(rep.count[c]);
    rep.avg_r1 += rep.r1[c];
    rep.avg_r10 += rep.r10[c];
    ++present;
  }
  if (present > 0) {
    rep.avg_r1 /= static_cast<double>(present);
    rep.avg_r10 /= static_cast<double>(present);
  }
  if (n > 0) {
    rep.query_r1 = recall_at(rep.ranks, 1);
    rep.query_r10 = recall_at(rep.ranks, 10);
  }
  return rep;
}

/// Queries each component's render on `query_pair` against every component's
/// render on `cand_pair`.
inline RetrievalReport retrieval_protocol(Model<float>& model, const Tensor& guidance,
                                          VideoStore& store, const std::vector<int>& components,
                                          int query_pair, int cand_pair, std::size_t batch = 16) {
  if (query_pair == cand_pair) throw std::invalid_argument("retrieval: query pair equals candidate pair");
  const auto& m = store.dataset().manifest;
  std::vector<std::string> gaps;
  for (int id : components) {
    for (int p : {query_pair, cand_pair}) {
      if (m.find(id, p) == nullptr) {
        gaps.push_back("component " + std::to_string(id) + " pair " + std::to_string(p));
      }
    }
  }
  if (!gaps.empty()) {
    std::string msg = "retrieval: missing renders:";
    for (const auto& gp : gaps) msg += " [" + gp + "]";
    throw std::runtime_error(msg);
  }
  std::vector<std::pair<int, int>> qk, ck;
  std::vector<int> cats;
  for (int id : components) {
    qk.emplace_back(id, query_pair);
    ck.emplace_back(id, cand_pair);
    cats.push_back(static_cast<int>(m.find(id, query_pair)->category));
  }
  auto rep = retrieval_from_embeddings(components, cats, embed_videos(model, guidance, store, qk, batch),
                                       embed_videos(model, guidance, store, ck, batch));
  rep.label = "query_pair=" + std::to_string(query_pair) + " cand_pair=" + std::to_string(cand_pair);
  return rep;
}

/// Field-wise mean of several reports (ranks concatenated).
inline RetrievalReport average_reports(const std::vector<RetrievalReport>& reps) {
  if (reps.empty()) throw std::invalid_argument("average_reports: empty");
  RetrievalReport out;
  const double n = static_cast<double>(reps.size());
  for (const auto& r : reps) {
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      out.r1[c] += r.r1[c] / n;
      out.r10[c] += r.r10[c] / n;
      out.count[c] += r.count[c];
    }
    out.avg_r1 += r.avg_r1 / n;
    out.avg_r10 += r.avg_r10 / n;
    out.query_r1 += r.query_r1 / n;
    out.query_r10 += r.query_r10 / n;
    out.queries += r.queries;
    out.query_ids.insert(out.query_ids.end(), r.query_ids.begin(), r.query_ids.end());
    out.ranks.insert(out.ranks.end(), r.ranks.begin(), r.ranks.end());
    out.label += (out.label.empty() ? "" : "; ") + r.label;
  }
  return out;
}

inline void write_report_csv(std::ostream& os, const RetrievalReport& r) {
  os << "category,queries,R@1,R@10\n";
  char buf[128];
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f\n",
                  synth::category_name(static_cast<synth::Category>(c)).c_str(), r.count[c], r.r1[c],
                  r.r10[c]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "average_category,%zu,%.6f,%.6f\n", r.queries, r.avg_r1, r.avg_r10);
  os << buf;
  std::snprintf(buf, sizeof buf, "average_query,%zu,%.6f,%.6f\n", r.queries, r.query_r1, r.query_r10);
  os << buf;
}

inline std::string format_report_table(const RetrievalReport& r) {
  std::ostringstream os;
  char buf[128];
  if (!r.label.empty()) os << r.label << '\n';
  os << "category        queries    R@1     R@10\n";
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    std::snprintf(buf, sizeof buf, "%-14s %8zu %7.1f%% %7.1f%%\n",
                  synth::category_name(static_cast<synth::Category>(c)).c_str(), r.count[c],
                  100 * r.r1[c], 100 * r.r10[c]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-14s %8zu %7.1f%% %7.1f%%\n", "avg (category)", r.queries,
                100 * r.avg_r1, 100 * r.avg_r10);
  os << buf;
  std::snprintf(buf, sizeof buf, "%-14s %8zu %7.1f%% %7.1f%%\n", "avg (query)", r.queries,
                100 * r.query_r1, 100 * r.query_r10);
  os << buf;
  return os.str();
}

// --- component centers ---------------------------------------------------------

struct ComponentCenters {
  std::size_t dim = 0;
  std::map<int, std::vector<float>> rows;
  std::set<int> degenerate;
};

inline ComponentCenters centers_from_embeddings(const std::vector<int>& ids, const Tensor& emb) {
  if (emb.rows() != ids.size()) throw std::invalid_argument("centers: id/embedding count mismatch");
  ComponentCenters out;
  out.dim = emb.cols();
  std::map<int, std::vector<double>> acc;
  std::map<int, std::size_t> cnt;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& a = acc[ids[i]];
    a.resize(out.dim, 0.0);
    for (std::size_t j = 0; j < out.dim; ++j) a[j] += emb[i * out.dim + j];
    ++cnt[ids[i]];
  }
  for (auto& [id, a] : acc) {
    std::vector<float> row(out.dim);
    for (std::size_t j = 0; j < out.dim; ++j) row[j] = static_cast<float>(a[j] / cnt[id]);
    if (normalize_in_place(row)) {
      out.rows.emplace(id, std::move(row));
    } else {
      out.degenerate.insert(id);
    }
  }
  return out;
}

/// Normalized mean embedding of each component over the given pairs.
inline ComponentCenters component_centers(Model<float>& model, const Tensor& guidance, VideoStore& store,
                                          const std::vector<int>& components, const std::vector<int>& pairs,
                                          std::size_t batch = 16) {
  std::vector<std::pair<int, int>> keys;
  std::vector<int> ids;
  for (int id : components)
    for (int p : pairs) {
      if (store.dataset().manifest.find(id, p) == nullptr) continue;
      keys.emplace_back(id, p);
      ids.push_back(id);
    }
  for (int id : components) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      throw std::runtime_error("centers: component " + std::to_string(id) + " has no videos");
    }
  }
  return centers_from_embeddings(ids, embed_videos(model, guidance, store, keys, batch));
}

struct Neighbor {
  int id = 0;
  double similarity = 0;
};

/// Cosine-ranked neighbors of `query`, excluding itself; ties by ascending id.
inline std::vector<Neighbor> nearest_components(const ComponentCenters& centers, int query,
                                                std::size_t top_n) {
  auto it = centers.rows.find(query);
  if (it == centers.rows.end()) {
    throw std::invalid_argument("nearest: component " + std::to_string(query) + " has no center");
  }
  std::vector<Neighbor> out;
  for (const auto& [id, row] : centers.rows) {
    if (id == query) continue;
    out.push_back({id, dot(it->second, row)});
  }
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

// --- export ------------------------------------------------------------------

/// Writes `<stem>.edt3` ([n, D]) and `<stem>.tsv` (row, component, pair).
inline void export_embeddings(const std::string& stem, const Tensor& emb,
                              const std::vector<std::pair<int, int>>& keys) {
  if (emb.rows() != keys.size()) throw std::invalid_argument("export: row/key count mismatch");
  edt3::save(stem + ".edt3", emb);
  std::ofstream os(stem + ".tsv", std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + stem + ".tsv");
  os << "#row\tcomponent_id\tpair_id\n";
  for (std::size_t i = 0; i < keys.size(); ++i) os << i << '\t' << keys[i].first << '\t' << keys[i].second << '\n';
}

}  // namespace edit3k
