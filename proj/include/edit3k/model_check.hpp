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
#include <map>
#include <optional>
#include <string>

#include "edit3k/contrastive.hpp"
#include "edit3k/gradcheck.hpp"
#include "edit3k/model.hpp"

namespace edit3k {

struct GroupGradError {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct ModelGradCheck {
  std::vector<GroupGradError> groups;
  double worst = 0;
  double loss = 0;
  double seconds = 0;
};

/// Central-difference check of the full training loss (batch + queue terms)
/// with respect to every named parameter tensor of a 64-bit model.
/// Entries whose analytic and numeric values are both below `floor` in
/// magnitude are compared with `floor` as the denominator.
inline ModelGradCheck grad_check_model(const ModelConfig& cfg, std::uint64_t seed,
                                       double eps = 1e-5, double floor = 1e-7) {
  const auto t0 = std::chrono::steady_clock::now();
  Model<double> m = Model<float>(cfg, seed).cast<double>();
  Rng rng(derive_seed(seed, {0x47434B}));
  const std::size_t nb = 2;
  BasicTensor<double> videos({2 * nb, cfg.frames, cfg.height, cfg.width, 3});
  for (auto& v : videos.storage()) v = rng.uniform();
  BasicTensor<double> guidance({cfg.guidance_tokens, cfg.dim});
  for (std::size_t i = 0; i < cfg.guidance_tokens; ++i) {
    std::vector<float> row(cfg.dim);
    for (auto& v : row) v = static_cast<float>(rng.normal());
    normalize_in_place(row);
    for (std::size_t j = 0; j < cfg.dim; ++j) guidance[i * cfg.dim + j] = row[j];
  }
  References refs;
  refs.dim = cfg.dim;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> row(cfg.dim);
    for (auto& v : row) v = static_cast<float>(rng.normal());
    normalize_in_place(row);
    refs.rows[c] = row;
  }
  auto loss = [&](ad::Graph<double>& g) {
    auto out = m.forward(g, videos, guidance);
    auto q = ad::slice(out.embeddings, 0, 0, nb);
    auto k = ad::slice(out.embeddings, 0, nb, 2 * nb);
    return loss_total(loss_batch(q, k, kDefaultTemperature),
                      std::optional(loss_queue(q, {0, 1}, refs, kDefaultTemperature)));
  };

  ModelGradCheck res;
  m.zero_grad();
  {
    ad::Graph<double> g;
    auto l = loss(g);
    res.loss = l.value()[0];
    g.backward(l);
  }
  for (auto& p : m.parameters()) {
    GroupGradError ge;
    ge.name = p.name;
    ge.size = p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      ad::Graph<double> gp(false);
      const double lp = loss(gp).value()[0];
      p.value[i] = orig - eps;
      ad::Graph<double> gm(false);
      const double lm = loss(gm).value()[0];
      p.value[i] = orig;
      const double num = (lp - lm) / (2 * eps), an = p.grad[i];
      const double abs_err = std::abs(an - num);
      ge.max_abs_error = std::max(ge.max_abs_error, abs_err);
      ge.max_rel_error = std::max(ge.max_rel_error, abs_err / std::max(floor, std::abs(an) + std::abs(num)));
    }
    res.worst = std::max(res.worst, ge.max_rel_error);
    res.groups.push_back(ge);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace edit3k
