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

// Guided spatial-temporal encoder and guided embedding decoder.
//
//   frames -> patch tokens -> [cls; patches; guidance] -> N_s self-attention
//   blocks -> per-frame class token -> (+ temporal position) N_t blocks ->
//   decoder: one learned query, N_d x { cross-attn over guidance,
//   cross-attn over temporal tokens } -> l2-normalized embedding.
//
// Blocks are pre-norm with residuals and a 4x GELU feed-forward.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "edit3k/autodiff.hpp"
#include "edit3k/kv.hpp"
#include "edit3k/rng.hpp"

namespace edit3k {

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch = 16;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t spatial_layers = 2;
  std::size_t temporal_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t frames = 16;
  std::size_t guidance_tokens = 6;
  bool temporal_position = true;
  bool guided_spatial = true;  // guidance tokens appended in the spatial encoder
  bool guided_decoder = true;  // guidance cross-attention block in the decoder

  /// 224x224 frames, 32x32 patches, D=512, 8 heads, N_t=N_d=2, N_v=16.
  /// N_s=12 mirrors the pretrained ViT-B/32 depth.
  static ModelConfig paper() {
    ModelConfig c;
    c.height = c.width = 224;
    c.patch = 32;
    c.dim = 512;
    c.heads = 8;
    c.spatial_layers = 12;
    c.temporal_layers = 2;
    c.decoder_layers = 2;
    c.frames = 16;
    return c;
  }

  /// Desk-scale defaults used by the CLI and the acceptance suite.
  static ModelConfig desk() { return ModelConfig{}; }

  /// Smallest configuration that exercises every code path.
  static ModelConfig micro() {
    ModelConfig c;
    c.height = c.width = 8;
    c.patch = 4;
    c.dim = 16;
    c.heads = 2;
    c.spatial_layers = c.temporal_layers = c.decoder_layers = 1;
    c.frames = 2;
    return c;
  }

  std::size_t patches() const { return (height / patch) * (width / patch); }
  std::size_t patch_dim() const { return patch * patch * 3; }

  void validate() const {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
      throw std::invalid_argument("model: patch size " + std::to_string(patch) +
                                  " must divide " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
    if (heads == 0 || dim % heads != 0) {
      throw std::invalid_argument("model: dim " + std::to_string(dim) +
                                  " not divisible by heads " + std::to_string(heads));
    }
    if (frames == 0 || guidance_tokens == 0) {
      throw std::invalid_argument("model: frames and guidance_tokens must be positive");
    }
  }
};

inline void to_kv(const ModelConfig& c, KeyValues& kv) {
  kv.set("model.height", c.height);
  kv.set("model.width", c.width);
  kv.set("model.patch", c.patch);
  kv.set("model.dim", c.dim);
  kv.set("model.heads", c.heads);
  kv.set("model.spatial_layers", c.spatial_layers);
  kv.set("model.temporal_layers", c.temporal_layers);
  kv.set("model.decoder_layers", c.decoder_layers);
  kv.set("model.frames", c.frames);
  kv.set("model.guidance_tokens", c.guidance_tokens);
  kv.set("model.temporal_position", c.temporal_position);
  kv.set("model.guided_spatial", c.guided_spatial);
  kv.set("model.guided_decoder", c.guided_decoder);
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.height = kv.get<std::size_t>("model.height");
  c.width = kv.get<std::size_t>("model.width");
  c.patch = kv.get<std::size_t>("model.patch");
  c.dim = kv.get<std::size_t>("model.dim");
  c.heads = kv.get<std::size_t>("model.heads");
  c.spatial_layers = kv.get<std::size_t>("model.spatial_layers");
  c.temporal_layers = kv.get<std::size_t>("model.temporal_layers");
  c.decoder_layers = kv.get<std::size_t>("model.decoder_layers");
  c.frames = kv.get<std::size_t>("model.frames");
  c.guidance_tokens = kv.get<std::size_t>("model.guidance_tokens");
  c.temporal_position = kv.get<bool>("model.temporal_position");
  c.guided_spatial = kv.get<bool>("model.guided_spatial");
  c.guided_decoder = kv.get<bool>("model.guided_decoder");
  c.validate();
  return c;
}

/// Cuts frames [F, H, W, 3] into row-major patches [F, H/P * W/P, P*P*3].
template <typename T>
BasicTensor<T> extract_patches(const BasicTensor<T>& frames, std::size_t patch) {
  if (frames.ndim() != 4 || frames.dim(3) != 3) {
    throw std::invalid_argument("patchify: expected [F, H, W, 3], got " + shape_str(frames.shape()));
  }
  const std::size_t f = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("patchify: frame " + std::to_string(h) + "x" + std::to_string(w) +
                                " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * 3;
  BasicTensor<T> out({f, gh * gw, pd});
  const T* src = frames.data().data();
  T* dst = out.data().data();
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px) {
        T* o = dst + ((fi * gh * gw) + py * gw + px) * pd;
        for (std::size_t y = 0; y < patch; ++y) {
          const T* row = src + ((fi * h + py * patch + y) * w + px * patch) * 3;
          std::copy_n(row, patch * 3, o + y * patch * 3);
        }
      }
  return out;
}

template <typename T>
class Model {
 public:
  using VarT = ad::Var<T>;
  using GraphT = ad::Graph<T>;

  struct Output {
    VarT embeddings;      // [S, D], unit rows
    VarT spatial_attn;    // last spatial block attention [S*N_v, heads, L, L]
    VarT decoder_attn;    // last temporal cross-attention [S, heads, 1, N_v]
    std::size_t cross_attention_blocks = 0;
  };

  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0x4D4F44454Cu}));
    const std::size_t d = cfg_.dim;
    add_normal("patch.weight", {cfg_.patch_dim(), d}, rng,
               1.0 / std::sqrt(static_cast<double>(cfg_.patch_dim())));
    add_const("patch.bias", {d}, 0);
    add_normal("spatial.pos", {cfg_.patches(), d}, rng);
    add_normal("spatial.cls", {1, d}, rng);
    for (std::size_t l = 0; l < cfg_.spatial_layers; ++l) add_self_block("spatial." + std::to_string(l), rng);
    add_const("spatial.ln_f.gain", {d}, 1);
    add_const("spatial.ln_f.bias", {d}, 0);
    if (cfg_.temporal_position) add_normal("temporal.pos", {cfg_.frames, d}, rng);
    for (std::size_t l = 0; l < cfg_.temporal_layers; ++l) add_self_block("temporal." + std::to_string(l), rng);
    add_normal("decoder.query", {1, d}, rng);
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      if (cfg_.guided_decoder) add_cross_block("decoder." + std::to_string(l) + ".guide", false, rng);
      add_cross_block("decoder." + std::to_string(l) + ".visual", true, rng);
    }
    add_const("decoder.ln_f.gain", {d}, 1);
    add_const("decoder.ln_f.bias", {d}, 0);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  Parameter<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("model: no parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("model: no parameter '" + name + "'");
    return params_[it->second];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Same weights in another scalar type (used by the 64-bit gradient check).
  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.cfg_ = cfg_;
    for (const auto& p : params_) m.push_param(Parameter<U>(p.name, p.value.template cast<U>()));
    return m;
  }

  /// Replaces parameter values by name (shapes must match).
  void load_values(const std::map<std::string, BasicTensor<T>>& values) {
    for (auto& p : params_) {
      auto it = values.find(p.name);
      if (it == values.end()) throw std::runtime_error("model: checkpoint lacks '" + p.name + "'");
      if (it->second.shape() != p.value.shape()) {
        throw std::runtime_error("model: '" + p.name + "' shape " + shape_str(it->second.shape()) +
                                 " != " + shape_str(p.value.shape()));
      }
      p.value = it->second;
    }
  }

  // --- stages ----------------------------------------------------------------

  /// frames [F, H, W, 3] -> tokens [F, N_p, D] (projection + spatial position).
  VarT patchify(GraphT& g, const BasicTensor<T>& frames) {
    if (frames.ndim() != 4 || frames.dim(1) != cfg_.height || frames.dim(2) != cfg_.width) {
      throw std::invalid_argument("patchify: frames " + shape_str(frames.shape()) +
                                  " do not match model " + std::to_string(cfg_.height) + "x" +
                                  std::to_string(cfg_.width));
    }
    const std::size_t f = frames.dim(0);
    auto patches = g.constant(extract_patches(frames, cfg_.patch));
    auto tok = ad::add_bias(ad::matmul(patches, p(g, "patch.weight")), p(g, "patch.bias"));
    return ad::add(tok, ad::repeat(p(g, "spatial.pos"), f));
  }

  /// tokens [F, N_p, D] -> per-frame class-token output [F, D].
  VarT spatial_encode(GraphT& g, VarT tokens, const BasicTensor<T>& guidance,
                      VarT* last_attn = nullptr) {
    const std::size_t f = tokens.shape()[0];
    std::vector<VarT> parts{ad::repeat(p(g, "spatial.cls"), f), tokens};
    if (cfg_.guided_spatial) {
      check_guidance(guidance);
      parts.push_back(ad::repeat(g.constant(guidance), f));
    }
    auto x = ad::concat(parts, 1);
    for (std::size_t l = 0; l < cfg_.spatial_layers; ++l) {
      x = self_block(g, x, "spatial." + std::to_string(l), last_attn);
    }
    x = ad::layer_norm(x, p(g, "spatial.ln_f.gain"), p(g, "spatial.ln_f.bias"));
    return ad::reshape(ad::slice(x, 1, 0, 1), {f, cfg_.dim});
  }

  /// frame embeddings [S, N_v, D] -> temporal tokens [S, N_v, D].
  VarT temporal_encode(GraphT& g, VarT frame_emb) {
    const auto& s = frame_emb.shape();
    if (s.size() != 3 || s[1] != cfg_.frames || s[2] != cfg_.dim) {
      throw std::invalid_argument("temporal_encode: expected [S, " + std::to_string(cfg_.frames) +
                                  ", " + std::to_string(cfg_.dim) + "], got " + shape_str(s));
    }
    auto x = frame_emb;
    if (cfg_.temporal_position) x = ad::add(x, ad::repeat(p(g, "temporal.pos"), s[0]));
    for (std::size_t l = 0; l < cfg_.temporal_layers; ++l) {
      x = self_block(g, x, "temporal." + std::to_string(l), nullptr);
    }
    return x;
  }

  /// temporal tokens [S, N_v, D] -> unit embeddings [S, D].
  VarT decode(GraphT& g, VarT temporal, const BasicTensor<T>& guidance, VarT* last_attn = nullptr,
              std::size_t* blocks = nullptr) {
    const std::size_t s = temporal.shape()[0];
    auto x = ad::repeat(p(g, "decoder.query"), s);
    VarT guide_mem;
    if (cfg_.guided_decoder) {
      check_guidance(guidance);
      guide_mem = ad::repeat(g.constant(guidance), s);
    }
    std::size_t count = 0;
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string pre = "decoder." + std::to_string(l);
      if (cfg_.guided_decoder) {
        x = cross_block(g, x, guide_mem, pre + ".guide", false, nullptr);
        ++count;
      }
      x = cross_block(g, x, temporal, pre + ".visual", true, last_attn);
      ++count;
    }
    if (blocks != nullptr) *blocks = count;
    x = ad::layer_norm(x, p(g, "decoder.ln_f.gain"), p(g, "decoder.ln_f.bias"));
    return ad::l2_normalize(ad::reshape(x, {s, cfg_.dim}));
  }

  /// frames [S, N_v, H, W, 3] -> embeddings [S, D].
  Output forward(GraphT& g, const BasicTensor<T>& videos, const BasicTensor<T>& guidance) {
    const auto& vs = videos.shape();
    if (vs.size() != 5 || vs[1] != cfg_.frames || vs[4] != 3) {
      throw std::invalid_argument("forward: expected [S, " + std::to_string(cfg_.frames) +
                                  ", H, W, 3], got " + shape_str(vs));
    }
    const std::size_t s = vs[0];
    Output out;
    auto frames = videos.reshaped({s * vs[1], vs[2], vs[3], 3});
    for (auto& v : frames.storage()) v = (v - T(0.5)) * T(4);  // center pixel range
    auto tokens = patchify(g, frames);
    auto per_frame = spatial_encode(g, tokens, guidance, &out.spatial_attn);
    auto temporal = temporal_encode(g, ad::reshape(per_frame, {s, cfg_.frames, cfg_.dim}));
    out.embeddings = decode(g, temporal, guidance, &out.decoder_attn, &out.cross_attention_blocks);
    return out;
  }

  /// All-zero guidance of the configured size (cold start).
  BasicTensor<T> zero_guidance() const { return BasicTensor<T>({cfg_.guidance_tokens, cfg_.dim}); }

 private:
  template <typename U>
  friend class Model;

  VarT p(GraphT& g, const std::string& name) { return g.param(param(name)); }

  void check_guidance(const BasicTensor<T>& guidance) const {
    if (guidance.shape() != Shape{cfg_.guidance_tokens, cfg_.dim}) {
      throw std::invalid_argument("guidance: expected " +
                                  shape_str({cfg_.guidance_tokens, cfg_.dim}) + ", got " +
                                  shape_str(guidance.shape()));
    }
  }

  VarT linear(GraphT& g, VarT x, const std::string& pre) {
    return ad::add_bias(ad::matmul(x, p(g, pre + ".weight")), p(g, pre + ".bias"));
  }

  VarT feed_forward(GraphT& g, VarT x, const std::string& pre) {
    auto h = ad::layer_norm(x, p(g, pre + ".ln2.gain"), p(g, pre + ".ln2.bias"));
    h = linear(g, ad::gelu(linear(g, h, pre + ".fc1")), pre + ".fc2");
    return ad::add(x, h);
  }

  VarT self_block(GraphT& g, VarT x, const std::string& pre, VarT* attn_out) {
    const std::size_t d = cfg_.dim;
    auto h = ad::layer_norm(x, p(g, pre + ".ln1.gain"), p(g, pre + ".ln1.bias"));
    auto qkv = linear(g, h, pre + ".qkv");
    auto a = ad::attention(ad::slice(qkv, 2, 0, d), ad::slice(qkv, 2, d, 2 * d),
                           ad::slice(qkv, 2, 2 * d, 3 * d), cfg_.heads);
    if (attn_out != nullptr) *attn_out = a;
    x = ad::add(x, linear(g, a, pre + ".out"));
    return feed_forward(g, x, pre);
  }

  VarT cross_block(GraphT& g, VarT x, VarT memory, const std::string& pre, bool norm_memory,
                   VarT* attn_out) {
    auto hq = ad::layer_norm(x, p(g, pre + ".ln1.gain"), p(g, pre + ".ln1.bias"));
    auto m = norm_memory ? ad::layer_norm(memory, p(g, pre + ".lnm.gain"), p(g, pre + ".lnm.bias"))
                         : memory;
    auto a = ad::attention(linear(g, hq, pre + ".q"), linear(g, m, pre + ".k"),
                           linear(g, m, pre + ".v"), cfg_.heads);
    if (attn_out != nullptr) *attn_out = a;
    x = ad::add(x, linear(g, a, pre + ".out"));
    return feed_forward(g, x, pre);
  }

  void push_param(Parameter<T> prm) {
    index_[prm.name] = params_.size();
    params_.push_back(std::move(prm));
  }

  void add_normal(const std::string& name, Shape shape, Rng& rng, double std = 0.02) {
    BasicTensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, std));
    push_param(Parameter<T>(name, std::move(t)));
  }

  void add_const(const std::string& name, Shape shape, T value) {
    push_param(Parameter<T>(name, BasicTensor<T>(std::move(shape), value)));
  }

  void add_linear(const std::string& pre, std::size_t in, std::size_t out, Rng& rng) {
    add_normal(pre + ".weight", {in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    add_const(pre + ".bias", {out}, 0);
  }

  void add_ffn(const std::string& pre, Rng& rng) {
    const std::size_t d = cfg_.dim;
    add_const(pre + ".ln2.gain", {d}, 1);
    add_const(pre + ".ln2.bias", {d}, 0);
    add_linear(pre + ".fc1", d, 4 * d, rng);
    add_linear(pre + ".fc2", 4 * d, d, rng);
  }

  void add_self_block(const std::string& pre, Rng& rng) {
    const std::size_t d = cfg_.dim;
    add_const(pre + ".ln1.gain", {d}, 1);
    add_const(pre + ".ln1.bias", {d}, 0);
    add_linear(pre + ".qkv", d, 3 * d, rng);
    add_linear(pre + ".out", d, d, rng);
    add_ffn(pre, rng);
  }

  void add_cross_block(const std::string& pre, bool norm_memory, Rng& rng) {
    const std::size_t d = cfg_.dim;
    add_const(pre + ".ln1.gain", {d}, 1);
    add_const(pre + ".ln1.bias", {d}, 0);
    if (norm_memory) {
      add_const(pre + ".lnm.gain", {d}, 1);
      add_const(pre + ".lnm.bias", {d}, 0);
    }
    add_linear(pre + ".q", d, d, rng);
    add_linear(pre + ".k", d, d, rng);
    add_linear(pre + ".v", d, d, rng);
    add_linear(pre + ".out", d, d, rng);
    add_ffn(pre, rng);
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// --- attention maps ---------------------------------------------------------

struct AttentionMaps {
  /// Class-token attention mass on each patch, head-averaged: [N_v, gh, gw].
  Tensor spatial;
  /// Same maps renormalized to sum to 1 per frame.
  Tensor spatial_normalized;
  /// Decoder query's last cross-attention over frames, head-averaged: [N_v].
  Tensor temporal;
};

/// Runs one video [N_v, H, W, 3] and extracts the attention maps of the last
/// spatial block and of the decoder's last visual cross-attention.
inline AttentionMaps attention_maps(Model<float>& model, const Tensor& video,
                                    const Tensor& guidance) {
  const auto& cfg = model.config();
  ad::Graph<float> g(false);
  auto batch = video.reshaped({1, video.dim(0), video.dim(1), video.dim(2), video.dim(3)});
  auto out = model.forward(g, batch, guidance);
  const auto sp = ad::attention_probs(out.spatial_attn, cfg.heads);  // [N_v, h, L, L]
  const std::size_t nv = cfg.frames, np = cfg.patches(), heads = cfg.heads;
  const std::size_t len = sp.dim(2);
  const std::size_t gh = cfg.height / cfg.patch, gw = cfg.width / cfg.patch;
  AttentionMaps maps;
  maps.spatial = Tensor({nv, gh, gw});
  maps.spatial_normalized = Tensor({nv, gh, gw});
  for (std::size_t f = 0; f < nv; ++f) {
    double mass = 0;
    for (std::size_t j = 0; j < np; ++j) {
      double a = 0;
      for (std::size_t h = 0; h < heads; ++h) a += sp[((f * heads + h) * len + 0) * len + 1 + j];
      a /= static_cast<double>(heads);
      maps.spatial[f * np + j] = static_cast<float>(a);
      mass += a;
    }
    for (std::size_t j = 0; j < np; ++j)
      maps.spatial_normalized[f * np + j] = static_cast<float>(maps.spatial[f * np + j] / mass);
  }
  const auto tp = ad::attention_probs(out.decoder_attn, cfg.heads);  // [1, h, 1, N_v]
  maps.temporal = Tensor({nv});
  for (std::size_t f = 0; f < nv; ++f) {
    double a = 0;
    for (std::size_t h = 0; h < heads; ++h) a += tp[h * nv + f];
    maps.temporal[f] = static_cast<float>(a / static_cast<double>(heads));
  }
  return maps;
}

}  // namespace edit3k
