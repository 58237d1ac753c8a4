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

// Procedural raw materials, the six editing-component families, and the
// two-slot rendering timeline.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "edit3k/rng.hpp"
#include "edit3k/tensor.hpp"

namespace edit3k::synth {

using Rgb = std::array<float, 3>;
/// [H, W, 3] in [0, 1].
using Image = Tensor;

inline constexpr double kPi = std::numbers::pi;

struct RenderConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 16;
  double duration = 4.0;
  std::string text = "EDIT";

  void validate() const {
    if (height < 8 || width < 8) {
      throw std::invalid_argument("render: resolution " + std::to_string(height) +
                                  "x" + std::to_string(width) +
                                  " below the 8x8 minimum");
    }
    if (frames < 2) throw std::invalid_argument("render: need at least 2 frames");
    if (!(duration > 0)) throw std::invalid_argument("render: duration must be positive");
  }
  /// Frame i sits at i * duration / frames (uniform, starting at 0).
  double frame_time(std::size_t i) const {
    return duration * static_cast<double>(i) / static_cast<double>(frames);
  }
};

// ---------------------------------------------------------------------------
// Materials

enum class MaterialKind { kStatic, kMoving };

struct PolygonLayer {
  std::vector<std::array<double, 2>> verts;  // offsets from center, normalized
  double cx = 0.5, cy = 0.5;
  double vx = 0.0, vy = 0.0;  // drift per second, normalized units
  Rgb color{};
};

struct Material {
  int id = 0;
  MaterialKind kind = MaterialKind::kStatic;
  std::uint64_t seed = 0;
  std::array<Rgb, 2> gradient{};
  double gradient_angle = 0.0;
  double noise_amp = 0.1;
  double noise_freq = 5.0;
  std::vector<PolygonLayer> polygons;
};

namespace detail {

inline double smooth(double x) { return x * x * (3 - 2 * x); }

inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = hash_unit(seed, ix, iy), b = hash_unit(seed, ix + 1, iy);
  const double c = hash_unit(seed, ix, iy + 1), d = hash_unit(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

inline bool inside_polygon(const std::vector<std::array<double, 2>>& v, double x,
                           double y) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i][1] > y) != (v[j][1] > y) &&
        x < (v[j][0] - v[i][0]) * (y - v[i][1]) / (v[j][1] - v[i][1]) + v[i][0]) {
      in = !in;
    }
  }
  return in;
}

inline double wrap_near(double v, double center) {
  return v - std::floor(v - center + 0.5);
}

inline Rgb random_color(Rng& rng, double lo = 0.05, double hi = 0.95) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

inline float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

}  // namespace detail

inline Material gen_material(std::uint64_t seed, MaterialKind kind, int id = 0) {
  Rng rng(derive_seed(seed, {0x4D41544Cu, static_cast<std::uint64_t>(kind)}));
  Material m;
  m.id = id;
  m.kind = kind;
  m.seed = seed;
  m.gradient = {detail::random_color(rng), detail::random_color(rng)};
  m.gradient_angle = rng.uniform(0, 2 * kPi);
  m.noise_amp = rng.uniform(0.05, 0.15);
  m.noise_freq = rng.uniform(3.0, 7.0);
  const std::size_t n_poly = 2 + rng.index(4);
  for (std::size_t p = 0; p < n_poly; ++p) {
    PolygonLayer layer;
    layer.cx = rng.uniform(0.1, 0.9);
    layer.cy = rng.uniform(0.1, 0.9);
    const double radius = rng.uniform(0.08, 0.22);
    const std::size_t nv = 3 + rng.index(5);
    std::vector<double> angles(nv);
    for (auto& a : angles) a = rng.uniform(0, 2 * kPi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double r = radius * rng.uniform(0.55, 1.0);
      layer.verts.push_back({r * std::cos(a), r * std::sin(a)});
    }
    layer.color = detail::random_color(rng);
    if (kind == MaterialKind::kMoving) {
      const double dir = rng.uniform(0, 2 * kPi);
      const double speed = rng.uniform(0.05, 0.15);
      layer.vx = speed * std::cos(dir);
      layer.vy = speed * std::sin(dir);
    }
    m.polygons.push_back(std::move(layer));
  }
  return m;
}

/// Pure function of (material, t): static kinds ignore t.
inline Image render_material(const Material& m, double t, std::size_t h, std::size_t w) {
  Image img({h, w, 3});
  const double ca = std::cos(m.gradient_angle), sa = std::sin(m.gradient_angle);
  const double time = m.kind == MaterialKind::kMoving ? t : 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double s = std::clamp(0.5 + (u - 0.5) * ca + (v - 0.5) * sa, 0.0, 1.0);
      const double n = m.noise_amp *
                       (detail::value_noise(m.seed, u * m.noise_freq, v * m.noise_freq) - 0.5);
      std::array<double, 3> c{};
      for (int k = 0; k < 3; ++k) {
        c[k] = m.gradient[0][k] * (1 - s) + m.gradient[1][k] * s + n;
      }
      for (const auto& p : m.polygons) {
        const double pcx = p.cx + p.vx * time, pcy = p.cy + p.vy * time;
        const double lx = detail::wrap_near(u, pcx) - pcx;
        const double ly = detail::wrap_near(v, pcy) - pcy;
        if (detail::inside_polygon(p.verts, lx, ly)) {
          for (int k = 0; k < 3; ++k) c[k] = p.color[k];
        }
      }
      float* px = img.data().data() + (y * w + x) * 3;
      for (int k = 0; k < 3; ++k) px[k] = detail::clamp01(c[k]);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Editing components

enum class Category : int {
  kVideoEffect = 0,
  kAnimation = 1,
  kTransition = 2,
  kFilter = 3,
  kSticker = 4,
  kText = 5,
};
inline constexpr std::size_t kNumCategories = 6;

inline const std::array<std::string, kNumCategories>& category_names() {
  static const std::array<std::string, kNumCategories> names = {
      "video_effect", "animation", "transition", "filter", "sticker", "text"};
  return names;
}

inline const std::string& category_name(Category c) {
  return category_names()[static_cast<std::size_t>(c)];
}

inline Category parse_category(const std::string& s) {
  const auto& names = category_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<Category>(i);
  throw std::invalid_argument("unknown component category '" + s + "'");
}

enum class Easing { kLinear, kSmooth, kEaseIn, kEaseOut };

inline double ease(Easing e, double s) {
  s = std::clamp(s, 0.0, 1.0);
  switch (e) {
    case Easing::kLinear: return s;
    case Easing::kSmooth: return s * s * (3 - 2 * s);
    case Easing::kEaseIn: return s * s;
    case Easing::kEaseOut: return 1 - (1 - s) * (1 - s);
  }
  return s;
}

struct FilterParams {
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double gamma = 1.0;
  bool operator==(const FilterParams&) const = default;
};

enum class ParticleShape { kDot, kRing, kCross, kSparkle };

struct EffectParams {
  ParticleShape shape = ParticleShape::kDot;
  Rgb color{};
  int count = 6;
  double blink_period = 1.0;  // seconds
  double size = 0.05;         // radius, normalized
  std::uint64_t layout_seed = 0;
  bool operator==(const EffectParams&) const = default;
};

struct AnimationParams {
  double zoom_from = 1.0, zoom_to = 1.0;
  double rot_from = 0.0, rot_to = 0.0;
  double tx = 0.0, ty = 0.0;
  double shear = 0.0;
  double persp_x = 0.0, persp_y = 0.0;
  Easing easing = Easing::kLinear;
  bool operator==(const AnimationParams&) const = default;
};

enum class TransitionKind { kCrossfade, kWipe, kSlide, kCircle };
enum class Direction { kLeft, kRight, kUp, kDown };

struct TransitionParams {
  TransitionKind kind = TransitionKind::kCrossfade;
  Direction direction = Direction::kLeft;
  Easing easing = Easing::kLinear;
  double softness = 0.05;  // edge width, normalized
  double cx = 0.5, cy = 0.5;
  bool operator==(const TransitionParams&) const = default;
};

enum class SpriteShape { kHeart, kStar, kPolygon };
enum class Motion { kStatic, kLinear, kCircular };

struct StickerParams {
  SpriteShape shape = SpriteShape::kHeart;
  Rgb color{};
  double scale = 0.2;  // sprite box side, fraction of frame width
  int sides = 5;
  double rotation = 0.0;
  Motion motion = Motion::kStatic;
  double cx = 0.5, cy = 0.5;
  double vx = 0.0, vy = 0.0;       // linear motion per second
  double radius = 0.0, omega = 0;  // circular motion
  bool operator==(const StickerParams&) const = default;
};

struct TextParams {
  double scale = 1.0;  // glyph cell size in pixels at 64 px width
  Rgb color{};
  bool outline = false;
  Rgb outline_color{};
  double x = 0.5, y = 0.5;  // anchor of the string center, normalized
  bool operator==(const TextParams&) const = default;
};

using ComponentParams = std::variant<EffectParams, AnimationParams, TransitionParams,
                                     FilterParams, StickerParams, TextParams>;

struct EditComponent {
  int id = 0;
  Category category = Category::kFilter;
  ComponentParams params;
  std::uint64_t seed = 0;
};

inline std::string describe(const EditComponent& c) {
  std::ostringstream os;
  os.precision(4);
  os << category_name(c.category) << ':';
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FilterParams>) {
          os << "matrix=";
          for (std::size_t i = 0; i < 9; ++i) os << (i ? "," : "") << p.matrix[i];
          os << ";gamma=" << p.gamma;
        } else if constexpr (std::is_same_v<P, EffectParams>) {
          os << "shape=" << static_cast<int>(p.shape) << ";count=" << p.count
             << ";period=" << p.blink_period << ";size=" << p.size << ";color="
             << p.color[0] << ',' << p.color[1] << ',' << p.color[2];
        } else if constexpr (std::is_same_v<P, AnimationParams>) {
          os << "zoom=" << p.zoom_from << "->" << p.zoom_to << ";rot=" << p.rot_from
             << "->" << p.rot_to << ";t=" << p.tx << ',' << p.ty << ";shear=" << p.shear
             << ";persp=" << p.persp_x << ',' << p.persp_y
             << ";easing=" << static_cast<int>(p.easing);
        } else if constexpr (std::is_same_v<P, TransitionParams>) {
          static const char* kinds[] = {"crossfade", "wipe", "slide", "circle"};
          static const char* dirs[] = {"left", "right", "up", "down"};
          os << "kind=" << kinds[static_cast<int>(p.kind)]
             << ";dir=" << dirs[static_cast<int>(p.direction)]
             << ";easing=" << static_cast<int>(p.easing) << ";softness=" << p.softness
             << ";center=" << p.cx << ',' << p.cy;
        } else if constexpr (std::is_same_v<P, StickerParams>) {
          os << "shape=" << static_cast<int>(p.shape) << ";scale=" << p.scale
             << ";motion=" << static_cast<int>(p.motion) << ";pos=" << p.cx << ','
             << p.cy;
        } else {
          os << "scale=" << p.scale << ";outline=" << p.outline << ";pos=" << p.x << ','
             << p.y;
        }
      },
      c.params);
  return os.str();
}

// --- per-family parameter generation --------------------------------------

namespace detail {

inline FilterParams make_filter(std::size_t j, Rng& rng) {
  FilterParams f;
  auto& m = f.matrix;
  const double s = rng.uniform(0.25, 0.6);
  switch (j % 5) {
    case 0: {  // warm / cool tint
      const double sign = rng.coin() ? 1.0 : -1.0;
      m = {1 + sign * s * 0.6, 0, 0, 0, 1, 0, 0, 0, 1 - sign * s * 0.6};
      break;
    }
    case 1: {  // sepia blend
      const std::array<double, 9> sep = {0.393, 0.769, 0.189, 0.349, 0.686,
                                         0.168, 0.272, 0.534, 0.131};
      for (std::size_t i = 0; i < 9; ++i) {
        const double id = (i % 4 == 0) ? 1.0 : 0.0;
        m[i] = id * (1 - s) + sep[i] * s;
      }
      break;
    }
    case 2: {  // saturation change
      const double sat = rng.coin() ? 1 + 2 * s : 1 - 1.5 * s;
      const std::array<double, 3> lum = {0.299, 0.587, 0.114};
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
          m[r * 3 + c] = (1 - sat) * lum[c] + (r == c ? sat : 0.0);
      break;
    }
    case 3: {  // channel rotation blend
      const bool fwd = rng.coin();
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          const double id = r == c ? 1.0 : 0.0;
          const double rot = (fwd ? (c == (r + 1) % 3) : (c == (r + 2) % 3)) ? 1.0 : 0.0;
          m[r * 3 + c] = id * (1 - s * 1.4) + rot * s * 1.4;
        }
      break;
    }
    default: {  // contrast
      const double k = rng.coin() ? 1 + s : 1 - 0.8 * s;
      m = {k, 0, 0, 0, k, 0, 0, 0, k};
      break;
    }
  }
  f.gamma = rng.uniform(0.6, 1.6);
  return f;
}

inline EffectParams make_effect(std::size_t j, Rng& rng) {
  EffectParams e;
  e.shape = static_cast<ParticleShape>(j % 4);
  e.color = random_color(rng, 0.3, 1.0);
  e.count = 4 + static_cast<int>(rng.index(9));
  e.blink_period = rng.uniform(0.5, 2.0);
  e.size = rng.uniform(0.04, 0.08);
  e.layout_seed = mix64(rng.engine()());
  return e;
}

inline AnimationParams make_animation(std::size_t j, Rng& rng) {
  AnimationParams a;
  const double sign = rng.coin() ? 1.0 : -1.0;
  switch (j % 6) {
    case 0: a.zoom_to = rng.uniform(1.3, 1.7); break;
    case 1: a.zoom_from = rng.uniform(1.3, 1.7); break;
    case 2: a.rot_to = sign * rng.uniform(0.4, 0.9); a.zoom_from = a.zoom_to = 1.2; break;
    case 3:
      if (rng.coin()) a.tx = sign * rng.uniform(0.15, 0.3);
      else a.ty = sign * rng.uniform(0.15, 0.3);
      break;
    case 4: a.shear = sign * rng.uniform(0.3, 0.6); break;
    default:
      if (rng.coin()) a.persp_x = sign * rng.uniform(0.4, 0.8);
      else a.persp_y = sign * rng.uniform(0.4, 0.8);
      break;
  }
  a.easing = static_cast<Easing>(rng.index(4));
  return a;
}

inline TransitionParams make_transition(std::size_t j, Rng& rng,
                                        const std::vector<TransitionParams>& prev) {
  using K = TransitionKind;
  using D = Direction;
  struct Slot { K kind; D dir; int mirror_of; };
  // The first slots pin a mirrored wipe pair and cover every family.
  static const std::array<Slot, 12> schedule = {{
      {K::kWipe, D::kLeft, -1},   {K::kWipe, D::kRight, 0},  {K::kSlide, D::kUp, -1},
      {K::kCircle, D::kLeft, -1}, {K::kCrossfade, D::kLeft, -1},
      {K::kSlide, D::kDown, 2},   {K::kWipe, D::kUp, -1},    {K::kCircle, D::kLeft, -1},
      {K::kCrossfade, D::kLeft, -1}, {K::kSlide, D::kLeft, -1},
      {K::kWipe, D::kDown, 6},    {K::kCrossfade, D::kLeft, -1},
  }};
  TransitionParams t;
  if (j < schedule.size()) {
    const auto& s = schedule[j];
    if (s.mirror_of >= 0 && static_cast<std::size_t>(s.mirror_of) < prev.size()) {
      t = prev[static_cast<std::size_t>(s.mirror_of)];
      t.direction = s.dir;
      return t;
    }
    t.kind = s.kind;
    t.direction = s.dir;
  } else {
    t.kind = static_cast<K>(rng.index(4));
    t.direction = static_cast<D>(rng.index(4));
  }
  t.easing = static_cast<Easing>(rng.index(4));
  t.softness = rng.uniform(0.02, 0.12);
  if (t.kind == K::kCircle) {
    t.cx = rng.uniform(0.2, 0.8);
    t.cy = rng.uniform(0.2, 0.8);
  }
  return t;
}

inline StickerParams make_sticker(std::size_t j, Rng& rng) {
  StickerParams s;
  s.shape = static_cast<SpriteShape>(j % 3);
  s.color = random_color(rng, 0.2, 1.0);
  s.scale = rng.uniform(0.18, 0.22);
  s.sides = 5 + static_cast<int>(rng.index(4));
  s.rotation = rng.uniform(0, 2 * kPi);
  // Static sprites sit near the centers of a 4x4 grid.
  const double grid[] = {0.125, 0.375, 0.625, 0.875};
  s.cx = grid[rng.index(4)] + rng.uniform(-0.015, 0.015);
  s.cy = grid[rng.index(4)] + rng.uniform(-0.015, 0.015);
  if (j % 2 == 1) {
    if (rng.coin()) {
      s.motion = Motion::kLinear;
      const double dir = rng.uniform(0, 2 * kPi);
      s.vx = 0.08 * std::cos(dir);
      s.vy = 0.08 * std::sin(dir);
      s.cx = 0.5 - 2 * s.vx;
      s.cy = 0.5 - 2 * s.vy;
    } else {
      s.motion = Motion::kCircular;
      s.cx = rng.uniform(0.4, 0.6);
      s.cy = rng.uniform(0.4, 0.6);
      s.radius = rng.uniform(0.15, 0.25);
      s.omega = (rng.coin() ? 1 : -1) * rng.uniform(0.8, 1.6);
    }
  }
  return s;
}

inline TextParams make_text(std::size_t j, Rng& rng) {
  TextParams t;
  t.scale = 1.0 + 0.5 * static_cast<double>(rng.index(3));
  t.color = random_color(rng, 0.0, 1.0);
  t.outline = (j % 2) == 1;
  t.outline_color = random_color(rng, 0.0, 1.0);
  const double rows[] = {0.18, 0.5, 0.82};
  t.y = rows[j % 3] + rng.uniform(-0.04, 0.04);
  t.x = 0.5 + rng.uniform(-0.1, 0.1);
  return t;
}

inline double max_abs_diff(const double* a, const double* b, std::size_t n) {
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Whether two parameter records of one family are too close to be told apart.
inline bool too_similar(const ComponentParams& a, const ComponentParams& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      [&](const auto& pa) -> bool {
        using P = std::decay_t<decltype(pa)>;
        const auto& pb = std::get<P>(b);
        if constexpr (std::is_same_v<P, FilterParams>) {
          return max_abs_diff(pa.matrix.data(), pb.matrix.data(), 9) < 0.05 &&
                 std::abs(pa.gamma - pb.gamma) < 0.05;
        } else if constexpr (std::is_same_v<P, EffectParams>) {
          return pa.shape == pb.shape && pa.count == pb.count &&
                 std::abs(pa.blink_period - pb.blink_period) < 0.05 &&
                 max_abs_diff(std::array<double, 3>{pa.color[0], pa.color[1], pa.color[2]}.data(),
                              std::array<double, 3>{pb.color[0], pb.color[1], pb.color[2]}.data(),
                              3) < 0.05;
        } else if constexpr (std::is_same_v<P, TransitionParams>) {
          return pa.kind == pb.kind && pa.direction == pb.direction &&
                 pa.easing == pb.easing && std::abs(pa.softness - pb.softness) < 0.01 &&
                 std::abs(pa.cx - pb.cx) < 0.05 && std::abs(pa.cy - pb.cy) < 0.05;
        } else {
          return pa == pb;
        }
      },
      a);
}

}  // namespace detail

using CategoryCounts = std::array<std::size_t, kNumCategories>;

/// Draws `counts[c]` components per category. Ids are assigned in category
/// order; identical seeds give identical records.
inline std::vector<EditComponent> gen_component_bank(const CategoryCounts& counts,
                                                     std::uint64_t seed) {
  std::vector<EditComponent> bank;
  int next_id = 0;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    std::vector<TransitionParams> transitions;
    std::vector<std::size_t> same_cat;
    for (std::size_t j = 0; j < counts[c]; ++j) {
      EditComponent comp;
      comp.id = next_id;
      comp.category = static_cast<Category>(c);
      for (std::uint64_t attempt = 0;; ++attempt) {
        comp.seed = derive_seed(seed, {0x434F4D50u, c, j, attempt});
        Rng rng(comp.seed);
        switch (comp.category) {
          case Category::kFilter: comp.params = detail::make_filter(j, rng); break;
          case Category::kVideoEffect: comp.params = detail::make_effect(j, rng); break;
          case Category::kAnimation: comp.params = detail::make_animation(j, rng); break;
          case Category::kTransition:
            comp.params = detail::make_transition(j, rng, transitions);
            break;
          case Category::kSticker: comp.params = detail::make_sticker(j, rng); break;
          case Category::kText: comp.params = detail::make_text(j, rng); break;
        }
        bool clash = false;
        for (auto k : same_cat) clash = clash || detail::too_similar(bank[k].params, comp.params);
        if (!clash) break;
        if (attempt > 1000) throw std::runtime_error("component bank: parameter space exhausted");
      }
      if (comp.category == Category::kTransition)
        transitions.push_back(std::get<TransitionParams>(comp.params));
      same_cat.push_back(bank.size());
      bank.push_back(std::move(comp));
      ++next_id;
    }
  }
  return bank;
}

/// Named-count overload; rejects unknown category names.
inline std::vector<EditComponent> gen_component_bank(
    const std::map<std::string, std::size_t>& counts, std::uint64_t seed) {
  CategoryCounts arr{};
  for (const auto& [name, n] : counts) arr[static_cast<std::size_t>(parse_category(name))] = n;
  return gen_component_bank(arr, seed);
}

// ---------------------------------------------------------------------------
// Component application

namespace detail {

inline std::array<float, 3> sample_bilinear(const Image& img, double fx, double fy) {
  const auto h = static_cast<std::int64_t>(img.dim(0));
  const auto w = static_cast<std::int64_t>(img.dim(1));
  fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
  fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::int64_t>(std::floor(fx));
  const auto y0 = static_cast<std::int64_t>(std::floor(fy));
  const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
  std::array<float, 3> out{};
  const float* d = img.data().data();
  for (int k = 0; k < 3; ++k) {
    const double a = d[(y0 * w + x0) * 3 + k], b = d[(y0 * w + x1) * 3 + k];
    const double c = d[(y1 * w + x0) * 3 + k], e = d[(y1 * w + x1) * 3 + k];
    out[k] = static_cast<float>((a * (1 - ax) + b * ax) * (1 - ay) + (c * (1 - ax) + e * ax) * ay);
  }
  return out;
}

}  // namespace detail

/// Forward homography in normalized image coordinates at slot progress s.
inline Eigen::Matrix3d animation_homography(const AnimationParams& p, double s) {
  const double e = ease(p.easing, s);
  const double zoom = p.zoom_from + (p.zoom_to - p.zoom_from) * e;
  const double rot = p.rot_from + (p.rot_to - p.rot_from) * e;
  Eigen::Matrix3d to_center, from_center, scale, rotate, shear, persp;
  to_center << 1, 0, -0.5, 0, 1, -0.5, 0, 0, 1;
  from_center << 1, 0, 0.5 + p.tx * e, 0, 1, 0.5 + p.ty * e, 0, 0, 1;
  scale << zoom, 0, 0, 0, zoom, 0, 0, 0, 1;
  rotate << std::cos(rot), -std::sin(rot), 0, std::sin(rot), std::cos(rot), 0, 0, 0, 1;
  shear << 1, p.shear * e, 0, 0, 1, 0, 0, 0, 1;
  persp << 1, 0, 0, 0, 1, 0, p.persp_x * e, p.persp_y * e, 1;
  return from_center * persp * shear * rotate * scale * to_center;
}

/// Inverse-maps every output pixel through the homography, bilinear with
/// edge clamping.
inline Image warp_homography(const Image& src, const Eigen::Matrix3d& fwd) {
  const std::size_t h = src.dim(0), w = src.dim(1);
  const Eigen::Matrix3d inv = fwd.inverse();
  Image out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Eigen::Vector3d u((static_cast<double>(x) + 0.5) / static_cast<double>(w),
                              (static_cast<double>(y) + 0.5) / static_cast<double>(h), 1.0);
      const Eigen::Vector3d s = inv * u;
      const double sx = s.x() / s.z(), sy = s.y() / s.z();
      auto px = detail::sample_bilinear(src, sx * static_cast<double>(w) - 0.5,
                                        sy * static_cast<double>(h) - 0.5);
      std::copy(px.begin(), px.end(), out.data().data() + (y * w + x) * 3);
    }
  }
  return out;
}

inline void apply_filter(Image& img, const FilterParams& f) {
  auto d = img.data();
  for (std::size_t i = 0; i < d.size(); i += 3) {
    const double r = d[i], g = d[i + 1], b = d[i + 2];
    for (std::size_t k = 0; k < 3; ++k) {
      double v = f.matrix[k * 3] * r + f.matrix[k * 3 + 1] * g + f.matrix[k * 3 + 2] * b;
      v = std::clamp(v, 0.0, 1.0);
      if (f.gamma != 1.0) v = std::pow(v, f.gamma);
      d[i + k] = static_cast<float>(v);
    }
  }
}

inline double particle_mask(ParticleShape shape, double dx, double dy, double r) {
  const double dist = std::sqrt(dx * dx + dy * dy);
  switch (shape) {
    case ParticleShape::kDot: return dist < r ? 1.0 : 0.0;
    case ParticleShape::kRing: return std::abs(dist - 0.7 * r) < 0.3 * r ? 1.0 : 0.0;
    case ParticleShape::kCross:
      return ((std::abs(dx) < 0.25 * r && std::abs(dy) < r) ||
              (std::abs(dy) < 0.25 * r && std::abs(dx) < r))
                 ? 1.0
                 : 0.0;
    case ParticleShape::kSparkle:
      return std::sqrt(std::abs(dx)) + std::sqrt(std::abs(dy)) < std::sqrt(r) ? 1.0 : 0.0;
  }
  return 0.0;
}

/// Additive blinking particle overlay; clamped afterwards.
inline void apply_effect(Image& img, const EffectParams& e, double t) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  Rng layout(e.layout_seed);
  auto d = img.data();
  for (int p = 0; p < e.count; ++p) {
    const double px = layout.uniform(0.05, 0.95), py = layout.uniform(0.05, 0.95);
    const double phase = layout.uniform(0.0, 1.0);
    const double intensity = 0.5 + 0.5 * std::cos(2 * kPi * (t / e.blink_period + phase));
    for (std::size_t y = 0; y < h; ++y) {
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      if (std::abs(v - py) > e.size) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const double m = particle_mask(e.shape, u - px, v - py, e.size);
        if (m == 0.0) continue;
        for (std::size_t k = 0; k < 3; ++k) {
          auto& c = d[(y * w + x) * 3 + k];
          c = detail::clamp01(c + intensity * m * e.color[k]);
        }
      }
    }
  }
}

inline std::array<double, 2> sticker_center(const StickerParams& s, double t) {
  switch (s.motion) {
    case Motion::kStatic: return {s.cx, s.cy};
    case Motion::kLinear: return {s.cx + s.vx * t, s.cy + s.vy * t};
    case Motion::kCircular:
      return {s.cx + s.radius * std::cos(s.omega * t), s.cy + s.radius * std::sin(s.omega * t)};
  }
  return {s.cx, s.cy};
}

/// Sprite coverage at sprite-local coordinates in [-1, 1]^2.
inline bool sprite_covers(const StickerParams& s, double lx, double ly) {
  switch (s.shape) {
    case SpriteShape::kHeart: {
      const double x = lx * 1.25, y = -ly * 1.25 + 0.25;
      const double a = x * x + y * y - 1;
      return a * a * a - x * x * y * y * y <= 0;
    }
    case SpriteShape::kStar: {
      std::vector<std::array<double, 2>> v;
      for (int i = 0; i < 10; ++i) {
        const double ang = s.rotation + kPi * i / 5.0;
        const double r = (i % 2 == 0) ? 1.0 : 0.45;
        v.push_back({r * std::cos(ang), r * std::sin(ang)});
      }
      return detail::inside_polygon(v, lx, ly);
    }
    case SpriteShape::kPolygon: {
      std::vector<std::array<double, 2>> v;
      for (int i = 0; i < s.sides; ++i) {
        const double ang = s.rotation + 2 * kPi * i / s.sides;
        v.push_back({std::cos(ang), std::sin(ang)});
      }
      return detail::inside_polygon(v, lx, ly);
    }
  }
  return false;
}

struct PixelBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  bool contains(double x, double y) const {
    return x >= static_cast<double>(x0) && x < static_cast<double>(x1) &&
           y >= static_cast<double>(y0) && y < static_cast<double>(y1);
  }
  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

/// Tight pixel bounding box of the rendered sprite at time t.
inline std::optional<PixelBox> sticker_bbox(const StickerParams& s, double t, std::size_t h,
                                            std::size_t w) {
  const auto c = sticker_center(s, t);
  const double half = s.scale / 2;
  std::optional<PixelBox> box;
  for (std::size_t y = 0; y < h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double lx = (u - c[0]) / half, ly = (v - c[1]) / half * static_cast<double>(h) /
                                                   static_cast<double>(w);
      if (std::abs(lx) > 1 || std::abs(ly) > 1 || !sprite_covers(s, lx, ly)) continue;
      if (!box) box = PixelBox{x, y, x + 1, y + 1};
      box->x0 = std::min(box->x0, x);
      box->y0 = std::min(box->y0, y);
      box->x1 = std::max(box->x1, x + 1);
      box->y1 = std::max(box->y1, y + 1);
    }
  }
  return box;
}

/// Alpha-over composite of the sprite (opaque fill with a darker rim).
inline void apply_sticker(Image& img, const StickerParams& s, double t) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const auto c = sticker_center(s, t);
  const double half = s.scale / 2;
  auto d = img.data();
  for (std::size_t y = 0; y < h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double lx = (u - c[0]) / half;
      const double ly = (v - c[1]) / half * static_cast<double>(h) / static_cast<double>(w);
      if (std::abs(lx) > 1 || std::abs(ly) > 1 || !sprite_covers(s, lx, ly)) continue;
      const bool rim = !sprite_covers(s, lx * 1.25, ly * 1.25);
      for (std::size_t k = 0; k < 3; ++k)
        d[(y * w + x) * 3 + k] = rim ? s.color[k] * 0.4f : s.color[k];
    }
  }
}

namespace detail {

inline const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::map<char, std::array<std::uint8_t, 7>> font = {
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'3', {0x1E, 0x01, 0x01, 0x0E, 0x01, 0x01, 0x1E}},
      {' ', {0, 0, 0, 0, 0, 0, 0}},
  };
  auto it = font.find(ch);
  return it == font.end() ? nullptr : &it->second;
}

}  // namespace detail

/// Rasterizes `text` in the 5x7 bitmap font with the given style.
inline void apply_text(Image& img, const TextParams& p, const std::string& text) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const auto cell = std::max<std::int64_t>(
      1, std::llround(p.scale * static_cast<double>(w) / 64.0));
  const auto gw = static_cast<std::int64_t>(text.size()) * 6 - 1;
  const auto width_px = gw * cell, height_px = 7 * cell;
  const auto left = std::llround(p.x * static_cast<double>(w)) - width_px / 2;
  const auto top = std::llround(p.y * static_cast<double>(h)) - height_px / 2;
  // Glyph mask on the (padded) cell grid first, then outline and fill.
  std::vector<std::uint8_t> mask(static_cast<std::size_t>((gw + 2) * 9), 0);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto* g = detail::glyph(text[i]);
    if (g == nullptr) {
      throw std::invalid_argument(std::string("text: unsupported character '") + text[i] + "'");
    }
    for (std::int64_t r = 0; r < 7; ++r)
      for (std::int64_t c = 0; c < 5; ++c)
        if ((*g)[static_cast<std::size_t>(r)] & (0x10 >> c))
          mask[static_cast<std::size_t>((r + 1) * (gw + 2) + static_cast<std::int64_t>(i) * 6 + c + 1)] = 1;
  }
  auto d = img.data();
  auto paint = [&](std::int64_t gx, std::int64_t gy, const Rgb& col) {
    for (std::int64_t yy = 0; yy < cell; ++yy)
      for (std::int64_t xx = 0; xx < cell; ++xx) {
        const auto px = left + gx * cell + xx, py = top + gy * cell + yy;
        if (px < 0 || py < 0 || px >= static_cast<std::int64_t>(w) ||
            py >= static_cast<std::int64_t>(h))
          continue;
        const auto idx = static_cast<std::size_t>((py * static_cast<std::int64_t>(w) + px) * 3);
        for (std::size_t k = 0; k < 3; ++k) d[idx + k] = col[k];
      }
  };
  for (std::int64_t r = 0; r < 9; ++r)
    for (std::int64_t c = 0; c < gw + 2; ++c) {
      const bool on = mask[static_cast<std::size_t>(r * (gw + 2) + c)] != 0;
      if (on) {
        paint(c - 1, r - 1, p.color);
      } else if (p.outline) {
        bool near = false;
        for (std::int64_t dy = -1; dy <= 1 && !near; ++dy)
          for (std::int64_t dx = -1; dx <= 1 && !near; ++dx) {
            const auto rr = r + dy, cc = c + dx;
            if (rr >= 0 && rr < 9 && cc >= 0 && cc < gw + 2)
              near = mask[static_cast<std::size_t>(rr * (gw + 2) + cc)] != 0;
          }
        if (near) paint(c - 1, r - 1, p.outline_color);
      }
    }
}

/// Blend of slot A and slot B frames at transition progress s in [0, 1].
inline Image apply_transition(const Image& a, const Image& b, const TransitionParams& p,
                              double s) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  const double alpha = ease(p.easing, s);
  Image out({h, w, 3});
  auto od = out.data();
  auto soft_step = [&](double signed_dist) {  // 1 -> B side
    if (p.softness <= 0) return signed_dist >= 0 ? 1.0 : 0.0;
    return std::clamp(0.5 + signed_dist / p.softness, 0.0, 1.0);
  };
  for (std::size_t y = 0; y < h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const std::size_t idx = (y * w + x) * 3;
      double mix = 0.0;
      switch (p.kind) {
        case TransitionKind::kCrossfade: mix = alpha; break;
        case TransitionKind::kWipe: {
          // Boundary sweeps across the frame in the named direction.
          double sd = 0;
          switch (p.direction) {
            case Direction::kLeft: sd = u - (1 - alpha); break;
            case Direction::kRight: sd = alpha - u; break;
            case Direction::kUp: sd = v - (1 - alpha); break;
            case Direction::kDown: sd = alpha - v; break;
          }
          mix = alpha <= 0 ? 0.0 : alpha >= 1 ? 1.0 : soft_step(sd);
          break;
        }
        case TransitionKind::kSlide: {
          double ox = 0, oy = 0;
          switch (p.direction) {
            case Direction::kLeft: ox = 1; break;
            case Direction::kRight: ox = -1; break;
            case Direction::kUp: oy = 1; break;
            case Direction::kDown: oy = -1; break;
          }
          // A shifted by -alpha * dir; B enters from the opposite side.
          const double au = u + alpha * ox, av = v + alpha * oy;
          const double bu = u + (alpha - 1) * ox, bv = v + (alpha - 1) * oy;
          const bool use_b = bu >= 0 && bu < 1 && bv >= 0 && bv < 1 && alpha > 0;
          const Image& src = use_b ? b : a;
          const double su = use_b ? bu : au, sv = use_b ? bv : av;
          auto px = detail::sample_bilinear(src, su * static_cast<double>(w) - 0.5,
                                            sv * static_cast<double>(h) - 0.5);
          for (std::size_t k = 0; k < 3; ++k) od[idx + k] = px[k];
          continue;
        }
        case TransitionKind::kCircle: {
          const double rmax = std::sqrt(2.0);
          const double dist = std::hypot(u - p.cx, v - p.cy);
          mix = alpha <= 0 ? 0.0 : alpha >= 1 ? 1.0 : soft_step(alpha * rmax - dist);
          break;
        }
      }
      for (std::size_t k = 0; k < 3; ++k) {
        const double va = a[idx + k], vb = b[idx + k];
        od[idx + k] = static_cast<float>(va + (vb - va) * mix);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timeline

struct MaterialPair {
  Material a;
  Material b;
  int pair_id = 0;
};

inline bool is_transition(const EditComponent& c) {
  return c.category == Category::kTransition;
}

/// Transition window bounds on the 4 s timeline: [1 s, 3 s).
inline constexpr double kWindowBegin = 1.0;
inline constexpr double kWindowEnd = 3.0;

inline bool in_transition_window(double t) { return t >= kWindowBegin && t < kWindowEnd; }

/// One frame of the two-slot timeline. Non-transition components apply to
/// both 2 s slots; a transition shrinks each slot to 1 s and blends A into B
/// over the middle 2 s.
inline Image render_frame(const MaterialPair& pair, const EditComponent& comp, double t,
                          const RenderConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width;
  const double slot = cfg.duration / 2;
  if (is_transition(comp)) {
    const double wb = cfg.duration * 0.25, we = cfg.duration * 0.75;
    const auto& tp = std::get<TransitionParams>(comp.params);
    if (t < wb) return render_material(pair.a, t, h, w);
    Image b = render_material(pair.b, t - wb, h, w);
    if (t >= we) return b;
    Image a = render_material(pair.a, t, h, w);
    Image out = apply_transition(a, b, tp, (t - wb) / (we - wb));
    for (auto& v : out.storage()) v = detail::clamp01(v);
    return out;
  }
  const bool second = t >= slot;
  const double local = second ? t - slot : t;
  Image img = render_material(second ? pair.b : pair.a, local, h, w);
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FilterParams>) {
          apply_filter(img, p);
        } else if constexpr (std::is_same_v<P, EffectParams>) {
          apply_effect(img, p, t);
        } else if constexpr (std::is_same_v<P, AnimationParams>) {
          img = warp_homography(img, animation_homography(p, local / slot));
        } else if constexpr (std::is_same_v<P, StickerParams>) {
          apply_sticker(img, p, t);
        } else if constexpr (std::is_same_v<P, TextParams>) {
          apply_text(img, p, cfg.text);
        }
      },
      comp.params);
  for (auto& v : img.storage()) v = detail::clamp01(v);
  return img;
}

struct VideoSample {
  Tensor frames;  // [N_v, H, W, 3]
  int component_id = 0;
  Category category = Category::kFilter;
  int pair_id = 0;
  std::uint64_t seed = 0;
};

inline VideoSample render_video(const MaterialPair& pair, const EditComponent& comp,
                                const RenderConfig& cfg, std::uint64_t seed = 0) {
  cfg.validate();
  const std::size_t fsz = cfg.height * cfg.width * 3;
  VideoSample s;
  s.frames = Tensor({cfg.frames, cfg.height, cfg.width, 3});
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    Image f = render_frame(pair, comp, cfg.frame_time(i), cfg);
    std::copy(f.data().begin(), f.data().end(), s.frames.data().data() + i * fsz);
  }
  s.component_id = comp.id;
  s.category = comp.category;
  s.pair_id = pair.pair_id;
  s.seed = seed;
  return s;
}

/// Binary PPM (P6) for eyeballing a frame.
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P6\n" << img.dim(1) << ' ' << img.dim(0) << "\n255\n";
  for (float v : img.data()) {
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255))));
  }
}

}  // namespace edit3k::synth
