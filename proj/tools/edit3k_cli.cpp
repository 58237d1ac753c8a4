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


// edit3k command-line tool: dataset generation, training, evaluation,
// recommendation, attention dumps and embedding export.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "edit3k/recommend.hpp"

using namespace edit3k;
namespace fs = std::filesystem;

namespace {

struct Knob {
  std::string key;
  std::string flag;
  std::string help;
  std::string paper;  // empty: no paper counterpart
};

// Flags shared by several commands, keyed by config key. Desk defaults come
// from the library's default-constructed configs.
const std::vector<Knob>& knobs() {
  static const std::vector<Knob> k = {
      {"data.counts", "--components", "components per category (effect,animation,transition,filter,sticker,text)",
       "888,176,204,228,1000,598"},
      {"data.pairs", "--pairs", "material pairs per component", "200"},
      {"data.eval_pairs", "--eval-pairs", "held-out material pairs", ""},
      {"data.height", "--res", "frame height and width in pixels", "224"},
      {"data.frames", "--frames", "frames per video (N_v)", "16"},
      {"data.seed", "--data-seed", "material and component bank seed", ""},
      {"data.export_ppm", "--ppm", "also write the first frame of every video as PPM", ""},
      {"model.patch", "--patch", "patch side in pixels", "32"},
      {"model.dim", "--dim", "embedding width D", "512"},
      {"model.heads", "--heads", "attention heads", "8"},
      {"model.spatial_layers", "--spatial-layers", "spatial encoder blocks (N_s)", "12"},
      {"model.temporal_layers", "--temporal-layers", "temporal encoder blocks (N_t)", "2"},
      {"model.decoder_layers", "--decoder-layers", "decoder layers (N_d)", "2"},
      {"model.temporal_position", "--temporal-position", "add temporal positional embedding", "true"},
      {"train.batch_components", "--batch", "components per batch (N_b)", "8"},
      {"train.epochs", "--epochs", "training epochs", "20"},
      {"train.tau", "--tau", "softmax temperature", "0.7"},
      {"train.lr", "--lr", "peak learning rate (cosine schedule)", "1e-6 / 1e-5 (split)"},
      {"train.lr_min", "--lr-min", "final learning rate", ""},
      {"train.clip_norm", "--clip", "global gradient-norm clip (0 = off)", ""},
      {"train.centers", "--centers", "guidance centers: six_type | kmeans", "six_type"},
      {"train.kmeans_k", "--kmeans-k", "clusters when --centers=kmeans", ""},
      {"train.guidance_refresh", "--guidance-refresh", "refresh guidance every step | epoch", "step"},
      {"train.slot_mix", "--slot-mix", "recombine slots across pairs for non-transition components", ""},
      {"train.shared_pairs", "--shared-pairs", "one material pair for all q samples and one for all k", ""},
      {"train.openset", "--openset", "train on the open-set training half only", ""},
      {"train.validate", "--validate", "per-epoch validation R@1", ""},
      {"train.checkpoint_every", "--checkpoint-every", "epochs between checkpoints (0 = final only)", ""},
      {"train.seed", "--seed", "training seed", ""},
      {"rec.steps", "--rec-steps", "recommender optimization steps", ""},
      {"rec.lr", "--rec-lr", "recommender learning rate", ""},
      {"rec.tau", "--rec-tau", "recommender softmax temperature", ""},
      {"rec.seed", "--rec-seed", "recommender seed", ""},
  };
  return k;
}

KeyValues desk_defaults() {
  KeyValues kv;
  to_kv(synth::DatasetConfig{}, kv);
  to_kv(ModelConfig::desk(), kv);
  to_kv(TrainConfig{}, kv);
  to_kv(RecConfig{}, kv);
  for (const char* k : {"io.data", "io.ckpt", "io.rec_ckpt", "io.sample", "io.resume"}) kv.set(k, std::string());
  kv.set("eval.query_pair", -1);
  kv.set("eval.cand_pair", -1);
  kv.set("eval.top", 5);
  kv.set("eval.openset", false);
  kv.set("rec.mode", std::string("train"));
  kv.set("rec.table", std::string("model"));
  kv.set("rec.downsample", 4);
  kv.set("train.ablate", std::string());
  return kv;
}

// Flags that set config keys, collected before the command runs.
struct Overrides {
  std::map<std::string, std::string> values;
  std::string config_file;
  std::string out = "runs";
};

std::string pretty(const std::string& v) {
  if (v.find_first_of(".e") == std::string::npos) return v;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size()) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

std::string describe(const Knob& k, const KeyValues& defaults) {
  std::string d = k.help + "  [desk: " + pretty(defaults.raw(k.key));
  if (!k.paper.empty()) d += ", paper: " + k.paper;
  return d + "]";
}

void add_knobs(CLI::App* app, Overrides& ov, const std::vector<std::string>& prefixes) {
  static const KeyValues defaults = desk_defaults();
  for (const auto& k : knobs()) {
    bool want = false;
    for (const auto& p : prefixes) want = want || k.key.rfind(p, 0) == 0;
    if (!want) continue;
    app->add_option_function<std::string>(
        k.flag, [&ov, key = k.key](const std::string& v) { ov.values[key] = v; }, describe(k, defaults));
  }
  app->add_option("--config", ov.config_file, "key=value run config (e.g. a run_config.txt); flags override it");
  app->add_option_function<std::vector<std::string>>(
      "--set",
      [&ov](const std::vector<std::string>& items) {
        for (const auto& it : items) {
          const auto eq = it.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + it + "'");
          ov.values[it.substr(0, eq)] = it.substr(eq + 1);
        }
      },
      "override any config key (repeatable key=value)");
  app->add_option("--out", ov.out, "parent directory; outputs go to <out>/<command>-<config hash>  [desk: runs]");
}

void io_option(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key, const std::string& help,
               bool required) {
  auto* o = app->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.values[key] = v; }, help);
  if (required) o->required();
}

/// Defaults <- config file (known keys only) <- flags.
KeyValues resolve(const Overrides& ov) {
  KeyValues kv = desk_defaults();
  if (!ov.config_file.empty()) kv.merge(KeyValues::load(ov.config_file), true);
  KeyValues flags;
  for (const auto& [k, v] : ov.values) flags.set(k, v);
  kv.merge(flags, true);
  return kv;
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path output_dir(const Overrides& ov, const std::string& command, const KeyValues& kv) {
  const fs::path dir = fs::path(ov.out) / (command + "-" + hex16(config_hash(kv)));
  fs::create_directories(dir);
  kv.save((dir / "run_config.txt").string());
  std::cout << "config:\n" << kv.str();
  return dir;
}

void log_line(const std::string& m) { std::cerr << m << '\n'; }

void apply_ablation(KeyValues& kv) {
  std::stringstream ss(kv.get<std::string>("train.ablate"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "queue") {
      kv.set("train.queue_loss", false);
    } else if (item == "gt") {
      kv.set("train.guidance_tokens", false);
    } else if (item == "gd") {
      kv.set("train.guided_decoder", false);
    } else {
      throw std::invalid_argument("--ablate: unknown switch '" + item + "' (expected queue, gt, gd)");
    }
  }
}

synth::Dataset open_data(const KeyValues& kv) {
  const auto root = kv.get<std::string>("io.data");
  if (root.empty()) throw std::invalid_argument("--data is required");
  auto ds = synth::load_dataset(root);
  synth::validate_manifest(ds.manifest, root);
  return ds;
}

TrainState open_ckpt(const KeyValues& kv) {
  const auto path = kv.get<std::string>("io.ckpt");
  if (path.empty()) throw std::invalid_argument("--ckpt is required");
  return load_state(path);
}

void check_compatible(const TrainState& s, const synth::Dataset& ds) {
  const auto& m = s.model_config;
  const auto& r = ds.config.render;
  if (m.height != r.height || m.width != r.width || m.frames != r.frames) {
    throw std::invalid_argument("checkpoint expects " + std::to_string(m.frames) + " frames of " +
                                std::to_string(m.height) + "x" + std::to_string(m.width) + ", dataset has " +
                                std::to_string(r.frames) + " of " + std::to_string(r.height) + "x" +
                                std::to_string(r.width));
  }
}

// --- commands ---------------------------------------------------------------------

void cmd_gen(const Overrides& ov) {
  auto kv = resolve(ov);
  kv.set("data.width", kv.raw("data.height"));
  const auto cfg = synth::dataset_config_from_kv(kv);
  const auto dir = output_dir(ov, "gen", kv);
  const auto ds = synth::build_dataset(cfg, dir);
  std::cout << "videos: " << ds.manifest.records.size() << "\noutput: " << dir.string() << '\n';
}

void cmd_train(const Overrides& ov) {
  auto kv = resolve(ov);
  const auto resume = kv.get<std::string>("io.resume");
  apply_ablation(kv);
  const auto ds = open_data(kv);
  kv.set("model.height", ds.config.render.height);
  kv.set("model.width", ds.config.render.width);
  kv.set("model.frames", ds.config.render.frames);
  const auto mc = model_config_from_kv(kv);
  const auto tc = train_config_from_kv(kv);
  mc.validate();
  const auto dir = output_dir(ov, "train", kv);
  FitOptions opt{dir, resume.empty() ? std::nullopt : std::optional<std::string>(resume), log_line};
  const auto res = fit(ds, mc, tc, opt);
  std::cout << "steps: " << res.state.step << "\ncheckpoint: " << (dir / "checkpoint.ckpt").string()
            << "\noutput: " << dir.string() << '\n';
}

std::pair<int, int> eval_pairs(const KeyValues& kv, const TrainSplit& split) {
  int q = kv.get<int>("eval.query_pair"), c = kv.get<int>("eval.cand_pair");
  if (q < 0) q = split.eval_pairs.empty() ? split.train_pairs.at(0) : split.eval_pairs.at(0);
  if (c < 0) c = split.eval_pairs.size() > 1 ? split.eval_pairs.at(1) : split.train_pairs.at(0);
  return {q, c};
}

void cmd_eval_retrieval(const Overrides& ov) {
  const auto kv = resolve(ov);
  const auto ds = open_data(kv);
  auto s = open_ckpt(kv);
  check_compatible(s, ds);
  const auto split = make_train_split(ds, false);
  const auto [q, c] = eval_pairs(kv, split);
  const auto dir = output_dir(ov, "eval-retrieval", kv);
  VideoStore store(ds);
  const auto rep = retrieval_protocol(s.model, s.guidance, store, split.components, q, c);
  std::ofstream os(dir / "report.csv", std::ios::binary);
  write_report_csv(os, rep);
  std::cout << format_report_table(rep) << "output: " << dir.string() << '\n';
}

void cmd_eval_centers(const Overrides& ov) {
  const auto kv = resolve(ov);
  const bool openset = kv.get<bool>("eval.openset");
  const auto ds = open_data(kv);
  auto s = open_ckpt(kv);
  check_compatible(s, ds);
  const auto split = make_train_split(ds, false);
  std::vector<int> ids;
  std::map<int, synth::Category> cat;
  for (const auto& r : ds.manifest.records) {
    cat[r.component_id] = r.category;
    if (openset && r.openset_split != "eval") continue;
    if (std::find(ids.begin(), ids.end(), r.component_id) == ids.end()) ids.push_back(r.component_id);
  }
  const auto dir = output_dir(ov, "eval-centers", kv);
  VideoStore store(ds);
  std::vector<int> pairs = split.train_pairs;
  pairs.insert(pairs.end(), split.eval_pairs.begin(), split.eval_pairs.end());
  const auto centers = component_centers(s.model, s.guidance, store, ids, pairs);
  const auto top = kv.get<std::size_t>("eval.top");
  std::ofstream os(dir / "neighbors.tsv", std::ios::binary);
  os << "#component\tcategory\trank\tneighbor\tneighbor_category\tsimilarity\n";
  std::size_t same = 0, total = 0;
  for (const auto& [id, row] : centers.rows) {
    const auto nn = nearest_components(centers, id, top);
    for (std::size_t i = 0; i < nn.size(); ++i) {
      char sim[32];
      std::snprintf(sim, sizeof sim, "%.6f", nn[i].similarity);
      os << id << '\t' << synth::category_name(cat[id]) << '\t' << i + 1 << '\t' << nn[i].id << '\t'
         << synth::category_name(cat[nn[i].id]) << '\t' << sim << '\n';
    }
    if (!nn.empty()) {
      same += cat[nn[0].id] == cat[id] ? 1 : 0;
      ++total;
    }
  }
  for (int id : centers.degenerate) std::cerr << "warning: component " << id << " has a zero mean embedding\n";
  std::printf("components: %zu\nnearest neighbor shares the category: %zu/%zu\n", centers.rows.size(), same, total);
  std::cout << "output: " << dir.string() << '\n';
}

void cmd_recommend(const Overrides& ov) {
  const auto kv = resolve(ov);
  const auto mode = kv.get<std::string>("rec.mode");
  if (mode != "train" && mode != "eval") throw std::invalid_argument("--mode must be train or eval");
  const auto ds = open_data(kv);
  const auto split = make_train_split(ds, false);
  const std::set<int> held(split.eval_pairs.begin(), split.eval_pairs.end());
  std::vector<RecSample> train, eval;
  for (auto& smp : build_rec_dataset(ds, kv.get<std::size_t>("rec.downsample")))
    (held.count(smp.pair_id) ? eval : train).push_back(std::move(smp));
  if (eval.empty()) throw std::runtime_error("recommend: dataset has no held-out transition videos");
  const auto dir = output_dir(ov, "recommend-" + mode, kv);

  Recommender model;
  TransitionTable table;
  if (mode == "train") {
    std::vector<int> ids;
    for (const auto& c : ds.bank)
      if (c.category == synth::Category::kTransition) ids.push_back(c.id);
    const auto which = kv.get<std::string>("rec.table");
    auto s = open_ckpt(kv);
    check_compatible(s, ds);
    if (which == "model") {
      VideoStore store(ds);
      table = table_from_centers(component_centers(s.model, s.guidance, store, ids, split.train_pairs), ids);
    } else if (which == "random") {
      table = random_table(ids, s.model_config.dim, kv.get<std::uint64_t>("rec.seed"));
    } else {
      throw std::invalid_argument("--table must be model or random");
    }
    auto res = rec_train(train, table, rec_config_from_kv(kv));
    model = std::move(res.model);
    std::ofstream log(dir / "rec_metrics.csv", std::ios::binary);
    log << "step,loss\n";
    for (std::size_t i = 0; i < res.steps.size(); ++i) log << i << ',' << res.steps[i].loss << '\n';
    save_bundle((dir / "recommender.ckpt").string(), recommender_to_bundle(model, table));
  } else {
    const auto path = kv.get<std::string>("io.rec_ckpt");
    if (path.empty()) throw std::invalid_argument("--rec-ckpt is required with --mode=eval");
    std::tie(model, table) = recommender_from_bundle(load_bundle(path));
  }
  const auto m = rec_eval(model, eval, table);
  std::ofstream os(dir / "rec_report.csv", std::ios::binary);
  char line[128];
  std::snprintf(line, sizeof line, "samples,R@1,R@5,mean_rank\n%zu,%.6f,%.6f,%.6f\n", m.ranks.size(), m.r1, m.r5,
                m.mean_rank);
  os << line;
  std::cout << line << "output: " << dir.string() << '\n';
}

void write_heatmap(const fs::path& path, const Tensor& frame, const Tensor& map, std::size_t f, std::size_t patch) {
  const std::size_t h = frame.dim(0), w = frame.dim(1), gw = w / patch;
  const std::size_t np = map.size() / map.dim(0);
  float mx = 0;
  for (std::size_t j = 0; j < np; ++j) mx = std::max(mx, map[f * np + j]);
  Tensor img({h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const float a = mx > 0 ? map[f * np + (y / patch) * gw + x / patch] / mx : 0.0f;
      for (std::size_t c = 0; c < 3; ++c) {
        const float base = 0.5f * frame[(y * w + x) * 3 + c];
        img[(y * w + x) * 3 + c] = c == 0 ? base + 0.5f * a : base;
      }
    }
  synth::write_ppm(path.string(), img);
}

void cmd_attn(const Overrides& ov) {
  const auto kv = resolve(ov);
  const auto ds = open_data(kv);
  auto s = open_ckpt(kv);
  check_compatible(s, ds);
  const auto sample = kv.get<std::string>("io.sample");
  const auto colon = sample.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("--sample expects component:pair, got '" + sample + "'");
  const int comp = std::stoi(sample.substr(0, colon)), pair = std::stoi(sample.substr(colon + 1));
  const auto* rec = ds.manifest.find(comp, pair);
  if (rec == nullptr) throw std::invalid_argument("no video for component " + std::to_string(comp) + " on pair " +
                                                  std::to_string(pair));
  const auto dir = output_dir(ov, "attn", kv);
  const Tensor video = ds.load_frames(*rec);
  const auto maps = attention_maps(s.model, video, s.guidance);
  edt3::save((dir / "spatial.edt3").string(), maps.spatial);
  edt3::save((dir / "spatial_normalized.edt3").string(), maps.spatial_normalized);
  edt3::save((dir / "temporal.edt3").string(), maps.temporal);
  const std::size_t fsz = video.size() / video.dim(0);
  for (std::size_t f = 0; f < video.dim(0); ++f) {
    Tensor frame({video.dim(1), video.dim(2), 3});
    std::copy_n(video.data().begin() + static_cast<std::ptrdiff_t>(f * fsz), fsz, frame.storage().begin());
    char name[32];
    std::snprintf(name, sizeof name, "heat_%02zu.ppm", f);
    write_heatmap(dir / name, frame, maps.spatial_normalized, f, s.model_config.patch);
  }
  std::cout << "temporal attention:";
  for (float v : maps.temporal.data()) std::printf(" %.3f", v);
  std::cout << "\noutput: " << dir.string() << '\n';
}

void cmd_export_emb(const Overrides& ov) {
  const auto kv = resolve(ov);
  const auto ds = open_data(kv);
  auto s = open_ckpt(kv);
  check_compatible(s, ds);
  const auto dir = output_dir(ov, "export-emb", kv);
  std::vector<std::pair<int, int>> keys;
  for (const auto& r : ds.manifest.records) keys.emplace_back(r.component_id, r.pair_id);
  VideoStore store(ds);
  export_embeddings((dir / "embeddings").string(), embed_videos(s.model, s.guidance, store, keys), keys);
  std::cout << "rows: " << keys.size() << "\noutput: " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edit3k: editing-component embeddings on synthetic edited videos"};
  app.require_subcommand(1);
  Overrides ov;

  auto* gen = app.add_subcommand("gen", "render a synthetic dataset");
  add_knobs(gen, ov, {"data."});

  auto* train = app.add_subcommand("train", "train the embedding model");
  add_knobs(train, ov, {"model.", "train."});
  io_option(train, ov, "--data", "io.data", "dataset directory (from gen)", false);
  train->add_option_function<std::string>(
      "--ablate", [&ov](const std::string& v) { ov.values["train.ablate"] = v; },
      "comma list of switches to turn off: queue, gt, gd (all three = baseline)");
  io_option(train, ov, "--resume", "io.resume", "continue from a checkpoint", false);

  auto* er = app.add_subcommand("eval-retrieval", "held-out pair retrieval report");
  add_knobs(er, ov, {});
  io_option(er, ov, "--data", "io.data", "dataset directory", false);
  io_option(er, ov, "--ckpt", "io.ckpt", "training checkpoint", false);
  io_option(er, ov, "--query-pair", "eval.query_pair", "query material pair  [desk: first held-out]", false);
  io_option(er, ov, "--cand-pair", "eval.cand_pair", "candidate material pair  [desk: second held-out]", false);

  auto* ec = app.add_subcommand("eval-centers", "component centers and nearest neighbors");
  add_knobs(ec, ov, {});
  io_option(ec, ov, "--data", "io.data", "dataset directory", false);
  io_option(ec, ov, "--ckpt", "io.ckpt", "training checkpoint", false);
  io_option(ec, ov, "--top", "eval.top", "neighbors per component  [desk: 5]", false);
  ec->add_flag_function(
      "--openset", [&ov](std::int64_t) { ov.values["eval.openset"] = "true"; }, "only the open-set evaluation half");

  auto* rec = app.add_subcommand("recommend", "train or evaluate the transition recommender");
  add_knobs(rec, ov, {"rec."});
  io_option(rec, ov, "--data", "io.data", "dataset directory", false);
  io_option(rec, ov, "--ckpt", "io.ckpt", "training checkpoint (train mode)", false);
  io_option(rec, ov, "--rec-ckpt", "io.rec_ckpt", "recommender checkpoint (eval mode)", false);
  io_option(rec, ov, "--mode", "rec.mode", "train | eval  [desk: train]", false);
  io_option(rec, ov, "--table", "rec.table", "transition table: model | random  [desk: model]", false);

  auto* attn = app.add_subcommand("attn", "dump attention maps for one video");
  add_knobs(attn, ov, {});
  io_option(attn, ov, "--data", "io.data", "dataset directory", false);
  io_option(attn, ov, "--ckpt", "io.ckpt", "training checkpoint", false);
  io_option(attn, ov, "--sample", "io.sample", "component:pair", false);

  auto* ex = app.add_subcommand("export-emb", "embed every video and write an EDT3 matrix");
  add_knobs(ex, ov, {});
  io_option(ex, ov, "--data", "io.data", "dataset directory", false);
  io_option(ex, ov, "--ckpt", "io.ckpt", "training checkpoint", false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "gen") cmd_gen(ov);
    if (name == "train") cmd_train(ov);
    if (name == "eval-retrieval") cmd_eval_retrieval(ov);
    if (name == "eval-centers") cmd_eval_centers(ov);
    if (name == "recommend") cmd_recommend(ov);
    if (name == "attn") cmd_attn(ov);
    if (name == "export-emb") cmd_export_emb(ov);
  } catch (const std::exception& e) {
    std::cerr << "error\t" << name << '\t' << e.what() << '\n';
    return 1;
  }
  return 0;
}
