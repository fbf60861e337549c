// drseg: command-line front end for the segmentation head library.
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drseg/config.hpp"
#include "drseg/error.hpp"
#include "drseg/gradcheck.hpp"
#include "drseg/grid_ops.hpp"
#include "drseg/manifest.hpp"
#include "drseg/spsd.hpp"
#include "drseg/sweep.hpp"
#include "drseg/synthgen.hpp"
#include "drseg/train.hpp"
#include "drseg/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drseg;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_check = 3;

// Thrown for failed checks (gradcheck, invariants) so main can map it to exit code 3.
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// Shared run-configuration flags. Values given on the command line win over --config.
struct ConfigFlags {
  std::string path;
  double lambda = 0, rho = 0, sigma_f = 0, sigma_s = 0, lr = 0, wd = 0;
  int top_k = 0, n_prototypes = 0, embed_dim = 0, edge_hidden = 0, gcn_layers = 0, batch = 0, steps = 0;
  std::string fusion;
  std::uint64_t seed = 0;
  CLI::Option *o_lambda, *o_rho, *o_sigma_f, *o_sigma_s, *o_lr, *o_wd, *o_top_k, *o_np, *o_e, *o_eh, *o_layers,
      *o_batch, *o_steps, *o_fusion, *o_seed;

  void attach(CLI::App* app, bool training) {
    app->add_option("--config", path, "JSON run configuration");
    o_seed = app->add_option("--seed", seed, "random seed");
    o_lambda = app->add_option("--lambda", lambda, "entropy/similarity blend");
    o_rho = app->add_option("--rho", rho, "semantic channel ratio");
    o_np = app->add_option("--n-prototypes", n_prototypes, "prototypes per class");
    o_sigma_f = app->add_option("--sigma-f", sigma_f, "affinity scale");
    o_sigma_s = app->add_option("--sigma-s", sigma_s, "spatial decay");
    o_top_k = app->add_option("--top-k", top_k, "graph neighbours per node");
    o_eh = app->add_option("--edge-hidden", edge_hidden, "edge MLP width");
    o_layers = app->add_option("--gcn-layers", gcn_layers, "graph layers");
    o_e = app->add_option("--embed-dim", embed_dim, "fusion embedding width");
    o_fusion = app->add_option("--fusion-mode", fusion, "ugaf | mean | concat | separate");
    o_lr = o_wd = o_batch = o_steps = nullptr;
    if (training) {
      o_lr = app->add_option("--lr", lr, "AdamW learning rate");
      o_wd = app->add_option("--weight-decay", wd, "AdamW weight decay");
      o_batch = app->add_option("--batch-size", batch, "scenes per step");
      o_steps = app->add_option("--steps", steps, "optimisation steps");
    }
  }

  RunConfig resolve() const {
    RunConfig c = path.empty() ? RunConfig{} : load_config(path);
    auto set = [](CLI::Option* o, auto& field, auto value) {
      if (o && o->count()) field = value;
    };
    set(o_seed, c.seed, seed);
    set(o_lambda, c.lambda, lambda);
    set(o_rho, c.rho, rho);
    set(o_np, c.n_prototypes, n_prototypes);
    set(o_sigma_f, c.sigma_f, sigma_f);
    set(o_sigma_s, c.sigma_s, sigma_s);
    set(o_top_k, c.top_k, top_k);
    set(o_eh, c.edge_hidden, edge_hidden);
    set(o_layers, c.gcn_layers, gcn_layers);
    set(o_e, c.embed_dim, embed_dim);
    if (o_fusion->count()) c.fusion_mode = parse_fusion_mode(fusion);
    set(o_lr, c.learning_rate, lr);
    set(o_wd, c.weight_decay, wd);
    set(o_batch, c.batch_size, batch);
    set(o_steps, c.steps, steps);
    c.validate();
    return c;
  }
};

ChannelPartition partition_for(const std::string& path, const Dataset& data, const RunConfig& cfg) {
  if (!path.empty()) {
    ChannelPartition p = partition_from_json(read_json(path));
    p.validate(data.channels());
    return p;
  }
  return compute_partition(data, cfg);
}

int cmd_synth(const SceneParams& p, std::size_t n, std::uint64_t seed, const std::string& out) {
  const Dataset d = from_synthetic(generate_dataset(n, p, seed));
  save_dataset(d, out);
  std::printf("wrote %zu scenes (%zux%zu, C=%zu, D=%zu, %d classes) to %s\n", n, p.h, p.w, p.channels, p.dino_dim,
              p.n_classes, out.c_str());
  return 0;
}

int cmd_score(const std::string& data_dir, const RunConfig& cfg, const std::string& out) {
  const Dataset d = load_dataset(data_dir);
  const ChannelPartition p = compute_partition(d, cfg);
  if (!out.empty()) write_json(to_json(p), out);
  std::printf("C=%zu  |sem|=%zu  |str|=%zu  lambda=%g rho=%g\n", p.channels(), p.sem.size(), p.str.size(), p.lambda,
              p.rho);
  std::printf("sem:");
  for (auto c : p.sem) std::printf(" %zu", c);
  std::printf("\n");
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& part_path, const RunConfig& cfg, int threads,
              const std::string& out, const std::string& trace_out) {
  const Dataset d = load_dataset(data_dir);
  const ChannelPartition part = partition_for(part_path, d, cfg);
  const auto prepared = prepare_dataset(d, part, cfg);
  const TrainResult r =
      train(prepared, d.text, part, HeadParameters::init(head_dims(d, part, cfg), cfg.seed), cfg, threads);
  save_head(r.params, out);
  if (!trace_out.empty()) write_json(trace_json(r.loss_trace), trace_out);
  if (!r.loss_trace.empty()) {
    const auto sm = smooth_trace(r.loss_trace);
    std::printf("steps=%zu  loss %.4f -> %.4f (smoothed)\n", r.loss_trace.size(), r.loss_trace.front(), sm.back());
  }
  std::printf("parameters: %zu, written to %s\n", r.params.count(), out.c_str());
  return 0;
}

EvalReport eval_predictions(const Dataset& d, const fs::path& dir) {
  ConfusionMatrix cm(d.n_classes());
  for (const auto& s : d.scenes) {
    if (!s.labels) throw ArgumentError("scene " + s.id + " has no labels");
    const LabelGrid pred = to_label_grid(read_tensor(dir / (s.id + ".npy")));
    if (pred.h != s.labels->h || pred.w != s.labels->w)
      throw DimensionError("prediction for " + s.id + " has the wrong size");
    for (int v : pred.data)
      if (v < 0 || static_cast<std::size_t>(v) >= d.n_classes())
        throw DimensionError("prediction for " + s.id + " holds a class outside [0, n_classes)");
    cm.add(*s.labels, pred);
  }
  return make_report(cm);
}

int cmd_eval(const std::string& data_dir, const std::string& params_path, const std::string& part_path,
             const std::string& predictions, const std::string& write_predictions, const RunConfig& cfg,
             const std::string& out) {
  const Dataset d = load_dataset(data_dir);
  EvalReport rep;
  if (!predictions.empty()) {
    rep = eval_predictions(d, predictions);
  } else {
    const ChannelPartition part = partition_for(part_path, d, cfg);
    const HeadParameters params = params_path.empty() ? HeadParameters::init(head_dims(d, part, cfg), cfg.seed)
                                                      : load_head(params_path);
    rep = evaluate(d, part, params, cfg);
    if (!write_predictions.empty()) {
      fs::create_directories(write_predictions);
      for (const auto& s : d.scenes) {
        const FeatureMap logits = forward_pipeline(s, d.text, part, params, cfg);
        const std::size_t h = s.labels ? s.labels->h : logits.h, w = s.labels ? s.labels->w : logits.w;
        write_tensor(to_tensor(argmax_labels(resize_bilinear(logits, h, w))),
                     fs::path(write_predictions) / (s.id + ".npy"));
      }
    }
  }
  if (!out.empty()) write_json(to_json(rep), out);
  std::printf("%s", format_table(rep, d.class_names).c_str());
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& tol, const std::string& corrupt, const std::string& out) {
  GradcheckOptions opt;
  if (tol == "inf" || tol == "infinity") {
    opt.tolerance = std::numeric_limits<double>::infinity();
  } else {
    try {
      opt.tolerance = std::stod(tol);
    } catch (const std::exception&) {
      throw ConfigError("--tolerance must be a number or 'inf'");
    }
  }
  if (!corrupt.empty())
    opt.corrupt = [corrupt](const std::string& block, std::span<double> g) {
      if (block != corrupt) return;
      for (double& v : g) v = 1.01 * v + 1e-3;
    };
  const GradcheckReport r = gradcheck(make_gradcheck_instance(cfg), opt);
  if (!corrupt.empty() &&
      std::none_of(r.blocks.begin(), r.blocks.end(), [&](const BlockCheck& b) { return b.name == corrupt; }))
    throw ArgumentError("no gradient block named '" + corrupt + "'");
  if (!out.empty()) write_json(to_json(r), out);
  std::printf("%s", format_table(r).c_str());
  if (!r.passed) throw CheckFailure("gradient check failed");
  return 0;
}

int cmd_sweep(const std::string& axis, const std::string& values, const std::string& data_dir,
              const std::string& eval_dir, const RunConfig& cfg, int threads, const std::string& out) {
  const SweepAxis a = parse_sweep_axis(axis);
  std::vector<std::string> vals;
  if (values.empty()) {
    vals = default_sweep_values(a);
  } else {
    std::stringstream ss(values);
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) vals.push_back(v);
  }
  const Dataset tr = load_dataset(data_dir);
  const Dataset ev = eval_dir.empty() ? tr : load_dataset(eval_dir);
  const auto cells = ablation_sweep(a, vals, tr, ev, cfg, threads);
  json j = json::array();
  for (const auto& c : cells) j.push_back(to_json(c));
  if (!out.empty()) write_json(j, out);
  std::printf("%s", format_sweep_table(cells).c_str());
  return 0;
}

int cmd_pilot(const std::string& data_dir, const RunConfig& cfg, const std::string& out) {
  const Dataset d = load_dataset(data_dir);
  std::vector<std::size_t> all(d.channels());
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  std::vector<LabelGrid> truth, pred;
  for (const auto& s : d.scenes) {
    if (!s.labels) throw ArgumentError("pilot needs labelled scenes");
    truth.push_back(*s.labels);
    pred.push_back(zero_shot_segment(s, d.text, all));
  }
  const double full = mean_iou(truth, pred, d.n_classes());
  std::vector<double> deltas;
  for (std::size_t c = 0; c < d.channels(); ++c) deltas.push_back(mask_channel_eval(d, c));

  const PrototypeBank bank = collect_prototypes(d, static_cast<std::size_t>(cfg.n_prototypes), cfg.seed);
  const ChannelScores sc = channel_scores(channel_entropy(bank, cfg.epsilon), channel_similarity(bank), cfg.lambda);
  json curve = json::array();
  for (double r : {0.25, 0.5, 0.75, 1.0})
    curve.push_back({{"retain", r},
                     {"top", subspace_zero_shot_eval(d, sc.score, r, RankEnd::top)},
                     {"bottom", subspace_zero_shot_eval(d, sc.score, r, RankEnd::bottom)}});
  json j = {{"channels", d.channels()}, {"full_miou", full}, {"deltas", deltas}, {"scores", sc.score},
            {"subspace", curve}};
  if (!d.semantic_truth.empty()) j["semantic_truth"] = d.semantic_truth;
  if (!out.empty()) write_json(j, out);
  std::size_t positive = 0;
  for (double v : deltas) positive += v > 0.0;
  std::printf("zero-shot mIoU %.2f; %zu of %zu channels have a positive masking delta\n", full, positive,
              deltas.size());
  for (const auto& e : curve)
    std::printf("retain %.2f  top %.2f  bottom %.2f\n", e["retain"].get<double>(), e["top"].get<double>(),
                e["bottom"].get<double>());
  return 0;
}

int cmd_viz(const std::string& data_dir, std::size_t index, const std::string& params_path,
            const std::string& part_path, const RunConfig& cfg, std::size_t scale, const std::string& out) {
  const Dataset d = load_dataset(data_dir);
  if (index >= d.scenes.size()) throw ArgumentError("--scene index out of range");
  const Scene& s = d.scenes[index];
  const ChannelPartition part = partition_for(part_path, d, cfg);
  const HeadParameters params =
      params_path.empty() ? HeadParameters::init(head_dims(d, part, cfg), cfg.seed) : load_head(params_path);
  const PreparedScene ps = prepare_scene(s, d.text, part, cfg);
  const PipelineOutput po = forward_pipeline(ps, d.text, part, params, cfg);
  const fs::path dir(out);
  fs::create_directories(dir);
  const std::size_t K = d.n_classes();

  const LabelGrid pred = argmax_labels(po.logits);
  write_pgm(render_labels(pred, K, scale), dir / "prediction.pgm");
  LabelGrid backdrop = pred;
  if (ps.grid_labels) {
    write_pgm(render_labels(*ps.grid_labels, K, scale), dir / "labels.pgm");
    backdrop = *ps.grid_labels;
  }
  write_pgm(render_unit_map(po.uncertainty.h, po.uncertainty.w, po.uncertainty.values, scale), dir / "uncertainty.pgm");
  for (std::size_t k = 0; k < K; ++k) {
    write_pgm(render_correlation(ps.c_ori, k, scale), dir / ("corr_ori_" + std::to_string(k) + ".pgm"));
    write_pgm(render_correlation(po.c_ref, k, scale), dir / ("corr_ref_" + std::to_string(k) + ".pgm"));
  }
  const GraphOverlay overlay = render_graph(po.graph, backdrop, K, std::max<std::size_t>(scale, 8));
  write_ppm(overlay.image, dir / "graph.ppm");
  json gj = to_json(po.graph);
  gj["edges_drawn"] = overlay.edges_drawn;
  write_json(gj, dir / "graph.json");
  std::printf("scene %s: %zu retained edges, %zu drawn; images in %s\n", s.id.c_str(), po.graph.undirected_edges(),
              overlay.edges_drawn, out.c_str());
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"drseg: open-vocabulary segmentation head on frozen features"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);

  SceneParams sp;
  std::size_t n_scenes = 20;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->set_help_flag("--help", "print this help message and exit");  // frees -h for the grid height
  synth->add_option("--scenes", n_scenes, "number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--h", sp.h, "grid height");
  synth->add_option("--w", sp.w, "grid width");
  synth->add_option("--channels", sp.channels, "CLIP-like feature width");
  synth->add_option("--dino-dim", sp.dino_dim, "DINO-like feature width");
  synth->add_option("--classes", sp.n_classes, "number of classes");
  synth->add_option("--noise", sp.noise, "feature noise std");
  synth->add_option("--rho-gen", sp.rho_gen, "fraction of class-selective channels");
  synth->add_option("--text-structural-weight", sp.text_structural_weight, "text mass on structural channels");
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string data_dir, eval_dir, part_path, params_path, out, trace_out, predictions, write_predictions;
  auto data_opt = [&](CLI::App* sub) { sub->add_option("--data", data_dir, "dataset directory")->required(); };

  ConfigFlags f_score, f_train, f_eval, f_grad, f_sweep, f_pilot, f_viz;
  auto* score = app.add_subcommand("score-channels", "compute the channel partition");
  data_opt(score);
  f_score.attach(score, false);
  score->add_option("--out", out, "partition JSON");

  auto* trn = app.add_subcommand("train", "train the head with AdamW");
  data_opt(trn);
  f_train.attach(trn, true);
  trn->add_option("--partition", part_path, "partition JSON (computed from the data when absent)");
  trn->add_option("--out", out, "parameter file")->required();
  trn->add_option("--trace", trace_out, "loss trace JSON");

  auto* ev = app.add_subcommand("eval", "evaluate a head or a set of predictions");
  data_opt(ev);
  f_eval.attach(ev, false);
  ev->add_option("--params", params_path, "parameter file (seeded initialisation when absent)");
  ev->add_option("--partition", part_path, "partition JSON");
  ev->add_option("--predictions", predictions, "directory of <scene_id>.npy label grids to score instead");
  ev->add_option("--write-predictions", write_predictions, "write <scene_id>.npy predicted labels here");
  ev->add_option("--out", out, "report JSON");

  std::string tolerance = "1e-4", corrupt;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  f_grad.attach(gc, false);
  gc->add_option("--tolerance", tolerance, "max relative error, or inf");
  gc->add_option("--corrupt", corrupt, "perturb this block's analytic gradient (negative control)");
  gc->add_option("--out", out, "report JSON");

  std::string axis, values;
  auto* sw = app.add_subcommand("sweep", "retrain and evaluate along one ablation axis");
  data_opt(sw);
  f_sweep.attach(sw, true);
  sw->add_option("--axis", axis, "rho | top_k | fusion_mode | prior_noise")->required();
  sw->add_option("--values", values, "comma-separated values (axis defaults when absent)");
  sw->add_option("--eval-data", eval_dir, "held-out dataset (training data when absent)");
  sw->add_option("--out", out, "sweep JSON");

  auto* pilot = app.add_subcommand("pilot", "per-channel masking study and top/bottom subspace curve");
  data_opt(pilot);
  f_pilot.attach(pilot, false);
  pilot->add_option("--out", out, "result JSON");

  std::size_t scene_index = 0, scale = 8;
  auto* viz = app.add_subcommand("viz", "render labels, uncertainty, correlations and the graph");
  data_opt(viz);
  f_viz.attach(viz, false);
  viz->add_option("--scene", scene_index, "scene index");
  viz->add_option("--params", params_path, "parameter file");
  viz->add_option("--partition", part_path, "partition JSON");
  viz->add_option("--scale", scale, "pixels per grid cell")->check(CLI::PositiveNumber);
  viz->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "drseg: " << e.what() << "\n";
    return exit_usage;
  }

  try {
    if (*synth) return cmd_synth(sp, n_scenes, synth_seed, synth_out);
    if (*score) return cmd_score(data_dir, f_score.resolve(), out);
    if (*trn) return cmd_train(data_dir, part_path, f_train.resolve(), threads, out, trace_out);
    if (*ev) return cmd_eval(data_dir, params_path, part_path, predictions, write_predictions, f_eval.resolve(), out);
    if (*gc) return cmd_gradcheck(f_grad.resolve(), tolerance, corrupt, out);
    if (*sw) return cmd_sweep(axis, values, data_dir, eval_dir, f_sweep.resolve(), threads, out);
    if (*pilot) return cmd_pilot(data_dir, f_pilot.resolve(), out);
    if (*viz) return cmd_viz(data_dir, scene_index, params_path, part_path, f_viz.resolve(), scale, out);
  } catch (const CheckFailure& e) {
    std::cerr << "drseg: " << e.what() << "\n";
    return exit_check;
  } catch (const ConfigError& e) {
    std::cerr << "drseg: " << e.what() << "\n";
    return exit_usage;
  } catch (const Error& e) {
    std::cerr << "drseg: " << e.what() << "\n";
    return exit_data;
  } catch (const std::exception& e) {
    std::cerr << "drseg: " << e.what() << "\n";
    return exit_data;
  }
  return exit_usage;
}
