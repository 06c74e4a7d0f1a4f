#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/config.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/features.hpp"
#include "ensemblenet/landscape.hpp"
#include "ensemblenet/pipeline.hpp"
#include "ensemblenet/plot.hpp"

namespace enet::cli {

namespace fs = std::filesystem;

std::vector<std::string> extract_overrides(std::vector<std::string>& args) {
  std::vector<std::string> overrides;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    const auto eq = a.find('=');
    const std::string key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    if (key.find('.') == std::string::npos) {
      rest.push_back(a);
      continue;
    }
    if (eq != std::string::npos) {
      overrides.push_back(key + "=" + a.substr(eq + 1));
    } else if (i + 1 < args.size()) {
      overrides.push_back(key + "=" + args[++i]);
    } else {
      throw ConfigError("override --" + key + " has no value");
    }
  }
  args = std::move(rest);
  return overrides;
}

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig::desk() : RunConfig::load(c.config);
  cfg.apply_overrides(c.overrides);
  if (!c.out.empty()) cfg.out = c.out;
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  return cfg;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.out;
  fs::create_directories(out);
  return out;
}

void write_snapshot(const RunConfig& cfg) { cfg.save(fs::path(cfg.out) / "config.json"); }

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  fn(os);
  if (!os) throw IoError("error writing " + path.string());
}

Dataset data_for(const RunConfig& cfg) {
  Dataset ds = load_data(cfg.data);
  resize_images(ds, cfg.model.input_height, cfg.model.input_width);
  return ds;
}

void print_report(std::ostream& out, const EvalReport& report) {
  report.write_text(out);
}

void save_report(const fs::path& dir, const std::string& stem, const EvalReport& report) {
  write_file(dir / (stem + ".txt"), [&](std::ostream& os) { report.write_text(os); });
  write_file(dir / (stem + ".csv"), [&](std::ostream& os) {
    os << report.csv_header() << '\n' << report.csv_row() << '\n';
  });
}

// ---------------------------------------------------------------------------

int cmd_train(RunConfig cfg, std::ostream& out) {
  cfg.validate();
  const Dataset ds = data_for(cfg);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  Model model(cfg.model);
  init_model(model, cfg.seed);
  TrainOptions options;
  options.augment = fill_erase_from_data(cfg.augment, ds);
  options.checkpoint_dir = dir / "checkpoints";
  options.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.mean_total_loss << "  ("
        << r.wall_seconds << " s)\n";
  };
  const TrainResult result = train(model, ds, cfg.train, options);
  result.log.save_csv(dir / "train_log.csv", false);
  for (const auto& p : result.checkpoints) out << "checkpoint " << p.string() << '\n';
  return 0;
}

int cmd_extract(RunConfig cfg, const std::string& checkpoint, std::string label, std::ostream& out) {
  Model model = load_model(checkpoint);
  cfg.model = model.config();
  cfg.augment.target_height = cfg.model.input_height;
  cfg.augment.target_width = cfg.model.input_width;
  cfg.validate();
  const Dataset ds = data_for(cfg);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  ExtractOptions eo;
  eo.batch_size = cfg.extract_batch;
  eo.label = label.empty() ? fs::path(checkpoint).stem().string() : std::move(label);
  save_features(extract_all(model, ds.query, eo), dir / "query.ensf");
  save_features(extract_all(model, ds.gallery, eo), dir / "gallery.ensf");
  out << "wrote " << (dir / "query.ensf").string() << " and " << (dir / "gallery.ensf").string()
      << " (" << ds.query.size() << " + " << ds.gallery.size() << " rows, dim "
      << model.descriptor_dim() << ")\n";
  return 0;
}

struct EvalInputs {
  FeatureMatrix query;
  FeatureMatrix gallery;
};

EvalInputs load_pair(const std::string& q, const std::string& g) {
  EvalInputs in{load_features(q), load_features(g)};
  if (in.query.dim() != in.gallery.dim()) {
    throw ShapeError("query features have dimension " + std::to_string(in.query.dim()) +
                     " but gallery features have " + std::to_string(in.gallery.dim()));
  }
  return in;
}

DistanceMatrix reranked(const EvalInputs& in, const RerankParams& params, std::vector<std::string>& notes) {
  return rerank(cosine_distance(in.query, in.gallery), cosine_distance(in.query, in.query),
                cosine_distance(in.gallery, in.gallery), params, &notes);
}

int cmd_eval(RunConfig cfg, const std::string& q, const std::string& g, bool use_rerank,
             std::ostream& out) {
  cfg.validate();
  const EvalInputs in = load_pair(q, g);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  std::vector<std::string> warnings;
  const DistanceMatrix dist =
      use_rerank ? reranked(in, cfg.rerank, warnings) : cosine_distance(in.query, in.gallery);
  EvalReport report = evaluate(dist, in.query, in.gallery, cfg.ranks);
  for (auto& w : warnings) report.notes.push_back(std::move(w));
  print_report(out, report);
  save_report(dir, "eval", report);
  return 0;
}

int cmd_rerank(RunConfig cfg, const std::string& q, const std::string& g, std::ostream& out) {
  cfg.validate();
  const EvalInputs in = load_pair(q, g);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  std::vector<std::string> warnings;
  const DistanceMatrix dist = reranked(in, cfg.rerank, warnings);
  save_distances(dist, in.query.person_ids, in.query.camera_ids, dir / "reranked.ensf");
  EvalReport report = evaluate(dist, in.query, in.gallery, cfg.ranks);
  for (auto& w : warnings) report.notes.push_back(std::move(w));
  print_report(out, report);
  save_report(dir, "rerank_eval", report);
  return 0;
}

int cmd_ensemble(RunConfig cfg, const std::vector<std::string>& qs, const std::vector<std::string>& gs,
                 const std::vector<int>& subsets, int repeats, std::ostream& out) {
  cfg.validate();
  if (qs.empty() || qs.size() != gs.size()) {
    throw ValidationError("ensemble needs matching --query and --gallery lists");
  }
  std::vector<FeatureMatrix> query;
  std::vector<FeatureMatrix> gallery;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    EvalInputs in = load_pair(qs[i], gs[i]);
    query.push_back(std::move(in.query));
    gallery.push_back(std::move(in.gallery));
  }
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  const FeatureMatrix q = concat_ensemble(query);
  const FeatureMatrix g = concat_ensemble(gallery);
  save_features(q, dir / "ensemble_query.ensf");
  save_features(g, dir / "ensemble_gallery.ensf");
  out << "concatenated " << qs.size() << " feature sets, dim " << q.dim() << '\n';

  if (subsets.empty()) {
    print_report(out, evaluate(cosine_distance(q, g), q, g, cfg.ranks));
    return 0;
  }
  const auto stats = ensemble_subsets(query, gallery, subsets, repeats, cfg.seed, cfg.ranks);
  write_file(dir / "ensemble_subsets.csv", [&](std::ostream& os) { write_subset_csv(os, stats); });
  std::vector<std::string> labels;
  Series map{"mAP", {}};
  Series r1{"Rank-1", {}};
  for (const auto& s : stats) {
    labels.push_back(std::to_string(s.r));
    map.values.push_back(s.mean_map);
    r1.values.push_back(s.mean_rank1);
    out << "r=" << s.r << "  mAP " << s.mean_map << " (var " << s.var_map << ")  rank1 "
        << s.mean_rank1 << " (var " << s.var_rank1 << ")\n";
  }
  write_line_plot(labels, {map, r1}, dir / "ensemble_subsets.png", "ensemble size vs accuracy");
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& axis_name, std::vector<int> points, std::ostream& out,
              std::ostream& err) {
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  if (points.empty()) points = default_sweep_points(axis);
  cfg.validate();
  const Dataset ds = data_for(cfg);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  std::vector<SweepRow> rows;
  bool failed = false;
  for (int v : points) {
    SweepRow row;
    row.value = v;
    RunConfig point = sweep_config(cfg, axis, v);
    point.out = (dir / (std::string(to_string(axis)) + "_" + std::to_string(v))).string();
    try {
      row.num_objectives = num_part_vectors(point.model.num_branches, point.model.pooling);
      fs::create_directories(point.out);
      write_snapshot(point);
      const RunOutcome r = train_and_evaluate(point, ds);
      r.train.log.save_csv(fs::path(point.out) / "train_log.csv", false);
      row.report = r.report;
      out << to_string(axis) << "=" << v << "  objectives " << row.num_objectives << "  mAP "
          << r.report.mAP << "  rank1 " << r.report.rank1() << '\n';
    } catch (const std::exception& e) {
      row.status = "failed";
      failed = true;
      err << to_string(axis) << "=" << v << " failed: " << e.what() << '\n';
    }
    rows.push_back(std::move(row));
  }

  const std::string stem = "sweep_" + std::string(to_string(axis));
  write_file(dir / (stem + ".csv"), [&](std::ostream& os) { write_sweep_csv(os, axis, rows, cfg.ranks); });
  std::vector<std::string> labels;
  Series map{"mAP", {}};
  Series r1{"Rank-1", {}};
  for (const auto& row : rows) {
    labels.push_back(std::to_string(row.value));
    const bool ok = row.status == "ok";
    map.values.push_back(ok ? row.report.mAP : 0.0);
    r1.values.push_back(ok ? row.report.rank1() : 0.0);
  }
  const std::string title = std::string(to_string(axis)) + " sweep";
  if (axis == SweepAxis::kStride) {
    write_bar_plot(labels, {map, r1}, dir / (stem + ".png"), title);
  } else {
    write_line_plot(labels, {map, r1}, dir / (stem + ".png"), title);
  }
  return failed ? 1 : 0;
}

int cmd_landscape(RunConfig cfg, const std::string& checkpoint, std::ostream& out) {
  Model model = load_model(checkpoint);
  cfg.model = model.config();
  cfg.augment.target_height = cfg.model.input_height;
  cfg.augment.target_width = cfg.model.input_width;
  cfg.validate();
  const Dataset ds = data_for(cfg);
  const fs::path dir = prepare_out(cfg);
  write_snapshot(cfg);

  const LandscapeConfig& lc = cfg.landscape;
  EvalBundle bundle = make_eval_bundle(ds, static_cast<std::size_t>(lc.max_query),
                                       static_cast<std::size_t>(lc.max_gallery));
  const Direction delta = random_direction(model, lc.seed_delta);
  const Direction eta = random_direction(model, lc.seed_eta);
  const auto axis = symmetric_axis(lc.grid, lc.radius);
  const SurfacePair surfaces = performance_surfaces(model, delta, eta, axis, axis, bundle);

  for (const LandscapeGrid* grid : {&surfaces.map, &surfaces.rank1}) {
    const std::string stem = "landscape_" + std::string(to_string(grid->metric)) + "_d" +
                             std::to_string(lc.seed_delta) + "_e" + std::to_string(lc.seed_eta) +
                             "_" + std::to_string(lc.grid) + "x" + std::to_string(lc.grid);
    write_file(dir / (stem + ".csv"), [&](std::ostream& os) { grid->write_csv(os); });
    write_heatmap(*grid, dir / (stem + ".png"), std::string(to_string(grid->metric)) + " landscape");
    out << to_string(grid->metric) << ": center " << grid->center() << ", area within 90% "
        << grid->area_within(0.9) << "  -> " << (dir / (stem + ".csv")).string() << '\n';
  }
  for (const auto& w : surfaces.map.warnings) out << "warning: " << w << '\n';
  return 0;
}

int cmd_synth(RunConfig cfg, std::ostream& out) {
  const fs::path dir = prepare_out(cfg);
  const SyntheticManifest manifest = make_synthetic_manifest(cfg.data.synthetic);
  write_manifest(dir / kManifestName, manifest);
  cfg.data.root = dir.string();
  write_snapshot(cfg);
  out << "wrote " << (dir / kManifestName).string() << " (" << manifest.rows.size() << " images)\n";
  return 0;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  Common common;
  try {
    common.overrides = extract_overrides(args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"EnsembleNet person re-identification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", common.config, "JSON run config (defaults to the desk config)");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--seed", common.seed, "seed for initialization, training and sampling");

  auto* train = app.add_subcommand("train", "train a model and write checkpoints plus the epoch log");

  std::string checkpoint;
  std::string label;
  auto* extract = app.add_subcommand("extract", "extract query/gallery descriptors from a checkpoint");
  extract->add_option("--checkpoint", checkpoint, "model checkpoint (.ensc)")->required();
  extract->add_option("--label", label, "segment label stored in the feature files");

  std::string query;
  std::string gallery;
  std::string ranks;
  bool use_rerank = false;
  std::optional<int> k1;
  std::optional<int> k2;
  std::optional<double> lambda;
  auto add_rerank_opts = [&](CLI::App* sub) {
    sub->add_option("--k1", k1, "k-reciprocal neighbourhood size");
    sub->add_option("--k2", k2, "query expansion size");
    sub->add_option("--lambda", lambda, "weight of the original distance");
  };
  auto* eval = app.add_subcommand("eval", "evaluate query features against gallery features");
  eval->add_option("--query", query, "query feature file")->required();
  eval->add_option("--gallery", gallery, "gallery feature file")->required();
  eval->add_option("--ranks", ranks, "comma separated CMC ranks, e.g. 1,5,10,20");
  eval->add_flag("--rerank", use_rerank, "apply k-reciprocal re-ranking first");
  add_rerank_opts(eval);

  auto* rr = app.add_subcommand("rerank", "write re-ranked distances and their evaluation");
  rr->add_option("--query", query, "query feature file")->required();
  rr->add_option("--gallery", gallery, "gallery feature file")->required();
  rr->add_option("--ranks", ranks, "comma separated CMC ranks");
  add_rerank_opts(rr);

  std::vector<std::string> queries;
  std::vector<std::string> galleries;
  std::vector<int> subsets;
  int repeats = 10;
  auto* ensemble = app.add_subcommand("ensemble", "concatenate feature files and evaluate random subsets");
  ensemble->add_option("--query", queries, "query feature files")->required();
  ensemble->add_option("--gallery", galleries, "gallery feature files, same order")->required();
  ensemble->add_option("--subset", subsets, "subset sizes r to evaluate")->delimiter(',');
  ensemble->add_option("--ranks", ranks, "comma separated CMC ranks");
  ensemble->add_option("--repeats", repeats, "random subsets per size")->check(CLI::PositiveNumber);

  std::string axis;
  std::vector<int> points;
  auto* sweep = app.add_subcommand("sweep", "train and evaluate every point along one axis");
  sweep->add_option("--axis", axis, "stride, branches or aap")->required();
  sweep->add_option("--points", points, "restrict the axis values")->delimiter(',');
  sweep->add_option("--ranks", ranks, "comma separated CMC ranks");

  std::optional<int> grid;
  std::optional<std::uint64_t> seed_delta;
  std::optional<std::uint64_t> seed_eta;
  std::optional<double> radius;
  auto* landscape = app.add_subcommand("landscape", "mAP and Rank-1 surfaces around a checkpoint");
  landscape->add_option("--checkpoint", checkpoint, "model checkpoint (.ensc)")->required();
  landscape->add_option("--grid", grid, "points per axis");
  landscape->add_option("--seed-delta", seed_delta, "seed of the first direction");
  landscape->add_option("--seed-eta", seed_eta, "seed of the second direction");
  landscape->add_option("--radius", radius, "axis range [-radius, radius]");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset manifest to --out");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    RunConfig cfg = resolve(common);
    if (!ranks.empty()) {
      cfg.apply_overrides({"ranks=[" + ranks + "]"});
    }
    if (k1) cfg.rerank.k1 = *k1;
    if (k2) cfg.rerank.k2 = *k2;
    if (lambda) cfg.rerank.lambda = *lambda;
    if (grid) cfg.landscape.grid = *grid;
    if (seed_delta) cfg.landscape.seed_delta = *seed_delta;
    if (seed_eta) cfg.landscape.seed_eta = *seed_eta;
    if (radius) cfg.landscape.radius = *radius;

    if (train->parsed()) return cmd_train(cfg, out);
    if (extract->parsed()) return cmd_extract(cfg, checkpoint, label, out);
    if (eval->parsed()) return cmd_eval(cfg, query, gallery, use_rerank, out);
    if (rr->parsed()) return cmd_rerank(cfg, query, gallery, out);
    if (ensemble->parsed()) return cmd_ensemble(cfg, queries, galleries, subsets, repeats, out);
    if (sweep->parsed()) return cmd_sweep(cfg, axis, points, out, err);
    if (landscape->parsed()) return cmd_landscape(cfg, checkpoint, out);
    if (synth->parsed()) return cmd_synth(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace enet::cli
