// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/config.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/features.hpp"
#include "ensemblenet/landscape.hpp"
#include "ensemblenet/loss.hpp"
#include "ensemblenet/model.hpp"
#include "ensemblenet/pipeline.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace enet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("FAILED " + what);
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

class Gate {
 public:
  void run(const std::string& name, double budget_s, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < budget_s, "runtime " + fmt(secs, 1) + " s >= " + fmt(budget_s, 0) + " s");
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fmt(secs, 1) << " s) " << o.detail
              << std::endl;
    failures_ += o.pass ? 0 : 1;
  }
  int failures() const { return failures_; }

 private:
  int failures_ = 0;
};

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
  Outcome o;
  Rng rng(2024);
  std::uniform_int_distribution<int> nq_dist(1, 6), ng_dist(1, 8), id_dist(-1, 4), cam_dist(1, 3), level(0, 5);
  const std::vector<int> ranks{1, 2, 5};
  double worst = 0.0;
  int valid_total = 0;
  for (int t = 0; t < 200; ++t) {
    const int nq = nq_dist(rng), ng = ng_dist(rng);
    DistanceMatrix d;
    d.values.resize(nq, ng);
    for (int i = 0; i < nq; ++i) {
      for (int j = 0; j < ng; ++j) d.values(i, j) = level(rng) * 0.2;
    }
    std::vector<int> qid, qcam, gid, gcam;
    for (int i = 0; i < nq; ++i) {
      qid.push_back(std::max(1, id_dist(rng)));
      qcam.push_back(cam_dist(rng));
    }
    for (int j = 0; j < ng; ++j) {
      gid.push_back(id_dist(rng));
      gcam.push_back(cam_dist(rng));
    }
    const EvalReport r = evaluate(d, qid, qcam, gid, gcam, ranks);
    const auto ref = oracle::single_query(d.values, qid, qcam, gid, gcam, ranks);
    o.require(r.num_valid_queries == ref.valid, "valid-query count on instance " + std::to_string(t));
    worst = std::max(worst, std::abs(r.mAP - ref.mAP));
    for (int k : ranks) worst = std::max(worst, std::abs(r.cmc.at(k) - ref.cmc.at(k)));
    valid_total += ref.valid;
  }
  o.require(worst <= 1e-9, "max deviation " + sci(worst));
  o.note("200 instances, " + std::to_string(valid_total) + " valid queries, max |diff| " +
         sci(worst));
  return o;
}

Outcome rerank_correctness() {
  Outcome o;
  Rng rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> nq_dist(1, 5), ng_dist(2, 10), cl(0, 2);
  std::uniform_real_distribution<double> lam(0.0, 1.0);
  auto pairwise = [](const Matrix& a, const Matrix& b) {
    DistanceMatrix d;
    d.values.resize(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.rows(); ++j) d.values(i, j) = (a.row(i) - b.row(j)).norm();
    }
    return d;
  };
  auto points = [&](int rows) {
    Matrix p(rows, 4);
    for (int i = 0; i < rows; ++i) {
      const double c = 2.5 * cl(rng);
      for (int k = 0; k < 4; ++k) p(i, k) = c + n(rng);
    }
    return p;
  };
  double worst = 0.0, worst_lambda1 = 0.0, worst_jaccard = 0.0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    const int nq = nq_dist(rng), ng = ng_dist(rng);
    const Matrix q = points(nq), g = points(ng);
    const DistanceMatrix qg = pairwise(q, g), qq = pairwise(q, q), gg = pairwise(g, g);
    const int nall = nq + ng;
    const int k1 = std::uniform_int_distribution<int>(1, nall - 1)(rng);
    const int k2 = std::uniform_int_distribution<int>(1, k1)(rng);
    const double lambda = lam(rng);

    const Matrix full = rerank(qg, qq, gg, {k1, k2, lambda}).values;
    worst = std::max(worst, (full - oracle::k_reciprocal(qg.values, qq.values, gg.values, k1, k2, lambda))
                                .cwiseAbs()
                                .maxCoeff());
    const Matrix one = rerank(qg, qq, gg, {k1, k2, 1.0}).values;
    worst_lambda1 = std::max(worst_lambda1, (one - qg.values).cwiseAbs().maxCoeff());
    const Matrix zero = rerank(qg, qq, gg, {k1, k2, 0.0}).values;
    const Matrix jac = oracle::k_reciprocal(qg.values, qq.values, gg.values, k1, k2, 0.0);
    worst_jaccard = std::max(worst_jaccard, (zero - jac).cwiseAbs().maxCoeff());
  }
  o.require(worst_lambda1 == 0.0, "lambda=1 differs from input by " + sci(worst_lambda1));
  o.require(worst_jaccard <= 1e-6, "lambda=0 Jaccard deviation " + sci(worst_jaccard));
  o.require(worst <= 1e-6, "oracle deviation " + sci(worst));
  o.note(std::to_string(trials) + " instances, max |diff| " + sci(worst) + ", lambda=0 " +
         sci(worst_jaccard));
  return o;
}

Outcome architecture_laws() {
  Outcome o;
  for (int n = 1; n <= 6; ++n) {
    const int m = n * (n + 1) / 2;
    o.require(num_part_vectors(n, Pooling::kAap) == m, "part count for N=" + std::to_string(n));
    ModelConfig cfg = ModelConfig::desk(20);
    cfg.num_branches = n;
    const Model model(cfg);
    o.require(model.num_parts() == m && model.descriptor_dim() == 256 * m,
              "descriptor dimension for N=" + std::to_string(n));
  }
  ModelConfig three = ModelConfig::desk(20);
  o.require(Model(three).descriptor_dim() == 1536, "N=3 descriptor dimension 1536");

  Rng rng(5);
  std::uniform_int_distribution<int> n_dist(1, 6), extra(0, 20), small(1, 5);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int parts = n_dist(rng);
    const int h = parts + extra(rng);
    const int w = small(rng), k = small(rng), b = small(rng);
    const Tensor fmap = enet::testing::random_tensor({b, k, h, w}, rng, 1.0);

    std::vector<int> covered(h, 0);
    for (int p = 0; p < parts; ++p) {
      const auto [lo, hi] = vertical_bin(p, parts, h);
      if (lo >= hi) o.require(false, "empty bin");
      for (int y = lo; y < hi; ++y) ++covered[y];
    }
    for (int y = 0; y < h; ++y) {
      if (covered[y] < 1) o.require(false, "row not covered");
    }
    const auto [first_lo, first_hi] = vertical_bin(0, parts, h);
    const auto [last_lo, last_hi] = vertical_bin(parts - 1, parts, h);
    if (first_lo != 0 || last_hi != h) o.require(false, "bins do not span the map");
    (void)first_hi;
    (void)last_lo;

    const auto pooled = adaptive_vertical_pool(fmap, parts);
    for (int p = 0; p < parts; ++p) {
      const auto [lo, hi] = vertical_bin(p, parts, h);
      for (int i = 0; i < b; ++i) {
        for (int c = 0; c < k; ++c) {
          double s = 0.0;
          for (int y = lo; y < hi; ++y) {
            for (int x = 0; x < w; ++x) s += fmap.at(i, c, y, x);
          }
          worst = std::max(worst, std::abs(pooled[p](i, c) - s / ((hi - lo) * w)));
        }
      }
    }
    // GAP identity: one bin is the global average.
    const auto gap = adaptive_vertical_pool(fmap, 1);
    for (int i = 0; i < b; ++i) {
      for (int c = 0; c < k; ++c) {
        double s = 0.0;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) s += fmap.at(i, c, y, x);
        }
        worst = std::max(worst, std::abs(gap[0](i, c) - s / (h * w)));
      }
    }
  }
  o.require(worst <= 1e-12, "pooling deviation " + sci(worst));
  o.note("N=1..6 part counts and dims ok, 1000 pooling trials, max |diff| " + sci(worst));
  return o;
}

Outcome loss_and_gradients() {
  Outcome o;
  const Matrix uniform = Matrix::Zero(4, 20);
  const std::vector<int> labels4{0, 5, 19, 7};
  const double u = softmax_log_loss(uniform, labels4);
  o.require(std::abs(u - 4.0 * std::log(20.0)) <= 1e-12, "uniform logits B ln C");
  Matrix l(1, 3);
  l << 1.0, 2.0, 3.0;
  const std::vector<int> label2{2};
  const double hand = softmax_log_loss(l, label2);
  o.require(std::abs(hand - 0.40761) <= 1e-4, "(1,2,3) case = " + fmt(hand, 6));

  // Desk head: 128-channel part vectors -> 256 reduction -> 20 identities.
  Rng rng(31);
  ReductionHead head("head0.reduce", 128, 256, 0.1);
  ClassifierHead cls("head0.classifier", 256, 20);
  std::vector<Parameter*> params;
  head.collect_parameters(params);
  cls.collect_parameters(params);
  for (Parameter* p : params) {
    p->value = enet::testing::random_tensor(p->value.shape(), rng, 0.2);
    if (p->role == ParamRole::kNormScale) {
      for (double& v : p->value.values()) v = 1.0 + 0.2 * v;
    }
  }
  const Matrix x = Matrix::Random(6, 128);
  const std::vector<int> labels{0, 3, 19, 2, 3, 11};
  auto loss = [&] {
    return softmax_log_loss(cls.forward(head.forward(x, Mode::kTrain).post_relu, Mode::kTrain), labels);
  };
  for (Parameter* p : params) p->zero_grad();
  const Matrix logits = cls.forward(head.forward(x, Mode::kTrain).post_relu, Mode::kTrain);
  head.backward(cls.backward(softmax_log_loss_grad(logits, labels)));

  double worst = 0.0;
  int checked = 0;
  for (Parameter* p : params) {
    // Every coordinate of the small tensors, a strided sample of the big ones.
    const std::size_t stride = std::max<std::size_t>(1, p->value.size() / 600);
    for (std::size_t i = 0; i < p->value.size(); i += stride) {
      const double num = enet::testing::central_difference(loss, p->value[i], 1e-5);
      worst = std::max(worst, enet::testing::relative_error(p->grad[i], num, 1e-7));
      ++checked;
    }
  }
  o.require(worst <= 1e-4, "gradient relative error " + sci(worst));
  o.note("loss cases ok, " + std::to_string(checked) + " coordinates, max rel err " + sci(worst));
  return o;
}

// ---------------------------------------------------------------------------
// Desk experiments share trained models.

struct DeskRun {
  RunConfig cfg;
  RunOutcome outcome;
  double seconds = 0.0;
};

Dataset desk_data(const RunConfig& cfg) {
  Dataset ds = load_data(cfg.data);
  resize_images(ds, cfg.model.input_height, cfg.model.input_width);
  return ds;
}

RunConfig desk_config(std::uint64_t seed) {
  RunConfig cfg = RunConfig::desk();
  cfg.seed = seed;
  cfg.train.seed = seed;
  return cfg;
}

DeskRun desk_run(const RunConfig& cfg, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun r{cfg, train_and_evaluate(cfg, data), 0.0};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string log_text(const TrainLog& log) {
  std::ostringstream os;
  log.write_csv(os, false);
  return os.str();
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  r.write_text(os);
  return os.str();
}

double random_descriptor_map(const FeatureMatrix& query, const FeatureMatrix& gallery, int draws) {
  double total = 0.0;
  for (int s = 0; s < draws; ++s) {
    Rng rng(1000 + s);
    std::normal_distribution<float> n(0.0f, 1.0f);
    FeatureMatrix q = query, g = gallery;
    for (auto* fm : {&q, &g}) {
      for (Eigen::Index i = 0; i < fm->vectors.size(); ++i) fm->vectors.data()[i] = n(rng);
    }
    total += evaluate(cosine_distance(q, g), q, g).mAP;
  }
  return total / draws;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "ensemblenet_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--work-dir DIR]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  Gate gate;
  gate.run("metric-oracle", 10, metric_oracle);
  gate.run("rerank-correctness", 30, rerank_correctness);
  gate.run("architecture-laws", 10, architecture_laws);
  gate.run("loss-gradient", 30, loss_and_gradients);

  const RunConfig base = desk_config(0);
  const Dataset data = desk_data(base);
  std::vector<DeskRun> runs;

  gate.run("desk-training", 600, [&] {
    Outcome o;
    runs.push_back(desk_run(base, data));
    const DeskRun& r = runs.front();
    const auto& rec = r.outcome.train.log.records;
    const double first = rec.front().mean_total_loss, last = rec.back().mean_total_loss;
    const double rnd = random_descriptor_map(r.outcome.query, r.outcome.gallery, 10);
    o.require(rec.size() == 10, "expected 10 epochs");
    o.require(last <= 0.5 * first, "loss ratio " + fmt(last / first));
    o.require(r.outcome.report.mAP >= 3.0 * rnd, "mAP " + fmt(r.outcome.report.mAP) + " < 3 x random " + fmt(rnd));
    o.note("loss " + fmt(first) + " -> " + fmt(last) + " (ratio " + fmt(last / first) + "), mAP " +
           fmt(r.outcome.report.mAP) + " vs random " + fmt(rnd) + " (" + fmt(r.outcome.report.mAP / rnd, 1) +
           "x)");
    std::ofstream(work / "desk_train_log.csv") << log_text(r.outcome.train.log);
    return o;
  });

  gate.run("ensemble-trend", 45 * 60, [&] {
    Outcome o;
    if (runs.empty()) throw Error("desk training did not produce a model");
    for (std::uint64_t seed = 1; seed <= 3; ++seed) runs.push_back(desk_run(desk_config(seed), data));
    std::vector<FeatureMatrix> qs, gs;
    for (const auto& r : runs) {
      qs.push_back(r.outcome.query);
      gs.push_back(r.outcome.gallery);
      qs.back().dim_tags.front().label = gs.back().dim_tags.front().label = "seed" + std::to_string(r.cfg.seed);
    }
    const int sizes[] = {1, 2, 3, 4};
    const int ranks[] = {1};
    const auto stats = ensemble_subsets(qs, gs, sizes, 10, 7, ranks);
    std::ofstream csv(work / "ensemble_subsets.csv");
    write_subset_csv(csv, stats);
    std::string trend;
    for (std::size_t i = 0; i < stats.size(); ++i) {
      trend += (i ? " " : "") + std::string("r") + std::to_string(stats[i].r) + "=" + fmt(stats[i].mean_map);
      if (i > 0) {
        o.require(stats[i].mean_map >= stats[i - 1].mean_map - 0.005,
                  "mean mAP drops from r=" + std::to_string(stats[i - 1].r) + " to r=" + std::to_string(stats[i].r));
      }
    }
    o.note("mean mAP " + trend);
    const bool var_ok = stats[2].var_map < stats[0].var_map;
    o.note(std::string("variance r=1 ") + fmt(stats[0].var_map, 6) + " -> r=3 " + fmt(stats[2].var_map, 6) +
           (var_ok ? " (decreases)" : " (does not decrease; report-only)"));
    return o;
  });

  gate.run("stride-sweep", 20 * 60, [&] {
    Outcome o;
    std::vector<SweepRow> rows;
    for (int v : default_sweep_points(SweepAxis::kStride)) {
      const RunConfig cfg = sweep_config(base, SweepAxis::kStride, v);
      SweepRow row;
      row.value = v;
      row.num_objectives = num_part_vectors(cfg.model.num_branches, cfg.model.pooling);
      try {
        row.report = train_and_evaluate(cfg, data).report;
      } catch (const std::exception& e) {
        row.status = "failed";
        o.note("stride " + std::to_string(v) + ": " + e.what());
      }
      rows.push_back(row);
    }
    {
      std::ofstream csv(work / "sweep_stride.csv");
      write_sweep_csv(csv, SweepAxis::kStride, rows, base.ranks);
    }
    std::ifstream in(work / "sweep_stride.csv");
    const auto back = read_sweep_csv(in);
    o.require(back.size() == 2, "sweep CSV has two configurations");
    for (const auto& r : back) o.require(r.status == "ok", "stride " + std::to_string(r.value) + " completed");
    if (back.size() == 2 && back[0].status == "ok" && back[1].status == "ok") {
      o.note("stride1 mAP " + fmt(back[0].report.mAP) + ", stride2 mAP " + fmt(back[1].report.mAP) +
             (back[0].report.mAP >= back[1].report.mAP ? " (stride1 >= stride2)" : " (stride1 < stride2; reported only)"));
    }
    return o;
  });

  gate.run("landscape", 600, [&] {
    Outcome o;
    if (runs.empty()) throw Error("desk training did not produce a model");
    Model& model = runs.front().outcome.model;
    std::vector<Tensor> before;
    for (auto* p : model.parameters()) before.push_back(p->value);
    for (auto* b : model.buffers()) before.push_back(b->value);

    const Direction delta = random_direction(model, 1);
    const Direction eta = random_direction(model, 2);
    double worst = 0.0;
    const auto params = model.parameters();
    for (const Direction* d : {&delta, &eta}) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k]->role != ParamRole::kWeight) continue;
        const auto pm = params[k]->value.as_matrix();
        const auto dm = d->tensors[k].as_matrix();
        for (Eigen::Index f = 0; f < pm.rows(); ++f) {
          const double t = pm.row(f).norm();
          worst = std::max(worst, std::abs(dm.row(f).norm() - t) / std::max(t, 1e-12));
        }
      }
    }
    o.require(worst <= 1e-6, "filter norm relative deviation " + sci(worst));

    const EvalBundle bundle = make_eval_bundle(data);
    const auto axis = symmetric_axis(5, 1.0);
    const SurfacePair s = performance_surfaces(model, delta, eta, axis, axis, bundle);

    std::vector<Tensor> after;
    for (auto* p : model.parameters()) after.push_back(p->value);
    for (auto* b : model.buffers()) after.push_back(b->value);
    o.require(after == before, "parameters restored bitwise");

    const FeatureMatrix q = extract_all(model, bundle.query);
    const FeatureMatrix g = extract_all(model, bundle.gallery);
    const EvalReport r = evaluate(cosine_distance(q, g), q, g, bundle.ranks);
    o.require(s.map.center() == r.mAP, "center mAP equals the unperturbed metric");
    o.require(s.rank1.center() == r.rank1(), "center rank-1 equals the unperturbed metric");
    o.require(s.map.values.rows() == 5 && s.map.values.cols() == 5, "5x5 grid");
    {
      std::ofstream csv(work / "landscape_mAP_d1_e2_5x5.csv");
      s.map.write_csv(csv);
    }
    o.note("center mAP " + fmt(s.map.center()) + ", min " + fmt(s.map.values.minCoeff()) +
           ", area within 90% " + fmt(s.map.area_within(0.9)) + ", filter-norm dev " + sci(worst));
    return o;
  });

  gate.run("determinism", 600, [&] {
    Outcome o;
    if (runs.empty()) throw Error("desk training did not produce a model");
    const DeskRun again = desk_run(base, data);
    const DeskRun& first = runs.front();
    o.require(log_text(again.outcome.train.log) == log_text(first.outcome.train.log), "TrainLog bitwise");
    o.require(report_text(again.outcome.report) == report_text(first.outcome.report), "EvalReport bitwise");
    o.require(again.outcome.query.vectors == first.outcome.query.vectors, "query features bitwise");
    o.note("rerun reproduces the epoch log, features and report");
    return o;
  });

  std::cout << (gate.failures() == 0 ? "ALL PASS" : std::to_string(gate.failures()) + " FAILED") << std::endl;
  return gate.failures() == 0 ? 0 : 1;
}
