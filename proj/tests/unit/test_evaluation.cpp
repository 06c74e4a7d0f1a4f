#include <gtest/gtest.h>

#include <sstream>

#include "ensemblenet/error.hpp"
#include "ensemblenet/evaluation.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace enet;

namespace {

DistanceMatrix dist_of(std::initializer_list<std::initializer_list<double>> rows) {
  DistanceMatrix d;
  d.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) d.values(i, j++) = v;
    ++i;
  }
  return d;
}

struct Instance {
  DistanceMatrix dist;
  std::vector<int> qid, qcam, gid, gcam;
};

Instance random_instance(Rng& rng) {
  std::uniform_int_distribution<int> nq_dist(1, 8), ng_dist(1, 25), id_dist(-1, 5), cam_dist(1, 3),
      level(0, 6);
  Instance in;
  const int nq = nq_dist(rng);
  const int ng = ng_dist(rng);
  in.dist.values.resize(nq, ng);
  // Coarse levels force frequent ties.
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < ng; ++j) in.dist.values(i, j) = level(rng) * 0.25;
  }
  for (int i = 0; i < nq; ++i) {
    in.qid.push_back(std::max(1, id_dist(rng)));
    in.qcam.push_back(cam_dist(rng));
  }
  for (int j = 0; j < ng; ++j) {
    in.gid.push_back(id_dist(rng));
    in.gcam.push_back(cam_dist(rng));
  }
  return in;
}

}  // namespace

TEST(Evaluate, AveragePrecisionExample) {
  // Ranking: match, non-match, match -> AP = (1 + 2/3) / 2.
  const auto d = dist_of({{0.1, 0.2, 0.3}});
  const int qid[] = {1}, qcam[] = {1}, gid[] = {1, 2, 1}, gcam[] = {2, 2, 3};
  const int ranks[] = {1, 2, 3};
  const EvalReport r = evaluate(d, qid, qcam, gid, gcam, ranks);
  EXPECT_NEAR(r.mAP, 0.833333333333, 1e-9);
  EXPECT_DOUBLE_EQ(r.cmc.at(1), 1.0);
  EXPECT_EQ(r.num_valid_queries, 1);
}

TEST(Evaluate, SameCameraSameIdentityIsExcluded) {
  // The nearest entry shares identity and camera with the query and is dropped,
  // so the first counted entry is a non-match and the true match ranks second.
  const auto d = dist_of({{0.0, 0.1, 0.2}});
  const int qid[] = {3}, qcam[] = {1}, gid[] = {3, 4, 3}, gcam[] = {1, 2, 2};
  const int ranks[] = {1, 2};
  const EvalReport r = evaluate(d, qid, qcam, gid, gcam, ranks);
  EXPECT_DOUBLE_EQ(r.mAP, 0.5);
  EXPECT_DOUBLE_EQ(r.cmc.at(1), 0.0);
  EXPECT_DOUBLE_EQ(r.cmc.at(2), 1.0);
}

TEST(Evaluate, JunkIsIgnoredAndTiesBreakByIndex) {
  const auto d = dist_of({{0.0, 0.5, 0.5}});
  const int qid[] = {2}, qcam[] = {1}, gid[] = {-1, 2, 7}, gcam[] = {2, 2, 2};
  const int ranks[] = {1};
  EXPECT_DOUBLE_EQ(evaluate(d, qid, qcam, gid, gcam, ranks).mAP, 1.0);
  const int gid2[] = {-1, 7, 2};
  EXPECT_DOUBLE_EQ(evaluate(d, qid, qcam, gid2, gcam, ranks).mAP, 0.5);
}

TEST(Evaluate, PerfectRanking) {
  const auto d = dist_of({{0.1, 0.2, 0.9, 0.8}, {0.9, 0.8, 0.1, 0.0}});
  const int qid[] = {1, 2}, qcam[] = {1, 1}, gid[] = {1, 1, 2, 2}, gcam[] = {2, 3, 2, 3};
  const EvalReport r = evaluate(d, qid, qcam, gid, gcam);
  EXPECT_DOUBLE_EQ(r.mAP, 1.0);
  for (const auto& [k, v] : r.cmc) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Evaluate, QueriesWithoutMatchesAreExcludedAndNoted) {
  const auto d = dist_of({{0.1, 0.2}, {0.3, 0.1}});
  const int qid[] = {1, 5}, qcam[] = {1, 1}, gid[] = {1, 5}, gcam[] = {2, 1};
  const int ranks[] = {1};
  const EvalReport r = evaluate(d, qid, qcam, gid, gcam, ranks);
  EXPECT_EQ(r.num_queries, 2);
  EXPECT_EQ(r.num_valid_queries, 1);
  EXPECT_DOUBLE_EQ(r.mAP, 1.0);
  EXPECT_FALSE(r.notes.empty());
}

TEST(Evaluate, InputValidation) {
  const auto d = dist_of({{0.1, 0.2}});
  const int qid[] = {1}, qcam[] = {1}, gid[] = {1}, gcam[] = {2};
  EXPECT_THROW(evaluate(d, qid, qcam, gid, gcam), ShapeError);
}

TEST(Evaluate, MatchesOracleOnRandomInstances) {
  Rng rng(11);
  const std::vector<int> ranks{1, 2, 5, 10};
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng);
    const EvalReport r = evaluate(in.dist, in.qid, in.qcam, in.gid, in.gcam, ranks);
    const auto o = oracle::single_query(in.dist.values, in.qid, in.qcam, in.gid, in.gcam, ranks);
    ASSERT_EQ(r.num_valid_queries, o.valid) << "trial " << t;
    EXPECT_NEAR(r.mAP, o.mAP, 1e-9) << "trial " << t;
    for (int k : ranks) EXPECT_NEAR(r.cmc.at(k), o.cmc.at(k), 1e-9) << "trial " << t;
    EXPECT_GE(r.mAP, 0.0);
    EXPECT_LE(r.mAP, 1.0);
  }
}

TEST(Evaluate, CmcIsMonotone) {
  Rng rng(12);
  const std::vector<int> ranks{1, 2, 3, 5, 8, 13, 21};
  for (int t = 0; t < 100; ++t) {
    const Instance in = random_instance(rng);
    const EvalReport r = evaluate(in.dist, in.qid, in.qcam, in.gid, in.gcam, ranks);
    double prev = 0.0;
    for (int k : ranks) {
      EXPECT_GE(r.cmc.at(k), prev);
      prev = r.cmc.at(k);
    }
  }
}

TEST(Evaluate, InvariantUnderMonotoneTransforms) {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    const Instance in = random_instance(rng);
    DistanceMatrix warped = in.dist;
    warped.values = in.dist.values.unaryExpr([](double v) { return std::exp(3.0 * v + 1.0); });
    const EvalReport a = evaluate(in.dist, in.qid, in.qcam, in.gid, in.gcam);
    const EvalReport b = evaluate(warped, in.qid, in.qcam, in.gid, in.gcam);
    EXPECT_DOUBLE_EQ(a.mAP, b.mAP);
    EXPECT_EQ(a.cmc, b.cmc);
  }
}

TEST(Distances, CosineProperties) {
  Rng rng(14);
  FeatureMatrix q, g;
  q.vectors = FloatMatrix::Random(5, 8);
  g.vectors = FloatMatrix::Random(6, 8);
  g.vectors.row(0) = q.vectors.row(0) * 3.0f;
  g.vectors.row(1) = -q.vectors.row(0);
  for (auto* fm : {&q, &g}) {
    for (std::size_t i = 0; i < fm->rows(); ++i) {
      fm->person_ids.push_back(1);
      fm->camera_ids.push_back(1);
    }
    fm->dim_tags = {{"m", 0, 8}};
  }
  const DistanceMatrix d = cosine_distance(q, g);
  EXPECT_EQ(d.metric, MetricTag::kCosine);
  EXPECT_NEAR(d.values(0, 0), 0.0, 1e-6);
  EXPECT_NEAR(d.values(0, 1), 2.0, 1e-6);
  EXPECT_GE(d.values.minCoeff(), -1e-9);
  EXPECT_LE(d.values.maxCoeff(), 2.0 + 1e-9);
  const DistanceMatrix back = cosine_distance(g, q);
  EXPECT_LT((back.values.transpose() - d.values).cwiseAbs().maxCoeff(), 1e-12);

  const DistanceMatrix e = euclidean_distance(q, g);
  EXPECT_NEAR(e.values(0, 1), 2.0 * q.vectors.row(0).cast<double>().norm(), 1e-5);

  g.vectors.row(2).setZero();
  EXPECT_THROW(cosine_distance(q, g), ValidationError);
}

TEST(EvalReport, TextAndCsvRoundTrip) {
  EvalReport r;
  r.mAP = 0.123456789012345;
  r.cmc = {{1, 0.5}, {5, 0.75}};
  r.num_queries = 10;
  r.num_valid_queries = 8;
  std::stringstream ss;
  r.write_text(ss);
  const EvalReport back = EvalReport::read_text(ss);
  EXPECT_DOUBLE_EQ(back.mAP, r.mAP);
  EXPECT_EQ(back.cmc, r.cmc);
  EXPECT_EQ(back.num_valid_queries, 8);
  EXPECT_DOUBLE_EQ(back.rank1(), 0.5);
  EXPECT_EQ(r.csv_header().substr(0, 3), "mAP");
  EXPECT_NE(r.csv_row().find("0.75"), std::string::npos);
}

TEST(Distances, SaveLoadRoundTrip) {
  enet::testing::TempDir dir;
  DistanceMatrix d;
  d.values = Matrix::Random(3, 4).cwiseAbs();
  d.metric = MetricTag::kReranked;
  const int ids[] = {1, 2, 3}, cams[] = {1, 1, 2};
  save_distances(d, ids, cams, dir / "d.ensf");
  const DistanceMatrix back = load_distances(dir / "d.ensf");
  EXPECT_EQ(back.metric, MetricTag::kReranked);
  EXPECT_LT((back.values - d.values).cwiseAbs().maxCoeff(), 1e-6);
}
