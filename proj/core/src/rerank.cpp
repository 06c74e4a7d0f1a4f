#include <algorithm>
#include <cfenv>
#include <cmath>
#include <numeric>

#include "ensemblenet/error.hpp"
#include "ensemblenet/evaluation.hpp"

namespace enet {

void RerankParams::validate() const {
  if (k2 < 1 || k1 < k2) throw ValidationError("re-ranking needs k1 >= k2 >= 1");
  if (lambda < 0.0 || lambda > 1.0) throw ValidationError("re-ranking lambda must lie in [0, 1]");
}

namespace {

using SparseRow = std::vector<std::pair<int, double>>;

/// Row-wise nearest-neighbour lists: the first `depth` indices by ascending
/// distance, ties broken by index.
std::vector<std::vector<int>> rank_rows(const Matrix& dist, int depth) {
  const int n = static_cast<int>(dist.rows());
  std::vector<std::vector<int>> ranks(n);
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + depth, idx.end(), [&](int a, int b) {
      const double da = dist(i, a);
      const double db = dist(i, b);
      return da < db || (da == db && a < b);
    });
    ranks[i].assign(idx.begin(), idx.begin() + depth);
  }
  return ranks;
}

/// Members c of the k-nearest list of `i` (self included) whose own
/// k-nearest list contains `i`.
std::vector<int> k_reciprocal(const std::vector<std::vector<int>>& ranks, int i, int k) {
  std::vector<int> out;
  for (int r = 0; r <= k; ++r) {
    const int c = ranks[i][r];
    const auto& back = ranks[c];
    if (std::find(back.begin(), back.begin() + k + 1, i) != back.begin() + k + 1) out.push_back(c);
  }
  return out;
}

}  // namespace

DistanceMatrix rerank(const DistanceMatrix& qg, const DistanceMatrix& qq, const DistanceMatrix& gg,
                      const RerankParams& params, std::vector<std::string>* warnings) {
  params.validate();
  const int nq = static_cast<int>(qg.rows());
  const int ng = static_cast<int>(qg.cols());
  if (qq.rows() != nq || qq.cols() != nq) throw ShapeError("rerank: query-query matrix must be nq x nq");
  if (gg.rows() != ng || gg.cols() != ng) throw ShapeError("rerank: gallery-gallery matrix must be ng x ng");
  if (!qg.values.allFinite() || !qq.values.allFinite() || !gg.values.allFinite()) {
    throw ValidationError("rerank: distance matrices must be finite");
  }

  DistanceMatrix result;
  result.metric = MetricTag::kReranked;
  result.values.resize(nq, ng);
  if (nq == 0 || ng == 0) return result;

  const int n = nq + ng;
  Matrix all(n, n);
  all.topLeftCorner(nq, nq) = qq.values;
  all.topRightCorner(nq, ng) = qg.values;
  all.bottomLeftCorner(ng, nq) = qg.values.transpose();
  all.bottomRightCorner(ng, ng) = gg.values;

  int k1 = params.k1;
  int k2 = params.k2;
  if (k1 > n - 1) {
    if (warnings) {
      warnings->push_back("k1=" + std::to_string(k1) + " exceeds the " + std::to_string(n - 1) +
                          " available neighbours; clipped");
    }
    k1 = std::max(1, n - 1);
  }
  if (k2 > k1) {
    if (warnings) warnings->push_back("k2=" + std::to_string(k2) + " clipped to k1=" + std::to_string(k1));
    k2 = k1;
  }
  // Half-window for the expansion step, rounded half to even.
  const int half = static_cast<int>(std::nearbyint(k1 / 2.0));

  const int depth = std::min(n, std::max(k1 + 1, k2));
  const auto ranks = rank_rows(all, depth);

  std::vector<SparseRow> v(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<int> core = k_reciprocal(ranks, i, k1);
    std::vector<int> expansion = core;
    for (int c : core) {
      const std::vector<int> cand = k_reciprocal(ranks, c, half);
      int overlap = 0;
      for (int x : cand) overlap += std::find(core.begin(), core.end(), x) != core.end();
      if (overlap > 2.0 / 3.0 * static_cast<double>(cand.size())) {
        expansion.insert(expansion.end(), cand.begin(), cand.end());
      }
    }
    std::sort(expansion.begin(), expansion.end());
    expansion.erase(std::unique(expansion.begin(), expansion.end()), expansion.end());

    double total = 0.0;
    for (int j : expansion) {
      const double w = std::exp(-all(i, j));
      v[i].emplace_back(j, w);
      total += w;
    }
    for (auto& [j, w] : v[i]) w /= total;
  }

  if (k2 != 1) {
    std::vector<SparseRow> expanded(n);
    std::vector<double> dense(n);
    for (int i = 0; i < n; ++i) {
      std::fill(dense.begin(), dense.end(), 0.0);
      for (int r = 0; r < k2; ++r) {
        for (const auto& [j, w] : v[ranks[i][r]]) dense[j] += w;
      }
      for (int j = 0; j < n; ++j) {
        if (dense[j] != 0.0) expanded[i].emplace_back(j, dense[j] / k2);
      }
    }
    v = std::move(expanded);
  }

  // Inverted index over encoding dimensions.
  std::vector<SparseRow> inverted(n);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, w] : v[i]) inverted[j].emplace_back(i, w);
  }

  std::vector<double> overlap(n);
  for (int i = 0; i < nq; ++i) {
    std::fill(overlap.begin(), overlap.end(), 0.0);
    for (const auto& [t, w] : v[i]) {
      for (const auto& [j, wj] : inverted[t]) overlap[j] += std::min(w, wj);
    }
    for (int g = 0; g < ng; ++g) {
      const double m = overlap[nq + g];
      const double jaccard = 1.0 - m / (2.0 - m);
      result.values(i, g) = (1.0 - params.lambda) * jaccard + params.lambda * qg.values(i, g);
    }
  }
  return result;
}

}  // namespace enet
