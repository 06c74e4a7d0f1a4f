#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensemblenet/features.hpp"
#include "ensemblenet/tensor.hpp"

namespace enet {

enum class MetricTag { kCosine, kEuclidean, kReranked };

std::string_view to_string(MetricTag t);
MetricTag metric_tag_from_string(std::string_view s);

struct DistanceMatrix {
  Matrix values;
  MetricTag metric = MetricTag::kCosine;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// 1 - cos(q_i, g_j). Zero-norm rows are rejected.
DistanceMatrix cosine_distance(const FeatureMatrix& query, const FeatureMatrix& gallery);

/// Plain Euclidean distance between rows.
DistanceMatrix euclidean_distance(const FeatureMatrix& query, const FeatureMatrix& gallery);

struct EvalReport {
  double mAP = 0.0;
  std::map<int, double> cmc;
  int num_queries = 0;
  int num_valid_queries = 0;
  std::vector<std::string> notes;

  double rank1() const;

  /// `key = value` lines; CMC entries are written as `cmc@<k>`.
  void write_text(std::ostream& os) const;
  static EvalReport read_text(std::istream& is);

  std::string csv_header() const;
  std::string csv_row() const;
};

inline const std::vector<int> kDefaultRanks{1, 5, 10, 20};

/// Single-query protocol: per query, gallery rows sharing both identity and
/// camera are dropped, junk ids are ignored, the rest is ranked by ascending
/// distance (ties by gallery index). Queries without any remaining true
/// match are excluded from both metrics and listed in `notes`.
EvalReport evaluate(const DistanceMatrix& dist, std::span<const int> query_ids,
                    std::span<const int> query_cams, std::span<const int> gallery_ids,
                    std::span<const int> gallery_cams,
                    std::span<const int> ranks = kDefaultRanks);

/// Convenience overload reading ids and cameras from feature metadata.
EvalReport evaluate(const DistanceMatrix& dist, const FeatureMatrix& query,
                    const FeatureMatrix& gallery, std::span<const int> ranks = kDefaultRanks);

struct RerankParams {
  int k1 = 20;
  int k2 = 6;
  double lambda = 0.3;

  void validate() const;
};

/// k-reciprocal re-ranking:
///   d* = (1 - lambda) * d_jaccard + lambda * d_qg
/// The input distances are used as given for neighbour ranking, Gaussian
/// kernel weights and the blend. k1/k2 larger than the number of
/// available neighbours are clipped and a warning is appended.
DistanceMatrix rerank(const DistanceMatrix& qg, const DistanceMatrix& qq, const DistanceMatrix& gg,
                      const RerankParams& params, std::vector<std::string>* warnings = nullptr);

/// Dump a distance matrix in the ENSF layout; the metric tag goes into the
/// single segment label as `distance:<tag>`.
void save_distances(const DistanceMatrix& dist, std::span<const int> query_ids,
                    std::span<const int> query_cams, const std::filesystem::path& path);
DistanceMatrix load_distances(const std::filesystem::path& path);

}  // namespace enet
