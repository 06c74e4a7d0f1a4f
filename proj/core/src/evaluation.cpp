#include "ensemblenet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ensemblenet/csv.hpp"
#include "ensemblenet/error.hpp"

namespace enet {

std::string_view to_string(MetricTag t) {
  switch (t) {
    case MetricTag::kCosine: return "cosine";
    case MetricTag::kEuclidean: return "euclidean";
    case MetricTag::kReranked: return "reranked";
  }
  return "?";
}

MetricTag metric_tag_from_string(std::string_view s) {
  if (s == "cosine") return MetricTag::kCosine;
  if (s == "euclidean") return MetricTag::kEuclidean;
  if (s == "reranked") return MetricTag::kReranked;
  throw ConfigError("unknown metric tag '" + std::string(s) + "'");
}

namespace {

void check_dims(const FeatureMatrix& q, const FeatureMatrix& g) {
  if (q.dim() != g.dim()) {
    throw ShapeError("query dim " + std::to_string(q.dim()) + " != gallery dim " +
                     std::to_string(g.dim()));
  }
}

Matrix normalized_rows(const FeatureMatrix& fm, const char* which) {
  Matrix m = fm.vectors.cast<double>();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw ValidationError(std::string(which) + " row " + std::to_string(i) +
                            " has zero or non-finite norm");
    }
    m.row(i) /= norm;
  }
  return m;
}

}  // namespace

DistanceMatrix cosine_distance(const FeatureMatrix& query, const FeatureMatrix& gallery) {
  check_dims(query, gallery);
  const Matrix q = normalized_rows(query, "query");
  const Matrix g = normalized_rows(gallery, "gallery");
  DistanceMatrix d;
  d.metric = MetricTag::kCosine;
  d.values = (1.0 - (q * g.transpose()).array()).matrix();
  return d;
}

DistanceMatrix euclidean_distance(const FeatureMatrix& query, const FeatureMatrix& gallery) {
  check_dims(query, gallery);
  const Matrix q = query.vectors.cast<double>();
  const Matrix g = gallery.vectors.cast<double>();
  DistanceMatrix d;
  d.metric = MetricTag::kEuclidean;
  d.values.resize(q.rows(), g.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.rows(); ++j) d.values(i, j) = (q.row(i) - g.row(j)).norm();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Protocol

EvalReport evaluate(const DistanceMatrix& dist, std::span<const int> query_ids,
                    std::span<const int> query_cams, std::span<const int> gallery_ids,
                    std::span<const int> gallery_cams, std::span<const int> ranks) {
  const auto nq = static_cast<std::size_t>(dist.rows());
  const auto ng = static_cast<std::size_t>(dist.cols());
  if (query_ids.size() != nq || query_cams.size() != nq || gallery_ids.size() != ng ||
      gallery_cams.size() != ng) {
    throw ShapeError("evaluate: metadata does not match the " + std::to_string(nq) + "x" +
                     std::to_string(ng) + " distance matrix");
  }
  if (!dist.values.allFinite()) throw ValidationError("evaluate: distance matrix has non-finite entries");
  for (int k : ranks) {
    if (k < 1) throw ValidationError("evaluate: CMC ranks must be >= 1");
  }

  EvalReport report;
  report.num_queries = static_cast<int>(nq);
  std::map<int, double> hits;
  for (int k : ranks) hits[k] = 0.0;
  double ap_sum = 0.0;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < nq; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < ng; ++j) {
      if (gallery_ids[j] == kJunkId) continue;
      if (gallery_ids[j] == query_ids[i] && gallery_cams[j] == query_cams[i]) continue;
      candidates.push_back(j);
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
      return dist.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
             dist.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    });

    std::size_t matches = 0;
    std::size_t first_match = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < candidates.size(); ++r) {
      if (gallery_ids[candidates[r]] != query_ids[i]) continue;
      ++matches;
      if (matches == 1) first_match = r + 1;
      precision_sum += static_cast<double>(matches) / static_cast<double>(r + 1);
    }
    if (query_ids[i] == kJunkId || matches == 0) {
      report.notes.push_back("query " + std::to_string(i) + " (id " + std::to_string(query_ids[i]) +
                             ", cam " + std::to_string(query_cams[i]) +
                             ") has no cross-camera match; excluded");
      continue;
    }
    ++report.num_valid_queries;
    ap_sum += precision_sum / static_cast<double>(matches);
    for (auto& [k, h] : hits) {
      if (first_match <= static_cast<std::size_t>(k)) h += 1.0;
    }
  }

  const double valid = report.num_valid_queries;
  report.mAP = valid > 0 ? ap_sum / valid : 0.0;
  for (const auto& [k, h] : hits) report.cmc[k] = valid > 0 ? h / valid : 0.0;
  if (valid == 0) report.notes.push_back("no valid queries");
  return report;
}

EvalReport evaluate(const DistanceMatrix& dist, const FeatureMatrix& query,
                    const FeatureMatrix& gallery, std::span<const int> ranks) {
  return evaluate(dist, query.person_ids, query.camera_ids, gallery.person_ids, gallery.camera_ids,
                  ranks);
}

// ---------------------------------------------------------------------------
// Report serialization

double EvalReport::rank1() const {
  const auto it = cmc.find(1);
  return it == cmc.end() ? std::nan("") : it->second;
}

void EvalReport::write_text(std::ostream& os) const {
  os << "mAP = " << csv::format(mAP) << '\n';
  for (const auto& [k, v] : cmc) os << "cmc@" << k << " = " << csv::format(v) << '\n';
  os << "num_queries = " << num_queries << '\n';
  os << "num_valid_queries = " << num_valid_queries << '\n';
  for (const auto& n : notes) os << "note = " << n << '\n';
}

EvalReport EvalReport::read_text(std::istream& is) {
  EvalReport r;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("eval report: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "mAP") {
      r.mAP = csv::parse_double(value);
    } else if (key.rfind("cmc@", 0) == 0) {
      r.cmc[static_cast<int>(csv::parse_int(key.substr(4)))] = csv::parse_double(value);
    } else if (key == "num_queries") {
      r.num_queries = static_cast<int>(csv::parse_int(value));
    } else if (key == "num_valid_queries") {
      r.num_valid_queries = static_cast<int>(csv::parse_int(value));
    } else if (key == "note") {
      r.notes.push_back(value);
    } else {
      throw ParseError("eval report: unknown key '" + key + "'");
    }
  }
  return r;
}

std::string EvalReport::csv_header() const {
  std::ostringstream os;
  os << "mAP";
  for (const auto& [k, v] : cmc) os << ",rank" << k;
  os << ",num_valid_queries";
  return os.str();
}

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os << csv::format(mAP);
  for (const auto& [k, v] : cmc) os << ',' << csv::format(v);
  os << ',' << num_valid_queries;
  return os.str();
}

// ---------------------------------------------------------------------------
// Distance dumps

void save_distances(const DistanceMatrix& dist, std::span<const int> query_ids,
                    std::span<const int> query_cams, const std::filesystem::path& path) {
  FeatureMatrix fm;
  fm.vectors = dist.values.cast<float>();
  fm.person_ids.assign(query_ids.begin(), query_ids.end());
  fm.camera_ids.assign(query_cams.begin(), query_cams.end());
  fm.dim_tags = {{"distance:" + std::string(to_string(dist.metric)), 0,
                  static_cast<std::uint64_t>(dist.cols())}};
  save_features(fm, path);
}

DistanceMatrix load_distances(const std::filesystem::path& path) {
  const FeatureMatrix fm = load_features(path);
  if (fm.dim_tags.size() != 1 || fm.dim_tags[0].label.rfind("distance:", 0) != 0) {
    throw FormatError("not a distance dump: " + path.string(), 0);
  }
  DistanceMatrix d;
  d.metric = metric_tag_from_string(fm.dim_tags[0].label.substr(9));
  d.values = fm.vectors.cast<double>();
  return d;
}

}  // namespace enet
