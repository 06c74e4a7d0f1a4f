#include "ensemblenet/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <set>

#include "ensemblenet/csv.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/features.hpp"
#include "ensemblenet/model.hpp"

namespace enet {

Direction Direction::operator-() const {
  Direction out = *this;
  for (Tensor& t : out.tensors) {
    for (double& v : t.values()) v = -v;
  }
  return out;
}

Direction random_direction(Model& model, std::uint64_t seed) {
  Direction dir;
  dir.seed = seed;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Parameter* p : model.parameters()) {
    Tensor d(p->value.shape());
    if (p->role == ParamRole::kWeight) {
      for (double& v : d.values()) v = gauss(rng);
      const Shape s = p->value.shape();
      const std::size_t filter = s.image_size();
      for (int f = 0; f < s.n; ++f) {
        double* dv = d.data() + f * filter;
        const double* tv = p->value.data() + f * filter;
        double dn = 0.0;
        double tn = 0.0;
        for (std::size_t k = 0; k < filter; ++k) {
          dn += dv[k] * dv[k];
          tn += tv[k] * tv[k];
        }
        dn = std::sqrt(dn);
        tn = std::sqrt(tn);
        const double scale = (tn == 0.0 || dn == 0.0) ? 0.0 : tn / dn;
        for (std::size_t k = 0; k < filter; ++k) dv[k] *= scale;
      }
    }
    dir.tensors.push_back(std::move(d));
  }
  return dir;
}

std::string_view to_string(LandscapeMetric m) { return m == LandscapeMetric::kMap ? "mAP" : "rank1"; }

std::vector<double> symmetric_axis(int n, double radius) {
  if (n < 1) throw ValidationError("grid needs at least one point per axis");
  if (n == 1) return {0.0};
  std::vector<double> axis(n);
  for (int i = 0; i < n; ++i) {
    axis[i] = radius * static_cast<double>(2 * i - (n - 1)) / static_cast<double>(n - 1);
  }
  return axis;
}

double LandscapeGrid::center() const {
  const auto ia = std::find(alphas.begin(), alphas.end(), 0.0);
  const auto ib = std::find(betas.begin(), betas.end(), 0.0);
  if (ia == alphas.end() || ib == betas.end()) throw ValidationError("grid does not contain (0, 0)");
  return values(ia - alphas.begin(), ib - betas.begin());
}

double LandscapeGrid::area_within(double fraction) const {
  const double threshold = fraction * center();
  const double da = alphas.size() > 1 ? (alphas.back() - alphas.front()) / (alphas.size() - 1) : 1.0;
  const double db = betas.size() > 1 ? (betas.back() - betas.front()) / (betas.size() - 1) : 1.0;
  const auto count = (values.array() >= threshold).count();
  return static_cast<double>(count) * da * db;
}

void LandscapeGrid::write_csv(std::ostream& os) const {
  os << "alpha,beta,value\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < betas.size(); ++j) {
      os << csv::format(alphas[i]) << ',' << csv::format(betas[j]) << ','
         << csv::format(values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
    }
  }
}

LandscapeGrid LandscapeGrid::read_csv(std::istream& is, LandscapeMetric metric) {
  std::vector<std::string> f;
  if (!csv::next_row(is, f) || f.size() != 3 || f[0] != "alpha") {
    throw ParseError("landscape csv: missing header");
  }
  std::vector<std::array<double, 3>> rows;
  std::set<double> as;
  std::set<double> bs;
  while (csv::next_row(is, f)) {
    if (f.size() != 3) throw ParseError("landscape csv: expected 3 fields");
    rows.push_back({csv::parse_double(f[0]), csv::parse_double(f[1]), csv::parse_double(f[2])});
    as.insert(rows.back()[0]);
    bs.insert(rows.back()[1]);
  }
  LandscapeGrid g;
  g.metric = metric;
  g.alphas.assign(as.begin(), as.end());
  g.betas.assign(bs.begin(), bs.end());
  g.values = Matrix::Zero(static_cast<Eigen::Index>(g.alphas.size()),
                          static_cast<Eigen::Index>(g.betas.size()));
  for (const auto& r : rows) {
    const auto i = std::lower_bound(g.alphas.begin(), g.alphas.end(), r[0]) - g.alphas.begin();
    const auto j = std::lower_bound(g.betas.begin(), g.betas.end(), r[1]) - g.betas.begin();
    g.values(i, j) = r[2];
  }
  return g;
}

EvalBundle make_eval_bundle(const Dataset& ds, std::size_t max_query, std::size_t max_gallery) {
  EvalBundle b;
  b.query.assign(ds.query.begin(), ds.query.begin() + std::min(max_query, ds.query.size()));
  b.gallery.assign(ds.gallery.begin(), ds.gallery.begin() + std::min(max_gallery, ds.gallery.size()));
  return b;
}

namespace {

/// Restores the captured parameter values when it goes out of scope.
class ParameterSnapshot {
 public:
  explicit ParameterSnapshot(std::vector<Parameter*> params) : params_(std::move(params)) {
    for (const Parameter* p : params_) saved_.push_back(p->value);
  }
  ~ParameterSnapshot() { restore(); }
  ParameterSnapshot(const ParameterSnapshot&) = delete;
  ParameterSnapshot& operator=(const ParameterSnapshot&) = delete;

  void restore() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = saved_[i];
  }
  void perturb(const Direction& delta, double a, const Direction& eta, double b) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& v = params_[i]->value;
      v = saved_[i];
      if (a != 0.0) {
        for (std::size_t k = 0; k < v.size(); ++k) v[k] += a * delta.tensors[i][k];
      }
      if (b != 0.0) {
        for (std::size_t k = 0; k < v.size(); ++k) v[k] += b * eta.tensors[i][k];
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> saved_;
};

void check_direction(const Direction& d, std::span<Parameter* const> params, const char* name) {
  if (d.tensors.size() != params.size()) {
    throw ShapeError(std::string("direction ") + name + " does not match the model parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (d.tensors[i].shape() != params[i]->value.shape()) {
      throw ShapeError(std::string("direction ") + name + " shape mismatch at " + params[i]->name);
    }
  }
}

}  // namespace

SurfacePair performance_surfaces(Model& model, const Direction& delta, const Direction& eta,
                                 std::span<const double> alphas, std::span<const double> betas,
                                 const EvalBundle& bundle) {
  const auto params = model.parameters();
  check_direction(delta, params, "delta");
  check_direction(eta, params, "eta");
  if (bundle.query.empty() || bundle.gallery.empty()) {
    throw ValidationError("landscape evaluation needs query and gallery samples");
  }

  SurfacePair out;
  for (LandscapeGrid* g : {&out.map, &out.rank1}) {
    g->alphas.assign(alphas.begin(), alphas.end());
    g->betas.assign(betas.begin(), betas.end());
    g->values = Matrix::Zero(static_cast<Eigen::Index>(alphas.size()),
                             static_cast<Eigen::Index>(betas.size()));
  }
  out.map.metric = LandscapeMetric::kMap;
  out.rank1.metric = LandscapeMetric::kRank1;

  const std::vector<int> ranks{1};
  ParameterSnapshot snapshot(params);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < betas.size(); ++j) {
      snapshot.perturb(delta, alphas[i], eta, betas[j]);
      double map = 0.0;
      double rank1 = 0.0;
      std::string problem;
      try {
        const FeatureMatrix q = extract_all(model, bundle.query);
        const FeatureMatrix g = extract_all(model, bundle.gallery);
        const EvalReport report = evaluate(cosine_distance(q, g), q, g, ranks);
        map = report.mAP;
        rank1 = report.rank1();
      } catch (const Error& e) {
        problem = e.what();
      }
      if (!problem.empty() || !std::isfinite(map) || !std::isfinite(rank1)) {
        const std::string msg = "non-finite metric at alpha=" + csv::format(alphas[i]) +
                                ", beta=" + csv::format(betas[j]) + "; recorded as 0" +
                                (problem.empty() ? "" : " (" + problem + ")");
        out.map.warnings.push_back(msg);
        out.rank1.warnings.push_back(msg);
        map = 0.0;
        rank1 = 0.0;
      }
      out.map.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = map;
      out.rank1.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rank1;
    }
  }
  return out;
}

LandscapeGrid performance_surface(Model& model, const Direction& delta, const Direction& eta,
                                  std::span<const double> alphas, std::span<const double> betas,
                                  const EvalBundle& bundle, LandscapeMetric metric) {
  SurfacePair both = performance_surfaces(model, delta, eta, alphas, betas, bundle);
  return metric == LandscapeMetric::kMap ? std::move(both.map) : std::move(both.rank1);
}

}  // namespace enet
