#include "ensemblenet/pipeline.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "ensemblenet/csv.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/image.hpp"

namespace enet {

Dataset load_data(const DataConfig& cfg) {
  if (cfg.layout == Layout::kSynthetic && cfg.root.empty()) return make_synthetic_dataset(cfg.synthetic);
  if (cfg.root.empty()) throw ConfigError("data.root is required for the market layout");
  return load_dataset(cfg.root, cfg.layout);
}

void resize_images(Dataset& data, int height, int width) {
  for (auto* split : {&data.train, &data.query, &data.gallery}) {
    for (Sample& s : *split) {
      if (s.image.height() != height || s.image.width() != width) {
        s.image = resize_bilinear(s.image, height, width);
      }
    }
  }
}

RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& data,
                              const std::filesystem::path& checkpoint_dir,
                              const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  Model model(cfg.model);
  init_model(model, cfg.seed);
  TrainOptions options;
  options.augment = fill_erase_from_data(cfg.augment, data);
  options.checkpoint_dir = checkpoint_dir;
  options.on_epoch = on_epoch;
  TrainResult trained = train(model, data, cfg.train, options);

  ExtractOptions eo;
  eo.batch_size = cfg.extract_batch;
  eo.label = "seed" + std::to_string(cfg.seed);
  FeatureMatrix q = extract_all(model, data.query, eo);
  FeatureMatrix g = extract_all(model, data.gallery, eo);
  EvalReport report = evaluate(cosine_distance(q, g), q, g, cfg.ranks);
  return {std::move(model), std::move(trained), std::move(q), std::move(g), std::move(report)};
}

namespace {

std::pair<double, double> mean_var(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, ss / (n - 1.0)};
}

}  // namespace

std::vector<SubsetStats> ensemble_subsets(std::span<const FeatureMatrix> query,
                                          std::span<const FeatureMatrix> gallery,
                                          std::span<const int> sizes, int repeats,
                                          std::uint64_t seed, std::span<const int> ranks) {
  if (query.empty() || query.size() != gallery.size()) {
    throw ValidationError("ensemble needs the same non-zero number of query and gallery feature sets");
  }
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  const int models = static_cast<int>(query.size());
  std::vector<SubsetStats> out;
  for (int r : sizes) {
    if (r < 1 || r > models) {
      throw ValidationError("subset size " + std::to_string(r) + " outside [1, " +
                            std::to_string(models) + "]");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    Rng rng(seq);
    SubsetStats st;
    st.r = r;
    st.repeats = repeats;
    std::vector<double> maps;
    std::vector<double> r1s;
    for (int rep = 0; rep < repeats; ++rep) {
      std::vector<int> idx(models);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(r);
      std::sort(idx.begin(), idx.end());
      std::vector<FeatureMatrix> qs;
      std::vector<FeatureMatrix> gs;
      for (int i : idx) {
        qs.push_back(query[i]);
        gs.push_back(gallery[i]);
      }
      const FeatureMatrix q = concat_ensemble(qs);
      const FeatureMatrix g = concat_ensemble(gs);
      const EvalReport rep_report = evaluate(cosine_distance(q, g), q, g, ranks);
      maps.push_back(rep_report.mAP);
      r1s.push_back(rep_report.rank1());
      st.selections.push_back(std::move(idx));
    }
    std::tie(st.mean_map, st.var_map) = mean_var(maps);
    std::tie(st.mean_rank1, st.var_rank1) = mean_var(r1s);
    out.push_back(std::move(st));
  }
  return out;
}

void write_subset_csv(std::ostream& os, std::span<const SubsetStats> stats) {
  os << "r,repeats,mean_mAP,var_mAP,mean_rank1,var_rank1\n";
  for (const SubsetStats& s : stats) {
    os << s.r << ',' << s.repeats << ',' << csv::format(s.mean_map) << ',' << csv::format(s.var_map)
       << ',' << csv::format(s.mean_rank1) << ',' << csv::format(s.var_rank1) << '\n';
  }
}

std::vector<SubsetStats> read_subset_csv(std::istream& is) {
  std::vector<std::string> f;
  if (!csv::next_row(is, f) || f.size() != 6 || f[0] != "r") throw ParseError("subset csv: bad header");
  std::vector<SubsetStats> out;
  while (csv::next_row(is, f)) {
    if (f.size() != 6) throw ParseError("subset csv: expected 6 fields");
    SubsetStats s;
    s.r = csv::parse_int(f[0]);
    s.repeats = csv::parse_int(f[1]);
    s.mean_map = csv::parse_double(f[2]);
    s.var_map = csv::parse_double(f[3]);
    s.mean_rank1 = csv::parse_double(f[4]);
    s.var_rank1 = csv::parse_double(f[5]);
    out.push_back(std::move(s));
  }
  return out;
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kStride: return "stride";
    case SweepAxis::kBranches: return "branches";
    case SweepAxis::kAap: return "aap";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "stride") return SweepAxis::kStride;
  if (s == "branches") return SweepAxis::kBranches;
  if (s == "aap") return SweepAxis::kAap;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected stride, branches or aap)");
}

std::vector<int> default_sweep_points(SweepAxis axis) {
  if (axis == SweepAxis::kStride) return {1, 2};
  return {1, 2, 3, 4, 5, 6};
}

RunConfig sweep_config(const RunConfig& base, SweepAxis axis, int value) {
  RunConfig cfg = base;
  switch (axis) {
    case SweepAxis::kStride:
      cfg.model.last_stride = value;
      break;
    case SweepAxis::kBranches:
      cfg.model.num_branches = value;
      cfg.model.pooling = Pooling::kGapOnly;
      break;
    case SweepAxis::kAap:
      cfg.model.num_branches = value;
      cfg.model.pooling = Pooling::kAap;
      break;
  }
  return cfg;
}

void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows,
                     std::span<const int> ranks) {
  os << to_string(axis) << ",num_objectives,mAP";
  for (int k : ranks) os << ",Rank" << k;
  os << ",status\n";
  for (const SweepRow& row : rows) {
    const bool ok = row.status == "ok";
    os << row.value << ',' << row.num_objectives << ',' << (ok ? csv::format(row.report.mAP) : "");
    for (int k : ranks) {
      os << ',';
      if (!ok) continue;
      const auto it = row.report.cmc.find(k);
      if (it == row.report.cmc.end()) throw ValidationError("sweep row lacks rank " + std::to_string(k));
      os << csv::format(it->second);
    }
    os << ',' << (ok ? "ok" : "failed") << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(std::istream& is) {
  std::vector<std::string> header;
  if (!csv::next_row(is, header) || header.size() < 4 || header[1] != "num_objectives" ||
      header[2] != "mAP" || header.back() != "status") {
    throw ParseError("sweep csv: bad header");
  }
  std::vector<int> ranks;
  for (std::size_t i = 3; i + 1 < header.size(); ++i) {
    if (header[i].rfind("Rank", 0) != 0) throw ParseError("sweep csv: bad column " + header[i]);
    ranks.push_back(csv::parse_int(header[i].substr(4)));
  }
  std::vector<SweepRow> rows;
  std::vector<std::string> f;
  while (csv::next_row(is, f)) {
    if (f.size() != header.size()) throw ParseError("sweep csv: wrong field count");
    SweepRow row;
    row.value = csv::parse_int(f[0]);
    row.num_objectives = csv::parse_int(f[1]);
    row.status = f.back();
    if (row.status == "ok") {
      row.report.mAP = csv::parse_double(f[2]);
      for (std::size_t i = 0; i < ranks.size(); ++i) row.report.cmc[ranks[i]] = csv::parse_double(f[3 + i]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace enet
