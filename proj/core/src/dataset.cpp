#include "ensemblenet/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>

#include "ensemblenet/error.hpp"

namespace fs = std::filesystem;

namespace enet {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "query") return Split::kQuery;
  if (s == "gallery") return Split::kGallery;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

Layout layout_from_string(std::string_view s) {
  if (s == "market_style" || s == "market") return Layout::kMarketStyle;
  if (s == "synthetic") return Layout::kSynthetic;
  throw ConfigError("unknown dataset layout '" + std::string(s) + "'");
}

std::string_view to_string(Layout l) {
  return l == Layout::kMarketStyle ? "market_style" : "synthetic";
}

namespace {

bool parse_int_token(std::string_view tok, int& out) {
  if (tok.empty()) return false;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc{} && ptr == tok.data() + tok.size();
}

}  // namespace

ParsedName parse_market_filename(std::string_view name) {
  const auto slash = name.find_last_of("/\\");
  const std::string_view base = slash == std::string_view::npos ? name : name.substr(slash + 1);
  auto fail = [&]() -> ParsedName {
    throw ParseError("malformed Market-style file name: '" + std::string(name) + "'");
  };

  const auto us = base.find('_');
  if (us == std::string_view::npos) return fail();
  int pid = 0;
  if (!parse_int_token(base.substr(0, us), pid) || pid < kJunkId) return fail();

  std::string_view rest = base.substr(us + 1);
  if (rest.size() < 2 || rest[0] != 'c') return fail();
  std::size_t len = 1;
  while (len < rest.size() && std::isdigit(static_cast<unsigned char>(rest[len]))) ++len;
  int cam = 0;
  if (!parse_int_token(rest.substr(1, len - 1), cam) || cam < 1) return fail();
  return {pid, cam};
}

void relabel_train(Dataset& ds) {
  std::set<int> ids;
  for (const auto& s : ds.train) {
    if (s.person_id == kJunkId) {
      throw ValidationError("junk sample in train split: " + s.path);
    }
    ids.insert(s.person_id);
  }
  std::map<int, int> label_of;
  int next = 0;
  for (int id : ids) label_of[id] = next++;
  for (auto& s : ds.train) s.label = label_of.at(s.person_id);
  ds.num_train_classes = next;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp";
}

std::vector<Sample> load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Sample> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    const auto parsed = parse_market_filename(f.filename().string());
    Sample s;
    s.person_id = parsed.person_id;
    s.camera_id = parsed.camera_id;
    s.path = f.string();
    s.image = read_image(s.path);
    out.push_back(std::move(s));
  }
  return out;
}

Dataset load_market(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("missing dataset root: " + root.string());
  Dataset ds;
  for (auto& s : load_dir(root / "bounding_box_train")) {
    if (s.person_id != kJunkId) ds.train.push_back(std::move(s));
  }
  for (auto& s : load_dir(root / "query")) {
    if (s.person_id != kJunkId && s.person_id != kDistractorId) ds.query.push_back(std::move(s));
  }
  ds.gallery = load_dir(root / "bounding_box_test");

  if (ds.query.empty()) throw ValidationError("no query images under " + (root / "query").string());
  relabel_train(ds);
  if (ds.num_train_classes == 0) {
    throw ValidationError("no train identities under " + (root / "bounding_box_train").string());
  }
  return ds;
}

}  // namespace

Dataset load_dataset(const fs::path& root, Layout layout) {
  if (layout == Layout::kMarketStyle) return load_market(root);

  const fs::path manifest = fs::is_directory(root) ? root / kManifestName : root;
  if (!fs::exists(manifest)) throw IoError("missing synthetic manifest: " + manifest.string());
  Dataset ds = render_synthetic(read_manifest(manifest));
  if (ds.query.empty()) throw ValidationError("synthetic manifest has no query rows");
  if (ds.num_train_classes == 0) throw ValidationError("synthetic manifest has no train identities");
  return ds;
}

std::array<float, 3> channel_mean(const std::vector<Sample>& samples) {
  std::array<double, 3> sum{0, 0, 0};
  double count = 0;
  for (const auto& s : samples) {
    const auto px = s.image.pixels();
    for (std::size_t i = 0; i < px.size(); i += 3) {
      for (int c = 0; c < 3; ++c) sum[c] += px[i + c];
    }
    count += static_cast<double>(px.size() / 3);
  }
  if (count == 0) return {0.0f, 0.0f, 0.0f};
  return {static_cast<float>(sum[0] / count), static_cast<float>(sum[1] / count),
          static_cast<float>(sum[2] / count)};
}

}  // namespace enet
