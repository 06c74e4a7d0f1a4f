#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ensemblenet/csv.hpp"
#include "ensemblenet/data.hpp"
#include "ensemblenet/error.hpp"

namespace enet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

constexpr std::uint64_t kIdentityTag = 0x1d;
constexpr std::uint64_t kCameraTag = 0xca;
constexpr std::uint64_t kImageTag = 0x1a;

using Rgb = std::array<double, 3>;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb random_color(Rng& rng) { return {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}; }

struct Appearance {
  Rgb hair, skin, top, bottom, shoes, stripe, bag;
  int pattern;   // 0 plain, 1 horizontal stripe, 2 vertical stripe
  int bag_side;  // 0 none, -1 left, +1 right
  double body_width;
  double top_length;
};

Appearance identity_look(std::uint64_t seed, int id) {
  Rng rng(mix(seed, kIdentityTag, static_cast<std::uint64_t>(id)));
  Appearance a{};
  const double hair_level = uniform(rng, 0.05, 0.45);
  a.hair = {hair_level, hair_level * uniform(rng, 0.6, 1.0), hair_level * uniform(rng, 0.4, 0.9)};
  const double skin_level = uniform(rng, 0.45, 0.9);
  a.skin = {skin_level, skin_level * 0.8, skin_level * 0.65};
  a.top = random_color(rng);
  a.bottom = random_color(rng);
  a.shoes = random_color(rng);
  a.stripe = random_color(rng);
  a.bag = random_color(rng);
  a.pattern = static_cast<int>(rng() % 3);
  a.bag_side = static_cast<int>(rng() % 3) - 1;
  a.body_width = uniform(rng, 0.42, 0.62);
  a.top_length = uniform(rng, 0.30, 0.42);
  return a;
}

struct CameraLook {
  Rgb background;
  Rgb gain;
  double offset;
};

CameraLook camera_look(std::uint64_t seed, int cam) {
  Rng rng(mix(seed, kCameraTag, static_cast<std::uint64_t>(cam)));
  CameraLook c{};
  c.background = {uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)};
  c.gain = {uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2)};
  c.offset = uniform(rng, -0.06, 0.06);
  return c;
}

Image render(const SyntheticSpec& spec, const ManifestRow& row) {
  const Appearance look = identity_look(spec.seed, row.person_id);
  const CameraLook cam = camera_look(spec.seed, row.camera_id);
  Rng rng(row.seed);

  const int H = spec.height;
  const int W = spec.width;
  const double cx = 0.5 + uniform(rng, -0.06, 0.06);
  const double top = 0.03 + uniform(rng, -0.02, 0.02);
  const double scale = uniform(rng, 0.92, 1.04);
  const double noise = 0.05;
  std::normal_distribution<double> gauss(0.0, noise);

  const double bw = look.body_width * scale;
  const double head_v = top + 0.08 * scale;
  const double torso_begin = top + 0.16 * scale;
  const double torso_end = torso_begin + look.top_length * scale;
  const double legs_end = std::min(0.97, top + 0.90 * scale);
  const double shoe_begin = legs_end - 0.05 * scale;

  Image img(H, W);
  for (int y = 0; y < H; ++y) {
    const double v = (y + 0.5) / H;
    for (int x = 0; x < W; ++x) {
      const double u = (x + 0.5) / W;
      Rgb px = cam.background;
      for (auto& ch : px) ch *= 0.85 + 0.3 * v;

      const double du = (u - cx) / (0.15 * scale);
      const double dv = (v - head_v) / (0.075 * scale);
      if (du * du + dv * dv <= 1.0) {
        px = dv < -0.1 ? look.hair : look.skin;
      } else if (v >= torso_begin && v < torso_end && std::abs(u - cx) < bw / 2) {
        px = look.top;
        if (look.pattern == 1 && std::abs(v - (torso_begin + torso_end) / 2) < 0.035) px = look.stripe;
        if (look.pattern == 2 && std::abs(u - cx) < bw / 10) px = look.stripe;
      } else if (v >= torso_end && v < legs_end) {
        const double leg_half = bw / 5;
        const bool left_leg = std::abs(u - (cx - bw / 4)) < leg_half;
        const bool right_leg = std::abs(u - (cx + bw / 4)) < leg_half;
        if (left_leg || right_leg) px = v >= shoe_begin ? look.shoes : look.bottom;
      }
      if (look.bag_side != 0) {
        const double bag_u = cx + look.bag_side * (bw / 2 + 0.07);
        if (std::abs(u - bag_u) < 0.07 && v > torso_begin + 0.1 && v < torso_end + 0.05) px = look.bag;
      }

      for (int c = 0; c < 3; ++c) {
        const double value = cam.gain[c] * px[c] + cam.offset + gauss(rng);
        img.at(y, x, c) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

void validate_spec(const SyntheticSpec& s) {
  if (s.num_ids < 2) throw ValidationError("synthetic dataset needs num_ids >= 2");
  if (s.images_per_id < 2) throw ValidationError("synthetic dataset needs images_per_id >= 2");
  if (s.num_cams < 2) {
    throw ValidationError("synthetic dataset needs num_cams >= 2 for cross-camera matches");
  }
  if (s.height < 1 || s.width < 1) throw ValidationError("synthetic image size must be positive");
}

}  // namespace

SyntheticManifest make_synthetic_manifest(const SyntheticSpec& spec) {
  validate_spec(spec);
  SyntheticManifest m;
  m.spec = spec;
  const int n = spec.images_per_id;
  const int n_test = std::max(2, n - n / 2);
  const int n_train = n - n_test;
  for (int id = 1; id <= spec.num_ids; ++id) {
    std::vector<ManifestRow> rows;
    for (int j = 0; j < n; ++j) {
      const int cam = (j + id) % spec.num_cams + 1;
      const std::uint64_t seed = mix(spec.seed, kImageTag, static_cast<std::uint64_t>(id) << 20 | j);
      Split split = Split::kTrain;
      if (j == n_train) split = Split::kQuery;
      if (j > n_train) split = Split::kGallery;
      rows.push_back({id, cam, split, seed});
    }
    // Too few images for a dedicated train share: train on the test images.
    if (n_train == 0) {
      for (int j = 0; j < n; ++j) {
        ManifestRow r = rows[j];
        r.split = Split::kTrain;
        rows.push_back(r);
      }
    }
    m.rows.insert(m.rows.end(), rows.begin(), rows.end());
  }
  return m;
}

Dataset render_synthetic(const SyntheticManifest& manifest) {
  validate_spec(manifest.spec);
  Dataset ds;
  for (const auto& row : manifest.rows) {
    if (row.person_id < 1) throw ValidationError("synthetic ids must be >= 1");
    Sample s;
    s.person_id = row.person_id;
    s.camera_id = row.camera_id;
    s.image = render(manifest.spec, row);
    std::ostringstream name;
    name << "synthetic/" << row.person_id << "_c" << row.camera_id << "_" << to_string(row.split)
         << "_" << row.seed;
    s.path = name.str();
    switch (row.split) {
      case Split::kTrain: ds.train.push_back(std::move(s)); break;
      case Split::kQuery: ds.query.push_back(std::move(s)); break;
      case Split::kGallery: ds.gallery.push_back(std::move(s)); break;
    }
  }
  relabel_train(ds);
  return ds;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  return render_synthetic(make_synthetic_manifest(spec));
}

Dataset make_synthetic_dataset(int num_ids, int images_per_id, int num_cams,
                               std::pair<int, int> size, std::uint64_t seed) {
  return make_synthetic_dataset(
      SyntheticSpec{num_ids, images_per_id, num_cams, size.first, size.second, seed});
}

void write_manifest(const std::filesystem::path& file, const SyntheticManifest& m) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write manifest: " + file.string());
  const auto& s = m.spec;
  os << "# ensemblenet synthetic manifest v1\n"
     << "# num_ids=" << s.num_ids << ",images_per_id=" << s.images_per_id
     << ",num_cams=" << s.num_cams << ",height=" << s.height << ",width=" << s.width
     << ",seed=" << s.seed << "\n"
     << "id,camera,split,seed\n";
  for (const auto& r : m.rows) {
    os << r.person_id << ',' << r.camera_id << ',' << to_string(r.split) << ',' << r.seed << '\n';
  }
}

SyntheticManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read manifest: " + file.string());
  SyntheticManifest m;
  bool have_spec = false;
  bool have_header = false;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# num_ids=", 0) == 0) {
      for (const auto& kv : csv::split(line.substr(2))) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("bad manifest header: " + line);
        const std::string key = kv.substr(0, eq);
        const long long value = csv::parse_int(std::string_view(kv).substr(eq + 1));
        if (key == "num_ids") m.spec.num_ids = static_cast<int>(value);
        else if (key == "images_per_id") m.spec.images_per_id = static_cast<int>(value);
        else if (key == "num_cams") m.spec.num_cams = static_cast<int>(value);
        else if (key == "height") m.spec.height = static_cast<int>(value);
        else if (key == "width") m.spec.width = static_cast<int>(value);
        else if (key == "seed") m.spec.seed = static_cast<std::uint64_t>(value);
        else throw ParseError("unknown manifest header key '" + key + "'");
      }
      have_spec = true;
      continue;
    }
    if (line.front() == '#') continue;
    if (!have_header) {
      if (line != "id,camera,split,seed") throw ParseError("bad manifest column header: " + line);
      have_header = true;
      continue;
    }
    const auto f = csv::split(line);
    if (f.size() != 4) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    std::uint64_t seed = 0;
    std::istringstream(f[3]) >> seed;
    m.rows.push_back({static_cast<int>(csv::parse_int(f[0])), static_cast<int>(csv::parse_int(f[1])),
                      split_from_string(f[2]), seed});
  }
  if (!have_spec) throw ParseError("manifest missing '# num_ids=...' header: " + file.string());
  return m;
}

}  // namespace enet
