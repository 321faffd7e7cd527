#include "core/phantoms.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/jsonio.hpp"
#include "core/rng.hpp"

namespace fs = std::filesystem;

namespace opcorr {

std::string to_string(PhantomKind k) {
  return k == PhantomKind::balls ? "balls" : "vessels";
}

PhantomKind phantom_kind_from_string(const std::string& s) {
  if (s == "balls") return PhantomKind::balls;
  if (s == "vessels") return PhantomKind::vessels;
  fail(ErrorKind::config, "unknown phantom kind: " + s);
}

Grid make_ball(int n, uint64_t seed) {
  require(n >= 16, ErrorKind::config, "make_ball: n must be >= 16");
  Rng rng(seed);
  double r = n / 8.0;
  double intensity = rng.uniform(0.75, 1.0);
  double ci = rng.uniform(r, n - 1 - r);
  double cj = rng.uniform(r, n - 1 - r);
  Grid x(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double di = i - ci, dj = j - cj;
      if (di * di + dj * dj <= r * r) x(i, j) = intensity;
    }
  return x;
}

namespace {

struct BranchPoint {
  double i, j, theta;
};

void stamp_disk(Grid& img, double ci, double cj, double radius, double intensity) {
  int lo_i = std::max(0, static_cast<int>(std::floor(ci - radius - 1)));
  int hi_i = std::min(img.rows() - 1, static_cast<int>(std::ceil(ci + radius + 1)));
  int lo_j = std::max(0, static_cast<int>(std::floor(cj - radius - 1)));
  int hi_j = std::min(img.cols() - 1, static_cast<int>(std::ceil(cj + radius + 1)));
  for (int i = lo_i; i <= hi_i; ++i)
    for (int j = lo_j; j <= hi_j; ++j) {
      double di = i - ci, dj = j - cj;
      if (di * di + dj * dj <= radius * radius)
        img(i, j) = std::max(img(i, j), intensity);
    }
}

}  // namespace

Grid make_vessel_like(int n, uint64_t seed) {
  require(n >= 32, ErrorKind::config, "make_vessel_like: n must be >= 32");
  Rng rng(seed);
  Grid img(n, n);
  int n_strokes = static_cast<int>(rng.uniform_int(2, 6));
  std::vector<BranchPoint> candidates;

  for (int s = 0; s < n_strokes; ++s) {
    double ci, cj, theta;
    if (s == 0 || candidates.empty()) {
      ci = rng.uniform(0.2 * n, 0.8 * n);
      cj = rng.uniform(0.2 * n, 0.8 * n);
      theta = rng.uniform(0.0, 2.0 * M_PI);
    } else {
      const BranchPoint& bp =
          candidates[static_cast<size_t>(rng.uniform_int(0, candidates.size() - 1))];
      ci = bp.i;
      cj = bp.j;
      double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      theta = bp.theta + side * rng.uniform(0.4, 1.2);
    }
    double width = rng.uniform(1.0, 3.0);
    double intensity = rng.uniform(0.5, 1.0);
    int length = static_cast<int>(rng.uniform_int(n / 2, (9 * n) / 10));
    double kappa = 0.0;
    for (int step = 0; step < length; ++step) {
      kappa = 0.9 * kappa + 0.04 * rng.normal();
      theta += kappa;
      ci += std::sin(theta);
      cj += std::cos(theta);
      // steer back toward the centre near the boundary
      double margin = 2.0 + width;
      if (ci < margin || ci > n - 1 - margin || cj < margin || cj > n - 1 - margin) {
        double to_centre = std::atan2(0.5 * n - ci, 0.5 * n - cj);
        theta = 0.7 * theta + 0.3 * to_centre;
        kappa = 0.0;
        ci = std::clamp(ci, 1.0, n - 2.0);
        cj = std::clamp(cj, 1.0, n - 2.0);
      }
      stamp_disk(img, ci, cj, std::max(0.5, width / 2.0), intensity);
      if (step % 4 == 0) candidates.push_back({ci, cj, theta});
    }
  }
  return img;
}

Grid simulate_measurement(const Grid& x, const LinearOp& A, double noise_level,
                          uint64_t seed) {
  require(noise_level >= 0.0, ErrorKind::input, "noise_level must be >= 0");
  Grid y = A.apply(x);
  double sigma = noise_level * std::max(0.0, max_val(y));
  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& v : y.vec()) v += sigma * rng.normal();
  }
  return y;
}

Grid rot90(const Grid& g) {
  Grid out(g.cols(), g.rows());
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c) out(g.cols() - 1 - c, r) = g(r, c);
  return out;
}

std::string dataset_dir(const std::string& root, PhantomKind kind) {
  return (fs::path(root) / to_string(kind)).string();
}

namespace {

Grid make_phantom(PhantomKind kind, int n, uint64_t seed) {
  return kind == PhantomKind::balls ? make_ball(n, seed) : make_vessel_like(n, seed);
}

void write_sample(const std::string& dir, int index, const Grid& x, const Grid& y) {
  write_grid(dir + "/" + std::to_string(index) + ".x.bin", x);
  write_grid(dir + "/" + std::to_string(index) + ".y.bin", y);
}

nlohmann::json refs_to_json(const std::vector<SampleRef>& refs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : refs)
    arr.push_back({{"index", r.index}, {"seed", r.seed}, {"rotated", r.rotated}});
  return arr;
}

std::vector<SampleRef> refs_from_json(const nlohmann::json& arr) {
  std::vector<SampleRef> refs;
  for (const auto& j : arr)
    refs.push_back({j.at("index").get<int>(), j.at("seed").get<uint64_t>(),
                    j.at("rotated").get<bool>()});
  return refs;
}

}  // namespace

DatasetManifest build_dataset(const DatasetSpec& spec, const PatConfig& cfg,
                              const std::string& root) {
  require(spec.n_train >= 1 && spec.n_test >= 1, ErrorKind::config,
          "dataset: counts must be >= 1");
  require(spec.n == cfg.n, ErrorKind::config, "dataset: image size does not match operator");
  PatOps ops = make_pat_ops(cfg);

  fs::path base = dataset_dir(root, spec.kind);
  std::error_code ec;
  fs::create_directories(base / "train", ec);
  fs::create_directories(base / "test", ec);
  require(fs::exists(base / "train") && fs::exists(base / "test"), ErrorKind::io,
          "dataset: cannot create directories under " + base.string());

  DatasetManifest man;
  man.spec = spec;
  man.pat = cfg;

  auto emit = [&](const std::string& split, std::vector<SampleRef>& refs, int index,
                  uint64_t phantom_seed, bool rotated) {
    Grid x = make_phantom(spec.kind, spec.n, phantom_seed);
    if (rotated) x = rot90(x);
    uint64_t noise_seed = derive_seed(spec.seed, "noise." + split, index);
    Grid y = simulate_measurement(x, ops.accurate, spec.noise_level, noise_seed);
    write_sample((base / split).string(), index, x, y);
    refs.push_back({index, phantom_seed, rotated});
  };

  if (spec.kind == PhantomKind::vessels) {
    // each unique phantom is stored twice: original and rotated by 90 degrees
    for (int i = 0; i < spec.n_train; ++i) {
      uint64_t s = derive_seed(spec.seed, "train", i);
      emit("train", man.train, 2 * i, s, false);
      emit("train", man.train, 2 * i + 1, s, true);
    }
  } else {
    for (int i = 0; i < spec.n_train; ++i)
      emit("train", man.train, i, derive_seed(spec.seed, "train", i), false);
  }
  for (int i = 0; i < spec.n_test; ++i)
    emit("test", man.test, i, derive_seed(spec.seed, "test", i), false);

  nlohmann::json j;
  j["format_version"] = 1;
  j["spec"] = spec;
  j["pat"] = cfg;
  j["train"] = refs_to_json(man.train);
  j["test"] = refs_to_json(man.test);
  std::ofstream out(base / "manifest.json");
  require(out.good(), ErrorKind::io, "dataset: cannot write manifest");
  out << j.dump(2) << "\n";
  return man;
}

DatasetManifest read_manifest(const std::string& root, PhantomKind kind) {
  fs::path p = fs::path(dataset_dir(root, kind)) / "manifest.json";
  std::ifstream in(p);
  require(in.good(), ErrorKind::io, "dataset: missing manifest " + p.string());
  nlohmann::json j;
  in >> j;
  DatasetManifest man;
  man.spec = j.at("spec").get<DatasetSpec>();
  man.pat = j.at("pat").get<PatConfig>();
  man.train = refs_from_json(j.at("train"));
  man.test = refs_from_json(j.at("test"));
  return man;
}

Sample load_sample(const std::string& root, PhantomKind kind, bool train, int index) {
  fs::path base = fs::path(dataset_dir(root, kind)) / (train ? "train" : "test");
  Sample s;
  s.x = read_grid((base / (std::to_string(index) + ".x.bin")).string());
  s.y = read_grid((base / (std::to_string(index) + ".y.bin")).string());
  return s;
}

}  // namespace opcorr
