#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/phantoms.hpp"
#include "core/rng.hpp"
#include "core/toy_ops.hpp"

using namespace opcorr;
namespace fs = std::filesystem;

TEST_SUITE("balls") {
  TEST_CASE("intensity range and background") {
    for (uint64_t seed : {1u, 2u, 3u, 17u}) {
      Grid x = make_ball(64, seed);
      CHECK(min_val(x) == 0.0);
      CHECK(max_val(x) >= 0.75);
      CHECK(max_val(x) <= 1.0);
    }
  }

  TEST_CASE("different seeds move the disk") {
    Grid a = make_ball(64, 1);
    Grid b = make_ball(64, 2);
    auto argmax = [](const Grid& g) {
      int best = 0;
      for (size_t i = 0; i < g.size(); ++i)
        if (g.vec()[i] > g.vec()[best]) best = static_cast<int>(i);
      return best;
    };
    CHECK(argmax(a) != argmax(b));
  }

  TEST_CASE("disk area matches pi r^2 within a perimeter margin") {
    const int n = 64;
    const double r = n / 8.0;
    for (uint64_t seed : {5u, 6u, 7u}) {
      Grid x = make_ball(n, seed);
      int count = 0;
      for (double v : x.vec())
        if (v > 0.0) ++count;
      CHECK(std::fabs(count - M_PI * r * r) <= 2.0 * M_PI * r);
    }
  }
}

TEST_SUITE("vessels") {
  TEST_CASE("range, determinism and non-emptiness") {
    Grid a = make_vessel_like(64, 42);
    Grid b = make_vessel_like(64, 42);
    CHECK(a.vec() == b.vec());  // bit-identical
    CHECK(min_val(a) >= 0.0);
    CHECK(max_val(a) <= 1.0);
    CHECK(max_val(a) >= 0.5);  // at least one stroke
  }

  TEST_CASE("foreground fraction stays in the regression band") {
    for (int s = 0; s < 100; ++s) {
      Grid x = make_vessel_like(64, 3000 + s);
      int fg = 0;
      for (double v : x.vec())
        if (v > 0.0) ++fg;
      double frac = static_cast<double>(fg) / x.size();
      CHECK(frac >= 0.01);
      CHECK(frac <= 0.25);
    }
  }
}

TEST_SUITE("measurements") {
  TEST_CASE("zero noise level reproduces A x exactly") {
    ToyOps toy = make_toy_ops(16);
    Grid x = random_grid(1, 16, 5);
    Grid y = simulate_measurement(x, toy.A, 0.0, 7);
    CHECK(norm2(y - toy.A.apply(x)) == 0.0);
  }

  TEST_CASE("zero input stays exactly zero") {
    ToyOps toy = make_toy_ops(16);
    Grid x(1, 16);
    Grid y = simulate_measurement(x, toy.A, 0.01, 7);
    CHECK(norm2(y) == 0.0);
  }

  TEST_CASE("noise std is 1 percent of the data maximum") {
    // identity operator on a 64x64 grid gives 4096 noise draws
    LinearOp ident{"id", {64, 64}, {64, 64},
                   [](const Grid& g) { return g; },
                   [](const Grid& g) { return g; }};
    Grid x(64, 64, 1.0);
    x(0, 0) = 2.0;  // max(Ax) = 2
    Grid y = simulate_measurement(x, ident, 0.01, 123);
    Grid e = y - x;
    double var = 0.0;
    for (double v : e.vec()) var += v * v;
    double std_hat = std::sqrt(var / e.size());
    CHECK(std_hat == doctest::Approx(0.02).epsilon(0.05));
  }
}

TEST_SUITE("datasets") {
  TEST_CASE("build, manifest, determinism, rotation doubling") {
    fs::path tmp = fs::temp_directory_path() / "opcorr_ds_test";
    fs::remove_all(tmp);

    PatConfig cfg;
    cfg.n = 32;
    cfg.n_t = 32;
    DatasetSpec spec;
    spec.kind = PhantomKind::balls;
    spec.n_train = 8;
    spec.n_test = 3;
    spec.n = 32;
    spec.seed = 9;

    DatasetManifest man = build_dataset(spec, cfg, tmp.string());
    CHECK(man.train.size() == 8);
    CHECK(man.test.size() == 3);
    for (int i = 0; i < 8; ++i) {
      CHECK(fs::exists(tmp / "balls" / "train" / (std::to_string(i) + ".x.bin")));
      CHECK(fs::exists(tmp / "balls" / "train" / (std::to_string(i) + ".y.bin")));
    }

    // train and test seeds are disjoint
    std::set<uint64_t> train_seeds, test_seeds;
    for (const auto& r : man.train) train_seeds.insert(r.seed);
    for (const auto& r : man.test) test_seeds.insert(r.seed);
    for (uint64_t s : test_seeds) CHECK(train_seeds.count(s) == 0);

    // rebuild is bit-identical
    auto file_bytes = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    std::string before = file_bytes(tmp / "balls" / "train" / "0.y.bin");
    std::string manifest_before = file_bytes(tmp / "balls" / "manifest.json");
    build_dataset(spec, cfg, tmp.string());
    CHECK(file_bytes(tmp / "balls" / "train" / "0.y.bin") == before);
    CHECK(file_bytes(tmp / "balls" / "manifest.json") == manifest_before);

    // vessels: each unique phantom is stored twice (rotated copy)
    DatasetSpec vspec;
    vspec.kind = PhantomKind::vessels;
    vspec.n_train = 4;
    vspec.n_test = 2;
    vspec.n = 32;
    vspec.seed = 10;
    DatasetManifest vman = build_dataset(vspec, cfg, tmp.string());
    CHECK(vman.train.size() == 8);
    Sample orig = load_sample(tmp.string(), PhantomKind::vessels, true, 0);
    Sample rot = load_sample(tmp.string(), PhantomKind::vessels, true, 1);
    CHECK(vman.train[1].rotated);
    CHECK(norm2(rot90(orig.x) - rot.x) == 0.0);

    // manifests round-trip
    DatasetManifest reread = read_manifest(tmp.string(), PhantomKind::balls);
    CHECK(reread.train.size() == man.train.size());
    CHECK(reread.spec.n_train == spec.n_train);

    fs::remove_all(tmp);
  }

  TEST_CASE("grid io round trip and header validation") {
    fs::path tmp = fs::temp_directory_path() / "opcorr_grid_io";
    fs::create_directories(tmp);
    Grid g = random_grid(5, 7, 77);
    write_grid((tmp / "g.bin").string(), g);
    Grid back = read_grid((tmp / "g.bin").string());
    CHECK(back.rows() == 5);
    CHECK(back.cols() == 7);
    CHECK(back.vec() == g.vec());

    std::ofstream bad(tmp / "bad.bin", std::ios::binary);
    bad << "not a grid";
    bad.close();
    CHECK_THROWS_AS(read_grid((tmp / "bad.bin").string()), Error);
    fs::remove_all(tmp);
  }
}
