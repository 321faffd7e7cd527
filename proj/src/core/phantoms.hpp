#pragma once

#include <string>
#include <vector>

#include "core/linop.hpp"
#include "core/pat.hpp"

namespace opcorr {

enum class PhantomKind { balls, vessels };

std::string to_string(PhantomKind k);
PhantomKind phantom_kind_from_string(const std::string& s);

struct DatasetSpec {
  PhantomKind kind = PhantomKind::balls;
  int n_train = 4096;  // for vessels: count of unique phantoms x2 rotations
  int n_test = 64;
  int n = 64;
  double noise_level = 0.01;
  uint64_t seed = 1;
};

// single disk of radius n/8, uniform intensity in [0.75, 1], random position
// fully inside the domain
Grid make_ball(int n, uint64_t seed);

// random branching tree of 2-6 smooth curved strokes, widths 1-3 px,
// intensities in [0.5, 1]; deterministic per seed
Grid make_vessel_like(int n, uint64_t seed);

// y = A x + e with e iid Gaussian, std = noise_level * max(A x)
Grid simulate_measurement(const Grid& x, const LinearOp& A, double noise_level,
                          uint64_t seed);

struct SampleRef {
  int index = 0;
  uint64_t seed = 0;
  bool rotated = false;  // vessel augmentation: stored rotated by 90 degrees
};

struct DatasetManifest {
  DatasetSpec spec;
  PatConfig pat;
  std::vector<SampleRef> train;
  std::vector<SampleRef> test;
};

// Directory layout: <root>/<kind>/{train,test}/<index>.x.bin, <index>.y.bin
// plus manifest.json. Measurements come from the accurate operator. Vessel
// training phantoms are stored twice, original and rotated by 90 degrees.
DatasetManifest build_dataset(const DatasetSpec& spec, const PatConfig& cfg,
                              const std::string& root);

DatasetManifest read_manifest(const std::string& root, PhantomKind kind);
std::string dataset_dir(const std::string& root, PhantomKind kind);

struct Sample {
  Grid x;
  Grid y;
};

Sample load_sample(const std::string& root, PhantomKind kind, bool train, int index);

Grid rot90(const Grid& g);

}  // namespace opcorr
