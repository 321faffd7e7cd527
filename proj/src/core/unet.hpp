#pragma once

#include <string>
#include <vector>

#include "core/autodiff.hpp"

namespace opcorr {

// Encoder-decoder with skip connections: `depth` resolution levels with
// channel counts base * 2^l, two 5x5 convolutions per level, average pooling
// down, 2x2 transpose convolutions up, SiLU after every convolution except
// the final output convolution. In residual form the network computes
// net(u) = u + body(u) with the output convolution zero-initialised, so a
// fresh network is exactly the identity.
struct ArchConfig {
  int depth = 3;
  int base = 16;
  int kernel = 5;
  bool residual = true;

  bool operator==(const ArchConfig&) const = default;
};

class UNet {
 public:
  UNet() = default;
  UNet(const ArchConfig& arch, uint64_t seed);

  // deep copies: parameter storage is cloned, not shared
  UNet(const UNet& other);
  UNet& operator=(const UNet& other);
  UNet(UNet&&) = default;
  UNet& operator=(UNet&&) = default;

  const ArchConfig& arch() const { return arch_; }
  std::vector<ad::Tensor>& params() { return params_; }
  const std::vector<ad::Tensor>& params() const { return params_; }
  size_t param_count() const;

  std::vector<double> flat_params() const;
  void set_flat_params(const std::vector<double>& flat);

  // graph for net(u) given parameter nodes (one per tensor in params())
  ad::NodePtr build(ad::NodePtr u, const std::vector<ad::NodePtr>& p) const;

  // parameter nodes sharing storage with params(); differentiable
  std::vector<ad::NodePtr> param_leaves() const;
  // non-differentiable parameter nodes, for inference-only evaluation
  std::vector<ad::NodePtr> param_constants() const;

  Grid apply(const Grid& u) const;

  // [D net(u)]^* cot and the parameter gradient of <net(u), cot>
  std::pair<Grid, std::vector<double>> vjp(const Grid& u, const Grid& cot) const;

  // [D net(u)]^* cot only (parameters held constant)
  Grid input_vjp(const Grid& u, const Grid& cot) const;

  // input height/width must be divisible by this
  int spatial_multiple() const { return 1 << (arch_.depth - 1); }

  void save(const std::string& path) const;
  static UNet load(const std::string& path);

 private:
  ArchConfig arch_;
  std::vector<ad::Tensor> params_;
};

}  // namespace opcorr
