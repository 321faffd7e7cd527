#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/linop.hpp"

namespace opcorr::ad {

// (channels, height, width) tensor with shared storage; ops never mutate
// their inputs.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::shared_ptr<std::vector<double>> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_),
        data(std::make_shared<std::vector<double>>(
            static_cast<size_t>(c_) * h_ * w_, fill)) {}

  size_t size() const { return static_cast<size_t>(c) * h * w; }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& at(int ci, int y, int x) {
    return (*data)[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  double at(int ci, int y, int x) const {
    return (*data)[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Define-by-run graph node. The vjp closure emits gradient contributions for
// each parent as new graph nodes, so gradients can be differentiated again
// (double backward).
struct Node {
  Tensor value;
  bool needs_grad = false;
  std::vector<NodePtr> parents;
  std::function<std::vector<NodePtr>(const NodePtr& gout)> vjp;
};

NodePtr constant(Tensor t);
NodePtr leaf(Tensor t);  // differentiable input / parameter

// elementwise and reductions
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr scale(NodePtr a, double s);
NodePtr smul(NodePtr scalar, NodePtr a);  // scalar (1,1,1) times tensor
NodePtr total_sum(NodePtr a);             // -> (1,1,1)
NodePtr bcast(NodePtr scalar, int c, int h, int w);
NodePtr sum_squares(NodePtr a);  // -> (1,1,1)
// k-th derivative of the SiLU activation, applied elementwise (k = 0..3)
NodePtr silu(NodePtr a, int k = 0);

// convolution family; weights are (cout*cin, kh, kw) with channel index
// co*cin + ci, zero 'same' padding, stride 1, odd kernel
NodePtr conv2d(NodePtr x, NodePtr w);
NodePtr conv2d_data_bwd(NodePtr g, NodePtr w, int cin);
NodePtr conv2d_weight_bwd(NodePtr x, NodePtr g, int kh, int kw);
NodePtr bias_add(NodePtr x, NodePtr b);
NodePtr channel_sum(NodePtr x);  // -> (c,1,1)
NodePtr channel_bcast(NodePtr b, int h, int w);

// 2x2 average pooling and its adjoint
NodePtr pool_avg2(NodePtr x);
NodePtr unpool_avg2(NodePtr g);

// 2x2 stride-2 transpose convolution; weights are (cin*cout, 2, 2) with
// channel index ci*cout + co
NodePtr tconv2(NodePtr x, NodePtr w, int cout);
NodePtr tconv2_data_bwd(NodePtr g, NodePtr w, int cin);
NodePtr tconv2_weight_bwd(NodePtr x, NodePtr g);

NodePtr concat_c(NodePtr a, NodePtr b);
NodePtr slice_c(NodePtr x, int from, int count);
NodePtr embed_c(NodePtr x, int from, int total);

// Wraps a LinearOp (on 1 x rows x cols tensors) as a differentiable node.
// The op is captured by value.
NodePtr linop_apply(LinearOp op, bool adjoint, NodePtr x);

// Reverse mode. `cotangent` seeds the output gradient (pass nullptr for a
// scalar output to seed with 1). Returned gradients are graph nodes and can
// be differentiated again; entries are zero tensors when `output` does not
// depend on the corresponding node.
std::vector<NodePtr> grad_of(const NodePtr& output, const std::vector<NodePtr>& wrt,
                             NodePtr cotangent = nullptr);

Tensor tensor_from_grid(const Grid& g);
Grid grid_from_tensor(const Tensor& t);

}  // namespace opcorr::ad
