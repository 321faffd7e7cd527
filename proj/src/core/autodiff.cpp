#include "core/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

namespace opcorr::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<std::vector<NodePtr>(const NodePtr&)> vjp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  bool ng = false;
  for (const auto& p : n->parents) ng = ng || (p && p->needs_grad);
  n->needs_grad = ng;
  if (ng) n->vjp = std::move(vjp);
  return n;
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.same_shape(b), ErrorKind::input, std::string(what) + ": shape mismatch");
}

}  // namespace

NodePtr constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->needs_grad = false;
  return n;
}

NodePtr leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->needs_grad = true;
  return n;
}

NodePtr add(NodePtr a, NodePtr b) {
  check_same(a->value, b->value, "add");
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i)
    out.ptr()[i] = a->value.ptr()[i] + b->value.ptr()[i];
  return make_node(std::move(out), {a, b},
                   [](const NodePtr& g) { return std::vector<NodePtr>{g, g}; });
}

NodePtr sub(NodePtr a, NodePtr b) {
  check_same(a->value, b->value, "sub");
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i)
    out.ptr()[i] = a->value.ptr()[i] - b->value.ptr()[i];
  return make_node(std::move(out), {a, b}, [](const NodePtr& g) {
    return std::vector<NodePtr>{g, scale(g, -1.0)};
  });
}

NodePtr mul(NodePtr a, NodePtr b) {
  check_same(a->value, b->value, "mul");
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i)
    out.ptr()[i] = a->value.ptr()[i] * b->value.ptr()[i];
  return make_node(std::move(out), {a, b}, [a, b](const NodePtr& g) {
    return std::vector<NodePtr>{mul(g, b), mul(g, a)};
  });
}

NodePtr scale(NodePtr a, double s) {
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i) out.ptr()[i] = s * a->value.ptr()[i];
  return make_node(std::move(out), {a}, [s](const NodePtr& g) {
    return std::vector<NodePtr>{scale(g, s)};
  });
}

NodePtr smul(NodePtr scalar, NodePtr a) {
  require(scalar->value.size() == 1, ErrorKind::input, "smul: scalar must be (1,1,1)");
  double s = scalar->value.ptr()[0];
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i) out.ptr()[i] = s * a->value.ptr()[i];
  return make_node(std::move(out), {scalar, a}, [scalar, a](const NodePtr& g) {
    return std::vector<NodePtr>{total_sum(mul(g, a)), smul(scalar, g)};
  });
}

NodePtr total_sum(NodePtr a) {
  Tensor out(1, 1, 1);
  double s = 0.0;
  for (size_t i = 0; i < a->value.size(); ++i) s += a->value.ptr()[i];
  out.ptr()[0] = s;
  const int c = a->value.c, h = a->value.h, w = a->value.w;
  return make_node(std::move(out), {a}, [c, h, w](const NodePtr& g) {
    return std::vector<NodePtr>{bcast(g, c, h, w)};
  });
}

NodePtr bcast(NodePtr scalar, int c, int h, int w) {
  require(scalar->value.size() == 1, ErrorKind::input, "bcast: scalar must be (1,1,1)");
  Tensor out(c, h, w, scalar->value.ptr()[0]);
  return make_node(std::move(out), {scalar}, [](const NodePtr& g) {
    return std::vector<NodePtr>{total_sum(g)};
  });
}

NodePtr sum_squares(NodePtr a) {
  Tensor out(1, 1, 1);
  double s = 0.0;
  for (size_t i = 0; i < a->value.size(); ++i) {
    double v = a->value.ptr()[i];
    s += v * v;
  }
  out.ptr()[0] = s;
  return make_node(std::move(out), {a}, [a](const NodePtr& g) {
    return std::vector<NodePtr>{smul(g, scale(a, 2.0))};
  });
}

namespace {
// SiLU sigma(z) = z * s(z) with s the logistic function, and its derivatives.
double silu_deriv(double z, int k) {
  double s = 1.0 / (1.0 + std::exp(-z));
  double s1 = s * (1.0 - s);
  switch (k) {
    case 0: return z * s;
    case 1: return s + z * s1;
    case 2: {
      double s2 = s1 * (1.0 - 2.0 * s);
      return 2.0 * s1 + z * s2;
    }
    case 3: {
      double s2 = s1 * (1.0 - 2.0 * s);
      double s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
      return 3.0 * s2 + z * s3;
    }
    default:
      fail(ErrorKind::internal, "silu: derivative order not supported");
  }
}
}  // namespace

NodePtr silu(NodePtr a, int k) {
  require(k >= 0 && k <= 3, ErrorKind::internal, "silu: bad derivative order");
  Tensor out(a->value.c, a->value.h, a->value.w);
  for (size_t i = 0; i < out.size(); ++i)
    out.ptr()[i] = silu_deriv(a->value.ptr()[i], k);
  return make_node(std::move(out), {a}, [a, k](const NodePtr& g) {
    return std::vector<NodePtr>{mul(g, silu(a, k + 1))};
  });
}

// ---------------------------------------------------------------------------
// convolution kernels (im2col + GEMM)

namespace {

// Direct convolution kernels: per (co, ci, tap) the update is a scaled
// shifted-row accumulation, which keeps everything in cache and vectorises.

struct TapRange {
  int sy, sx, y0, y1, x0, x1;
};

inline TapRange tap_range(int dy, int dx, int k, int h, int w) {
  int p = k / 2;
  int sy = dy - p, sx = dx - p;
  return {sy, sx, sy < 0 ? -sy : 0, sy > 0 ? h - sy : h,
          sx < 0 ? -sx : 0, sx > 0 ? w - sx : w};
}

// One (ci -> co) plane accumulation. The 5x5 path fuses the horizontal taps
// so each output store carries five fused multiply-adds.
void conv_plane_acc(const double* plane, const double* wt, int k, int H, int W,
                    double* oplane) {
  if (k == 5 && W >= 4) {
    for (int y = 0; y < H; ++y) {
      double* __restrict__ o = oplane + static_cast<size_t>(y) * W;
      for (int dy = 0; dy < 5; ++dy) {
        int yy = y + dy - 2;
        if (yy < 0 || yy >= H) continue;
        const double* __restrict__ r = plane + static_cast<size_t>(yy) * W;
        const double* wrow = wt + dy * 5;
        double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2], w3 = wrow[3], w4 = wrow[4];
        for (int i = 2; i < W - 2; ++i)
          o[i] += w0 * r[i - 2] + w1 * r[i - 1] + w2 * r[i] + w3 * r[i + 1] + w4 * r[i + 2];
        for (int i : {0, 1, W - 2, W - 1}) {
          double acc = 0.0;
          for (int dx = 0; dx < 5; ++dx) {
            int xx = i + dx - 2;
            if (xx >= 0 && xx < W) acc += wrow[dx] * r[xx];
          }
          o[i] += acc;
        }
      }
    }
    return;
  }
  for (int dy = 0; dy < k; ++dy)
    for (int dx = 0; dx < k; ++dx) {
      double wv = wt[dy * k + dx];
      TapRange t = tap_range(dy, dx, k, H, W);
      int len = t.x1 - t.x0;
      for (int y = t.y0; y < t.y1; ++y) {
        const double* __restrict__ src =
            plane + static_cast<size_t>(y + t.sy) * W + t.x0 + t.sx;
        double* __restrict__ dst = oplane + static_cast<size_t>(y) * W + t.x0;
        for (int i = 0; i < len; ++i) dst[i] += wv * src[i];
      }
    }
}

Tensor conv_fwd_raw(const Tensor& x, const Tensor& w) {
  const int cin = x.c;
  require(w.c % cin == 0, ErrorKind::input, "conv2d: weight/input channel mismatch");
  const int cout = w.c / cin;
  const int kh = w.h, kw = w.w;
  require(kh == kw && kh % 2 == 1, ErrorKind::input, "conv2d: kernel must be odd square");
  const int k = kh, H = x.h, W = x.w;
  const size_t hw = static_cast<size_t>(H) * W;

  Tensor out(cout, H, W);
  for (int co = 0; co < cout; ++co) {
    double* oplane = out.ptr() + static_cast<size_t>(co) * hw;
    for (int ci = 0; ci < cin; ++ci)
      conv_plane_acc(x.ptr() + static_cast<size_t>(ci) * hw,
                     w.ptr() + (static_cast<size_t>(co) * cin + ci) * k * k, k, H, W,
                     oplane);
  }
  return out;
}

Tensor conv_dbwd_raw(const Tensor& g, const Tensor& w, int cin) {
  const int cout = g.c;
  require(w.c == cin * cout, ErrorKind::input, "conv2d_data_bwd: channel mismatch");
  const int k = w.h, H = g.h, W = g.w;
  const size_t hw = static_cast<size_t>(H) * W;

  // the data gradient is a convolution of g with the flipped, transposed bank
  std::vector<double> flipped(static_cast<size_t>(cin) * cout * k * k);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = w.ptr() + (static_cast<size_t>(co) * cin + ci) * k * k;
      double* dst = &flipped[(static_cast<size_t>(ci) * cout + co) * k * k];
      for (int t = 0; t < k * k; ++t) dst[t] = src[k * k - 1 - t];
    }

  Tensor out(cin, H, W);
  for (int ci = 0; ci < cin; ++ci) {
    double* xplane = out.ptr() + static_cast<size_t>(ci) * hw;
    for (int co = 0; co < cout; ++co)
      conv_plane_acc(g.ptr() + static_cast<size_t>(co) * hw,
                     &flipped[(static_cast<size_t>(ci) * cout + co) * k * k], k, H, W,
                     xplane);
  }
  return out;
}

Tensor conv_wbwd_raw(const Tensor& x, const Tensor& g, int kh, int kw) {
  const int cin = x.c, cout = g.c;
  require(x.h == g.h && x.w == g.w, ErrorKind::input,
          "conv2d_weight_bwd: spatial shape mismatch");
  require(kh == kw && kh % 2 == 1, ErrorKind::input,
          "conv2d_weight_bwd: kernel must be odd square");
  const int k = kh, H = x.h, W = x.w;
  const size_t hw = static_cast<size_t>(H) * W;

  Tensor out(cout * cin, k, k);
  for (int co = 0; co < cout; ++co) {
    const double* gplane = g.ptr() + static_cast<size_t>(co) * hw;
    for (int ci = 0; ci < cin; ++ci) {
      const double* plane = x.ptr() + static_cast<size_t>(ci) * hw;
      double* wt = out.ptr() + (static_cast<size_t>(co) * cin + ci) * k * k;
      if (k == 5 && W >= 4) {
        // one pass per (dy): the five horizontal taps share the row loads
        for (int dy = 0; dy < 5; ++dy) {
          double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0;
          int sy = dy - 2;
          int y0 = sy < 0 ? -sy : 0, y1 = sy > 0 ? H - sy : H;
          for (int y = y0; y < y1; ++y) {
            const double* __restrict__ r = plane + static_cast<size_t>(y + sy) * W;
            const double* __restrict__ gr = gplane + static_cast<size_t>(y) * W;
            for (int i = 2; i < W - 2; ++i) {
              double gv = gr[i];
              a0 += r[i - 2] * gv;
              a1 += r[i - 1] * gv;
              a2 += r[i] * gv;
              a3 += r[i + 1] * gv;
              a4 += r[i + 2] * gv;
            }
            for (int i : {0, 1, W - 2, W - 1}) {
              double gv = gr[i];
              if (i - 2 >= 0) a0 += r[i - 2] * gv;
              if (i - 1 >= 0) a1 += r[i - 1] * gv;
              a2 += r[i] * gv;
              if (i + 1 < W) a3 += r[i + 1] * gv;
              if (i + 2 < W) a4 += r[i + 2] * gv;
            }
          }
          wt[dy * 5 + 0] = a0;
          wt[dy * 5 + 1] = a1;
          wt[dy * 5 + 2] = a2;
          wt[dy * 5 + 3] = a3;
          wt[dy * 5 + 4] = a4;
        }
        continue;
      }
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          TapRange t = tap_range(dy, dx, k, H, W);
          int len = t.x1 - t.x0;
          // four independent accumulators keep the FMA pipeline busy
          double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
          for (int y = t.y0; y < t.y1; ++y) {
            const double* __restrict__ src =
                plane + static_cast<size_t>(y + t.sy) * W + t.x0 + t.sx;
            const double* __restrict__ gr = gplane + static_cast<size_t>(y) * W + t.x0;
            int i = 0;
            for (; i + 4 <= len; i += 4) {
              a0 += src[i] * gr[i];
              a1 += src[i + 1] * gr[i + 1];
              a2 += src[i + 2] * gr[i + 2];
              a3 += src[i + 3] * gr[i + 3];
            }
            for (; i < len; ++i) a0 += src[i] * gr[i];
          }
          wt[dy * k + dx] = ((a0 + a1) + (a2 + a3));
        }
    }
  }
  return out;
}

}  // namespace

NodePtr conv2d(NodePtr x, NodePtr w) {
  Tensor out = conv_fwd_raw(x->value, w->value);
  const int cin = x->value.c, kh = w->value.h, kw = w->value.w;
  return make_node(std::move(out), {x, w}, [x, w, cin, kh, kw](const NodePtr& g) {
    return std::vector<NodePtr>{conv2d_data_bwd(g, w, cin),
                                conv2d_weight_bwd(x, g, kh, kw)};
  });
}

NodePtr conv2d_data_bwd(NodePtr g, NodePtr w, int cin) {
  Tensor out = conv_dbwd_raw(g->value, w->value, cin);
  const int kh = w->value.h, kw = w->value.w;
  return make_node(std::move(out), {g, w}, [g, w, kh, kw](const NodePtr& c) {
    return std::vector<NodePtr>{conv2d(c, w), conv2d_weight_bwd(c, g, kh, kw)};
  });
}

NodePtr conv2d_weight_bwd(NodePtr x, NodePtr g, int kh, int kw) {
  Tensor out = conv_wbwd_raw(x->value, g->value, kh, kw);
  const int cin = x->value.c;
  return make_node(std::move(out), {x, g}, [x, g, cin](const NodePtr& c) {
    return std::vector<NodePtr>{conv2d_data_bwd(g, c, cin), conv2d(x, c)};
  });
}

NodePtr bias_add(NodePtr x, NodePtr b) {
  require(b->value.c == x->value.c && b->value.h == 1 && b->value.w == 1,
          ErrorKind::input, "bias_add: bias must be (c,1,1)");
  Tensor out(x->value.c, x->value.h, x->value.w);
  const size_t hw = static_cast<size_t>(x->value.h) * x->value.w;
  for (int ci = 0; ci < x->value.c; ++ci) {
    const double bv = b->value.ptr()[ci];
    const double* src = x->value.ptr() + ci * hw;
    double* dst = out.ptr() + ci * hw;
    for (size_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
  }
  return make_node(std::move(out), {x, b}, [](const NodePtr& g) {
    return std::vector<NodePtr>{g, channel_sum(g)};
  });
}

NodePtr channel_sum(NodePtr x) {
  Tensor out(x->value.c, 1, 1);
  const size_t hw = static_cast<size_t>(x->value.h) * x->value.w;
  for (int ci = 0; ci < x->value.c; ++ci) {
    double s = 0.0;
    const double* src = x->value.ptr() + ci * hw;
    for (size_t i = 0; i < hw; ++i) s += src[i];
    out.ptr()[ci] = s;
  }
  const int h = x->value.h, w = x->value.w;
  return make_node(std::move(out), {x}, [h, w](const NodePtr& g) {
    return std::vector<NodePtr>{channel_bcast(g, h, w)};
  });
}

NodePtr channel_bcast(NodePtr b, int h, int w) {
  require(b->value.h == 1 && b->value.w == 1, ErrorKind::input,
          "channel_bcast: input must be (c,1,1)");
  Tensor out(b->value.c, h, w);
  const size_t hw = static_cast<size_t>(h) * w;
  for (int ci = 0; ci < b->value.c; ++ci) {
    double v = b->value.ptr()[ci];
    double* dst = out.ptr() + ci * hw;
    for (size_t i = 0; i < hw; ++i) dst[i] = v;
  }
  return make_node(std::move(out), {b}, [](const NodePtr& g) {
    return std::vector<NodePtr>{channel_sum(g)};
  });
}

NodePtr pool_avg2(NodePtr x) {
  const Tensor& v = x->value;
  require(v.h % 2 == 0 && v.w % 2 == 0, ErrorKind::input, "pool_avg2: odd spatial size");
  Tensor out(v.c, v.h / 2, v.w / 2);
  for (int ci = 0; ci < v.c; ++ci)
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx)
        out.at(ci, y, xx) = 0.25 * (v.at(ci, 2 * y, 2 * xx) + v.at(ci, 2 * y, 2 * xx + 1) +
                                    v.at(ci, 2 * y + 1, 2 * xx) +
                                    v.at(ci, 2 * y + 1, 2 * xx + 1));
  return make_node(std::move(out), {x}, [](const NodePtr& g) {
    return std::vector<NodePtr>{unpool_avg2(g)};
  });
}

NodePtr unpool_avg2(NodePtr g) {
  const Tensor& v = g->value;
  Tensor out(v.c, v.h * 2, v.w * 2);
  for (int ci = 0; ci < v.c; ++ci)
    for (int y = 0; y < v.h; ++y)
      for (int xx = 0; xx < v.w; ++xx) {
        double q = 0.25 * v.at(ci, y, xx);
        out.at(ci, 2 * y, 2 * xx) = q;
        out.at(ci, 2 * y, 2 * xx + 1) = q;
        out.at(ci, 2 * y + 1, 2 * xx) = q;
        out.at(ci, 2 * y + 1, 2 * xx + 1) = q;
      }
  return make_node(std::move(out), {g}, [](const NodePtr& c) {
    return std::vector<NodePtr>{pool_avg2(c)};
  });
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 transpose convolution

namespace {

Tensor tconv_fwd_raw(const Tensor& x, const Tensor& w, int cout) {
  const int cin = x.c;
  require(w.c == cin * cout && w.h == 2 && w.w == 2, ErrorKind::input,
          "tconv2: bad weight shape");
  Tensor out(cout, x.h * 2, x.w * 2);
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co) {
      const double* wv = w.ptr() + (static_cast<size_t>(ci) * cout + co) * 4;
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          double v = x.at(ci, y, xx);
          out.at(co, 2 * y, 2 * xx) += wv[0] * v;
          out.at(co, 2 * y, 2 * xx + 1) += wv[1] * v;
          out.at(co, 2 * y + 1, 2 * xx) += wv[2] * v;
          out.at(co, 2 * y + 1, 2 * xx + 1) += wv[3] * v;
        }
    }
  return out;
}

Tensor tconv_dbwd_raw(const Tensor& g, const Tensor& w, int cin) {
  const int cout = g.c;
  require(w.c == cin * cout && g.h % 2 == 0 && g.w % 2 == 0, ErrorKind::input,
          "tconv2_data_bwd: bad shapes");
  Tensor out(cin, g.h / 2, g.w / 2);
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co) {
      const double* wv = w.ptr() + (static_cast<size_t>(ci) * cout + co) * 4;
      for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx)
          out.at(ci, y, xx) += wv[0] * g.at(co, 2 * y, 2 * xx) +
                               wv[1] * g.at(co, 2 * y, 2 * xx + 1) +
                               wv[2] * g.at(co, 2 * y + 1, 2 * xx) +
                               wv[3] * g.at(co, 2 * y + 1, 2 * xx + 1);
    }
  return out;
}

Tensor tconv_wbwd_raw(const Tensor& x, const Tensor& g) {
  const int cin = x.c, cout = g.c;
  require(g.h == 2 * x.h && g.w == 2 * x.w, ErrorKind::input,
          "tconv2_weight_bwd: bad shapes");
  Tensor out(cin * cout, 2, 2);
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co) {
      double* wv = out.ptr() + (static_cast<size_t>(ci) * cout + co) * 4;
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          double v = x.at(ci, y, xx);
          wv[0] += v * g.at(co, 2 * y, 2 * xx);
          wv[1] += v * g.at(co, 2 * y, 2 * xx + 1);
          wv[2] += v * g.at(co, 2 * y + 1, 2 * xx);
          wv[3] += v * g.at(co, 2 * y + 1, 2 * xx + 1);
        }
    }
  return out;
}

}  // namespace

NodePtr tconv2(NodePtr x, NodePtr w, int cout) {
  Tensor out = tconv_fwd_raw(x->value, w->value, cout);
  const int cin = x->value.c;
  return make_node(std::move(out), {x, w}, [x, w, cin](const NodePtr& g) {
    return std::vector<NodePtr>{tconv2_data_bwd(g, w, cin), tconv2_weight_bwd(x, g)};
  });
}

NodePtr tconv2_data_bwd(NodePtr g, NodePtr w, int cin) {
  Tensor out = tconv_dbwd_raw(g->value, w->value, cin);
  const int cout = g->value.c;
  return make_node(std::move(out), {g, w}, [g, w, cout](const NodePtr& c) {
    return std::vector<NodePtr>{tconv2(c, w, cout), tconv2_weight_bwd(c, g)};
  });
}

NodePtr tconv2_weight_bwd(NodePtr x, NodePtr g) {
  Tensor out = tconv_wbwd_raw(x->value, g->value);
  const int cin = x->value.c, cout = g->value.c;
  return make_node(std::move(out), {x, g}, [x, g, cin, cout](const NodePtr& c) {
    return std::vector<NodePtr>{tconv2_data_bwd(g, c, cin), tconv2(x, c, cout)};
  });
}

NodePtr concat_c(NodePtr a, NodePtr b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require(av.h == bv.h && av.w == bv.w, ErrorKind::input, "concat_c: spatial mismatch");
  Tensor out(av.c + bv.c, av.h, av.w);
  std::memcpy(out.ptr(), av.ptr(), sizeof(double) * av.size());
  std::memcpy(out.ptr() + av.size(), bv.ptr(), sizeof(double) * bv.size());
  const int ca = av.c, cb = bv.c;
  return make_node(std::move(out), {a, b}, [ca, cb](const NodePtr& g) {
    return std::vector<NodePtr>{slice_c(g, 0, ca), slice_c(g, ca, cb)};
  });
}

NodePtr slice_c(NodePtr x, int from, int count) {
  const Tensor& v = x->value;
  require(from >= 0 && from + count <= v.c, ErrorKind::input, "slice_c: bad range");
  Tensor out(count, v.h, v.w);
  const size_t hw = static_cast<size_t>(v.h) * v.w;
  std::memcpy(out.ptr(), v.ptr() + static_cast<size_t>(from) * hw,
              sizeof(double) * out.size());
  const int total = v.c;
  return make_node(std::move(out), {x}, [from, total](const NodePtr& g) {
    return std::vector<NodePtr>{embed_c(g, from, total)};
  });
}

NodePtr embed_c(NodePtr x, int from, int total) {
  const Tensor& v = x->value;
  require(from >= 0 && from + v.c <= total, ErrorKind::input, "embed_c: bad range");
  Tensor out(total, v.h, v.w);
  const size_t hw = static_cast<size_t>(v.h) * v.w;
  std::memcpy(out.ptr() + static_cast<size_t>(from) * hw, v.ptr(),
              sizeof(double) * v.size());
  const int count = v.c;
  return make_node(std::move(out), {x}, [from, count](const NodePtr& g) {
    return std::vector<NodePtr>{slice_c(g, from, count)};
  });
}

NodePtr linop_apply(LinearOp op, bool adjoint, NodePtr x) {
  const Shape in = adjoint ? op.range : op.domain;
  const Shape out_shape = adjoint ? op.domain : op.range;
  require(x->value.c == 1 && x->value.h == in.rows && x->value.w == in.cols,
          ErrorKind::input, "linop_apply: shape mismatch for " + op.label);
  Grid gin = grid_from_tensor(x->value);
  Grid gout = adjoint ? op.adjoint(gin) : op.apply(gin);
  Tensor out = tensor_from_grid(gout);
  (void)out_shape;
  return make_node(std::move(out), {x}, [op = std::move(op), adjoint](const NodePtr& g) {
    return std::vector<NodePtr>{linop_apply(op, !adjoint, g)};
  });
}

std::vector<NodePtr> grad_of(const NodePtr& output, const std::vector<NodePtr>& wrt,
                             NodePtr cotangent) {
  if (!cotangent) {
    require(output->value.size() == 1, ErrorKind::input,
            "grad_of: non-scalar output needs an explicit cotangent");
    cotangent = constant(Tensor(1, 1, 1, 1.0));
  }
  require(cotangent->value.same_shape(output->value), ErrorKind::input,
          "grad_of: cotangent shape mismatch");

  // topological order over the needs_grad subgraph
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::unordered_map<Node*, NodePtr> keep;  // pin shared_ptrs while we work
  {
    std::vector<std::pair<NodePtr, size_t>> stack{{output, 0}};
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx == 0) {
        if (seen.count(n.get())) {
          stack.pop_back();
          continue;
        }
        seen.insert(n.get());
        keep[n.get()] = n;
      }
      if (idx < n->parents.size()) {
        NodePtr p = n->parents[idx++];
        if (p && p->needs_grad && !seen.count(p.get())) stack.emplace_back(p, 0);
      } else {
        topo.push_back(n.get());
        stack.pop_back();
      }
    }
  }

  std::unordered_map<Node*, NodePtr> grads;
  grads[output.get()] = cotangent;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    auto git = grads.find(n);
    if (git == grads.end() || !n->vjp) continue;
    std::vector<NodePtr> pg = n->vjp(git->second);
    require(pg.size() == n->parents.size(), ErrorKind::internal,
            "grad_of: vjp arity mismatch");
    for (size_t i = 0; i < pg.size(); ++i) {
      const NodePtr& p = n->parents[i];
      if (!p || !p->needs_grad || !pg[i]) continue;
      auto pit = grads.find(p.get());
      if (pit == grads.end())
        grads[p.get()] = pg[i];
      else
        pit->second = add(pit->second, pg[i]);
    }
  }

  std::vector<NodePtr> out;
  out.reserve(wrt.size());
  for (const NodePtr& w : wrt) {
    auto it = grads.find(w.get());
    if (it != grads.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Tensor(w->value.c, w->value.h, w->value.w, 0.0)));
  }
  return out;
}

Tensor tensor_from_grid(const Grid& g) {
  Tensor t(1, g.rows(), g.cols());
  std::memcpy(t.ptr(), g.data(), sizeof(double) * g.size());
  return t;
}

Grid grid_from_tensor(const Tensor& t) {
  require(t.c == 1, ErrorKind::input, "grid_from_tensor: expected single channel");
  Grid g(t.h, t.w);
  std::memcpy(g.data(), t.ptr(), sizeof(double) * t.size());
  return g;
}

}  // namespace opcorr::ad
