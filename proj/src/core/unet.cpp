#include "core/unet.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "core/rng.hpp"

namespace opcorr {

using ad::NodePtr;
using ad::Tensor;

namespace {

Tensor conv_weights(int cout, int cin, int k, double std_dev, Rng& rng) {
  Tensor w(cout * cin, k, k);
  if (std_dev > 0.0)
    for (size_t i = 0; i < w.size(); ++i) w.ptr()[i] = std_dev * rng.normal();
  return w;
}

int channels(const ArchConfig& a, int level) { return a.base << level; }

}  // namespace

UNet::UNet(const ArchConfig& arch, uint64_t seed) : arch_(arch) {
  require(arch.depth >= 1 && arch.base >= 1, ErrorKind::config, "unet: bad architecture");
  require(arch.kernel % 2 == 1 && arch.kernel >= 1, ErrorKind::config,
          "unet: kernel size must be odd");
  Rng rng(derive_seed(seed, "unet.init", 0));
  const int k = arch.kernel;
  const int in_ch = 1;

  // variance-preserving init under SiLU (E[silu(z)^2] ~ 0.355 var z)
  auto he = [&](int cin) { return std::sqrt(2.8 / (static_cast<double>(cin) * k * k)); };

  for (int l = 0; l < arch.depth; ++l) {
    int cin = (l == 0) ? in_ch : channels(arch, l - 1);
    int ch = channels(arch, l);
    params_.push_back(conv_weights(ch, cin, k, he(cin), rng));
    params_.push_back(Tensor(ch, 1, 1));
    params_.push_back(conv_weights(ch, ch, k, he(ch), rng));
    params_.push_back(Tensor(ch, 1, 1));
  }
  for (int l = arch.depth - 2; l >= 0; --l) {
    int ch = channels(arch, l);
    int ch_below = channels(arch, l + 1);
    // tconv weights (cin*cout, 2, 2)
    Tensor up(ch_below * ch, 2, 2);
    double s = std::sqrt(2.8 / ch_below);
    for (size_t i = 0; i < up.size(); ++i) up.ptr()[i] = s * rng.normal();
    params_.push_back(up);
    params_.push_back(Tensor(ch, 1, 1));
    params_.push_back(conv_weights(ch, 2 * ch, k, he(2 * ch), rng));
    params_.push_back(Tensor(ch, 1, 1));
    params_.push_back(conv_weights(ch, ch, k, he(ch), rng));
    params_.push_back(Tensor(ch, 1, 1));
  }
  // output convolution: zero-initialised
  params_.push_back(conv_weights(in_ch, channels(arch, 0), k, 0.0, rng));
  params_.push_back(Tensor(in_ch, 1, 1));
}

UNet::UNet(const UNet& other) : arch_(other.arch_) {
  params_.reserve(other.params_.size());
  for (const auto& t : other.params_) {
    Tensor copy(t.c, t.h, t.w);
    std::memcpy(copy.ptr(), t.ptr(), sizeof(double) * t.size());
    params_.push_back(std::move(copy));
  }
}

UNet& UNet::operator=(const UNet& other) {
  if (this != &other) {
    UNet tmp(other);
    arch_ = tmp.arch_;
    params_ = std::move(tmp.params_);
  }
  return *this;
}

size_t UNet::param_count() const {
  size_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

std::vector<double> UNet::flat_params() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const auto& t : params_) flat.insert(flat.end(), t.ptr(), t.ptr() + t.size());
  return flat;
}

void UNet::set_flat_params(const std::vector<double>& flat) {
  require(flat.size() == param_count(), ErrorKind::input, "unet: flat size mismatch");
  size_t off = 0;
  for (auto& t : params_) {
    std::memcpy(t.ptr(), flat.data() + off, sizeof(double) * t.size());
    off += t.size();
  }
}

NodePtr UNet::build(NodePtr u, const std::vector<NodePtr>& p) const {
  require(p.size() == params_.size(), ErrorKind::input, "unet: wrong parameter count");
  const int mult = spatial_multiple();
  require(u->value.h % mult == 0 && u->value.w % mult == 0, ErrorKind::input,
          "unet: input size must be divisible by " + std::to_string(mult));

  size_t i = 0;
  auto conv_act = [&](NodePtr x) {
    NodePtr w = p[i++];
    NodePtr b = p[i++];
    return ad::silu(ad::bias_add(ad::conv2d(x, w), b));
  };

  std::vector<NodePtr> skips;
  NodePtr h = u;
  for (int l = 0; l < arch_.depth; ++l) {
    if (l > 0) h = ad::pool_avg2(h);
    h = conv_act(h);
    h = conv_act(h);
    if (l + 1 < arch_.depth) skips.push_back(h);
  }
  for (int l = arch_.depth - 2; l >= 0; --l) {
    NodePtr w = p[i++];
    NodePtr b = p[i++];
    h = ad::silu(ad::bias_add(ad::tconv2(h, w, channels(arch_, l)), b));
    h = ad::concat_c(skips[l], h);
    h = conv_act(h);
    h = conv_act(h);
  }
  NodePtr w_out = p[i++];
  NodePtr b_out = p[i++];
  NodePtr body = ad::bias_add(ad::conv2d(h, w_out), b_out);
  return arch_.residual ? ad::add(u, body) : body;
}

std::vector<NodePtr> UNet::param_leaves() const {
  std::vector<NodePtr> out;
  out.reserve(params_.size());
  for (const auto& t : params_) out.push_back(ad::leaf(t));
  return out;
}

std::vector<NodePtr> UNet::param_constants() const {
  std::vector<NodePtr> out;
  out.reserve(params_.size());
  for (const auto& t : params_) out.push_back(ad::constant(t));
  return out;
}

Grid UNet::apply(const Grid& u) const {
  NodePtr in = ad::constant(ad::tensor_from_grid(u));
  NodePtr out = build(in, param_constants());
  return ad::grid_from_tensor(out->value);
}

std::pair<Grid, std::vector<double>> UNet::vjp(const Grid& u, const Grid& cot) const {
  require(u.rows() == cot.rows() && u.cols() == cot.cols(), ErrorKind::input,
          "unet vjp: cotangent shape mismatch");
  NodePtr in = ad::leaf(ad::tensor_from_grid(u));
  std::vector<NodePtr> p = param_leaves();
  NodePtr out = build(in, p);

  std::vector<NodePtr> wrt;
  wrt.push_back(in);
  for (const auto& n : p) wrt.push_back(n);
  NodePtr cot_node = ad::constant(ad::tensor_from_grid(cot));
  std::vector<NodePtr> grads = ad::grad_of(out, wrt, cot_node);

  Grid input_grad = ad::grid_from_tensor(grads[0]->value);
  std::vector<double> pgrad;
  pgrad.reserve(param_count());
  for (size_t k = 1; k < grads.size(); ++k) {
    const Tensor& t = grads[k]->value;
    pgrad.insert(pgrad.end(), t.ptr(), t.ptr() + t.size());
  }
  return {input_grad, pgrad};
}

Grid UNet::input_vjp(const Grid& u, const Grid& cot) const {
  require(u.rows() == cot.rows() && u.cols() == cot.cols(), ErrorKind::input,
          "unet input_vjp: cotangent shape mismatch");
  ad::NodePtr in = ad::leaf(ad::tensor_from_grid(u));
  ad::NodePtr out = build(in, param_constants());
  ad::NodePtr cot_node = ad::constant(ad::tensor_from_grid(cot));
  std::vector<ad::NodePtr> grads = ad::grad_of(out, {in}, cot_node);
  return ad::grid_from_tensor(grads[0]->value);
}

void UNet::save(const std::string& path) const {
  nlohmann::json hdr;
  hdr["format"] = "opcorr-checkpoint";
  hdr["version"] = 1;
  hdr["arch"] = {{"depth", arch_.depth},
                 {"base", arch_.base},
                 {"kernel", arch_.kernel},
                 {"residual", arch_.residual}};
  hdr["param_count"] = param_count();
  std::string h = hdr.dump();
  uint64_t hlen = h.size();

  std::vector<double> flat = flat_params();
  std::vector<float> f32(flat.begin(), flat.end());
  FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::io, "cannot write checkpoint " + path);
  bool ok = std::fwrite(&hlen, 8, 1, f) == 1 &&
            std::fwrite(h.data(), 1, h.size(), f) == h.size() &&
            std::fwrite(f32.data(), sizeof(float), f32.size(), f) == f32.size();
  std::fclose(f);
  require(ok, ErrorKind::io, "short write: " + path);
}

UNet UNet::load(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::io, "cannot read checkpoint " + path);
  uint64_t hlen = 0;
  bool ok = std::fread(&hlen, 8, 1, f) == 1 && hlen < (1u << 20);
  std::string h(hlen, '\0');
  ok = ok && std::fread(h.data(), 1, hlen, f) == hlen;
  if (!ok) {
    std::fclose(f);
    fail(ErrorKind::io, "bad checkpoint header: " + path);
  }
  nlohmann::json hdr = nlohmann::json::parse(h);
  ArchConfig arch;
  arch.depth = hdr.at("arch").at("depth").get<int>();
  arch.base = hdr.at("arch").at("base").get<int>();
  arch.kernel = hdr.at("arch").at("kernel").get<int>();
  arch.residual = hdr.at("arch").at("residual").get<bool>();

  UNet net(arch, 0);
  size_t count = hdr.at("param_count").get<size_t>();
  require(count == net.param_count(), ErrorKind::io,
          "checkpoint parameter count mismatch: " + path);
  std::vector<float> f32(count);
  ok = std::fread(f32.data(), sizeof(float), count, f) == count;
  std::fclose(f);
  require(ok, ErrorKind::io, "short read: " + path);
  net.set_flat_params(std::vector<double>(f32.begin(), f32.end()));
  return net;
}

}  // namespace opcorr
