#include "opcorr/opcorr.h"

#include <cstring>
#include <string>

#include "core/jsonio.hpp"
#include "core/pipeline.hpp"

using namespace opcorr;

namespace {

thread_local std::string t_last_error;

int code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return OPCORR_E_CONFIG;
    case ErrorKind::input: return OPCORR_E_INPUT;
    case ErrorKind::io: return OPCORR_E_IO;
    case ErrorKind::numeric: return OPCORR_E_NUMERIC;
    case ErrorKind::internal: return OPCORR_E_INTERNAL;
  }
  return OPCORR_E_INTERNAL;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    return OPCORR_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return code_for(e.kind());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return OPCORR_E_INTERNAL;
  }
}

ExperimentConfig parse_config(const char* config_json) {
  require(config_json != nullptr, ErrorKind::config, "config JSON is null");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("bad config JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace

struct opcorr_pat {
  PatOps ops;
};

extern "C" {

const char* opcorr_version(void) { return "1.0.0"; }

const char* opcorr_last_error(void) { return t_last_error.c_str(); }

opcorr_pat* opcorr_pat_create(const char* config_json) {
  opcorr_pat* handle = nullptr;
  int rc = guarded([&] {
    require(config_json != nullptr, ErrorKind::config, "config JSON is null");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, std::string("bad config JSON: ") + e.what());
    }
    PatConfig cfg = j.get<PatConfig>();
    handle = new opcorr_pat{make_pat_ops(cfg)};
  });
  return rc == OPCORR_OK ? handle : nullptr;
}

void opcorr_pat_destroy(opcorr_pat* op) { delete op; }

int opcorr_pat_shape(const opcorr_pat* op, uint32_t* n, uint32_t* n_det, uint32_t* n_t) {
  return guarded([&] {
    require(op != nullptr, ErrorKind::input, "null operator handle");
    const PatConfig& cfg = op->ops.impl->config();
    if (n) *n = static_cast<uint32_t>(cfg.n);
    if (n_det) *n_det = static_cast<uint32_t>(cfg.n);
    if (n_t) *n_t = static_cast<uint32_t>(cfg.n_t);
  });
}

int opcorr_pat_apply(opcorr_pat* op, int which, int adjoint, const double* in,
                     size_t in_len, double* out, size_t out_len) {
  return guarded([&] {
    require(op != nullptr && in != nullptr && out != nullptr, ErrorKind::input,
            "null argument");
    require(which == OPCORR_OP_ACCURATE || which == OPCORR_OP_APPROX, ErrorKind::input,
            "bad operator selector");
    const LinearOp& lin = which == OPCORR_OP_ACCURATE ? op->ops.accurate : op->ops.approx;
    Shape in_shape = adjoint ? lin.range : lin.domain;
    Shape out_shape = adjoint ? lin.domain : lin.range;
    require(in_len == in_shape.count() && out_len == out_shape.count(), ErrorKind::input,
            "buffer length mismatch");
    Grid g(in_shape.rows, in_shape.cols);
    std::memcpy(g.data(), in, sizeof(double) * in_len);
    Grid res = adjoint ? lin.adjoint(g) : lin.apply(g);
    std::memcpy(out, res.data(), sizeof(double) * out_len);
  });
}

int opcorr_pat_dot_test(opcorr_pat* op, int which, int trials, uint64_t seed,
                        double* max_rel) {
  return guarded([&] {
    require(op != nullptr && max_rel != nullptr, ErrorKind::input, "null argument");
    const LinearOp& lin = which == OPCORR_OP_ACCURATE ? op->ops.accurate : op->ops.approx;
    *max_rel = op_dot_test(lin, trials, seed);
  });
}

int opcorr_cmd_generate(const char* config_json) {
  return guarded([&] { cmd_generate(parse_config(config_json)); });
}

int opcorr_cmd_train(const char* config_json, const char* method) {
  return guarded([&] {
    require(method != nullptr, ErrorKind::config, "method is null");
    cmd_train(parse_config(config_json), method);
  });
}

int opcorr_cmd_reconstruct(const char* config_json, const char* method,
                           const char* selector) {
  return guarded([&] {
    require(method != nullptr, ErrorKind::config, "method is null");
    cmd_reconstruct(parse_config(config_json), method,
                    selector ? selector : "all");
  });
}

int opcorr_cmd_evaluate(const char* config_json) {
  return guarded([&] { cmd_evaluate(parse_config(config_json)); });
}

int opcorr_cmd_toy_demo(const char* options_json) {
  return guarded([&] {
    ToyDemoOptions opts;
    if (options_json && *options_json) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(options_json);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("bad options JSON: ") + e.what());
      }
      opts.n = j.value("n", opts.n);
      opts.out_dir = j.value("out_dir", opts.out_dir);
      opts.seed = j.value("seed", opts.seed);
    }
    cmd_toy_demo(opts);
  });
}

}  // extern "C"
