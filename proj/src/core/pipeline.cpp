#include "core/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "core/jsonio.hpp"
#include "core/png.hpp"
#include "core/rng.hpp"
#include "core/toy_ops.hpp"

namespace fs = std::filesystem;

namespace opcorr {

const std::vector<std::string> kAllMethods = {
    "none",    "accurate",        "aem",
    "forward", "forward_recursive", "forward_adjoint", "forward_adjoint_recursive"};

bool method_is_learned(const std::string& m) {
  return m == "forward" || m == "forward_recursive" || m == "forward_adjoint" ||
         m == "forward_adjoint_recursive";
}

bool method_is_recursive(const std::string& m) {
  return m == "forward_recursive" || m == "forward_adjoint_recursive";
}

Method method_enum(const std::string& m) {
  if (m == "none" || m == "accurate") return Method::none;
  if (m == "aem") return Method::aem;
  if (m == "forward" || m == "forward_recursive") return Method::forward_only;
  if (m == "forward_adjoint" || m == "forward_adjoint_recursive")
    return Method::forward_adjoint;
  fail(ErrorKind::config, "unknown method: " + m);
}

ExperimentConfig default_config(const std::string& scale, PhantomKind kind) {
  ExperimentConfig cfg;
  cfg.scale = scale;
  cfg.dataset.kind = kind;
  cfg.methods = kAllMethods;
  cfg.pat = PatConfig{};
  cfg.train.arch = ArchConfig{3, 16, 5, true};
  cfg.train.batch = 16;
  cfg.train.mu = 0.2;
  cfg.train.delta = 0.01;
  cfg.solve.delta = 0.01;
  cfg.solve.mu = 0.2;
  cfg.solve.positivity = true;

  const bool vessels = kind == PhantomKind::vessels;
  if (scale == "full") {
    cfg.dataset.n_train = vessels ? 2760 : 4096;
    cfg.dataset.n_test = 64;
    cfg.solve.max_iters = vessels ? 250 : 4000;
    cfg.solve.trace_every = vessels ? 1 : 4;
    cfg.aem_iters = vessels ? 20000 : 4000;
    cfg.train.epochs = 40;
    cfg.train.n_max = 10;
    cfg.train.lr = 1e-4;
    cfg.eval_subset = 0;
    cfg.tune_subset = 8;
  } else if (scale == "ci") {
    cfg.dataset.n_train = vessels ? 256 : 512;
    cfg.dataset.n_test = 64;
    cfg.solve.max_iters = vessels ? 250 : 400;
    cfg.solve.trace_every = 1;
    cfg.aem_iters = vessels ? 2000 : 400;
    cfg.train.epochs = 36;
    cfg.train.n_max = 4;
    cfg.train.lr = 1e-3;
    cfg.train.batch = 8;
    cfg.train.arch = ArchConfig{4, 8, 5, true};
    cfg.eval_subset = 16;
    cfg.tune_subset = 4;
  } else if (scale == "smoke") {
    cfg.dataset.n_train = vessels ? 24 : 48;
    cfg.dataset.n_test = 8;
    cfg.solve.max_iters = 120;
    cfg.solve.trace_every = 4;
    cfg.aem_iters = 400;
    cfg.train.epochs = 6;
    cfg.train.n_max = 3;
    cfg.train.lr = 1e-3;
    cfg.train.batch = 8;
    cfg.train.arch = ArchConfig{3, 8, 5, true};
    cfg.eval_subset = 4;
    cfg.tune_subset = 2;
  } else {
    fail(ErrorKind::config, "unknown scale: " + scale);
  }
  cfg.train.lambda = 1e-3;
  cfg.train.mu = cfg.solve.mu;
  return cfg;
}

namespace {

void overlay_train(TrainConfig& t, const nlohmann::json& j) {
  t.lr = j.value("lr", t.lr);
  t.batch = j.value("batch", t.batch);
  t.epochs = j.value("epochs", t.epochs);
  t.n_max = j.value("n_max", t.n_max);
  t.mu = j.value("mu", t.mu);
  t.lambda = j.value("lambda", t.lambda);
  t.delta = j.value("delta", t.delta);
  t.positivity = j.value("positivity", t.positivity);
  t.seed = j.value("seed", t.seed);
  t.unroll_accurate = j.value("unroll_accurate", t.unroll_accurate);
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    t.arch.depth = a.value("depth", t.arch.depth);
    t.arch.base = a.value("base", t.arch.base);
    t.arch.kernel = a.value("kernel", t.arch.kernel);
    t.arch.residual = a.value("residual", t.arch.residual);
  }
}

void overlay_solve(SolveConfig& s, const nlohmann::json& j) {
  s.lambda = j.value("lambda", s.lambda);
  s.delta = j.value("delta", s.delta);
  s.mu = j.value("mu", s.mu);
  s.max_iters = j.value("max_iters", s.max_iters);
  s.positivity = j.value("positivity", s.positivity);
  s.trace_every = j.value("trace_every", s.trace_every);
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  std::string scale = j.value("scale", std::string("ci"));
  PhantomKind kind = PhantomKind::balls;
  if (j.contains("dataset") && j.at("dataset").contains("kind"))
    kind = phantom_kind_from_string(j.at("dataset").at("kind").get<std::string>());

  ExperimentConfig cfg = default_config(scale, kind);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.data_root = j.value("data_root", cfg.data_root);
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& m : cfg.methods)
    require(std::find(kAllMethods.begin(), kAllMethods.end(), m) != kAllMethods.end(),
            ErrorKind::config, "unknown method in config: " + m);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    cfg.dataset.n_train = d.value("n_train", cfg.dataset.n_train);
    cfg.dataset.n_test = d.value("n_test", cfg.dataset.n_test);
    cfg.dataset.n = d.value("n", cfg.dataset.n);
    cfg.dataset.noise_level = d.value("noise_level", cfg.dataset.noise_level);
    cfg.dataset.seed = d.value("seed", cfg.seed);
  } else {
    cfg.dataset.seed = cfg.seed;
  }
  if (j.contains("pat")) {
    cfg.pat = j.at("pat").get<PatConfig>();
  }
  cfg.pat.n = cfg.dataset.n;
  if (!j.contains("pat") || !j.at("pat").contains("n_t")) cfg.pat.n_t = cfg.pat.n;
  if (j.contains("train")) overlay_train(cfg.train, j.at("train"));
  if (!j.contains("train") || !j.at("train").contains("seed"))
    cfg.train.seed = derive_seed(cfg.seed, "train.seed", 0);
  if (j.contains("solve")) overlay_solve(cfg.solve, j.at("solve"));
  cfg.aem_iters = j.value("aem_iters", cfg.aem_iters);
  cfg.lambda_center = j.value("lambda_center", cfg.lambda_center);
  cfg.lambda_points = j.value("lambda_points", cfg.lambda_points);
  cfg.tune_subset = j.value("tune_subset", cfg.tune_subset);
  cfg.eval_subset = j.value("eval_subset", cfg.eval_subset);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.cross_checkpoint_dir = j.value("cross_checkpoint_dir", cfg.cross_checkpoint_dir);
  require(cfg.jobs >= 1, ErrorKind::config, "jobs must be >= 1");
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["scale"] = cfg.scale;
  j["out_dir"] = cfg.out_dir;
  j["data_root"] = cfg.data_root;
  j["dataset"] = cfg.dataset;
  j["pat"] = cfg.pat;
  j["methods"] = cfg.methods;
  j["train"] = {{"lr", cfg.train.lr},
                {"batch", cfg.train.batch},
                {"epochs", cfg.train.epochs},
                {"n_max", cfg.train.n_max},
                {"mu", cfg.train.mu},
                {"lambda", cfg.train.lambda},
                {"delta", cfg.train.delta},
                {"positivity", cfg.train.positivity},
                {"seed", cfg.train.seed},
                {"unroll_accurate", cfg.train.unroll_accurate},
                {"arch",
                 {{"depth", cfg.train.arch.depth},
                  {"base", cfg.train.arch.base},
                  {"kernel", cfg.train.arch.kernel},
                  {"residual", cfg.train.arch.residual}}}};
  j["solve"] = {{"lambda", cfg.solve.lambda},   {"delta", cfg.solve.delta},
                {"mu", cfg.solve.mu},           {"max_iters", cfg.solve.max_iters},
                {"positivity", cfg.solve.positivity},
                {"trace_every", cfg.solve.trace_every}};
  j["aem_iters"] = cfg.aem_iters;
  j["lambda_center"] = cfg.lambda_center;
  j["lambda_points"] = cfg.lambda_points;
  j["tune_subset"] = cfg.tune_subset;
  j["eval_subset"] = cfg.eval_subset;
  j["jobs"] = cfg.jobs;
  j["cross_checkpoint_dir"] = cfg.cross_checkpoint_dir;
  return j;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "bad config JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string resolve_data_root(const ExperimentConfig& cfg) {
  if (!cfg.data_root.empty()) return cfg.data_root;
  if (const char* env = std::getenv("OPCORR_DATA_ROOT"); env && *env) return env;
  return (fs::path(cfg.out_dir) / "data").string();
}

namespace {

void echo_resolved_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "resolved.json");
  out << config_to_json(cfg).dump(2) << "\n";
}

bool manifest_matches(const ExperimentConfig& cfg, const std::string& root) {
  fs::path p = fs::path(dataset_dir(root, cfg.dataset.kind)) / "manifest.json";
  if (!fs::exists(p)) return false;
  try {
    DatasetManifest man = read_manifest(root, cfg.dataset.kind);
    nlohmann::json a = man.spec, b = cfg.dataset, pa = man.pat, pb = cfg.pat;
    return a == b && pa == pb;
  } catch (const Error&) {
    return false;
  }
}

// deterministic parallel-for: worker w handles indices w, w+jobs, ...
void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (int w = 0; w < jobs; ++w)
    workers.emplace_back([&, w]() {
      try {
        for (int i = w; i < count; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<Grid> load_train_measurements(const ExperimentConfig& cfg,
                                          const std::string& root) {
  DatasetManifest man = read_manifest(root, cfg.dataset.kind);
  std::vector<Grid> ys;
  ys.reserve(man.train.size());
  for (const auto& ref : man.train)
    ys.push_back(load_sample(root, cfg.dataset.kind, true, ref.index).y);
  return ys;
}

}  // namespace

std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& method,
                            bool adjoint_net) {
  std::string name = method + "_" + to_string(cfg.dataset.kind) + "_" +
                     std::to_string(cfg.train.epochs) +
                     (adjoint_net ? ".G.ckpt" : ".F.ckpt");
  return (fs::path(cfg.out_dir) / "checkpoints" / name).string();
}

std::string stats_path(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_dir) / "checkpoints" /
          ("aem_" + to_string(cfg.dataset.kind) + ".stats"))
      .string();
}

std::string recon_dir(const ExperimentConfig& cfg, const std::string& method) {
  return (fs::path(cfg.out_dir) / "recon" / method).string();
}

void cmd_generate(const ExperimentConfig& cfg) {
  echo_resolved_config(cfg);
  std::string root = resolve_data_root(cfg);
  if (manifest_matches(cfg, root)) {
    std::cout << "dataset up to date: " << dataset_dir(root, cfg.dataset.kind) << "\n";
    return;
  }
  DatasetManifest man = build_dataset(cfg.dataset, cfg.pat, root);
  std::cout << "dataset written: " << dataset_dir(root, cfg.dataset.kind) << "/manifest.json ("
            << man.train.size() << " train, " << man.test.size() << " test)\n";
}

void cmd_train(const ExperimentConfig& cfg, const std::string& method) {
  echo_resolved_config(cfg);
  require(method != "none" && method != "accurate", ErrorKind::config,
          "method '" + method + "' has nothing to train");
  std::string root = resolve_data_root(cfg);
  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");

  if (method == "aem") {
    std::string path = stats_path(cfg);
    if (fs::exists(path)) {
      std::cout << "stats up to date: " << path << "\n";
      return;
    }
    DatasetManifest man = read_manifest(root, cfg.dataset.kind);
    PatOps ops = make_pat_ops(cfg.pat);
    std::vector<Grid> xs;
    xs.reserve(man.train.size());
    for (const auto& ref : man.train)
      xs.push_back(load_sample(root, cfg.dataset.kind, true, ref.index).x);
    Eigen::VectorXd eta;
    Eigen::MatrixXd gamma;
    estimate_error_stats(xs, ops.accurate, ops.approx, eta, gamma);
    ErrorStats stats = whiten(eta, gamma);
    stats.data_shape = ops.impl->data_shape();
    save_error_stats(path, stats);
    std::cout << "stats written: " << path << "\n";
    return;
  }

  require(method_is_learned(method), ErrorKind::config, "unknown method: " + method);
  std::string f_path = checkpoint_path(cfg, method, false);
  std::string g_path = checkpoint_path(cfg, method, true);
  bool needs_g = method_enum(method) == Method::forward_adjoint;
  if (fs::exists(f_path) && (!needs_g || fs::exists(g_path))) {
    std::cout << "checkpoint up to date: " << f_path << "\n";
    return;
  }

  std::vector<Grid> ys = load_train_measurements(cfg, root);
  PatOps ops = make_pat_ops(cfg.pat);
  TrainConfig tc = cfg.train;
  if (!method_is_recursive(method)) tc.n_max = 1;

  // recursive runs warm-start from the non-recursive sibling when available,
  // continuing with the iterate ramp over a shorter schedule
  std::shared_ptr<UNet> f_init, g_init;
  if (method_is_recursive(method)) {
    std::string sibling = method == "forward_recursive" ? "forward" : "forward_adjoint";
    std::string fs = checkpoint_path(cfg, sibling, false);
    std::string gs = checkpoint_path(cfg, sibling, true);
    bool warm = fs::exists(fs) && (method_enum(method) != Method::forward_adjoint ||
                                   fs::exists(gs));
    if (warm) {
      f_init = std::make_shared<UNet>(UNet::load(fs));
      if (method_enum(method) == Method::forward_adjoint)
        g_init = std::make_shared<UNet>(UNet::load(gs));
      tc.epochs = std::max(1, tc.epochs / 2);
      std::cout << "warm start from " << sibling << ", " << tc.epochs << " epochs\n";
    }
  }
  TrainResult result = train_correction(method_enum(method), ys, ops.approx,
                                        ops.accurate, tc, f_init, g_init);
  result.F->save(f_path);
  if (result.G) result.G->save(g_path);
  write_training_csv(
      (fs::path(cfg.out_dir) / "checkpoints" / (method + "_training.csv")).string(),
      result);
  std::cout << "checkpoint written: " << f_path << "\n";
}

CorrectedOperator load_corrected_operator(const ExperimentConfig& cfg,
                                          const std::string& method, const PatOps& ops) {
  if (method == "accurate") return make_uncorrected(ops.accurate);
  if (method == "none") return make_uncorrected(ops.approx);
  if (method == "aem") {
    std::string path = stats_path(cfg);
    require(fs::exists(path), ErrorKind::io,
            "missing AEM statistics; expected " + path + " (run train --method aem)");
    auto stats = std::make_shared<ErrorStats>(load_error_stats(path));
    return make_aem(ops.approx, stats);
  }
  require(method_is_learned(method), ErrorKind::config, "unknown method: " + method);
  std::string f_path = checkpoint_path(cfg, method, false);
  require(fs::exists(f_path), ErrorKind::io,
          "missing checkpoint; expected " + f_path + " (run train --method " + method + ")");
  auto fnet = std::make_shared<UNet>(UNet::load(f_path));
  if (method_enum(method) == Method::forward_adjoint) {
    std::string g_path = checkpoint_path(cfg, method, true);
    require(fs::exists(g_path), ErrorKind::io,
            "missing checkpoint; expected " + g_path + " (run train --method " + method + ")");
    auto gnet = std::make_shared<UNet>(UNet::load(g_path));
    return make_forward_adjoint(ops.approx, fnet, gnet);
  }
  return make_forward_only(ops.approx, fnet);
}

int solve_iters_for(const ExperimentConfig& cfg, const std::string& method) {
  if (method == "aem" && cfg.aem_iters > 0) return cfg.aem_iters;
  return cfg.solve.max_iters;
}

namespace {

struct TestSet {
  std::vector<Sample> samples;  // the evaluated subset
};

TestSet load_test_subset(const ExperimentConfig& cfg, const std::string& root) {
  DatasetManifest man = read_manifest(root, cfg.dataset.kind);
  int count = static_cast<int>(man.test.size());
  if (cfg.eval_subset > 0) count = std::min(count, cfg.eval_subset);
  TestSet ts;
  ts.samples.reserve(count);
  for (int i = 0; i < count; ++i)
    ts.samples.push_back(load_sample(root, cfg.dataset.kind, false, i));
  return ts;
}

double mean_final_rel_l2(const ExperimentConfig& cfg, const CorrectedOperator& co,
                         const std::vector<Sample>& subset, double lambda, int iters) {
  SolveConfig sc = cfg.solve;
  sc.lambda = lambda;
  sc.max_iters = iters;
  sc.trace_every = std::max(1, iters);  // endpoints only
  std::vector<double> errs(subset.size());
  parallel_for(static_cast<int>(subset.size()), cfg.jobs, [&](int i) {
    SolveInstruments instr;
    instr.ground_truth = &subset[i].x;
    SolveResult r = solve(co, subset[i].y, sc, instr);
    errs[i] = rel_l2(r.x, subset[i].x);
  });
  double s = 0.0;
  for (double e : errs) s += e;
  return s / errs.size();
}

}  // namespace

double tuned_lambda(const ExperimentConfig& cfg, const std::string& method,
                    const CorrectedOperator& co) {
  if (cfg.solve.lambda > 0.0) return cfg.solve.lambda;

  fs::path dir = recon_dir(cfg, method);
  fs::create_directories(dir);
  fs::path cache = dir / "lambda.json";
  if (fs::exists(cache)) {
    std::ifstream in(cache);
    nlohmann::json j;
    in >> j;
    return j.at("lambda").get<double>();
  }

  std::string root = resolve_data_root(cfg);
  DatasetManifest man = read_manifest(root, cfg.dataset.kind);
  int subset_n = std::min<int>(cfg.tune_subset, man.test.size());
  std::vector<Sample> subset;
  for (int i = 0; i < subset_n; ++i)
    subset.push_back(load_sample(root, cfg.dataset.kind, false, i));

  const int iters = solve_iters_for(cfg, method);

  // pilot: decade scan on a couple of samples at a quarter of the budget
  std::vector<Sample> pilot(subset.begin(), subset.begin() + std::min<size_t>(2, subset.size()));
  double best_center = cfg.lambda_center;
  double best_err = HUGE_VAL;
  for (int k = -3; k <= 2; ++k) {
    double lam = cfg.lambda_center * std::pow(10.0, k);
    double err = mean_final_rel_l2(cfg, co, pilot, lam, std::max(1, iters / 4));
    if (err < best_err) {
      best_err = err;
      best_center = lam;
    }
  }

  // grid: lambda_points values a factor sqrt(10) apart around the pilot centre
  nlohmann::json grid_log = nlohmann::json::array();
  double best_lambda = best_center;
  best_err = HUGE_VAL;
  for (int k = 0; k < cfg.lambda_points; ++k) {
    double expo = 0.5 * (k - (cfg.lambda_points - 1) / 2.0);
    double lam = best_center * std::pow(10.0, expo);
    double err = mean_final_rel_l2(cfg, co, subset, lam, iters);
    grid_log.push_back({{"lambda", lam}, {"mean_rel_l2", err}});
    if (err < best_err) {
      best_err = err;
      best_lambda = lam;
    }
  }

  nlohmann::json j;
  j["method"] = method;
  j["lambda"] = best_lambda;
  j["mean_rel_l2"] = best_err;
  j["grid"] = grid_log;
  std::ofstream out(cache);
  out << j.dump(2) << "\n";
  return best_lambda;
}

void cmd_reconstruct(const ExperimentConfig& cfg, const std::string& method,
                     const std::string& selector) {
  echo_resolved_config(cfg);
  std::string root = resolve_data_root(cfg);
  PatOps ops = make_pat_ops(cfg.pat);
  CorrectedOperator co = load_corrected_operator(cfg, method, ops);

  TestSet ts = load_test_subset(cfg, root);
  int first = 0, last = static_cast<int>(ts.samples.size()) - 1;
  if (selector != "all" && !selector.empty()) {
    size_t dots = selector.find("..");
    if (dots == std::string::npos) {
      first = last = std::stoi(selector);
    } else {
      first = std::stoi(selector.substr(0, dots));
      last = std::stoi(selector.substr(dots + 2));
    }
    require(first >= 0 && last < static_cast<int>(ts.samples.size()) && first <= last,
            ErrorKind::input, "sample selector out of range: " + selector);
  }

  double lambda = tuned_lambda(cfg, method, co);
  double a_norm = op_norm(ops.accurate, 50, derive_seed(cfg.seed, "op_norm", 0));

  fs::path dir = recon_dir(cfg, method);
  fs::create_directories(dir);
  SolveConfig sc = cfg.solve;
  sc.lambda = lambda;
  sc.max_iters = solve_iters_for(cfg, method);

  std::vector<int> todo;
  for (int i = first; i <= last; ++i) {
    fs::path recon = dir / ("recon_" + std::to_string(i) + ".bin");
    fs::path trace = dir / ("trace_" + std::to_string(i) + ".csv");
    if (!fs::exists(recon) || !fs::exists(trace)) todo.push_back(i);
  }

  parallel_for(static_cast<int>(todo.size()), cfg.jobs, [&](int k) {
    int i = todo[k];
    SolveInstruments instr;
    instr.accurate = &ops.accurate;
    instr.ground_truth = &ts.samples[i].x;
    instr.accurate_norm = a_norm;
    SolveResult r = solve(co, ts.samples[i].y, sc, instr);
    write_grid((dir / ("recon_" + std::to_string(i) + ".bin")).string(), r.x);
    write_trace_csv((dir / ("trace_" + std::to_string(i) + ".csv")).string(), r.trace);
    write_lemma_csv((dir / ("lemma_" + std::to_string(i) + ".csv")).string(), r.trace);
    if (co.method == Method::none && r.descent_violations > 0)
      fail(ErrorKind::numeric,
           "descent violations in method '" + method + "' on sample " + std::to_string(i) +
               " (step size / operator norm interaction)");
  });
  std::cout << "reconstructions in " << dir.string() << " (lambda = " << lambda << ", "
            << todo.size() << " new)\n";
}

namespace {

struct MethodTraces {
  std::vector<std::vector<TraceRow>> per_sample;
  std::vector<std::vector<TraceRow>> lemma_per_sample;
};

MethodTraces read_method_traces(const ExperimentConfig& cfg, const std::string& method,
                                int count) {
  MethodTraces mt;
  fs::path dir = recon_dir(cfg, method);
  for (int i = 0; i < count; ++i) {
    fs::path trace = dir / ("trace_" + std::to_string(i) + ".csv");
    require(fs::exists(trace), ErrorKind::io,
            "missing trace for method " + method + ": " + trace.string() +
                " (run reconstruct --method " + method + ")");
    mt.per_sample.push_back(read_trace_csv(trace.string()));
    fs::path lemma = dir / ("lemma_" + std::to_string(i) + ".csv");
    if (fs::exists(lemma)) mt.lemma_per_sample.push_back(read_lemma_csv(lemma.string()));
  }
  return mt;
}

// mean over samples of a trace field, per recorded iteration
std::vector<double> mean_curve(const MethodTraces& mt,
                               double TraceRow::*field) {
  size_t rows = mt.per_sample.front().size();
  std::vector<double> out(rows, 0.0);
  std::vector<int> counts(rows, 0);
  for (const auto& tr : mt.per_sample) {
    for (size_t k = 0; k < rows && k < tr.size(); ++k) {
      double v = tr[k].*field;
      if (std::isfinite(v)) {
        out[k] += v;
        ++counts[k];
      }
    }
  }
  for (size_t k = 0; k < rows; ++k) out[k] = counts[k] ? out[k] / counts[k] : NAN;
  return out;
}

void write_curves_csv(const std::string& path, const std::vector<int>& iters,
                      const std::vector<std::string>& methods,
                      const std::vector<std::vector<double>>& curves) {
  std::ofstream out(path);
  out << "iter";
  for (const auto& m : methods) out << "," << m;
  out << "\n";
  size_t rows = iters.size();
  char buf[64];
  for (size_t r = 0; r < rows; ++r) {
    out << iters[r];
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof(buf), ",%.9g", r < c.size() ? c[r] : NAN);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace

void cmd_evaluate(const ExperimentConfig& cfg) {
  echo_resolved_config(cfg);
  std::string root = resolve_data_root(cfg);
  TestSet ts = load_test_subset(cfg, root);
  const int count = static_cast<int>(ts.samples.size());

  fs::path eval_dir = fs::path(cfg.out_dir) / "eval";
  fs::create_directories(eval_dir / "pngs");

  std::map<std::string, MethodTraces> traces;
  std::vector<std::string> missing;
  for (const auto& m : cfg.methods) {
    try {
      traces[m] = read_method_traces(cfg, m, count);
    } catch (const Error& e) {
      missing.push_back(std::string(e.what()));
    }
  }
  if (!missing.empty()) {
    std::string all;
    for (const auto& m : missing) all += "\n  " + m;
    fail(ErrorKind::io, "evaluate: incomplete trace sets:" + all);
  }

  // figure data: one mean curve per method and quantity
  std::vector<std::string> methods;
  for (const auto& [m, _] : traces) methods.push_back(m);
  auto curves_for = [&](double TraceRow::*field) {
    std::vector<std::vector<double>> curves;
    for (const auto& m : methods) curves.push_back(mean_curve(traces[m], field));
    return curves;
  };
  std::vector<int> iters;
  {
    const auto& first = traces.begin()->second.per_sample.front();
    for (const auto& row : first) iters.push_back(row.iter);
  }
  write_curves_csv((eval_dir / "fig_alignment.csv").string(), iters, methods,
                   curves_for(&TraceRow::alignment));
  write_curves_csv((eval_dir / "fig_rel_l2.csv").string(), iters, methods,
                   curves_for(&TraceRow::rel_l2));
  write_curves_csv((eval_dir / "fig_data_term.csv").string(), iters, methods,
                   curves_for(&TraceRow::data_term));
  write_curves_csv((eval_dir / "fig_fwd_err.csv").string(), iters, methods,
                   curves_for(&TraceRow::fwd_err));
  write_curves_csv((eval_dir / "fig_adj_err.csv").string(), iters, methods,
                   curves_for(&TraceRow::adj_err));

  // embedded property checks
  int lemma_rows = 0;
  for (const auto& [m, mt] : traces) {
    for (const auto& tr : mt.per_sample)
      for (const auto& row : tr)
        require(!std::isfinite(row.alignment) ||
                    (row.alignment >= -1.0 - 1e-9 && row.alignment <= 1.0 + 1e-9),
                ErrorKind::numeric, "alignment outside [-1,1] for method " + m);
    for (const auto& tr : mt.lemma_per_sample) {
      double delta_hat = HUGE_VAL;
      for (const auto& row : tr)
        if (std::isfinite(row.grad_norm)) delta_hat = std::min(delta_hat, row.grad_norm);
      for (const auto& row : tr) {
        if (!std::isfinite(row.lemma_lhs) || !std::isfinite(row.lemma_rhs)) continue;
        ++lemma_rows;
        require(row.lemma_lhs >= row.lemma_rhs - 1e-9, ErrorKind::numeric,
                "alignment lower bound violated for method " + m + " at iterate " +
                    std::to_string(row.iter));
        // well-fit iterates must keep a positive full-gradient alignment
        if (std::isfinite(delta_hat) && row.fwd_gap < delta_hat / 4.0 &&
            row.adj_gap < delta_hat / 4.0)
          require(row.lemma_lhs > 0.0, ErrorKind::numeric,
                  "well-fit iterate with non-positive alignment for method " + m);
      }
    }
  }

  // summary + table
  nlohmann::json summary;
  nlohmann::json table = nlohmann::json::array();
  std::ofstream table_csv(eval_dir / "table1.csv");
  table_csv << "method,training_data,lambda,mean_rel_l2\n";
  for (const auto& m : methods) {
    std::vector<double> finals;
    for (const auto& tr : traces[m].per_sample) finals.push_back(tr.back().rel_l2);
    double mean = 0.0;
    for (double f : finals) mean += f;
    mean /= finals.size();
    double lambda = NAN;
    fs::path lam = fs::path(recon_dir(cfg, m)) / "lambda.json";
    if (fs::exists(lam)) {
      std::ifstream in(lam);
      nlohmann::json j;
      in >> j;
      lambda = j.at("lambda").get<double>();
    } else if (cfg.solve.lambda > 0.0) {
      lambda = cfg.solve.lambda;
    }
    summary[m] = {{"mean_rel_l2", mean}, {"lambda", lambda}, {"samples", count}};
    table.push_back({{"method", m}, {"training", to_string(cfg.dataset.kind)},
                     {"lambda", lambda}, {"mean_rel_l2", mean}});
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g\n", m.c_str(),
                  to_string(cfg.dataset.kind).c_str(), lambda, mean);
    table_csv << buf;
  }

  // cross-dataset transfer: nets trained elsewhere, applied to this test set
  // with their old lambda and with a re-tuned one
  if (!cfg.cross_checkpoint_dir.empty()) {
    PatOps ops = make_pat_ops(cfg.pat);
    ExperimentConfig donor = cfg;
    donor.out_dir = cfg.cross_checkpoint_dir;
    {
      std::ifstream in(fs::path(cfg.cross_checkpoint_dir) / "resolved.json");
      require(in.good(), ErrorKind::io,
              "cross evaluation: missing resolved.json in " + cfg.cross_checkpoint_dir);
      nlohmann::json j;
      in >> j;
      donor = config_from_json(j);
    }
    const std::string method = "forward_adjoint_recursive";
    CorrectedOperator co = load_corrected_operator(donor, method, ops);

    double old_lambda = cfg.solve.lambda;
    fs::path donor_lam = fs::path(recon_dir(donor, method)) / "lambda.json";
    if (fs::exists(donor_lam)) {
      std::ifstream in(donor_lam);
      nlohmann::json j;
      in >> j;
      old_lambda = j.at("lambda").get<double>();
    }
    require(old_lambda > 0.0, ErrorKind::config,
            "cross evaluation: donor lambda unavailable");

    ExperimentConfig cross_cfg = cfg;
    cross_cfg.solve.lambda = 0.0;  // force a fresh grid search
    double new_lambda = tuned_lambda(cross_cfg, "cross_" + method, co);

    int iters = cfg.solve.max_iters;
    double err_old = mean_final_rel_l2(cfg, co, ts.samples, old_lambda, iters);
    double err_new = mean_final_rel_l2(cfg, co, ts.samples, new_lambda, iters);
    summary["cross_forward_adjoint_recursive"] = {
        {"trained_on", to_string(donor.dataset.kind)},
        {"old_lambda", old_lambda},
        {"old_rel_l2", err_old},
        {"new_lambda", new_lambda},
        {"new_rel_l2", err_new}};
    char buf[200];
    std::snprintf(buf, sizeof(buf), "forward_adjoint_recursive_old_lambda,%s,%.9g,%.9g\n",
                  to_string(donor.dataset.kind).c_str(), old_lambda, err_old);
    table_csv << buf;
    std::snprintf(buf, sizeof(buf), "forward_adjoint_recursive_new_lambda,%s,%.9g,%.9g\n",
                  to_string(donor.dataset.kind).c_str(), new_lambda, err_new);
    table_csv << buf;
  }

  summary["lemma_rows_checked"] = lemma_rows;
  std::ofstream sum_out(eval_dir / "summary.json");
  sum_out << summary.dump(2) << "\n";

  // raster panels of the first reconstructions
  for (int i = 0; i < std::min(2, count); ++i) {
    auto save_png = [&](const std::string& name, const Grid& g) {
      auto [lo, hi] = write_png_gray((eval_dir / "pngs" / "tmp.png").string(), g);
      char tag[96];
      std::snprintf(tag, sizeof(tag), "%s_%02d_min%.3f_max%.3f.png", name.c_str(), i, lo, hi);
      fs::rename(eval_dir / "pngs" / "tmp.png", eval_dir / "pngs" / tag);
    };
    save_png("truth", ts.samples[i].x);
    for (const auto& m : methods) {
      fs::path recon = fs::path(recon_dir(cfg, m)) / ("recon_" + std::to_string(i) + ".bin");
      if (fs::exists(recon)) save_png(m, read_grid(recon.string()));
    }
  }

  std::cout << "evaluation written to " << eval_dir.string() << " (" << lemma_rows
            << " lemma rows checked)\n";
}

void cmd_toy_demo(const ToyDemoOptions& opts) {
  fs::create_directories(opts.out_dir);
  const int n = opts.n;
  require(n >= 8 && n % 2 == 0, ErrorKind::config, "toy demo: n must be even and >= 8");
  const int N = n * n;
  ToyOps toy = make_toy_ops(N);

  // column-major vectorisation: odd vector indices are odd image rows, so the
  // approximate normal operator zeroes odd rows
  Grid x2d = make_ball(n, derive_seed(opts.seed, "toy.phantom", 0));
  Grid xv(1, N);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < n; ++r) xv(0, c * n + r) = x2d(r, c);

  auto to_image = [&](const Grid& v, int rows) {
    Grid img(rows, n);
    for (int c = 0; c < n; ++c)
      for (int r = 0; r < rows; ++r) img(r, c) = v(0, c * rows + r);
    return img;
  };

  Grid ax = toy.A.apply(xv);
  Grid tx = toy.Atilde.apply(xv);
  auto save_panel = [&](const std::string& name, const Grid& img) {
    fs::path tmp = fs::path(opts.out_dir) / (name + ".png");
    auto [lo, hi] = write_png_gray(tmp.string(), img);
    char tag[128];
    std::snprintf(tag, sizeof(tag), "%s_min%.3f_max%.3f.png", name.c_str(), lo, hi);
    fs::rename(tmp, fs::path(opts.out_dir) / tag);
  };
  save_panel("x", x2d);
  save_panel("Ax", to_image(ax, n / 2));
  save_panel("AstarAx", to_image(toy.A.adjoint(ax), n));
  save_panel("Atilde_x", to_image(tx, n / 2));
  Grid tstar_tx = toy.Atilde.adjoint(tx);
  save_panel("AtildestarAtildex", to_image(tstar_tx, n));
  save_panel("AtildestarAx", to_image(toy.Atilde.adjoint(ax), n));

  bool ok = true;
  auto report = [&](const std::string& name, bool pass) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << "\n";
    ok = ok && pass;
  };

  // range structure: odd components of Atilde* Atilde x vanish exactly
  {
    double worst = 0.0;
    for (int j = 1; j < N; j += 2) worst = std::max(worst, std::fabs(tstar_tx(0, j)));
    report("approximate normal operator zeroes odd components", worst == 0.0);
  }

  // range confinement of forward-only iterates under a random correction
  {
    ArchConfig arch{1, 4, 5, true};
    UNet fnet(arch, derive_seed(opts.seed, "toy.net", 0));
    {
      // random parameters: the confinement must hold for any correction
      Rng rng(derive_seed(opts.seed, "toy.params", 1));
      auto flat = fnet.flat_params();
      for (double& v : flat) v = 0.3 * rng.normal();
      fnet.set_flat_params(flat);
    }
    Grid y = toy.A.apply(xv);
    Grid x = 4.0 * toy.Atilde.adjoint(y);
    double worst = 0.0;
    const double mu = 0.05;
    for (int k = 0; k < 1000; ++k) {
      Grid u = toy.Atilde.apply(x);
      Grid r = fnet.apply(u) - y;
      Grid g = toy.Atilde.adjoint(fnet.input_vjp(u, r));
      axpy(x, -mu, g);
      double kernel = 0.0;
      for (int j = 1; j < N; j += 2) kernel = std::max(kernel, std::fabs(x(0, j)));
      worst = std::max(worst, kernel / std::max(1e-300, norm2(x)));
    }
    report("forward-only iterates stay in range(Atilde*): kernel component <= 1e-8 ||x||",
           worst <= 1e-8);
  }

  // minimiser proximity under small operator perturbations
  {
    ToyOps small = make_toy_ops(16);
    Grid y(1, 8);
    Rng rng(derive_seed(opts.seed, "toy.prox", 0));
    for (int i = 0; i < 8; ++i) y(0, i) = rng.normal();
    double prev = -1.0;
    bool mono = true, bounded = true;
    for (double t : {1e-3, 1e-2, 1e-1}) {
      LinearOp pert = small.A;
      Eigen::MatrixXd P(8, 16);
      Rng prng(derive_seed(opts.seed, "toy.pert", 42));
      for (int i = 0; i < P.size(); ++i) P.data()[i] = prng.normal();
      P *= t / P.norm();
      auto base_apply = small.A.apply;
      auto base_adj = small.A.adjoint;
      pert.apply = [base_apply, P](const Grid& v) {
        Grid out = base_apply(v);
        Eigen::Map<const Eigen::VectorXd> vv(v.data(), v.size());
        Eigen::VectorXd extra = P * vv;
        for (int i = 0; i < extra.size(); ++i) out(0, i) += extra(i);
        return out;
      };
      pert.adjoint = [base_adj, P](const Grid& w) {
        Grid out = base_adj(w);
        Eigen::Map<const Eigen::VectorXd> wv(w.data(), w.size());
        Eigen::VectorXd extra = P.transpose() * wv;
        for (int i = 0; i < extra.size(); ++i) out(0, i) += extra(i);
        return out;
      };
      ProximityReport rep = proximity_check_toy(small.A, pert, y, 0.1);
      bounded = bounded && rep.ok;
      mono = mono && rep.distance >= prev - 1e-12;
      prev = rep.distance;
    }
    report("minimiser distance grows with the perturbation", mono);
    report("minimiser distance within the proximity bound", bounded);
  }

  nlohmann::json rep;
  rep["ok"] = ok;
  std::ofstream out(fs::path(opts.out_dir) / "report.json");
  out << rep.dump(2) << "\n";
  require(ok, ErrorKind::numeric, "toy demo checks failed");
}

}  // namespace opcorr
