#pragma once

#include <json.hpp>

#include "core/phantoms.hpp"
#include "core/train.hpp"

namespace opcorr {

// Full experiment description. Scale presets ("full", "ci", "smoke") fill the
// budget-dependent defaults; explicit JSON fields and CLI flags override
// individual values afterwards.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string scale = "ci";
  std::string out_dir = "runs/exp";
  std::string data_root;  // empty: $OPCORR_DATA_ROOT, else <out_dir>/data
  DatasetSpec dataset;
  PatConfig pat;
  std::vector<std::string> methods;
  TrainConfig train;
  SolveConfig solve;
  int aem_iters = 0;  // iteration budget for AEM reconstructions
  double lambda_center = 1e-2;
  int lambda_points = 7;
  int tune_subset = 4;  // test samples used by the lambda grid search
  int eval_subset = 0;  // test samples reconstructed; 0 = all
  int jobs = 1;
  std::string cross_checkpoint_dir;  // out_dir of a run whose nets to transfer
};

extern const std::vector<std::string> kAllMethods;

ExperimentConfig default_config(const std::string& scale, PhantomKind kind);
// preset from j["scale"]/j["dataset"]["kind"], then overlay of present fields
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

std::string resolve_data_root(const ExperimentConfig& cfg);

// CLI-facing commands. All are idempotent given identical config and seed:
// existing up-to-date artifacts are reused.
void cmd_generate(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, const std::string& method);
void cmd_reconstruct(const ExperimentConfig& cfg, const std::string& method,
                     const std::string& selector = "all");
void cmd_evaluate(const ExperimentConfig& cfg);

struct ToyDemoOptions {
  int n = 64;  // phantom side; toy operators act on the n*n vectorisation
  std::string out_dir = "toy_demo";
  uint64_t seed = 1;
};
// renders the mapping panels, runs the range-confinement and
// minimiser-proximity checks, throws on failure
void cmd_toy_demo(const ToyDemoOptions& opts);

// artifact paths
std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& method,
                            bool adjoint_net);
std::string stats_path(const ExperimentConfig& cfg);
std::string recon_dir(const ExperimentConfig& cfg, const std::string& method);

// method-string helpers
bool method_is_learned(const std::string& method);
bool method_is_recursive(const std::string& method);
Method method_enum(const std::string& method);

// corrected operator for a trained method (loads checkpoints/statistics)
CorrectedOperator load_corrected_operator(const ExperimentConfig& cfg,
                                          const std::string& method,
                                          const PatOps& ops);

// tuned regularisation weight for a method (grid search, cached on disk)
double tuned_lambda(const ExperimentConfig& cfg, const std::string& method,
                    const CorrectedOperator& co);

int solve_iters_for(const ExperimentConfig& cfg, const std::string& method);

}  // namespace opcorr
