#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftmon/experiment.hpp"
#include "driftmon/worldmodel.hpp"

namespace driftmon {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration, read from a sectioned key/value file. Unknown
/// sections or keys are rejected; `driftmon --print-defaults` emits the
/// canonical form.
struct ExperimentConfig {
  std::uint64_t master_seed = 42;
  std::string output_dir = "out";
  int jobs = 1;

  // [envs]
  std::vector<std::string> envs{"stable_oscillator", "fragile_pole",
                                "noisy_walker"};

  // [model]
  std::vector<std::string> capacities{"medium"};
  int train_rollouts = 40;
  int train_rollout_steps = 300;
  int epochs = 50;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.1;
  double weight_decay = 0.0;

  // [sweep]
  std::vector<std::string> detectors{"di_z2.0_w3",  "di_z2.5_w5",
                                     "di_z3.0_w5",  "di_z3.5_w10",
                                     "di_z4.0_w20", "var_k2",
                                     "pct_p99"};
  std::vector<std::string> profiles{"linear"};
  std::vector<double> epsilons;  // empty = default 16-point grid
  int seeds = 10;
  int episodes_per_seed = 8;
  int horizon = 1000;
  int onset = 300;
  std::string trace = "first";  // none | first | all
  int trace_downsample = 1;

  // [analysis]
  double eps_baseline = 1e-4;
  double eps_ref = 3e-3;
  std::string reference_detector = "di_z3.0_w5";

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);

  /// Canonical serialized form; parsing it reproduces this config.
  std::string to_text() const;

  /// Checks every field against module preconditions (detector ids parse,
  /// envs exist, grid values positive, horizon > onset, ...).
  void validate() const;

  SweepPlan to_plan() const;
  TrainSettings to_train_settings() const;
  std::vector<double> epsilon_grid() const;
};

}  // namespace driftmon
