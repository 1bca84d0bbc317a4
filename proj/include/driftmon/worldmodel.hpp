#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftmon/core.hpp"

namespace driftmon {

enum class Capacity { small, medium, large };

inline int hidden_width(Capacity c) {
  switch (c) {
    case Capacity::small: return 128;
    case Capacity::medium: return 512;
    case Capacity::large: return 1024;
  }
  return 512;
}

inline std::string to_string(Capacity c) {
  switch (c) {
    case Capacity::small: return "small";
    case Capacity::medium: return "medium";
    case Capacity::large: return "large";
  }
  return "medium";
}

inline Capacity capacity_from_string(const std::string& s) {
  if (s == "small") return Capacity::small;
  if (s == "medium") return Capacity::medium;
  if (s == "large") return Capacity::large;
  throw std::invalid_argument("unknown capacity: " + s);
}

/// Forward dynamics model f(s, a) -> ŝ': a 3-layer tanh MLP over
/// standardized inputs. Weights are column-major Eigen matrices; inputs are
/// stacked [s; a].
struct WorldModel {
  int obs_dim = 0;
  int act_dim = 0;
  int hidden = 0;

  Mat w1, w2, w3;  // (hidden x in), (hidden x hidden), (obs x hidden)
  Vec b1, b2, b3;

  Vec in_mean, in_std;  // per-dimension input normalization

  int input_dim() const { return obs_dim + act_dim; }
};

/// Deterministic forward pass for a single (s, a).
Vec predict(const WorldModel& model, const Vec& state, const Vec& action);

/// Batched forward pass; `inputs` is (obs_dim+act_dim) x N, returns obs_dim x N.
Mat predict_batch(const WorldModel& model, const Mat& inputs);

/// e = ||f(s, a) - s_next||^2 (squared Euclidean norm of the residual).
double prediction_error(const WorldModel& model, const Vec& state,
                        const Vec& action, const Vec& next_state);

// ── Baseline statistics ───────────────────────────────────────────────────

/// Pre-drift noise-floor summary. Std and variance use the population
/// (divide-by-n) convention; percentiles interpolate linearly between order
/// statistics.
struct BaselineStats {
  double mean = 0.0;
  double std = 0.0;
  double variance = 0.0;
  std::map<int, double> percentiles;  // p -> value, for p in {90, 95, 99}
  std::size_t count = 0;
};

/// Summary of a PE series; requires at least 30 samples.
BaselineStats baseline_stats(const std::vector<double>& pe);

// ── Training ──────────────────────────────────────────────────────────────

struct TrainSettings {
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 50;
  double holdout_fraction = 0.1;  // held-out split, by episode
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // per-epoch multiplicative decay
};

struct TrainResult {
  WorldModel model;
  double holdout_mse = 0.0;       // per-element mean squared error
  double final_train_mse = 0.0;
  double initial_train_mse = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Train by minibatch Adam on per-element MSE. Deterministic given `rng`
/// (weight init and shuffling both come from it). Requires >= 1000
/// transitions. Throws TrainingError if the loss goes non-finite.
TrainResult train_world_model(const std::vector<Trajectory>& data,
                              Capacity capacity, const TrainSettings& settings,
                              RngStream rng);

/// Loss and gradients of per-element MSE on one batch; the gradient layout
/// mirrors WorldModel. Exposed so finite-difference checks can probe the
/// backward pass directly.
struct Gradients {
  Mat w1, w2, w3;
  Vec b1, b2, b3;
};
double mlp_loss_and_gradients(const WorldModel& model, const Mat& inputs,
                              const Mat& targets, Gradients* grads);

// ── Persistence ───────────────────────────────────────────────────────────

/// Flat little-endian binary weight file with a version header; round-trips
/// bit-exactly.
void save_world_model(const WorldModel& model, const std::string& path);
WorldModel load_world_model(const std::string& path);

}  // namespace driftmon
