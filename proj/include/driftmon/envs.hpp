#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftmon/core.hpp"

namespace driftmon {

enum class EnvKind { stable_oscillator, fragile_pole, noisy_walker };

/// Termination predicate parameters (FragilePole only).
struct Fragility {
  int angle_dim = 2;
  double angle_limit = 0.8;  // radians
};

/// Quasi-periodic contact-like impacts: every `interval` steps (uniform in
/// [min,max]) the velocity dimensions receive stereotyped fixed-magnitude
/// kicks of random sign for `duration` consecutive steps. Impact strength
/// grows with the mean velocity displacement, the way footfall intensity
/// grows when a locomotor is pushed off its gait. magnitude = 0 disables.
struct BurstNoise {
  double min_interval = 0.0;
  double max_interval = 0.0;
  int duration = 0;
  double magnitude = 0.0;    // kick size in units of the base noise scale
  double state_gain = 0.0;   // extra size per unit |velocity projection|

  bool enabled() const { return magnitude > 0.0 && max_interval > 0.0; }
};

/// Slip regime: when the mean velocity displacement leaves the nominal gait
/// envelope the velocity-dimension noise grows sharply (loss of traction).
/// gain = 0 disables.
struct SlipNoise {
  double threshold = 0.0;  // |velocity projection| where slipping starts
  double gain = 0.0;       // noise multiplier per unit of excess projection

  bool enabled() const { return gain > 0.0; }
};

/// FragilePole dynamics constants (discretized inverted pendulum on a cart).
struct PoleParams {
  double dt = 0.05;
  double instability = 6.0;  // unstable restoring gain on sin(theta)
  double action_gain = 4.0;  // torque per unit action
  double cart_gain = 0.2;    // cart acceleration per unit action
  double cart_spring = 0.2;  // track centering on the cart position
  double cart_friction = 0.3;
};

struct EnvSpec {
  EnvKind kind = EnvKind::stable_oscillator;
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<int> velocity_dims;
  double noise_scale = 0.0;
  std::optional<Fragility> fragility;
  BurstNoise bursts;
  SlipNoise slip;
  PoleParams pole;
  double init_scale = 0.0;  // initial-state draw scale (per dimension)

  Mat A;  // linear dynamics (oscillator / walker)
  Mat B;
};

/// Fixed linear feedback u = clamp(-K s̃, ±u_max) plus exploration noise.
/// The clamp models actuator limits; it is inactive over the nominal
/// operating range.
struct Policy {
  Mat gain;                     // act_dim x obs_dim
  double exploration_noise = 0.05;
  double u_max = 1e9;

  Vec act(const Vec& obs, RngStream& rng) const;
};

// ── Environment factories (fixed analogs) ─────────────────────────────────

/// HalfCheetah analog: 8-dim linear oscillator bank (4 positions + 4
/// velocities), spectral radius 0.95, sigma = 0.05, contact-like bursts.
EnvSpec make_stable_oscillator();

/// Hopper analog: 4-dim cart-pole with an unstable sin(theta) term;
/// terminates when |theta| > 0.8 rad.
EnvSpec make_fragile_pole();

/// Walker2d analog: oscillator dynamics with state-dependent noise
/// sigma(x) = 0.2 * (1 + 0.5 * tanh(x0)).
EnvSpec make_noisy_walker();

EnvSpec make_env(const std::string& name);
Policy default_policy(const EnvSpec& spec);

/// Per-dimension process-noise scale at the given state (no burst term).
double process_noise_scale(const EnvSpec& spec, const Vec& state);

/// Mean displacement along the velocity dimensions, (1/sqrt(k)) sum x_v;
/// bursts and the slip regime both key off this.
double velocity_projection(const EnvSpec& spec, const Vec& state);

/// Velocity-dimension noise multiplier from the slip regime (1 when inactive).
double slip_multiplier(const EnvSpec& spec, const Vec& state);

/// One dynamics step with Gaussian process noise (burst-free kernel).
/// Returns the next state and whether the fragility predicate fired.
std::pair<Vec, bool> env_step(const EnvSpec& spec, const Vec& state,
                              const Vec& action, RngStream& rng);

/// Stateful stepper: owns the episode clock and the burst schedule, which are
/// sampled from a dedicated substream so trajectories stay comparable across
/// drift intensities.
class EnvStepper {
 public:
  EnvStepper(const EnvSpec& spec, RngStream episode_rng);

  const Vec& state() const { return state_; }
  std::int64_t step_index() const { return t_; }

  /// Advances one step; returns (next_state, terminated).
  std::pair<Vec, bool> step(const Vec& action);

 private:
  double burst_multiplier();

  const EnvSpec& spec_;
  RngStream noise_rng_;
  RngStream burst_rng_;
  Vec state_;
  std::int64_t t_ = 0;
  std::int64_t next_burst_ = -1;
  int burst_left_ = 0;
};

/// Full-length rollout under the scripted policy; truncates at termination.
Trajectory rollout(const EnvSpec& spec, const Policy& policy,
                   std::int64_t horizon, RngStream rng);

// ── Trajectory ingestion ──────────────────────────────────────────────────

enum class IngestFormat { ndjson, csv };

struct IngestReport {
  std::vector<Trajectory> trajectories;
  std::vector<std::string> warnings;
};

/// Reads externally recorded trajectories. NDJSON rows look like
///   {"s": [...], "a": [...], "s2": [...], "done": false, "episode": 0}
/// CSV uses headered columns s0..sN, a0..aM, s2_0..s2_N, done, episode.
/// Malformed rows raise std::runtime_error naming the row.
IngestReport ingest_trajectories(const std::string& path, IngestFormat format);

}  // namespace driftmon
