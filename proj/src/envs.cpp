#include "driftmon/envs.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace driftmon {

Vec Policy::act(const Vec& obs, RngStream& rng) const {
  Vec u = -(gain * obs);
  for (Eigen::Index i = 0; i < u.size(); ++i)
    u[i] = std::clamp(u[i], -u_max, u_max);
  if (exploration_noise > 0.0)
    u += exploration_noise * rng.gaussian_vector(u.size());
  return u;
}

namespace {

/// Oscillator-bank dynamics matrix: per pair i, (p_i, v_i) rotates by
/// theta_i and contracts by rho, so every eigenvalue has magnitude rho.
Mat oscillator_dynamics(double rho, const std::vector<double>& thetas) {
  const int n = static_cast<int>(thetas.size());
  Mat a = Mat::Zero(2 * n, 2 * n);
  for (int i = 0; i < n; ++i) {
    const double c = rho * std::cos(thetas[i]);
    const double s = rho * std::sin(thetas[i]);
    a(i, i) = c;
    a(i, n + i) = -s;
    a(n + i, i) = s;
    a(n + i, n + i) = c;
  }
  return a;
}

EnvSpec oscillator_base() {
  EnvSpec spec;
  spec.kind = EnvKind::stable_oscillator;
  spec.name = "stable_oscillator";
  spec.obs_dim = 8;
  spec.act_dim = 4;
  spec.velocity_dims = {4, 5, 6, 7};
  spec.noise_scale = 0.05;
  spec.init_scale = 0.6;
  spec.A = oscillator_dynamics(0.95, {0.02, 0.03, 0.04, 0.05});
  spec.B = Mat::Zero(8, 4);
  for (int j = 0; j < 4; ++j) spec.B(4 + j, j) = 0.1;
  spec.bursts.min_interval = 90;
  spec.bursts.max_interval = 150;
  spec.bursts.duration = 5;
  spec.bursts.magnitude = 2.4;
  spec.bursts.state_gain = 1.0;
  spec.slip.threshold = 0.85;
  spec.slip.gain = 6.0;
  return spec;
}

}  // namespace

EnvSpec make_stable_oscillator() { return oscillator_base(); }

EnvSpec make_noisy_walker() {
  EnvSpec spec = oscillator_base();
  spec.kind = EnvKind::noisy_walker;
  spec.name = "noisy_walker";
  spec.noise_scale = 0.2;
  spec.slip = SlipNoise{};  // the tanh noise field is this env's mechanism
  return spec;
}

EnvSpec make_fragile_pole() {
  EnvSpec spec;
  spec.kind = EnvKind::fragile_pole;
  spec.name = "fragile_pole";
  spec.obs_dim = 4;  // (cart pos, cart vel, angle, angular vel)
  spec.act_dim = 1;
  spec.velocity_dims = {3};
  spec.noise_scale = 0.059;
  spec.init_scale = 0.1;
  spec.fragility = Fragility{2, 0.8};
  return spec;
}

EnvSpec make_env(const std::string& name) {
  if (name == "stable_oscillator") return make_stable_oscillator();
  if (name == "fragile_pole") return make_fragile_pole();
  if (name == "noisy_walker") return make_noisy_walker();
  throw std::invalid_argument("unknown environment: " + name);
}

Policy default_policy(const EnvSpec& spec) {
  Policy policy;
  policy.exploration_noise = 0.05;
  if (spec.kind == EnvKind::fragile_pole) {
    // PD feedback on the pole; the cart pair is passive and unactuated
    // (driving it through the shared torque destabilizes the closed loop).
    policy.gain = Mat::Zero(1, 4);
    policy.gain(0, 2) = 1.80;
    policy.gain(0, 3) = 0.40;
    policy.u_max = 5.0;
  } else {
    policy.gain = Mat::Zero(4, 8);
    for (int j = 0; j < 4; ++j) {
      policy.gain(j, j) = 0.05;      // position feedback
      policy.gain(j, 4 + j) = 0.30;  // velocity damping
    }
    policy.u_max = 0.45;
  }
  return policy;
}

double process_noise_scale(const EnvSpec& spec, const Vec& state) {
  if (spec.kind == EnvKind::noisy_walker)
    return spec.noise_scale * (1.0 + 0.5 * std::tanh(state[0]));
  return spec.noise_scale;
}

double velocity_projection(const EnvSpec& spec, const Vec& state) {
  if (spec.velocity_dims.empty()) return 0.0;
  double sum = 0.0;
  for (int d : spec.velocity_dims) sum += state[d];
  return sum / std::sqrt(static_cast<double>(spec.velocity_dims.size()));
}

double slip_multiplier(const EnvSpec& spec, const Vec& state) {
  if (!spec.slip.enabled()) return 1.0;
  const double excess =
      std::abs(velocity_projection(spec, state)) - spec.slip.threshold;
  return excess > 0.0 ? 1.0 + spec.slip.gain * excess : 1.0;
}

namespace {

Vec dynamics_mean(const EnvSpec& spec, const Vec& state, const Vec& action) {
  if (spec.kind == EnvKind::fragile_pole) {
    const PoleParams& pp = spec.pole;
    const double u = action[0];
    Vec next(4);
    next[0] = state[0] + pp.dt * state[1];
    next[1] = state[1] + pp.dt * (pp.cart_gain * u - pp.cart_spring * state[0] -
                                  pp.cart_friction * state[1]);
    next[2] = state[2] + pp.dt * state[3];
    next[3] = state[3] +
              pp.dt * (pp.instability * std::sin(state[2]) +
                       pp.action_gain * u);
    return next;
  }
  return spec.A * state + spec.B * action;
}

bool is_terminated(const EnvSpec& spec, const Vec& next_state) {
  if (!spec.fragility) return false;
  return std::abs(next_state[spec.fragility->angle_dim]) >
         spec.fragility->angle_limit;
}

}  // namespace

std::pair<Vec, bool> env_step(const EnvSpec& spec, const Vec& state,
                              const Vec& action, RngStream& rng) {
  if (state.size() != spec.obs_dim || action.size() != spec.act_dim)
    throw std::invalid_argument("env_step: dimension mismatch for " +
                                spec.name);
  Vec next = dynamics_mean(spec, state, action);
  const double sigma = process_noise_scale(spec, state);
  if (sigma > 0.0) {
    Vec eta = rng.gaussian_vector(spec.obs_dim);
    const double slip = slip_multiplier(spec, state);
    if (slip != 1.0)
      for (int d : spec.velocity_dims) eta[d] *= slip;
    next += sigma * eta;
  }
  return {next, is_terminated(spec, next)};
}

// ── EnvStepper ────────────────────────────────────────────────────────────

EnvStepper::EnvStepper(const EnvSpec& spec, RngStream episode_rng)
    : spec_(spec),
      noise_rng_(episode_rng.derive(0)),
      burst_rng_(episode_rng.derive(3)) {
  RngStream init_rng = episode_rng.derive(2);
  state_ = spec.init_scale * init_rng.gaussian_vector(spec.obs_dim);
  if (spec_.bursts.enabled()) {
    const double span =
        spec_.bursts.max_interval - spec_.bursts.min_interval;
    next_burst_ = static_cast<std::int64_t>(
        spec_.bursts.min_interval + span * burst_rng_.next_double());
  }
}

double EnvStepper::burst_multiplier() {
  const BurstNoise& b = spec_.bursts;
  return b.magnitude *
         (1.0 + b.state_gain *
                    std::abs(velocity_projection(spec_, state_)));
}

std::pair<Vec, bool> EnvStepper::step(const Vec& action) {
  if (action.size() != spec_.act_dim)
    throw std::invalid_argument("EnvStepper::step: action dimension mismatch");

  double kick_size = 0.0;
  if (spec_.bursts.enabled()) {
    if (burst_left_ == 0 && t_ >= next_burst_) {
      burst_left_ = spec_.bursts.duration;
      const double span =
          spec_.bursts.max_interval - spec_.bursts.min_interval;
      next_burst_ = t_ + static_cast<std::int64_t>(
                             spec_.bursts.min_interval +
                             span * burst_rng_.next_double());
    }
    if (burst_left_ > 0) {
      kick_size = burst_multiplier();
      --burst_left_;
    }
  }

  Vec next = dynamics_mean(spec_, state_, action);
  const double sigma = process_noise_scale(spec_, state_);
  if (sigma > 0.0) {
    Vec eta = noise_rng_.gaussian_vector(spec_.obs_dim);
    const double slip = slip_multiplier(spec_, state_);
    if (slip != 1.0)
      for (int d : spec_.velocity_dims) eta[d] *= slip;
    if (kick_size > 0.0) {
      // Stereotyped impact: fixed size, random sign, on top of the regular
      // per-dimension noise.
      for (int d : spec_.velocity_dims)
        eta[d] += (eta[d] >= 0.0 ? kick_size : -kick_size);
    }
    next += sigma * eta;
  }
  state_ = next;
  ++t_;
  return {next, is_terminated(spec_, next)};
}

Trajectory rollout(const EnvSpec& spec, const Policy& policy,
                   std::int64_t horizon, RngStream rng) {
  if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >=1");
  Trajectory traj;
  traj.seed = 0;
  EnvStepper stepper(spec, rng);
  RngStream policy_rng = rng.derive(1);
  traj.transitions.reserve(static_cast<std::size_t>(horizon));
  for (std::int64_t t = 0; t < horizon; ++t) {
    Transition tr;
    tr.state = stepper.state();
    tr.action = policy.act(tr.state, policy_rng);
    auto [next, term] = stepper.step(tr.action);
    tr.next_state = next;
    tr.terminated = term;
    traj.transitions.push_back(std::move(tr));
    if (term) break;
  }
  return traj;
}

// ── Ingestion ─────────────────────────────────────────────────────────────

namespace {

using nlohmann::json;

Vec to_vec(const json& arr, std::size_t line, const char* field) {
  if (!arr.is_array() || arr.empty())
    throw std::runtime_error("row " + std::to_string(line) + ": field '" +
                             field + "' must be a non-empty array");
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number())
      throw std::runtime_error("row " + std::to_string(line) + ": field '" +
                               field + "' has a non-numeric entry");
    const double x = arr[i].get<double>();
    if (!std::isfinite(x))
      throw std::runtime_error("row " + std::to_string(line) + ": field '" +
                               field + "' has a non-finite value");
    v[static_cast<Eigen::Index>(i)] = x;
  }
  return v;
}

void finalize_episode(std::vector<Transition>& current,
                      std::vector<Trajectory>& out, std::uint64_t episode_id) {
  if (current.empty()) return;
  Trajectory traj;
  traj.transitions = std::move(current);
  traj.seed = episode_id;
  current.clear();
  if (!trajectory_is_valid(traj))
    throw std::runtime_error("episode " + std::to_string(episode_id) +
                             ": inconsistent dimensions or a non-final "
                             "terminated transition");
  out.push_back(std::move(traj));
}

IngestReport ingest_ndjson(std::istream& in) {
  IngestReport report;
  std::vector<Transition> current;
  std::int64_t current_episode = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("row " + std::to_string(lineno) +
                               ": invalid JSON: " + e.what());
    }
    for (const char* key : {"s", "a", "s2"})
      if (!row.contains(key))
        throw std::runtime_error("row " + std::to_string(lineno) +
                                 ": missing field '" + key + "'");
    const std::int64_t episode =
        row.value("episode", static_cast<std::int64_t>(0));
    if (episode != current_episode) {
      finalize_episode(current, report.trajectories,
                       static_cast<std::uint64_t>(current_episode));
      current_episode = episode;
    }
    Transition tr;
    tr.state = to_vec(row["s"], lineno, "s");
    tr.action = to_vec(row["a"], lineno, "a");
    tr.next_state = to_vec(row["s2"], lineno, "s2");
    tr.terminated = row.value("done", false);
    current.push_back(std::move(tr));
  }
  finalize_episode(current, report.trajectories,
                   static_cast<std::uint64_t>(current_episode));
  if (report.trajectories.empty())
    report.warnings.push_back("no trajectories found in input");
  return report;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

IngestReport ingest_csv(std::istream& in) {
  IngestReport report;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) {
    report.warnings.push_back("no trajectories found in input");
    return report;
  }
  ++lineno;
  auto header = split_csv(line);
  int s_dim = 0, a_dim = 0, s2_dim = 0;
  int done_col = -1, episode_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.rfind("s2_", 0) == 0)
      ++s2_dim;
    else if (h.rfind('s', 0) == 0 && h.size() > 1 && std::isdigit(h[1]))
      ++s_dim;
    else if (h.rfind('a', 0) == 0 && h.size() > 1 && std::isdigit(h[1]))
      ++a_dim;
    else if (h == "done")
      done_col = static_cast<int>(i);
    else if (h == "episode")
      episode_col = static_cast<int>(i);
    else
      throw std::runtime_error("unrecognized CSV column: " + h);
  }
  if (s_dim == 0 || a_dim == 0 || s2_dim != s_dim || done_col < 0 ||
      episode_col < 0)
    throw std::runtime_error(
        "CSV header must contain s0..sN, a0..aM, s2_0..s2_N, done, episode");

  std::vector<Transition> current;
  std::int64_t current_episode = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw std::runtime_error("row " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " cells, got " +
                               std::to_string(cells.size()));
    auto num = [&](int col) {
      double v;
      try {
        v = std::stod(cells[static_cast<std::size_t>(col)]);
      } catch (...) {
        throw std::runtime_error("row " + std::to_string(lineno) +
                                 ": non-numeric field in column " +
                                 header[static_cast<std::size_t>(col)]);
      }
      if (!std::isfinite(v))
        throw std::runtime_error("row " + std::to_string(lineno) +
                                 ": non-finite value in column " +
                                 header[static_cast<std::size_t>(col)]);
      return v;
    };
    const std::int64_t episode = static_cast<std::int64_t>(num(episode_col));
    if (episode != current_episode) {
      finalize_episode(current, report.trajectories,
                       static_cast<std::uint64_t>(current_episode));
      current_episode = episode;
    }
    Transition tr;
    tr.state = Vec(s_dim);
    tr.action = Vec(a_dim);
    tr.next_state = Vec(s_dim);
    for (int i = 0; i < s_dim; ++i) tr.state[i] = num(i);
    for (int i = 0; i < a_dim; ++i) tr.action[i] = num(s_dim + i);
    for (int i = 0; i < s_dim; ++i) tr.next_state[i] = num(s_dim + a_dim + i);
    tr.terminated = num(done_col) != 0.0;
    current.push_back(std::move(tr));
  }
  finalize_episode(current, report.trajectories,
                   static_cast<std::uint64_t>(current_episode));
  if (report.trajectories.empty())
    report.warnings.push_back("no trajectories found in input");
  return report;
}

}  // namespace

IngestReport ingest_trajectories(const std::string& path,
                                 IngestFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  IngestReport report = format == IngestFormat::ndjson ? ingest_ndjson(in)
                                                       : ingest_csv(in);
  // Cross-episode dimension consistency.
  if (!report.trajectories.empty()) {
    const Eigen::Index sdim =
        report.trajectories.front().transitions.front().state.size();
    const Eigen::Index adim =
        report.trajectories.front().transitions.front().action.size();
    for (const auto& traj : report.trajectories)
      for (const auto& tr : traj.transitions)
        if (tr.state.size() != sdim || tr.action.size() != adim ||
            tr.next_state.size() != sdim)
          throw std::runtime_error(
              "inconsistent dimensions across ingested episodes");
  }
  for (const auto& w : report.warnings)
    std::cerr << "ingest warning: " << w << "\n";
  return report;
}

}  // namespace driftmon
