#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "driftmon/detectors.hpp"
#include "driftmon/drift.hpp"
#include "driftmon/envs.hpp"
#include "driftmon/worldmodel.hpp"

namespace driftmon {

/// Per-episode outcome. Steps are 1-based: a horizon-H episode has steps
/// 1..H, drift onset t0 means steps 1..t0 are uncorrupted, and fire/collapse
/// steps index into that range.
struct EpisodeRecord {
  std::string env;
  DriftKind profile_kind = DriftKind::none;
  double epsilon = 0.0;
  std::string detector_id;
  std::string capacity;
  int seed_index = 0;
  int episode_index = 0;
  std::int64_t onset = 0;
  std::int64_t episode_length = 0;
  bool fired = false;
  std::optional<std::int64_t> fire_step;
  std::optional<std::int64_t> collapse_step;
  double baseline_mean = 0.0;
  double baseline_std = 0.0;
  bool degenerate_sigma = false;
  std::vector<double> pe_trace;  // empty when traces are not stored
};

/// How many episode PE traces to persist per condition group.
enum class TraceMode { none, first_detector, all };

struct SweepPlan {
  std::vector<std::string> envs;
  std::vector<DetectorConfig> detectors;
  std::vector<double> epsilons;
  std::vector<DriftKind> profiles{DriftKind::linear};
  std::vector<Capacity> capacities{Capacity::medium};
  int seeds = 10;
  int episodes_per_seed = 8;
  std::int64_t horizon = 1000;
  std::int64_t onset = 300;
  std::uint64_t master_seed = 0;
  int jobs = 1;
  TraceMode trace_mode = TraceMode::first_detector;
  int trace_downsample = 1;
};

struct ConditionKey {
  std::string env;
  DriftKind profile = DriftKind::linear;
  std::string detector_id;
  double epsilon = 0.0;
  std::string capacity;

  auto tie() const {
    return std::tie(env, profile, detector_id, epsilon, capacity);
  }
  bool operator<(const ConditionKey& o) const { return tie() < o.tie(); }
  bool operator==(const ConditionKey& o) const { return tie() == o.tie(); }
};

struct ConditionSummary {
  BinomialEstimate detection;       // fired episodes / episodes
  int episodes = 0;
  int fired = 0;
  int collapsed = 0;
  double collapse_rate = 0.0;
  double mean_tta = 0.0;            // over fired episodes only; 0 if none
};

struct SweepResult {
  std::vector<EpisodeRecord> records;
  std::map<ConditionKey, ConditionSummary> summary;
};

/// Simulated episode before any detector runs: the policy acts on the
/// corrupted observation, the environment steps the true state, and PE
/// targets are the corrupted next observations.
struct SimulatedEpisode {
  Mat inputs;   // (obs+act) x T, column t = [corrupted s_t; a_t]
  Mat targets;  // obs x T, column t = corrupted s_{t+1}
  std::int64_t length = 0;  // number of transitions T
  std::optional<std::int64_t> collapse_step;  // 1-based; == length if set
};

SimulatedEpisode simulate_episode(const EnvSpec& spec, const Policy& policy,
                                  const DriftProfile& profile,
                                  std::int64_t horizon, RngStream rng);

/// Squared-residual trace for one model over a simulated episode.
std::vector<double> pe_trace(const WorldModel& model,
                             const SimulatedEpisode& episode);

/// Full single-episode protocol: simulate, compute PE, calibrate on the
/// first `onset` samples, stream the rest.
EpisodeRecord run_episode(const EnvSpec& spec, const Policy& policy,
                          const WorldModel& model,
                          const DetectorConfig& config,
                          const DriftProfile& profile, std::int64_t horizon,
                          RngStream rng);

/// Models per (env name, capacity); the sweep looks trained models up here.
using ModelTable = std::map<std::pair<std::string, std::string>, WorldModel>;

/// Runs every condition in the plan. Episodes are keyed by
/// (master seed, env, seed, episode), so results are identical regardless of
/// execution order or the number of worker threads.
SweepResult run_sweep(const SweepPlan& plan, const ModelTable& models,
                      const std::function<void(const std::string&)>& log = {});

// ── Persistence ───────────────────────────────────────────────────────────

inline constexpr int kRecordsSchemaVersion = 1;

void save_records(const std::string& path,
                  const std::vector<EpisodeRecord>& records,
                  int trace_downsample = 1);

struct LoadError {
  std::size_t line = 0;
  std::string message;
};

struct LoadRecordsResult {
  std::vector<EpisodeRecord> records;
  int trace_downsample = 1;
  std::optional<LoadError> error;  // set on corrupt/truncated lines; prior
                                   // records are preserved
};

LoadRecordsResult load_records(const std::string& path);

/// Deterministic summary CSV: one row per condition, sorted by key.
std::string summary_to_csv(const SweepResult& result);

/// Recomputes per-condition summaries from records (used after loading).
SweepResult summarize_records(std::vector<EpisodeRecord> records,
                              std::int64_t onset_fallback = 300);

}  // namespace driftmon
