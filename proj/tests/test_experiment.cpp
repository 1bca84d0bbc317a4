#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <mutex>

#include "driftmon/experiment.hpp"

using namespace driftmon;

namespace {

/// One small trained model shared across tests (training is the slow part).
const WorldModel& oscillator_model() {
  static WorldModel model = [] {
    EnvSpec spec = make_stable_oscillator();
    Policy policy = default_policy(spec);
    std::vector<Trajectory> data;
    for (int r = 0; r < 12; ++r)
      data.push_back(
          rollout(spec, policy, 250,
                  RngStream(999).derive(static_cast<std::uint64_t>(r))));
    TrainSettings settings;
    settings.epochs = 40;
    settings.learning_rate = 2e-3;
    return train_world_model(data, Capacity::small, settings, RngStream(3))
        .model;
  }();
  return model;
}

SweepPlan tiny_plan() {
  SweepPlan plan;
  plan.envs = {"stable_oscillator"};
  plan.detectors = {DetectorConfig::doubt_index(3.0, 5),
                    DetectorConfig::percentile(99.0)};
  plan.epsilons = {1e-4, 0.5};
  plan.profiles = {DriftKind::linear};
  plan.capacities = {Capacity::small};
  plan.seeds = 2;
  plan.episodes_per_seed = 2;
  plan.horizon = 450;
  plan.onset = 300;
  plan.master_seed = 31;
  return plan;
}

ModelTable tiny_models() {
  ModelTable models;
  models[{"stable_oscillator", "small"}] = oscillator_model();
  return models;
}

}  // namespace

TEST_CASE("simulated episodes are deterministic") {
  EnvSpec spec = make_stable_oscillator();
  Policy policy = default_policy(spec);
  auto profile =
      DriftProfile::uniform(DriftKind::linear, 0.01, 300, spec.velocity_dims);
  SimulatedEpisode a =
      simulate_episode(spec, policy, profile, 600, episode_stream(1, 2, 3, 4));
  SimulatedEpisode b =
      simulate_episode(spec, policy, profile, 600, episode_stream(1, 2, 3, 4));
  CHECK(a.length == 600);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
}

TEST_CASE("drift changes the trajectory through the policy") {
  EnvSpec spec = make_stable_oscillator();
  Policy policy = default_policy(spec);
  auto clean = DriftProfile::uniform(DriftKind::linear, 0.0, 300,
                                     spec.velocity_dims);
  auto drifted = DriftProfile::uniform(DriftKind::linear, 0.5, 300,
                                       spec.velocity_dims);
  auto rng = episode_stream(8, 0, 0, 0);
  SimulatedEpisode a = simulate_episode(spec, policy, clean, 400, rng);
  SimulatedEpisode b = simulate_episode(spec, policy, drifted, 400, rng);
  // identical before onset
  CHECK(a.inputs.col(100) == b.inputs.col(100));
  // diverged afterwards
  CHECK((a.inputs.col(380) - b.inputs.col(380)).norm() > 1e-6);
}

TEST_CASE("run_episode produces a coherent record") {
  EnvSpec spec = make_stable_oscillator();
  Policy policy = default_policy(spec);
  auto profile =
      DriftProfile::uniform(DriftKind::linear, 0.5, 300, spec.velocity_dims);
  EpisodeRecord rec =
      run_episode(spec, policy, oscillator_model(),
                  DetectorConfig::doubt_index(2.0, 3), profile, 500,
                  episode_stream(77, 0, 0, 0));
  CHECK(rec.env == "stable_oscillator");
  CHECK(rec.episode_length == 500);
  CHECK(rec.pe_trace.size() == 500);
  CHECK(rec.baseline_std > 0.0);
  CHECK(rec.fired);
  CHECK(*rec.fire_step > 300);
  CHECK(*rec.fire_step < 400);
}

TEST_CASE("sweeps are order-independent and deterministic") {
  SweepPlan plan = tiny_plan();
  ModelTable models = tiny_models();
  plan.jobs = 1;
  SweepResult serial = run_sweep(plan, models);
  plan.jobs = 2;
  SweepResult parallel = run_sweep(plan, models);

  REQUIRE(serial.records.size() == parallel.records.size());
  CHECK(serial.records.size() == 2 * 2 * 2 * 2);  // eps x detectors x episodes
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    CHECK(serial.records[i].detector_id == parallel.records[i].detector_id);
    CHECK(serial.records[i].epsilon == parallel.records[i].epsilon);
    CHECK(serial.records[i].fired == parallel.records[i].fired);
    CHECK(serial.records[i].fire_step == parallel.records[i].fire_step);
    CHECK(serial.records[i].pe_trace == parallel.records[i].pe_trace);
  }
  CHECK(summary_to_csv(serial) == summary_to_csv(parallel));

  // Episodes are shared across detectors within a condition.
  const auto& r0 = serial.records[0];
  const auto& r1 = serial.records[1];
  CHECK(r0.detector_id != r1.detector_id);
  CHECK(r0.episode_length == r1.episode_length);
  CHECK(r0.pe_trace.size() == static_cast<std::size_t>(r0.episode_length));
  CHECK(r1.pe_trace.empty());  // trace stored on the first detector only
}

TEST_CASE("sweep summaries count correctly") {
  SweepPlan plan = tiny_plan();
  SweepResult result = run_sweep(plan, tiny_models());
  REQUIRE(result.summary.size() == 4);  // 2 eps x 2 detectors
  for (const auto& [key, s] : result.summary) {
    CHECK(s.episodes == 4);
    CHECK(s.fired <= s.episodes);
    CHECK(s.detection.trials == 4);
    if (s.fired > 0) CHECK(s.mean_tta > 0.0);
  }
  // strong drift fires the DI detector in every episode
  ConditionKey hot{"stable_oscillator", DriftKind::linear, "di_z3.0_w5", 0.5,
                   "small"};
  REQUIRE(result.summary.count(hot) == 1);
  CHECK(result.summary[hot].detection.rate == 1.0);
}

TEST_CASE("missing model is reported") {
  SweepPlan plan = tiny_plan();
  ModelTable empty;
  CHECK_THROWS_AS(run_sweep(plan, empty), std::invalid_argument);
}

TEST_CASE("records round-trip through ndjson") {
  SweepPlan plan = tiny_plan();
  SweepResult result = run_sweep(plan, tiny_models());
  const std::string path = "test_records.ndjson";
  save_records(path, result.records);
  LoadRecordsResult loaded = load_records(path);
  CHECK(!loaded.error);
  REQUIRE(loaded.records.size() == result.records.size());
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& a = result.records[i];
    const auto& b = loaded.records[i];
    CHECK(a.env == b.env);
    CHECK(a.profile_kind == b.profile_kind);
    CHECK(a.epsilon == b.epsilon);
    CHECK(a.detector_id == b.detector_id);
    CHECK(a.capacity == b.capacity);
    CHECK(a.seed_index == b.seed_index);
    CHECK(a.episode_index == b.episode_index);
    CHECK(a.onset == b.onset);
    CHECK(a.episode_length == b.episode_length);
    CHECK(a.fired == b.fired);
    CHECK(a.fire_step == b.fire_step);
    CHECK(a.collapse_step == b.collapse_step);
    CHECK(a.baseline_mean == b.baseline_mean);
    CHECK(a.baseline_std == b.baseline_std);
    CHECK(a.pe_trace == b.pe_trace);
  }
  std::remove(path.c_str());
}

TEST_CASE("unknown records version is named in the error") {
  const std::string path = "test_records_ver.ndjson";
  {
    std::ofstream out(path, std::ios::trunc);
    out << "{\"schema\":\"driftmon.records\",\"version\":7}\n";
  }
  try {
    load_records(path);
    FAIL("expected version error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("truncated final line preserves prior records") {
  SweepPlan plan = tiny_plan();
  plan.trace_mode = TraceMode::none;
  SweepResult result = run_sweep(plan, tiny_models());
  const std::string path = "test_records_trunc.ndjson";
  save_records(path, result.records);
  // chop the last line in half
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  in.close();
  const std::size_t last_newline = content.rfind('\n', content.size() - 2);
  std::ofstream out(path, std::ios::trunc);
  out << content.substr(0, last_newline + 20);
  out.close();

  LoadRecordsResult loaded = load_records(path);
  REQUIRE(loaded.error.has_value());
  CHECK(loaded.error->line == result.records.size() + 1);  // header offset
  CHECK(loaded.records.size() == result.records.size() - 1);
  std::remove(path.c_str());
}

TEST_CASE("summarize_records rebuilds identical summaries") {
  SweepPlan plan = tiny_plan();
  SweepResult result = run_sweep(plan, tiny_models());
  SweepResult rebuilt = summarize_records(result.records, plan.onset);
  CHECK(summary_to_csv(result) == summary_to_csv(rebuilt));
}
