#include "driftmon/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace driftmon {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

SimulatedEpisode simulate_episode(const EnvSpec& spec, const Policy& policy,
                                  const DriftProfile& profile,
                                  std::int64_t horizon, RngStream rng) {
  if (horizon < 1)
    throw std::invalid_argument("simulate_episode: horizon must be >= 1");
  EnvStepper stepper(spec, rng);
  RngStream policy_rng = rng.derive(1);

  SimulatedEpisode ep;
  ep.inputs.resize(spec.obs_dim + spec.act_dim, horizon);
  ep.targets.resize(spec.obs_dim, horizon);

  Vec corrupted = apply_drift(stepper.state(), profile, 0);
  std::int64_t t = 0;
  for (; t < horizon; ++t) {
    Vec action = policy.act(corrupted, policy_rng);
    ep.inputs.col(t).head(spec.obs_dim) = corrupted;
    ep.inputs.col(t).tail(spec.act_dim) = action;
    auto [next, term] = stepper.step(action);
    corrupted = apply_drift(next, profile, t + 1);
    ep.targets.col(t) = corrupted;
    if (term) {
      ep.collapse_step = t + 1;
      ++t;
      break;
    }
  }
  ep.length = t;
  if (t < horizon) {
    ep.inputs.conservativeResize(Eigen::NoChange, t);
    ep.targets.conservativeResize(Eigen::NoChange, t);
  }
  return ep;
}

std::vector<double> pe_trace(const WorldModel& model,
                             const SimulatedEpisode& episode) {
  Mat preds = predict_batch(model, episode.inputs);
  std::vector<double> trace(static_cast<std::size_t>(episode.length));
  for (std::int64_t t = 0; t < episode.length; ++t)
    trace[static_cast<std::size_t>(t)] =
        (preds.col(t) - episode.targets.col(t)).squaredNorm();
  return trace;
}

namespace {

struct BaselineSummary {
  double mean = 0.0;
  double std = 0.0;
  bool degenerate = false;
  bool available = false;
};

BaselineSummary baseline_summary(const std::vector<double>& trace,
                                 std::int64_t onset) {
  BaselineSummary out;
  if (static_cast<std::int64_t>(trace.size()) <= onset) return out;
  std::vector<double> head(trace.begin(),
                           trace.begin() + static_cast<std::ptrdiff_t>(onset));
  out.mean = mean_of(head);
  out.std = population_std(head);
  out.degenerate = out.std == 0.0;
  out.available = true;
  return out;
}

std::vector<double> downsample(const std::vector<double>& trace, int k) {
  if (k <= 1) return trace;
  std::vector<double> out;
  out.reserve(trace.size() / static_cast<std::size_t>(k) + 1);
  for (std::size_t i = 0; i < trace.size(); i += static_cast<std::size_t>(k))
    out.push_back(trace[i]);
  return out;
}

}  // namespace

EpisodeRecord run_episode(const EnvSpec& spec, const Policy& policy,
                          const WorldModel& model,
                          const DetectorConfig& config,
                          const DriftProfile& profile, std::int64_t horizon,
                          RngStream rng) {
  if (model.obs_dim != spec.obs_dim || model.act_dim != spec.act_dim)
    throw std::invalid_argument("run_episode: model/env dimension mismatch");
  SimulatedEpisode sim = simulate_episode(spec, policy, profile, horizon, rng);
  std::vector<double> trace = pe_trace(model, sim);

  EpisodeRecord rec;
  rec.env = spec.name;
  rec.profile_kind = profile.kind;
  rec.epsilon = profile.epsilon;
  rec.detector_id = config.id();
  rec.onset = profile.onset;
  rec.episode_length = sim.length;
  rec.collapse_step = sim.collapse_step;
  rec.pe_trace = trace;

  auto base = baseline_summary(trace, profile.onset);
  rec.baseline_mean = base.mean;
  rec.baseline_std = base.std;
  rec.degenerate_sigma = base.degenerate;
  if (base.available) {
    auto outcome = detect_episode(config, trace,
                                  static_cast<std::size_t>(profile.onset));
    rec.fired = outcome.fired;
    rec.fire_step = outcome.fire_step;
  }
  return rec;
}

// ── Sweeps ────────────────────────────────────────────────────────────────

namespace {

struct WorkItem {
  std::size_t env_idx;
  DriftKind profile;
  double epsilon;
};

void append_condition_records(
    const SweepPlan& plan, const EnvSpec& spec, const Policy& policy,
    const std::vector<std::pair<Capacity, const WorldModel*>>& models,
    const WorkItem& item, std::vector<EpisodeRecord>& out) {
  DriftProfile profile =
      item.profile == DriftKind::none
          ? DriftProfile::none_profile()
          : DriftProfile::uniform(item.profile, item.epsilon, plan.onset,
                                  spec.velocity_dims);
  if (item.profile == DriftKind::none) profile.onset = plan.onset;

  const std::uint64_t env_id = stable_hash64(spec.name);
  for (int seed = 0; seed < plan.seeds; ++seed) {
    for (int episode = 0; episode < plan.episodes_per_seed; ++episode) {
      RngStream rng = episode_stream(plan.master_seed, env_id,
                                     static_cast<std::uint64_t>(seed),
                                     static_cast<std::uint64_t>(episode));
      SimulatedEpisode sim =
          simulate_episode(spec, policy, profile, plan.horizon, rng);
      for (const auto& [capacity, model] : models) {
        std::vector<double> trace = pe_trace(*model, sim);
        auto base = baseline_summary(trace, plan.onset);
        for (std::size_t d = 0; d < plan.detectors.size(); ++d) {
          const DetectorConfig& config = plan.detectors[d];
          EpisodeRecord rec;
          rec.env = spec.name;
          rec.profile_kind = item.profile;
          rec.epsilon = item.epsilon;
          rec.detector_id = config.id();
          rec.capacity = to_string(capacity);
          rec.seed_index = seed;
          rec.episode_index = episode;
          rec.onset = plan.onset;
          rec.episode_length = sim.length;
          rec.collapse_step = sim.collapse_step;
          rec.baseline_mean = base.mean;
          rec.baseline_std = base.std;
          rec.degenerate_sigma = base.degenerate;
          if (base.available) {
            auto outcome = detect_episode(
                config, trace, static_cast<std::size_t>(plan.onset));
            rec.fired = outcome.fired;
            rec.fire_step = outcome.fire_step;
          }
          const bool keep_trace =
              plan.trace_mode == TraceMode::all ||
              (plan.trace_mode == TraceMode::first_detector && d == 0);
          if (keep_trace)
            rec.pe_trace = downsample(trace, plan.trace_downsample);
          out.push_back(std::move(rec));
        }
      }
    }
  }
}

}  // namespace

SweepResult summarize_records(std::vector<EpisodeRecord> records,
                              std::int64_t onset_fallback) {
  SweepResult result;
  std::map<ConditionKey, std::vector<const EpisodeRecord*>> groups;
  for (const auto& rec : records) {
    ConditionKey key{rec.env, rec.profile_kind, rec.detector_id, rec.epsilon,
                     rec.capacity};
    groups[key].push_back(&rec);
  }
  for (auto& [key, recs] : groups) {
    ConditionSummary s;
    s.episodes = static_cast<int>(recs.size());
    double tta_sum = 0.0;
    for (const EpisodeRecord* r : recs) {
      if (r->fired) {
        ++s.fired;
        const std::int64_t onset = r->onset > 0 ? r->onset : onset_fallback;
        tta_sum += static_cast<double>(*r->fire_step - onset);
      }
      if (r->collapse_step) ++s.collapsed;
    }
    s.detection = BinomialEstimate::from_counts(s.fired, s.episodes);
    s.collapse_rate =
        static_cast<double>(s.collapsed) / static_cast<double>(s.episodes);
    s.mean_tta = s.fired > 0 ? tta_sum / static_cast<double>(s.fired) : 0.0;
    result.summary[key] = s;
  }
  result.records = std::move(records);
  return result;
}

SweepResult run_sweep(const SweepPlan& plan, const ModelTable& models,
                      const std::function<void(const std::string&)>& log) {
  if (plan.envs.empty() || plan.detectors.empty() || plan.epsilons.empty() ||
      plan.profiles.empty() || plan.capacities.empty())
    throw std::invalid_argument("run_sweep: empty plan dimension");
  if (plan.horizon <= plan.onset)
    throw std::invalid_argument("run_sweep: horizon must exceed onset");
  if (plan.seeds < 1 || plan.episodes_per_seed < 1)
    throw std::invalid_argument("run_sweep: need at least one episode");

  struct EnvBundle {
    EnvSpec spec;
    Policy policy;
    std::vector<std::pair<Capacity, const WorldModel*>> models;
  };
  std::vector<EnvBundle> bundles;
  for (const std::string& name : plan.envs) {
    EnvBundle b;
    b.spec = make_env(name);
    b.policy = default_policy(b.spec);
    for (Capacity cap : plan.capacities) {
      auto it = models.find({name, to_string(cap)});
      if (it == models.end())
        throw std::invalid_argument("run_sweep: missing model for " + name +
                                    "/" + to_string(cap));
      b.models.emplace_back(cap, &it->second);
    }
    bundles.push_back(std::move(b));
  }

  std::vector<WorkItem> items;
  for (std::size_t e = 0; e < plan.envs.size(); ++e)
    for (DriftKind profile : plan.profiles)
      for (double eps : plan.epsilons)
        items.push_back({e, profile, eps});

  std::vector<std::vector<EpisodeRecord>> slots(items.size());
  std::atomic<std::size_t> cursor{0};
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;

  auto worker = [&]() {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= items.size()) return;
      const WorkItem& item = items[i];
      const EnvBundle& b = bundles[item.env_idx];
      append_condition_records(plan, b.spec, b.policy, b.models, item,
                               slots[i]);
      const std::size_t n = done.fetch_add(1) + 1;
      if (log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        log("condition " + std::to_string(n) + "/" +
            std::to_string(items.size()) + " (" + b.spec.name + " " +
            to_string(item.profile) + " eps=" + fmt_double(item.epsilon) +
            ")");
      }
    }
  };

  const int jobs = std::max(1, plan.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<EpisodeRecord> records;
  for (auto& slot : slots)
    for (auto& rec : slot) records.push_back(std::move(rec));
  return summarize_records(std::move(records));
}

// ── Persistence ───────────────────────────────────────────────────────────

namespace {

using nlohmann::json;

json record_to_json(const EpisodeRecord& rec) {
  json j;
  j["env"] = rec.env;
  j["profile"] = to_string(rec.profile_kind);
  j["epsilon"] = rec.epsilon;
  j["detector"] = rec.detector_id;
  j["capacity"] = rec.capacity;
  j["seed"] = rec.seed_index;
  j["episode"] = rec.episode_index;
  j["onset"] = rec.onset;
  j["length"] = rec.episode_length;
  j["fired"] = rec.fired;
  if (rec.fire_step)
    j["fire_step"] = *rec.fire_step;
  else
    j["fire_step"] = nullptr;
  if (rec.collapse_step)
    j["collapse_step"] = *rec.collapse_step;
  else
    j["collapse_step"] = nullptr;
  j["baseline_mean"] = rec.baseline_mean;
  j["baseline_std"] = rec.baseline_std;
  j["degenerate_sigma"] = rec.degenerate_sigma;
  if (!rec.pe_trace.empty()) j["pe_trace"] = rec.pe_trace;
  return j;
}

EpisodeRecord record_from_json(const json& j) {
  EpisodeRecord rec;
  rec.env = j.at("env").get<std::string>();
  rec.profile_kind = drift_kind_from_string(j.at("profile").get<std::string>());
  rec.epsilon = j.at("epsilon").get<double>();
  rec.detector_id = j.at("detector").get<std::string>();
  rec.capacity = j.at("capacity").get<std::string>();
  rec.seed_index = j.at("seed").get<int>();
  rec.episode_index = j.at("episode").get<int>();
  rec.onset = j.at("onset").get<std::int64_t>();
  rec.episode_length = j.at("length").get<std::int64_t>();
  rec.fired = j.at("fired").get<bool>();
  if (!j.at("fire_step").is_null())
    rec.fire_step = j.at("fire_step").get<std::int64_t>();
  if (!j.at("collapse_step").is_null())
    rec.collapse_step = j.at("collapse_step").get<std::int64_t>();
  rec.baseline_mean = j.at("baseline_mean").get<double>();
  rec.baseline_std = j.at("baseline_std").get<double>();
  rec.degenerate_sigma = j.at("degenerate_sigma").get<bool>();
  if (j.contains("pe_trace"))
    rec.pe_trace = j.at("pe_trace").get<std::vector<double>>();
  return rec;
}

}  // namespace

void save_records(const std::string& path,
                  const std::vector<EpisodeRecord>& records,
                  int trace_downsample) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  json header;
  header["schema"] = "driftmon.records";
  header["version"] = kRecordsSchemaVersion;
  header["trace_downsample"] = trace_downsample;
  out << header.dump() << "\n";
  for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

LoadRecordsResult load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records file: " + path);
  LoadRecordsResult result;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("records file is empty: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad records header: ") + e.what());
  }
  if (header.value("schema", std::string()) != "driftmon.records")
    throw std::runtime_error("not a driftmon records file: " + path);
  const int version = header.value("version", -1);
  if (version != kRecordsSchemaVersion)
    throw std::runtime_error("unsupported records schema version " +
                             std::to_string(version));
  result.trace_downsample = header.value("trace_downsample", 1);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      result.records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      result.error = LoadError{lineno, e.what()};
      break;
    }
  }
  return result;
}

std::string summary_to_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "env,profile,detector,epsilon,capacity,rate,ci_low,ci_high,mean_tta,"
         "collapse_rate,n\n";
  for (const auto& [key, s] : result.summary) {
    out << key.env << ',' << to_string(key.profile) << ',' << key.detector_id
        << ',' << fmt_double(key.epsilon) << ',' << key.capacity << ','
        << fmt_double(s.detection.rate) << ',' << fmt_double(s.detection.ci_low)
        << ',' << fmt_double(s.detection.ci_high) << ','
        << fmt_double(s.mean_tta) << ',' << fmt_double(s.collapse_rate) << ','
        << s.episodes << '\n';
  }
  return out.str();
}

}  // namespace driftmon
