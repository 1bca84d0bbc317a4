#include "driftmon/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "driftmon/drift.hpp"

namespace driftmon {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Value {
  enum Kind { scalar, array } kind = scalar;
  std::vector<std::string> items;  // raw tokens; scalar uses items[0]
};

/// Splits "a, b, c" at top level (no nested arrays in this schema).
std::vector<std::string> split_list(const std::string& body,
                                    const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool in_str = false;
  for (char ch : body) {
    if (ch == '"') in_str = !in_str;
    if (ch == ',' && !in_str) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty()) out.push_back(last);
  for (const auto& item : out)
    if (item.empty())
      throw ConfigError("empty array element in " + where);
  if (in_str) throw ConfigError("unterminated string in " + where);
  return out;
}

std::string unquote(const std::string& tok, const std::string& where) {
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
    return tok.substr(1, tok.size() - 2);
  throw ConfigError("expected a quoted string for " + where + ", got " + tok);
}

double to_number(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (...) {
    throw ConfigError("expected a number for " + where + ", got " + tok);
  }
}

std::int64_t to_int(const std::string& tok, const std::string& where) {
  const double v = to_number(tok, where);
  if (v != std::floor(v))
    throw ConfigError("expected an integer for " + where + ", got " + tok);
  return static_cast<std::int64_t>(v);
}

using Parsed = std::map<std::string, Value>;  // "section.key" -> value

Parsed parse_text(const std::string& text) {
  Parsed out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside strings
    std::string stripped;
    bool in_str = false;
    for (char ch : line) {
      if (ch == '"') in_str = !in_str;
      if (ch == '#' && !in_str) break;
      stripped += ch;
    }
    stripped = trim(stripped);
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) +
                          ": empty section name");
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string raw = trim(stripped.substr(eq + 1));
    if (key.empty() || raw.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full))
      throw ConfigError("duplicate key: " + full);
    Value v;
    if (raw.front() == '[') {
      if (raw.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated array for " + full);
      v.kind = Value::array;
      v.items = split_list(raw.substr(1, raw.size() - 2), full);
    } else {
      v.kind = Value::scalar;
      v.items = {raw};
    }
    out[full] = v;
  }
  return out;
}

class Binder {
 public:
  explicit Binder(Parsed parsed) : parsed_(std::move(parsed)) {}

  void scalar_u64(const std::string& key, std::uint64_t& dst) {
    if (auto* v = take(key, Value::scalar))
      dst = static_cast<std::uint64_t>(to_int(v->items[0], key));
  }
  void scalar_int(const std::string& key, int& dst) {
    if (auto* v = take(key, Value::scalar))
      dst = static_cast<int>(to_int(v->items[0], key));
  }
  void scalar_double(const std::string& key, double& dst) {
    if (auto* v = take(key, Value::scalar)) dst = to_number(v->items[0], key);
  }
  void scalar_string(const std::string& key, std::string& dst) {
    if (auto* v = take(key, Value::scalar)) dst = unquote(v->items[0], key);
  }
  void string_list(const std::string& key, std::vector<std::string>& dst) {
    if (auto* v = take(key, Value::array)) {
      dst.clear();
      for (const auto& item : v->items) dst.push_back(unquote(item, key));
    }
  }
  void double_list(const std::string& key, std::vector<double>& dst) {
    if (auto* v = take(key, Value::array)) {
      dst.clear();
      for (const auto& item : v->items) dst.push_back(to_number(item, key));
    }
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : parsed_)
      if (!consumed_.count(key)) unknown.push_back(key);
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw ConfigError(msg);
    }
  }

 private:
  const Value* take(const std::string& key, Value::Kind kind) {
    auto it = parsed_.find(key);
    if (it == parsed_.end()) return nullptr;
    consumed_.insert(key);
    if (it->second.kind != kind)
      throw ConfigError(key + (kind == Value::array
                                   ? " must be an array"
                                   : " must be a scalar"));
    return &it->second;
  }

  Parsed parsed_;
  std::set<std::string> consumed_;
};

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  Binder binder(parse_text(text));
  ExperimentConfig cfg;
  binder.scalar_u64("master_seed", cfg.master_seed);
  binder.scalar_string("output_dir", cfg.output_dir);
  binder.scalar_int("jobs", cfg.jobs);

  binder.string_list("envs.names", cfg.envs);

  binder.string_list("model.capacities", cfg.capacities);
  binder.scalar_int("model.train_rollouts", cfg.train_rollouts);
  binder.scalar_int("model.train_rollout_steps", cfg.train_rollout_steps);
  binder.scalar_int("model.epochs", cfg.epochs);
  binder.scalar_int("model.batch_size", cfg.batch_size);
  binder.scalar_double("model.learning_rate", cfg.learning_rate);
  binder.scalar_double("model.holdout_fraction", cfg.holdout_fraction);
  binder.scalar_double("model.weight_decay", cfg.weight_decay);

  binder.string_list("sweep.detectors", cfg.detectors);
  binder.string_list("sweep.profiles", cfg.profiles);
  binder.double_list("sweep.epsilons", cfg.epsilons);
  binder.scalar_int("sweep.seeds", cfg.seeds);
  binder.scalar_int("sweep.episodes_per_seed", cfg.episodes_per_seed);
  binder.scalar_int("sweep.horizon", cfg.horizon);
  binder.scalar_int("sweep.onset", cfg.onset);
  binder.scalar_string("sweep.trace", cfg.trace);
  binder.scalar_int("sweep.trace_downsample", cfg.trace_downsample);

  binder.scalar_double("analysis.eps_baseline", cfg.eps_baseline);
  binder.scalar_double("analysis.eps_ref", cfg.eps_ref);
  binder.scalar_string("analysis.reference_detector", cfg.reference_detector);

  binder.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  auto strings = [](const std::vector<std::string>& xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i)
      s += (i ? ", \"" : "\"") + xs[i] + "\"";
    return s + "]";
  };
  auto doubles = [](const std::vector<double>& xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i)
      s += (i ? ", " : "") + fmt_double(xs[i]);
    return s + "]";
  };
  out << "master_seed = " << master_seed << "\n";
  out << "output_dir = \"" << output_dir << "\"\n";
  out << "jobs = " << jobs << "\n\n";
  out << "[envs]\n";
  out << "names = " << strings(envs) << "\n\n";
  out << "[model]\n";
  out << "capacities = " << strings(capacities) << "\n";
  out << "train_rollouts = " << train_rollouts << "\n";
  out << "train_rollout_steps = " << train_rollout_steps << "\n";
  out << "epochs = " << epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "learning_rate = " << fmt_double(learning_rate) << "\n";
  out << "holdout_fraction = " << fmt_double(holdout_fraction) << "\n";
  out << "weight_decay = " << fmt_double(weight_decay) << "\n\n";
  out << "[sweep]\n";
  out << "detectors = " << strings(detectors) << "\n";
  out << "profiles = " << strings(profiles) << "\n";
  out << "epsilons = " << doubles(epsilon_grid()) << "\n";
  out << "seeds = " << seeds << "\n";
  out << "episodes_per_seed = " << episodes_per_seed << "\n";
  out << "horizon = " << horizon << "\n";
  out << "onset = " << onset << "\n";
  out << "trace = \"" << trace << "\"\n";
  out << "trace_downsample = " << trace_downsample << "\n\n";
  out << "[analysis]\n";
  out << "eps_baseline = " << fmt_double(eps_baseline) << "\n";
  out << "eps_ref = " << fmt_double(eps_ref) << "\n";
  out << "reference_detector = \"" << reference_detector << "\"\n";
  return out.str();
}

std::vector<double> ExperimentConfig::epsilon_grid() const {
  return epsilons.empty() ? default_epsilon_grid() : epsilons;
}

void ExperimentConfig::validate() const {
  if (envs.empty()) throw ConfigError("envs.names must not be empty");
  for (const auto& name : envs) make_env(name);  // throws on unknown
  if (capacities.empty()) throw ConfigError("model.capacities must not be empty");
  for (const auto& cap : capacities) capacity_from_string(cap);
  if (detectors.empty()) throw ConfigError("sweep.detectors must not be empty");
  for (const auto& id : detectors) DetectorConfig::from_id(id);
  if (profiles.empty()) throw ConfigError("sweep.profiles must not be empty");
  for (const auto& p : profiles) drift_kind_from_string(p);
  for (double eps : epsilon_grid())
    if (!(eps > 0.0)) throw ConfigError("sweep.epsilons must be positive");
  if (seeds < 1 || episodes_per_seed < 1)
    throw ConfigError("sweep.seeds and episodes_per_seed must be >= 1");
  if (onset < 30) throw ConfigError("sweep.onset must be >= 30");
  if (horizon <= onset) throw ConfigError("sweep.horizon must exceed onset");
  if (trace != "none" && trace != "first" && trace != "all")
    throw ConfigError("sweep.trace must be none|first|all");
  if (trace_downsample < 1)
    throw ConfigError("sweep.trace_downsample must be >= 1");
  if (train_rollouts < 1 || train_rollout_steps < 1)
    throw ConfigError("model.train_rollouts/steps must be >= 1");
  if (batch_size < 1 || epochs < 1)
    throw ConfigError("model.batch_size and epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("model.learning_rate must be > 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 0.5))
    throw ConfigError("model.holdout_fraction must be in (0, 0.5)");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (!(eps_baseline > 0.0) || !(eps_ref > 0.0))
    throw ConfigError("analysis.eps_baseline and eps_ref must be positive");
  DetectorConfig::from_id(reference_detector);
}

SweepPlan ExperimentConfig::to_plan() const {
  SweepPlan plan;
  plan.envs = envs;
  for (const auto& id : detectors)
    plan.detectors.push_back(DetectorConfig::from_id(id));
  plan.epsilons = epsilon_grid();
  plan.profiles.clear();
  for (const auto& p : profiles)
    plan.profiles.push_back(drift_kind_from_string(p));
  plan.capacities.clear();
  for (const auto& cap : capacities)
    plan.capacities.push_back(capacity_from_string(cap));
  plan.seeds = seeds;
  plan.episodes_per_seed = episodes_per_seed;
  plan.horizon = horizon;
  plan.onset = onset;
  plan.master_seed = master_seed;
  plan.jobs = jobs;
  plan.trace_mode = trace == "none"    ? TraceMode::none
                    : trace == "first" ? TraceMode::first_detector
                                       : TraceMode::all;
  plan.trace_downsample = trace_downsample;
  return plan;
}

TrainSettings ExperimentConfig::to_train_settings() const {
  TrainSettings s;
  s.learning_rate = learning_rate;
  s.batch_size = batch_size;
  s.epochs = epochs;
  s.holdout_fraction = holdout_fraction;
  s.weight_decay = weight_decay;
  return s;
}

}  // namespace driftmon
