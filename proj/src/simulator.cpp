#include "perfskill/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "perfskill/error.hpp"
#include "perfskill/hash.hpp"

namespace perfskill {

std::string to_string(ResponseShape s) {
  switch (s) {
    case ResponseShape::flat:
      return "flat";
    case ResponseShape::linear_up:
      return "linear-up";
    case ResponseShape::linear_down:
      return "linear-down";
    case ResponseShape::quadratic_peak:
      return "quadratic-peak";
    case ResponseShape::step:
      return "step";
  }
  return "?";
}

ResponseShape response_shape_from_string(std::string_view s) {
  for (auto shape : {ResponseShape::flat, ResponseShape::linear_up, ResponseShape::linear_down,
                     ResponseShape::quadratic_peak, ResponseShape::step}) {
    if (to_string(shape) == s) return shape;
  }
  throw ParameterError("unknown response shape " + std::string(s));
}

void to_json(nlohmann::json& j, const SimulatorModel& m) {
  j = nlohmann::json::object();
  j["schema_version"] = kSchemaVersion;
  j["base_rate"] = m.base_rate;
  j["workload_base"] = m.workload_base;
  j["noise_sigma"] = m.noise_sigma;
  j["seed"] = m.seed;
  j["seconds_per_run"] = m.seconds_per_run;
  auto& responses = j["responses"] = nlohmann::json::array();
  for (const auto& r : m.responses) {
    nlohmann::json e{{"parameter", r.parameter}, {"shape", to_string(r.shape)}};
    switch (r.shape) {
      case ResponseShape::linear_up:
      case ResponseShape::linear_down:
        e["strength"] = r.strength;
        break;
      case ResponseShape::quadratic_peak:
        e["strength"] = r.strength;
        e["peak"] = r.peak;
        break;
      case ResponseShape::step:
        e["threshold"] = r.threshold;
        e["low"] = r.low;
        e["high"] = r.high;
        break;
      case ResponseShape::flat:
        break;
    }
    if (!r.workloads.empty()) e["workloads"] = r.workloads;
    responses.push_back(e);
  }
  auto& couplings = j["couplings"] = nlohmann::json::array();
  for (const auto& c : m.couplings) {
    nlohmann::json e{{"a", c.a}, {"b", c.b}, {"strength", c.strength}};
    if (!c.workloads.empty()) e["workloads"] = c.workloads;
    couplings.push_back(e);
  }
  auto& crashes = j["crash_regions"] = nlohmann::json::array();
  for (const auto& c : m.crash_regions) {
    crashes.push_back({{"parameter", c.parameter}, {"lo", c.lo}, {"hi", c.hi}});
  }
}

void from_json(const nlohmann::json& j, SimulatorModel& m) {
  m = SimulatorModel{};
  m.base_rate = j.value("base_rate", 1000.0);
  if (j.contains("workload_base")) {
    m.workload_base = j.at("workload_base").get<std::map<std::string, double>>();
  }
  m.noise_sigma = j.value("noise_sigma", 0.0);
  m.seed = j.value("seed", std::uint64_t{0});
  m.seconds_per_run = j.value("seconds_per_run", 60.0);
  for (const auto& e : j.value("responses", nlohmann::json::array())) {
    Response r;
    r.parameter = e.at("parameter").get<std::string>();
    r.shape = response_shape_from_string(e.at("shape").get<std::string>());
    r.strength = e.value("strength", 0.0);
    r.peak = e.value("peak", 0.0);
    r.threshold = e.value("threshold", 0.0);
    r.low = e.value("low", 1.0);
    r.high = e.value("high", 1.0);
    r.workloads = e.value("workloads", std::vector<std::string>{});
    m.responses.push_back(std::move(r));
  }
  for (const auto& e : j.value("couplings", nlohmann::json::array())) {
    m.couplings.push_back(Coupling{e.at("a").get<std::string>(), e.at("b").get<std::string>(),
                                   e.at("strength").get<double>(),
                                   e.value("workloads", std::vector<std::string>{})});
  }
  for (const auto& e : j.value("crash_regions", nlohmann::json::array())) {
    m.crash_regions.push_back(CrashRegion{e.at("parameter").get<std::string>(),
                                          e.at("lo").get<double>(), e.at("hi").get<double>()});
  }
}

SimulatorAdapter::SimulatorAdapter(ParameterSpace space, SimulatorModel model)
    : space_(std::move(space)), model_(std::move(model)) {
  if (!(model_.base_rate > 0.0)) throw ParameterError("simulator base_rate must be > 0");
  if (model_.noise_sigma < 0.0) throw ParameterError("simulator noise_sigma must be >= 0");
  for (const auto& [w, b] : model_.workload_base) {
    if (!(b > 0.0)) throw ParameterError("simulator base rate for " + w + " must be > 0");
  }
  for (const auto& r : model_.responses) {
    space_.at(r.parameter);
    const bool linear = r.shape == ResponseShape::linear_up ||
                        r.shape == ResponseShape::linear_down ||
                        r.shape == ResponseShape::quadratic_peak;
    if (linear && r.strength <= -1.0) {
      throw ParameterError("response for " + r.parameter + " must keep multipliers positive");
    }
    if (r.shape == ResponseShape::step && (r.low <= 0.0 || r.high <= 0.0)) {
      throw ParameterError("step multipliers for " + r.parameter + " must be positive");
    }
  }
  for (const auto& c : model_.couplings) {
    space_.at(c.a);
    space_.at(c.b);
    if (std::abs(c.strength) >= 1.0) {
      throw ParameterError("coupling " + c.a + "x" + c.b + " strength must be in (-1, 1)");
    }
  }
  for (const auto& c : model_.crash_regions) space_.at(c.parameter);
}

namespace {

bool applies(const std::vector<std::string>& workloads, std::string_view w) {
  return workloads.empty() || std::find(workloads.begin(), workloads.end(), w) != workloads.end();
}

}  // namespace

std::optional<double> SimulatorAdapter::evaluate(const Configuration& config,
                                                 std::string_view workload) const {
  auto value = [&](const std::string& name) {
    return config.value_or_default(space_.at(name));
  };
  for (const auto& c : model_.crash_regions) {
    const double v = value(c.parameter);
    if (v > c.lo && v <= c.hi) return std::nullopt;
  }
  auto base_it = model_.workload_base.find(std::string(workload));
  double metric = base_it == model_.workload_base.end() ? model_.base_rate : base_it->second;
  for (const auto& r : model_.responses) {
    if (!applies(r.workloads, workload)) continue;
    const auto& spec = space_.at(r.parameter);
    const double v = value(r.parameter);
    const double u = spec.normalize(v);
    switch (r.shape) {
      case ResponseShape::flat:
        break;
      case ResponseShape::linear_up:
        metric *= 1.0 + r.strength * u;
        break;
      case ResponseShape::linear_down:
        metric *= 1.0 + r.strength * (1.0 - u);
        break;
      case ResponseShape::quadratic_peak: {
        const double d = u - spec.normalize(r.peak);
        metric *= 1.0 + r.strength * (1.0 - d * d);
        break;
      }
      case ResponseShape::step:
        metric *= v >= r.threshold ? r.high : r.low;
        break;
    }
  }
  for (const auto& c : model_.couplings) {
    if (!applies(c.workloads, workload)) continue;
    const double xa = 2.0 * space_.at(c.a).normalize(value(c.a)) - 1.0;
    const double xb = 2.0 * space_.at(c.b).normalize(value(c.b)) - 1.0;
    metric *= 1.0 + c.strength * xa * xb;
  }
  return metric;
}

RunResult SimulatorAdapter::run(const Configuration& resolved, const WorkloadSpec& workload,
                                std::uint64_t seed) {
  RunResult r;
  r.wall_time = model_.seconds_per_run;
  auto truth = evaluate(resolved, workload.id);
  if (!truth) {
    r.outcome = Outcome::crash;
    r.diagnostic = "planted crash region";
    return r;
  }
  double noise = 1.0;
  if (model_.noise_sigma > 0.0) {
    // Box-Muller over mt19937_64 keeps draws identical across standard libraries.
    std::mt19937_64 gen(combine64(model_.seed, seed));
    auto uniform = [&] { return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53; };
    const double u1 = uniform();
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    noise = std::exp(model_.noise_sigma * z);
  }
  r.metric_value = *truth * noise;
  return r;
}

}  // namespace perfskill
