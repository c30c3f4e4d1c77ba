#pragma once

#include <optional>
#include <string>
#include <vector>

#include "perfskill/harness.hpp"

namespace perfskill {

enum class ResponseShape { flat, linear_up, linear_down, quadratic_peak, step };

std::string to_string(ResponseShape s);
ResponseShape response_shape_from_string(std::string_view s);

// Multiplier f_i as a function of one parameter. With u the position of the
// value in its domain mapped to [0, 1]:
//   linear-up       1 + strength * u
//   linear-down     1 + strength * (1 - u)
//   quadratic-peak  1 + strength * (1 - (u - u_peak)^2)
//   step            value >= threshold ? high : low
struct Response {
  std::string parameter;
  ResponseShape shape = ResponseShape::flat;
  double strength = 0.0;
  double peak = 0.0;       // raw parameter units
  double threshold = 0.0;  // raw parameter units
  double low = 1.0;
  double high = 1.0;
  // Restricts the response to these workloads; empty applies to all.
  std::vector<std::string> workloads;
};

// Pairwise multiplier g_ij = 1 + strength * (2 u_a - 1) * (2 u_b - 1):
// 1 + strength at the high-high and low-low corners, 1 - strength at the
// mixed corners, 1 when either parameter sits at its domain midpoint.
struct Coupling {
  std::string a;
  std::string b;
  double strength = 0.0;
  std::vector<std::string> workloads;
};

// Runs crash whenever lo < value <= hi.
struct CrashRegion {
  std::string parameter;
  double lo = 0.0;
  double hi = 0.0;
};

// metric = base * prod f_i * prod g_ij * exp(sigma * Z)
struct SimulatorModel {
  double base_rate = 1000.0;
  std::map<std::string, double> workload_base;
  std::vector<Response> responses;
  std::vector<Coupling> couplings;
  std::vector<CrashRegion> crash_regions;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Reported wall time per run; simulated so logs stay reproducible.
  double seconds_per_run = 60.0;
};

void to_json(nlohmann::json& j, const SimulatorModel& m);
void from_json(const nlohmann::json& j, SimulatorModel& m);

class SimulatorAdapter : public Adapter {
 public:
  SimulatorAdapter(ParameterSpace space, SimulatorModel model);

  std::string id() const override { return "sim"; }
  const ParameterSpace& space() const override { return space_; }
  std::size_t max_concurrency() const override { return 64; }
  RunResult run(const Configuration& resolved, const WorkloadSpec& workload,
                std::uint64_t seed) override;

  // Noise-free metric, or nullopt when the configuration is in a crash region.
  std::optional<double> evaluate(const Configuration& config, std::string_view workload) const;
  const SimulatorModel& model() const { return model_; }

 private:
  ParameterSpace space_;
  SimulatorModel model_;
};

}  // namespace perfskill
