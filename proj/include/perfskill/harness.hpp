#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "perfskill/config_space.hpp"

namespace perfskill {

enum class Outcome { ok, crash, timeout, degraded };

std::string to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

struct Measurement {
  Configuration config;
  std::string workload_id;
  int repetition = 0;
  std::optional<double> metric_value;
  Outcome outcome = Outcome::ok;
  double wall_time = 0.0;
  std::string diagnostic;

  bool operator==(const Measurement&) const = default;
};

void to_json(nlohmann::json& j, const Measurement& m);
void from_json(const nlohmann::json& j, Measurement& m);

// Identity of a run inside a campaign: (config hash, workload, repetition).
struct RunKey {
  std::uint64_t config_hash = 0;
  std::string workload_id;
  int repetition = 0;
  auto operator<=>(const RunKey&) const = default;
};

RunKey key_of(const Configuration& config, const std::string& workload, int repetition);
inline RunKey key_of(const Measurement& m) {
  return key_of(m.config, m.workload_id, m.repetition);
}

struct LogHeader {
  std::uint64_t seed = 0;
  std::uint64_t space_hash = 0;
  std::string timestamp;
  bool operator==(const LogHeader&) const = default;
};

// Append-only record store keyed by RunKey.
class MeasurementLog {
 public:
  MeasurementLog() = default;
  explicit MeasurementLog(LogHeader header) : header_(std::move(header)) {}

  const LogHeader& header() const { return header_; }
  const std::vector<Measurement>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Throws ParameterError on a duplicate key.
  void append(Measurement m);
  bool contains(const RunKey& key) const { return index_.count(key) != 0; }
  const Measurement* find(const RunKey& key) const;

  // Records for one workload whose explicit assignments equal config.
  std::vector<const Measurement*> select(const Configuration& config,
                                         const std::string& workload) const;

  // One header line followed by one record per line.
  void save(const std::filesystem::path& path) const;
  // Tolerates a truncated final line left by an interrupted append.
  static MeasurementLog load(const std::filesystem::path& path);

 private:
  LogHeader header_;
  std::vector<Measurement> records_;
  std::map<RunKey, std::size_t> index_;
  std::map<std::pair<std::uint64_t, std::string>, std::vector<std::size_t>> by_config_;
};

// Appends records to a log file as they complete, for crash recovery.
class LogAppender {
 public:
  LogAppender(std::filesystem::path path, const LogHeader& header);
  void append(const Measurement& m);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

struct RunResult {
  Outcome outcome = Outcome::ok;
  std::optional<double> metric_value;
  double wall_time = 0.0;
  std::string diagnostic;
};

// A system under test. run() receives a fully resolved configuration.
class Adapter {
 public:
  virtual ~Adapter() = default;
  virtual std::string id() const = 0;
  virtual const ParameterSpace& space() const = 0;
  virtual std::size_t max_concurrency() const = 0;
  virtual RunResult run(const Configuration& resolved, const WorkloadSpec& workload,
                        std::uint64_t seed) = 0;
};

// Per-repetition seed from (campaign seed, config hash, workload, repetition).
std::uint64_t repetition_seed(std::uint64_t campaign_seed, const Configuration& config,
                              std::string_view workload_id, int repetition);

struct ExperimentOptions {
  // Seconds; 0 disables the limit.
  double wall_time_budget = 0.0;
};

Measurement run_experiment(Adapter& adapter, const Configuration& config,
                           const WorkloadSpec& workload, int repetition, std::uint64_t seed,
                           const ExperimentOptions& options = {});

struct PlanEntry {
  Configuration config;
  std::string workload_id;
  int repetition = 0;
  bool operator==(const PlanEntry&) const = default;
};

using ExperimentPlan = std::vector<PlanEntry>;

struct RunPlanOptions {
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
  ExperimentOptions experiment;
  // Mark ok records below half the all-defaults mean as degraded.
  bool tag_degraded = true;
  // Completed entries are skipped; new records are appended.
  const MeasurementLog* existing = nullptr;
  LogAppender* appender = nullptr;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct RunPlanStats {
  std::size_t executed = 0;
  std::size_t reused = 0;
};

// Runs every plan entry and returns the log in plan order (existing records
// first). The content does not depend on worker completion order.
MeasurementLog run_plan(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                        const ExperimentPlan& plan, const RunPlanOptions& options,
                        RunPlanStats* stats = nullptr);

const WorkloadSpec& find_workload(const std::vector<WorkloadSpec>& workloads,
                                  std::string_view id);

// Mean over ok records of the all-defaults configuration, if any.
std::optional<double> baseline_mean(const MeasurementLog& log, const std::string& workload);

}  // namespace perfskill
