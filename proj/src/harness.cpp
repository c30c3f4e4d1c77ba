#include "perfskill/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "perfskill/error.hpp"
#include "perfskill/hash.hpp"

namespace perfskill {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::ok:
      return "ok";
    case Outcome::crash:
      return "crash";
    case Outcome::timeout:
      return "timeout";
    case Outcome::degraded:
      return "degraded";
  }
  return "?";
}

Outcome outcome_from_string(std::string_view s) {
  if (s == "ok") return Outcome::ok;
  if (s == "crash") return Outcome::crash;
  if (s == "timeout") return Outcome::timeout;
  if (s == "degraded") return Outcome::degraded;
  throw ParameterError("unknown outcome " + std::string(s));
}

void to_json(nlohmann::json& j, const Measurement& m) {
  j = nlohmann::json{{"config", m.config},
                     {"workload", m.workload_id},
                     {"repetition", m.repetition},
                     {"outcome", to_string(m.outcome)},
                     {"wall_time", m.wall_time}};
  j["metric"] = m.metric_value ? nlohmann::json(*m.metric_value) : nlohmann::json(nullptr);
  if (!m.diagnostic.empty()) j["diagnostic"] = m.diagnostic;
}

void from_json(const nlohmann::json& j, Measurement& m) {
  m.config = j.at("config").get<Configuration>();
  m.workload_id = j.at("workload").get<std::string>();
  m.repetition = j.at("repetition").get<int>();
  m.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  m.wall_time = j.value("wall_time", 0.0);
  const auto& metric = j.at("metric");
  m.metric_value = metric.is_null() ? std::nullopt : std::optional<double>(metric.get<double>());
  m.diagnostic = j.value("diagnostic", std::string{});
}

RunKey key_of(const Configuration& config, const std::string& workload, int repetition) {
  return RunKey{config.hash(), workload, repetition};
}

void MeasurementLog::append(Measurement m) {
  auto key = key_of(m);
  if (index_.count(key)) {
    throw ParameterError("duplicate measurement for " + m.config.to_string() + " / " +
                         m.workload_id + " / rep " + std::to_string(m.repetition));
  }
  by_config_[{key.config_hash, m.workload_id}].push_back(records_.size());
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(m));
}

const Measurement* MeasurementLog::find(const RunKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::vector<const Measurement*> MeasurementLog::select(const Configuration& config,
                                                       const std::string& workload) const {
  std::vector<const Measurement*> out;
  auto it = by_config_.find({config.hash(), workload});
  if (it == by_config_.end()) return out;
  for (auto i : it->second) {
    if (records_[i].config == config) out.push_back(&records_[i]);
  }
  return out;
}

namespace {

nlohmann::json header_json(const LogHeader& h) {
  return {{"type", "header"},
          {"schema_version", kSchemaVersion},
          {"seed", h.seed},
          {"space_hash", h.space_hash},
          {"timestamp", h.timestamp}};
}

}  // namespace

void MeasurementLog::save(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw AdapterError("cannot write " + tmp.string());
    out << header_json(header_).dump() << '\n';
    for (const auto& m : records_) out << nlohmann::json(m).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

MeasurementLog MeasurementLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read measurement log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParameterError("empty measurement log " + path.string());
  auto head = nlohmann::json::parse(line);
  if (head.value("type", std::string{}) != "header") {
    throw ParameterError("measurement log without header: " + path.string());
  }
  MeasurementLog log(LogHeader{head.at("seed").get<std::uint64_t>(),
                               head.at("space_hash").get<std::uint64_t>(),
                               head.value("timestamp", std::string{})});
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded()) {
      // Only the final line may be torn.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParameterError("corrupt record in " + path.string());
    }
    auto m = rec.get<Measurement>();
    if (!log.contains(key_of(m))) log.append(std::move(m));
  }
  return log;
}

LogAppender::LogAppender(std::filesystem::path path, const LogHeader& header)
    : path_(std::move(path)) {
  if (!std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::trunc);
    out << header_json(header).dump() << '\n';
  }
}

void LogAppender::append(const Measurement& m) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  out << nlohmann::json(m).dump() << '\n';
}

std::uint64_t repetition_seed(std::uint64_t campaign_seed, const Configuration& config,
                              std::string_view workload_id, int repetition) {
  std::uint64_t h = combine64(campaign_seed, config.hash());
  h = combine64(h, fnv1a(workload_id));
  return combine64(h, static_cast<std::uint64_t>(repetition));
}

Measurement run_experiment(Adapter& adapter, const Configuration& config,
                           const WorkloadSpec& workload, int repetition, std::uint64_t seed,
                           const ExperimentOptions& options) {
  const auto validation = validate_configuration(adapter.space(), config);
  if (!validation.ok()) {
    throw ParameterError("invalid configuration: " + validation.violations.front().message);
  }
  Measurement m;
  m.config = config;
  m.workload_id = workload.id;
  m.repetition = repetition;
  RunResult r;
  try {
    r = adapter.run(resolve(adapter.space(), config), workload,
                    repetition_seed(seed, config, workload.id, repetition));
  } catch (const std::exception& e) {
    r = RunResult{Outcome::crash, std::nullopt, 0.0, std::string("adapter failure: ") + e.what()};
  }
  m.outcome = r.outcome;
  m.metric_value = r.metric_value;
  m.wall_time = r.wall_time;
  m.diagnostic = r.diagnostic;
  if (m.outcome == Outcome::ok && (!m.metric_value || !std::isfinite(*m.metric_value))) {
    m.outcome = Outcome::crash;
    m.metric_value.reset();
    if (m.diagnostic.empty()) m.diagnostic = "non-finite metric";
  }
  if (m.outcome == Outcome::crash || m.outcome == Outcome::timeout) m.metric_value.reset();
  if (options.wall_time_budget > 0.0 && m.wall_time > options.wall_time_budget) {
    m.outcome = Outcome::timeout;
    m.metric_value.reset();
  }
  return m;
}

const WorkloadSpec& find_workload(const std::vector<WorkloadSpec>& workloads,
                                  std::string_view id) {
  for (const auto& w : workloads) {
    if (w.id == id) return w;
  }
  throw ParameterError("unknown workload " + std::string(id));
}

std::optional<double> baseline_mean(const MeasurementLog& log, const std::string& workload) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* m : log.select(Configuration{}, workload)) {
    if (m->outcome == Outcome::ok) {
      sum += *m->metric_value;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

void tag_degraded(MeasurementLog& log, const std::vector<WorkloadSpec>& workloads) {
  std::map<std::string, double> baselines;
  for (const auto& w : workloads) {
    if (auto b = baseline_mean(log, w.id)) baselines[w.id] = *b;
  }
  MeasurementLog tagged(log.header());
  for (auto m : log.records()) {
    auto it = baselines.find(m.workload_id);
    if (it != baselines.end() && m.metric_value && !m.config.empty() &&
        (m.outcome == Outcome::ok || m.outcome == Outcome::degraded)) {
      const auto& w = find_workload(workloads, m.workload_id);
      const bool degraded = w.direction == Direction::maximize
                                ? *m.metric_value < 0.5 * it->second
                                : *m.metric_value > 2.0 * it->second;
      m.outcome = degraded ? Outcome::degraded : Outcome::ok;
    }
    tagged.append(std::move(m));
  }
  log = std::move(tagged);
}

}  // namespace

MeasurementLog run_plan(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                        const ExperimentPlan& plan, const RunPlanOptions& options,
                        RunPlanStats* stats) {
  {
    std::map<RunKey, int> seen;
    for (const auto& e : plan) {
      if (seen[key_of(e.config, e.workload_id, e.repetition)]++) {
        throw ParameterError("duplicate plan entry " + e.config.to_string() + " / " +
                             e.workload_id + " / rep " + std::to_string(e.repetition));
      }
    }
  }
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& e = plan[i];
    find_workload(workloads, e.workload_id);
    if (options.existing && options.existing->contains(key_of(e.config, e.workload_id,
                                                              e.repetition))) {
      continue;
    }
    todo.push_back(i);
  }

  std::vector<std::optional<Measurement>> results(plan.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= todo.size()) return;
      const auto& e = plan[todo[slot]];
      try {
        auto m = run_experiment(adapter, e.config, find_workload(workloads, e.workload_id),
                                e.repetition, options.seed, options.experiment);
        if (options.appender) options.appender->append(m);
        results[todo[slot]] = std::move(m);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
      const auto finished = done.fetch_add(1) + 1;
      if (options.progress) {
        std::lock_guard lock(progress_mu);
        options.progress(finished, todo.size());
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(
      1, std::min({options.parallelism, adapter.max_concurrency(), todo.size()}));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  MeasurementLog log = options.existing ? *options.existing
                                        : MeasurementLog(LogHeader{options.seed, adapter.space().hash(), {}});
  for (auto& r : results) {
    if (r) log.append(std::move(*r));
  }
  if (options.tag_degraded) tag_degraded(log, workloads);
  if (stats) {
    stats->executed = todo.size();
    stats->reused = plan.size() - todo.size();
  }
  return log;
}

}  // namespace perfskill
