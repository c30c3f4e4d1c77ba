#pragma once

#include <string>

#include "perfskill/harness.hpp"

namespace perfskill {

// Runs `/bin/sh -c <template>` once per experiment. Each parameter is passed
// as an environment variable NAME=value (values formatted per domain, enum
// choices by name), plus PERFSKILL_WORKLOAD and PERFSKILL_SEED. The
// placeholders {workload} and {seed} in the template are substituted.
// The command must print a line `METRIC <float>`; a nonzero exit status or a
// missing metric line is a crash.
class ShellAdapter : public Adapter {
 public:
  ShellAdapter(ParameterSpace space, std::string command_template,
               double timeout_seconds = 0.0, std::size_t max_concurrency = 1);

  std::string id() const override { return "shell"; }
  const ParameterSpace& space() const override { return space_; }
  std::size_t max_concurrency() const override { return max_concurrency_; }
  RunResult run(const Configuration& resolved, const WorkloadSpec& workload,
                std::uint64_t seed) override;

 private:
  ParameterSpace space_;
  std::string template_;
  double timeout_;
  std::size_t max_concurrency_;
};

// Parses the last `METRIC <float>` line of command output.
std::optional<double> parse_metric_line(std::string_view output);

}  // namespace perfskill
