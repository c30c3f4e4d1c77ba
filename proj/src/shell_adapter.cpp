#include "perfskill/shell_adapter.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <sstream>

#include "perfskill/error.hpp"

extern char** environ;

namespace perfskill {

ShellAdapter::ShellAdapter(ParameterSpace space, std::string command_template,
                           double timeout_seconds, std::size_t max_concurrency)
    : space_(std::move(space)),
      template_(std::move(command_template)),
      timeout_(timeout_seconds),
      max_concurrency_(std::max<std::size_t>(1, max_concurrency)) {
  if (template_.empty()) throw ParameterError("empty shell command template");
}

std::optional<double> parse_metric_line(std::string_view output) {
  std::optional<double> metric;
  std::istringstream in{std::string(output)};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    double v;
    if (ls >> tag && tag == "METRIC" && ls >> v) metric = v;
  }
  return metric;
}

namespace {

std::string substitute(std::string s, const std::string& key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
    s.replace(pos, key.size(), value);
  }
  return s;
}

}  // namespace

RunResult ShellAdapter::run(const Configuration& resolved, const WorkloadSpec& workload,
                            std::uint64_t seed) {
  std::string cmd = substitute(template_, "{workload}", workload.id);
  cmd = substitute(cmd, "{seed}", std::to_string(seed));

  std::vector<std::string> env_strings;
  for (char** e = environ; e && *e; ++e) env_strings.emplace_back(*e);
  for (const auto& p : space_.parameters()) {
    env_strings.push_back(p.name + "=" + p.format_value(resolved.value_or_default(p)));
  }
  env_strings.push_back("PERFSKILL_WORKLOAD=" + workload.id);
  env_strings.push_back("PERFSKILL_SEED=" + std::to_string(seed));
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);

  int fds[2];
  if (pipe(fds) != 0) throw AdapterError("pipe() failed");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  posix_spawn_file_actions_addclose(&actions, fds[1]);

  std::string sh = "/bin/sh";
  std::string dash_c = "-c";
  char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
  const auto start = std::chrono::steady_clock::now();
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, envp.data());
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) {
    close(fds[0]);
    throw AdapterError("cannot spawn /bin/sh");
  }

  RunResult result;
  std::string output;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    int wait_ms = -1;
    if (timeout_ > 0.0) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (elapsed >= timeout_) {
        timed_out = true;
        break;
      }
      wait_ms = static_cast<int>((timeout_ - elapsed) * 1000.0) + 1;
    }
    pollfd pfd{fds[0], POLLIN, 0};
    const int ready = poll(&pfd, 1, wait_ms);
    if (ready == 0) continue;
    if (ready < 0) break;
    const ssize_t n = read(fds[0], buf, sizeof(buf));
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  close(fds[0]);
  if (timed_out) kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (timed_out) {
    result.outcome = Outcome::timeout;
    result.diagnostic = "command exceeded " + std::to_string(timeout_) + "s";
    return result;
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    result.outcome = Outcome::crash;
    result.diagnostic = "command exited with status " +
                        std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1);
    return result;
  }
  auto metric = parse_metric_line(output);
  if (!metric) {
    result.outcome = Outcome::crash;
    result.diagnostic = "no METRIC line in command output";
    return result;
  }
  result.metric_value = *metric;
  return result;
}

}  // namespace perfskill
