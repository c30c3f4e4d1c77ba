#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "perfskill/docgen.hpp"
#include "perfskill/executor.hpp"

namespace perfskill {

enum class Stage { planned, sweep_done, screen_done, joint_done, compiled };
std::string to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct StageBudget {
  std::size_t planned = 0;
  std::size_t executed = 0;
  bool operator==(const StageBudget&) const = default;
};

// Persisted as state.json inside the campaign directory. Paths are relative
// to the directory.
struct CampaignState {
  int schema_version = 1;
  std::string campaign_id;
  Stage stage = Stage::planned;
  std::uint64_t seed = 0;
  int repetitions = 3;
  int levels = 5;
  double tau_s = 0.05;
  std::string adapter;  // sim:<file> | shell:<command template>
  std::string space_file = "space.json";
  std::string log_file = "measurements.jsonl";
  std::map<std::string, StageBudget> budgets;  // sweep, screen, joint
  bool operator==(const CampaignState&) const = default;
};

void to_json(nlohmann::json& j, const CampaignState& s);
void from_json(const nlohmann::json& j, CampaignState& s);

// Builds an adapter from "sim:<model.json>" or "shell:<template>". Relative
// model paths are resolved against base.
std::unique_ptr<Adapter> make_adapter(const std::string& spec, const ParameterSpace& space,
                                      const std::filesystem::path& base = {});

// Exclusive ownership of a campaign directory through a lock file.
class CampaignLock {
 public:
  explicit CampaignLock(const std::filesystem::path& dir);
  ~CampaignLock();
  CampaignLock(const CampaignLock&) = delete;
  CampaignLock& operator=(const CampaignLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct ProfileRequest {
  std::filesystem::path space;
  std::filesystem::path workloads;  // optional if the space file lists them
  std::string adapter;
  std::uint64_t seed = 0;
  int repetitions = 3;
  int levels = 5;
  double tau_s = 0.05;
  std::string campaign_id;  // derived from the inputs when empty
};

struct RunSettings {
  std::size_t parallelism = 1;
  std::optional<std::string> adapter;  // overrides the campaign's adapter
};

// Each command writes its report into the campaign directory and a human
// summary to out. Stage-order violations throw UsageError.
void cmd_profile(const std::filesystem::path& dir, const ProfileRequest& req,
                 const RunSettings& run, std::ostream& out);
void cmd_screen(const std::filesystem::path& dir, const RunSettings& run, std::ostream& out);
void cmd_joint(const std::filesystem::path& dir, const RunSettings& run, std::ostream& out);
void cmd_compile(const std::filesystem::path& dir, const CompilePolicy& policy, std::ostream& out);

struct TuneRequest {
  std::filesystem::path document;
  std::string adapter;
  std::size_t budget = 120;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::filesystem::path out_dir;
};

// Writes trace.jsonl and final_config.conf into out_dir; progress goes to log.
TuningSession cmd_tune(const TuneRequest& req, std::ostream& out, std::ostream& log);
void cmd_export(const std::filesystem::path& document, const std::string& format,
                const std::filesystem::path& output, std::ostream& out);
// Returns false when the trace does not replay.
bool cmd_replay(const std::filesystem::path& document, const std::filesystem::path& trace,
                std::ostream& out);
bool cmd_validate(const std::filesystem::path& document, std::ostream& out);

// Stage split of the campaign's planned runs against the reference shape.
struct BudgetReport {
  StageBudget sweep;
  StageBudget screen;
  StageBudget joint;
  std::size_t total_planned() const { return sweep.planned + screen.planned + joint.planned; }
  // Percent of the planned total.
  double share(const StageBudget& b) const;
};

inline constexpr double kReferenceShares[3] = {57.0, 32.0, 11.0};

BudgetReport cmd_budget(const std::filesystem::path& dir, std::ostream& out);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and rename.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace perfskill
