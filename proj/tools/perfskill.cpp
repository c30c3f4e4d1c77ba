// perfskill: profile a configurable system, compile a tuning document, run it.
#include <iostream>

#include "CLI11.hpp"
#include "perfskill/campaign.hpp"
#include "perfskill/error.hpp"

using namespace perfskill;

namespace {

enum Exit { kOk = 0, kUsage = 1, kAnalysis = 2, kAdapter = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline profiling and procedural tuning of configurable systems"};
  app.require_subcommand(1);

  std::string campaign = "campaign";
  std::string space, workloads, adapter;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  int repetitions = 3;
  int levels = 5;
  double tau_s = 0.05;
  std::string campaign_id;

  auto* profile = app.add_subcommand("profile", "Sensitivity sweep and analysis (stage 1)");
  profile->add_option("--space", space, "Parameter space file")->required();
  profile->add_option("--workloads", workloads, "Workload file");
  profile->add_option("--adapter", adapter, "sim:<model-file> or shell:<command-template>");
  profile->add_option("--seed", seed, "Campaign seed");
  profile->add_option("--parallelism", parallelism, "Concurrent runs")->check(CLI::PositiveNumber);
  profile->add_option("--repetitions", repetitions, "Repetitions per level");
  profile->add_option("--levels", levels, "Sweep levels per parameter");
  profile->add_option("--tau-s", tau_s, "Sensitivity threshold (ratio)");
  profile->add_option("--campaign", campaign, "Campaign directory");
  profile->add_option("--campaign-id", campaign_id, "Campaign id (derived when omitted)");

  std::optional<std::string> adapter_override;
  auto add_stage = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--campaign", campaign, "Campaign directory");
    c->add_option("--parallelism", parallelism, "Concurrent runs")->check(CLI::PositiveNumber);
    c->add_option("--adapter", adapter_override, "Override the campaign adapter");
    return c;
  };
  auto* screen = add_stage("screen", "Two-stage interaction screen (stage 2)");
  auto* joint = add_stage("joint", "Joint optimization of correlated components (stage 3)");

  CompilePolicy policy;
  auto* compile = app.add_subcommand("compile", "Compile the procedural tuning document");
  compile->add_option("--campaign", campaign, "Campaign directory");
  compile->add_option("--eta-threshold", policy.eta_threshold, "Joint search threshold on eta^2");
  compile->add_option("--online-repetitions", policy.online_repetitions, "Repetitions per online benchmark");
  compile->add_option("--convergence-tol", policy.convergence_tol, "Relative pass improvement to stop");

  std::string document;
  std::size_t budget = 120;
  std::string out_dir;
  auto* tune = app.add_subcommand("tune", "Execute a document against a system");
  tune->add_option("--document", document, "Document file")->required();
  tune->add_option("--adapter", adapter, "sim:<model-file> or shell:<command-template>")->required();
  tune->add_option("--budget", budget, "Maximum benchmark trials")->check(CLI::PositiveNumber);
  tune->add_option("--seed", seed, "Session seed");
  tune->add_option("--parallelism", parallelism, "Concurrent repetitions")->check(CLI::PositiveNumber);
  tune->add_option("--out", out_dir, "Output directory (default: the document's)");

  std::string format = "generic";
  std::string output;
  auto* exp = app.add_subcommand("export", "Export knowledge for an external tuner");
  exp->add_option("--document", document, "Document file")->required();
  exp->add_option("--format", format, "generic | gptuner");
  exp->add_option("--out", output, "Output file")->required();

  std::string trace;
  auto* replay = app.add_subcommand("replay", "Re-check every verdict in a session trace");
  replay->add_option("--document", document, "Document file")->required();
  replay->add_option("--trace", trace, "Trace file")->required();

  auto* validate = app.add_subcommand("validate", "Check a document");
  validate->add_option("--document", document, "Document file")->required();

  auto* budget_cmd = app.add_subcommand("budget", "Stage budget split of a campaign");
  budget_cmd->add_option("--campaign", campaign, "Campaign directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    RunSettings run{parallelism, adapter_override};
    if (profile->parsed()) {
      ProfileRequest req{space, workloads, adapter, seed, repetitions, levels, tau_s, campaign_id};
      cmd_profile(campaign, req, run, std::cout);
    } else if (screen->parsed()) {
      cmd_screen(campaign, run, std::cout);
    } else if (joint->parsed()) {
      cmd_joint(campaign, run, std::cout);
    } else if (compile->parsed()) {
      cmd_compile(campaign, policy, std::cout);
    } else if (tune->parsed()) {
      TuneRequest req{document, adapter, budget, seed, parallelism, out_dir};
      const auto session = cmd_tune(req, std::cout, std::cerr);
      if (session.status != SessionStatus::converged) return kAnalysis;
    } else if (exp->parsed()) {
      cmd_export(document, format, output, std::cout);
    } else if (replay->parsed()) {
      if (!cmd_replay(document, trace, std::cout)) return kAnalysis;
    } else if (validate->parsed()) {
      if (!cmd_validate(document, std::cout)) return kAnalysis;
    } else if (budget_cmd->parsed()) {
      cmd_budget(campaign, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const AdapterError& e) {
    std::cerr << "adapter error: " << e.what() << "\n";
    return kAdapter;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAnalysis;
  }
  return kOk;
}
