// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: fit, simulate, compare, gen-trace, gen-profiles.
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "coloc/cli.hpp"
#include "coloc/core.hpp"

namespace {

using coloc::cli::Config;
using coloc::cli::Overrides;

struct Common {
  std::string config_path;
  Overrides over;
  std::string mode;
  std::uint64_t seed = 0;
  double noise = 0.0;
  double headroom = 0.0;
  int gpus = 0;
  int grid_steps = 0;
  std::string trace;
  bool check = false;
  bool no_step_log = false;
};

void add_common(CLI::App* cmd, Common& c, bool sim_flags) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file")->required()->check(
      CLI::ExistingFile);
  if (!sim_flags) return;
  cmd->add_option("--mode", c.mode, "adaptive, static or separate");
  cmd->add_option("--seed", c.seed, "simulation seed");
  cmd->add_option("--noise", c.noise, "lognormal sigma on decode latency");
  cmd->add_option("--headroom", c.headroom, "fraction of the QoS target kept in reserve");
  cmd->add_option("--gpus", c.gpus, "number of devices");
  cmd->add_option("--grid-steps", c.grid_steps, "SM partition grid steps");
  cmd->add_option("--trace", c.trace, "trace CSV (overrides the config's trace)");
  cmd->add_flag("--check-invariants", c.check, "verify allocator state after every event");
  cmd->add_flag("--no-step-log", c.no_step_log, "omit per-step lines from events.csv");
}

Config resolve(CLI::App* cmd, const Common& c) {
  Overrides o;
  if (cmd->count("--mode")) o.mode = c.mode;
  if (cmd->count("--seed")) o.seed = c.seed;
  if (cmd->count("--noise")) o.noise_sigma = c.noise;
  if (cmd->count("--headroom")) o.headroom = c.headroom;
  if (cmd->count("--gpus")) o.gpus = c.gpus;
  if (cmd->count("--grid-steps")) o.grid_steps = c.grid_steps;
  if (cmd->count("--trace")) o.trace_path = c.trace;
  if (c.check) o.check_invariants = true;
  if (c.no_step_log) o.log_steps = false;
  Config cfg = coloc::cli::load_config(c.config_path);
  coloc::cli::apply(cfg, o);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GPU co-location simulator: inference plus finetuning on shared devices"};
  app.require_subcommand(1);

  Common fit_c, sim_c, cmp_c, trace_c, prof_c;
  std::string profiles_in, models_out = "models.json";
  auto* fit = app.add_subcommand("fit", "fit latency models from a profile CSV");
  add_common(fit, fit_c, false);
  fit->add_option("-p,--profiles", profiles_in, "profile CSV")->required();
  fit->add_option("-o,--out", models_out, "model file to write");

  std::string sim_models, sim_out = "out";
  auto* sim = app.add_subcommand("simulate", "run one mode and write report and timelines");
  add_common(sim, sim_c, true);
  sim->add_option("-m,--models", sim_models, "fitted model file (default: fit from the oracle)");
  sim->add_option("-o,--out", sim_out, "output directory");

  std::string cmp_models, cmp_out = "out";
  auto* cmp = app.add_subcommand("compare", "run all three modes on one trace and seed");
  add_common(cmp, cmp_c, true);
  cmp->add_option("-m,--models", cmp_models, "fitted model file (default: fit from the oracle)");
  cmp->add_option("-o,--out", cmp_out, "output directory");

  std::string trace_out = "trace.csv";
  double rate = 0.0, duration = 0.0;
  std::uint64_t trace_seed = 0;
  auto* gtrace = app.add_subcommand("gen-trace", "write a synthetic request trace");
  add_common(gtrace, trace_c, false);
  gtrace->add_option("-o,--out", trace_out, "trace CSV to write");
  gtrace->add_option("--rate", rate, "requests per second (single phase)");
  gtrace->add_option("--duration", duration, "seconds (single phase)");
  gtrace->add_option("--seed", trace_seed, "trace seed");

  std::string prof_out = "profiles.csv";
  double prof_noise = 0.0;
  std::uint64_t prof_seed = 0;
  auto* gprof = app.add_subcommand("gen-profiles", "write oracle-measured latency profiles");
  add_common(gprof, prof_c, false);
  gprof->add_option("-o,--out", prof_out, "profile CSV to write");
  gprof->add_option("--noise", prof_noise, "lognormal sigma on profiled latency");
  gprof->add_option("--seed", prof_seed, "profile noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "%s\n", coloc::cli::error_line("usage", e.what()).c_str());
    return 2;
  }

  try {
    if (*fit) {
      auto cfg = coloc::cli::load_config(fit_c.config_path);
      const auto o = coloc::cli::cmd_fit(cfg, profiles_in, models_out);
      if (o.colo_missing) {
        std::fprintf(stderr, "warning: no co-run rows in %s; co-run model omitted\n",
                     profiles_in.c_str());
      }
      fmt::print("solo_mape={:.4f} solo_max_error={:.4f} colo_mape={} rows={}+{} -> {}\n",
                 o.summary.solo_mape_overall, o.summary.solo_max_error,
                 o.summary.colo_mape ? fmt::format("{:.4f}", *o.summary.colo_mape) : "n/a",
                 o.summary.solo_rows, o.summary.colo_rows, models_out);
    } else if (*sim) {
      const auto cfg = resolve(sim, sim_c);
      std::optional<std::string> m;
      if (!sim_models.empty()) m = sim_models;
      const auto r = coloc::cli::cmd_simulate(cfg, m, sim_out);
      fmt::print("mode={} ft_throughput={:.4f} tpot_p50={:.2f} tpot_p99={:.2f} "
                 "qos_violation_rate={:.6f} -> {}/report.json\n",
                 coloc::to_string(r.mode), r.finetune_throughput, r.tpot_p50_ms, r.tpot_p99_ms,
                 r.qos_violation_rate, sim_out);
    } else if (*cmp) {
      const auto cfg = resolve(cmp, cmp_c);
      std::optional<std::string> m;
      if (!cmp_models.empty()) m = cmp_models;
      const auto c = coloc::cli::cmd_compare(cfg, m, cmp_out);
      fmt::print("{}", coloc::cli::comparison_table(c));
    } else if (*gtrace) {
      auto cfg = coloc::cli::load_config(trace_c.config_path);
      if (gtrace->count("--rate") || gtrace->count("--duration")) {
        cfg.trace.kind = coloc::TraceSpec::Kind::Synthetic;
        cfg.trace.phases.clear();
      }
      if (gtrace->count("--rate")) cfg.trace.rate_rps = rate;
      if (gtrace->count("--duration")) cfg.trace.duration_s = duration;
      if (gtrace->count("--seed")) cfg.trace.seed = trace_seed;
      const auto t = coloc::cli::cmd_gen_trace(cfg, trace_out);
      const auto s = coloc::summarize_trace(t);
      fmt::print("requests={} span_s={:.1f} mean_prompt={:.0f} mean_output={:.0f} -> {}\n",
                 s.count, s.span_ms / 1000.0, s.mean_prompt, s.mean_output, trace_out);
    } else if (*gprof) {
      auto cfg = coloc::cli::load_config(prof_c.config_path);
      if (gprof->count("--noise")) cfg.profile_noise_sigma = prof_noise;
      if (gprof->count("--seed")) cfg.profile_seed = prof_seed;
      const auto p = coloc::cli::cmd_gen_profiles(cfg, prof_out);
      fmt::print("rows={} -> {}\n", p.size(), prof_out);
    }
  } catch (const coloc::Error& e) {
    std::fprintf(stderr, "%s\n",
                 coloc::cli::error_line(coloc::to_string(e.kind()), e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", coloc::cli::error_line("internal", e.what()).c_str());
    return 1;
  }
  return 0;
}
