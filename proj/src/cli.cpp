// SPDX-License-Identifier: Apache-2.0
#include "coloc/cli.hpp"

#include <filesystem>
#include <future>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "coloc/csv.hpp"

namespace coloc::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Reads one JSON object, remembering which keys were used.
class Obj {
 public:
  Obj(const json& j, std::string where, const std::string& source)
      : j_(j), where_(std::move(where)), source_(source) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(fmt::format("'{}' has the wrong type", key));
    }
  }

  Obj sub(const char* key) {
    used_.insert(key);
    return Obj(j_.at(key), where_ + "." + key, source_);
  }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (used_.count(k) == 0) fail(fmt::format("unknown key '{}'", k));
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::Parse, fmt::format("{}: {}: {}", source_, where_, what));
  }

 private:
  const json& j_;
  std::string where_;
  std::string source_;
  std::set<std::string> used_;
};

void read_gpu(Obj o, GpuSpec& g) {
  o.get("sm_count", g.sm_count);
  o.get("warps_per_sm", g.warps_per_sm);
  o.get("mem_bytes", g.mem_bytes);
  o.get("hbm_bandwidth", g.hbm_bandwidth);
  o.get("h2d_bandwidth", g.h2d_bandwidth);
  o.finish();
}

void read_model(Obj o, ModelSpec& m) {
  o.get("layer_count", m.layer_count);
  o.get("hidden_dim", m.hidden_dim);
  o.get("kv_bytes_per_token_layer", m.kv_bytes_per_token_layer);
  o.get("frozen_bytes_per_layer", m.frozen_bytes_per_layer);
  o.get("trainable_bytes_per_layer", m.trainable_bytes_per_layer);
  o.get("activation_bytes_per_sample_layer", m.activation_bytes_per_sample_layer);
  o.finish();
}

void read_oracle(Obj o, OracleParams& p) {
  o.get("weight_bytes_read_per_step", p.weight_bytes_read_per_step);
  o.get("compute_fixed_ms", p.compute_fixed_ms);
  o.get("compute_per_request_ms", p.compute_per_request_ms);
  o.get("compute_per_token_ms", p.compute_per_token_ms);
  o.get("pad_bs", p.pad_bs);
  o.get("compute_alpha", p.compute_alpha);
  o.get("bandwidth_alpha", p.bandwidth_alpha);
  o.get("ft_bytes_per_unit", p.ft_bytes_per_unit);
  o.finish();
}

void read_dist(Obj o, LengthDist& d) {
  o.get("values", d.values);
  o.get("weights", d.weights);
  o.finish();
}

void read_trace(Obj o, TraceSpec& t, const std::string& base_dir) {
  std::string kind = t.kind == TraceSpec::Kind::File ? "file" : "synthetic";
  o.get("kind", kind);
  if (kind == "file") {
    t.kind = TraceSpec::Kind::File;
  } else if (kind == "synthetic") {
    t.kind = TraceSpec::Kind::Synthetic;
  } else {
    o.fail(fmt::format("trace kind '{}' is neither file nor synthetic", kind));
  }
  if (o.has("path")) {
    o.get("path", t.path);
    if (!t.path.empty() && fs::path(t.path).is_relative() && !base_dir.empty()) {
      t.path = (fs::path(base_dir) / t.path).lexically_normal().string();
    }
  }
  o.get("rate_rps", t.rate_rps);
  o.get("duration_s", t.duration_s);
  o.get("seed", t.seed);
  if (o.has("phases")) {
    const auto& arr = o.raw("phases");
    if (!arr.is_array()) o.fail("'phases' must be an array");
    t.phases.clear();
    for (const auto& e : arr) {
      Obj p(e, "config.trace.phases[]", "config");
      TracePhase ph;
      p.get("duration_s", ph.duration_s);
      p.get("rate_rps", ph.rate_rps);
      p.finish();
      t.phases.push_back(ph);
    }
  }
  if (o.has("prompt")) read_dist(o.sub("prompt"), t.prompt);
  if (o.has("output")) read_dist(o.sub("output"), t.output);
  o.finish();
  if (t.kind == TraceSpec::Kind::File && t.path.empty()) o.fail("file trace needs a path");
}

ordered_json dist_json(const LengthDist& d) { return {{"values", d.values}, {"weights", d.weights}}; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create {}: {}", dir, ec.message()));
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

}  // namespace

Config config_from_json(const std::string& text, const std::string& source,
                        const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, fmt::format("{}: {}", source, e.what()));
  }
  Config cfg;
  auto& s = cfg.sim;
  Obj root(j, "config", source);
  if (root.has("gpu")) read_gpu(root.sub("gpu"), s.gpu);
  if (root.has("model_infer")) read_model(root.sub("model_infer"), s.model_infer);
  if (root.has("model_ft")) read_model(root.sub("model_ft"), s.model_ft);
  if (root.has("qos")) {
    auto q = root.sub("qos");
    q.get("tpot_ms", s.qos.tpot_ms);
    q.finish();
  }
  std::string mode = to_string(s.mode);
  root.get("mode", mode);
  s.mode = parse_mode(mode);
  root.get("gpus", s.gpus);
  root.get("noise_sigma", s.noise_sigma);
  root.get("seed", s.seed);
  root.get("grid_steps", s.grid_steps);
  root.get("headroom", s.headroom);
  root.get("hysteresis", s.hysteresis);
  root.get("check_invariants", s.check_invariants);
  root.get("log_steps", s.log_steps);
  if (root.has("oracle")) read_oracle(root.sub("oracle"), s.oracle);
  if (root.has("finetune")) {
    auto f = root.sub("finetune");
    f.get("enabled", s.finetune_enabled);
    f.get("mini_bs", s.finetune.mini_bs);
    f.get("per_sample_layer_ms", s.finetune.per_sample_layer_ms);
    f.get("backward_factor", s.finetune.backward_factor);
    f.get("unit_target_ms", s.finetune.unit_target_ms);
    f.finish();
  }
  if (root.has("memory")) {
    auto m = root.sub("memory");
    m.get("small_pool_bytes", s.small_pool_bytes);
    m.get("infer_static_bytes", s.infer_static_bytes);
    m.get("ft_pinned_bytes", s.ft_pinned_bytes);
    m.get("max_bs", s.max_bs);
    m.finish();
  }
  if (root.has("static_split")) {
    auto st = root.sub("static_split");
    st.get("infer_sm_units", s.static_split.infer_sm_units);
    st.get("ft_sm_units", s.static_split.ft_sm_units);
    st.get("infer_mem_frac", s.static_split.infer_mem_frac);
    st.finish();
  }
  if (root.has("trace")) read_trace(root.sub("trace"), cfg.trace, base_dir);
  if (root.has("profiles")) {
    auto p = root.sub("profiles");
    p.get("bs_list", cfg.profiles.bs_list);
    p.get("seqlen_max", cfg.profiles.seqlen_max);
    p.get("solo_seqlen_step", cfg.profiles.solo_seqlen_step);
    p.get("colo_seqlen_step", cfg.profiles.colo_seqlen_step);
    p.get("noise_sigma", cfg.profile_noise_sigma);
    p.get("seed", cfg.profile_seed);
    p.finish();
  }
  root.finish();
  cfg.profiles.grid_steps = s.grid_steps;
  s.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  return config_from_json(csv::read_file(path), path, fs::path(path).parent_path().string());
}

std::string config_to_json(const Config& cfg) {
  const auto& s = cfg.sim;
  auto model = [](const ModelSpec& m) {
    return ordered_json{{"layer_count", m.layer_count},
                        {"hidden_dim", m.hidden_dim},
                        {"kv_bytes_per_token_layer", m.kv_bytes_per_token_layer},
                        {"frozen_bytes_per_layer", m.frozen_bytes_per_layer},
                        {"trainable_bytes_per_layer", m.trainable_bytes_per_layer},
                        {"activation_bytes_per_sample_layer", m.activation_bytes_per_sample_layer}};
  };
  ordered_json j;
  j["gpu"] = {{"sm_count", s.gpu.sm_count},
              {"warps_per_sm", s.gpu.warps_per_sm},
              {"mem_bytes", s.gpu.mem_bytes},
              {"hbm_bandwidth", s.gpu.hbm_bandwidth},
              {"h2d_bandwidth", s.gpu.h2d_bandwidth}};
  j["model_infer"] = model(s.model_infer);
  j["model_ft"] = model(s.model_ft);
  j["qos"] = {{"tpot_ms", s.qos.tpot_ms}};
  j["mode"] = to_string(s.mode);
  j["gpus"] = s.gpus;
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  j["grid_steps"] = s.grid_steps;
  j["headroom"] = s.headroom;
  j["hysteresis"] = s.hysteresis;
  j["check_invariants"] = s.check_invariants;
  j["log_steps"] = s.log_steps;
  j["oracle"] = {{"weight_bytes_read_per_step", s.oracle.weight_bytes_read_per_step},
                 {"compute_fixed_ms", s.oracle.compute_fixed_ms},
                 {"compute_per_request_ms", s.oracle.compute_per_request_ms},
                 {"compute_per_token_ms", s.oracle.compute_per_token_ms},
                 {"pad_bs", s.oracle.pad_bs},
                 {"compute_alpha", s.oracle.compute_alpha},
                 {"bandwidth_alpha", s.oracle.bandwidth_alpha},
                 {"ft_bytes_per_unit", s.oracle.ft_bytes_per_unit}};
  j["finetune"] = {{"enabled", s.finetune_enabled},
                   {"mini_bs", s.finetune.mini_bs},
                   {"per_sample_layer_ms", s.finetune.per_sample_layer_ms},
                   {"backward_factor", s.finetune.backward_factor},
                   {"unit_target_ms", s.finetune.unit_target_ms}};
  j["memory"] = {{"small_pool_bytes", s.small_pool_bytes},
                 {"infer_static_bytes", s.infer_static_bytes},
                 {"ft_pinned_bytes", s.ft_pinned_bytes},
                 {"max_bs", s.max_bs}};
  j["static_split"] = {{"infer_sm_units", s.static_split.infer_sm_units},
                       {"ft_sm_units", s.static_split.ft_sm_units},
                       {"infer_mem_frac", s.static_split.infer_mem_frac}};
  ordered_json t;
  t["kind"] = cfg.trace.kind == TraceSpec::Kind::File ? "file" : "synthetic";
  if (cfg.trace.kind == TraceSpec::Kind::File) {
    t["path"] = cfg.trace.path;
  } else {
    t["rate_rps"] = cfg.trace.rate_rps;
    t["duration_s"] = cfg.trace.duration_s;
    t["seed"] = cfg.trace.seed;
    ordered_json ph = ordered_json::array();
    for (const auto& p : cfg.trace.phases) {
      ph.push_back({{"duration_s", p.duration_s}, {"rate_rps", p.rate_rps}});
    }
    t["phases"] = ph;
    t["prompt"] = dist_json(cfg.trace.prompt);
    t["output"] = dist_json(cfg.trace.output);
  }
  j["trace"] = t;
  j["profiles"] = {{"bs_list", cfg.profiles.bs_list},
                   {"seqlen_max", cfg.profiles.seqlen_max},
                   {"solo_seqlen_step", cfg.profiles.solo_seqlen_step},
                   {"colo_seqlen_step", cfg.profiles.colo_seqlen_step},
                   {"noise_sigma", cfg.profile_noise_sigma},
                   {"seed", cfg.profile_seed}};
  return j.dump(2) + "\n";
}

void apply(Config& cfg, const Overrides& o) {
  auto& s = cfg.sim;
  if (o.mode) s.mode = parse_mode(*o.mode);
  if (o.seed) s.seed = *o.seed;
  if (o.noise_sigma) s.noise_sigma = *o.noise_sigma;
  if (o.headroom) s.headroom = *o.headroom;
  if (o.gpus) s.gpus = *o.gpus;
  if (o.grid_steps) {
    s.grid_steps = *o.grid_steps;
    cfg.profiles.grid_steps = *o.grid_steps;
  }
  if (o.trace_path) {
    cfg.trace.kind = TraceSpec::Kind::File;
    cfg.trace.path = *o.trace_path;
  }
  if (o.check_invariants) s.check_invariants = *o.check_invariants;
  if (o.log_steps) s.log_steps = *o.log_steps;
  s.validate();
}

RunReport make_report(SimMode mode, const Metrics& m) {
  RunReport r;
  r.mode = mode;
  r.finetune_throughput = m.finetune_throughput;
  r.tpot_p50_ms = percentile(m.tpot_samples, 0.50);
  r.tpot_p99_ms = percentile(m.tpot_samples, 0.99);
  double sum = 0.0;
  for (double v : m.tpot_samples) sum += v;
  const auto n = m.tpot_samples.size();
  r.tpot_mean_ms = n > 0 ? sum / static_cast<double>(n) : 0.0;
  r.qos_violation_rate = n > 0 ? static_cast<double>(m.qos_violations) / static_cast<double>(n) : 0.0;
  return r;
}

std::string report_to_json(const Config& cfg, const RunReport& report, const SimResult& result) {
  const auto& m = result.metrics;
  ordered_json j;
  j["mode"] = to_string(report.mode);
  j["gpus"] = cfg.sim.gpus;
  j["seed"] = cfg.sim.seed;
  j["noise_sigma"] = cfg.sim.noise_sigma;
  j["qos_tpot_ms"] = cfg.sim.qos.tpot_ms;
  j["finetune_throughput"] = report.finetune_throughput;
  j["finetune_units_done"] = m.finetune_units_done;
  j["micro_bs"] = m.micro_bs;
  j["tpot_p50_ms"] = report.tpot_p50_ms;
  j["tpot_p99_ms"] = report.tpot_p99_ms;
  j["tpot_mean_ms"] = report.tpot_mean_ms;
  j["tokens"] = m.tpot_samples.size();
  j["qos_violations"] = m.qos_violations;
  j["qos_violation_rate"] = report.qos_violation_rate;
  if (report.improvement_vs_baseline) {
    j["improvement_vs_baseline"] = *report.improvement_vs_baseline;
  } else {
    j["improvement_vs_baseline"] = nullptr;
  }
  j["requests"] = {{"admitted", m.admitted}, {"completed", m.completed}, {"dropped", m.dropped}};
  j["swap_count"] = m.swap_count;
  j["bytes_moved"] = m.bytes_moved;
  j["stall_ms"] = m.stall_ms;
  j["elapsed_ms"] = m.elapsed_ms;
  j["decode_steps"] = m.decode_steps;
  j["window_adjustments"] = result.window_events.size();
  ordered_json files = {{"tpot_cdf", "tpot_cdf.csv"},
                        {"sm_timeline", "sm_timeline.csv"},
                        {"mem_timeline", "mem_timeline.csv"},
                        {"events", "events.csv"}};
  ordered_json dec = ordered_json::array();
  for (std::size_t i = 0; i < result.decision_logs.size(); ++i) {
    dec.push_back(fmt::format("decisions_dev{}.csv", i));
  }
  files["decisions"] = dec;
  j["artifacts"] = files;
  return j.dump(2) + "\n";
}

std::string tpot_cdf_csv(const std::vector<double>& samples) {
  std::string out = "tpot_ms,cdf\n";
  if (samples.empty()) return out;
  auto sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  for (int i = 0; i <= 1000; ++i) {
    const double q = i / 1000.0;
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    out += fmt::format("{:.4f},{:.3f}\n", sorted[rank - 1], q);
  }
  return out;
}

std::string sm_timeline_csv(const Metrics& m) {
  std::string out = "t_ms,device,infer_frac,ft_frac\n";
  for (const auto& s : m.sm_timeline) {
    out += fmt::format("{:.3f},{},{:.2f},{:.2f}\n", s.t_ms, s.device, s.infer_frac, s.ft_frac);
  }
  return out;
}

std::string mem_timeline_csv(const Metrics& m) {
  std::string out = "t_ms,device,kv_chunks,tensor_chunks,window\n";
  for (const auto& s : m.mem_timeline) {
    out += fmt::format("{:.3f},{},{},{},{}\n", s.t_ms, s.device, s.kv_chunks, s.tensor_chunks,
                       s.window);
  }
  return out;
}

FitOutcome cmd_fit(const Config& cfg, const std::string& profiles_path,
                   const std::string& out_path) {
  const auto points = load_profiles(profiles_path);
  FitOutcome o;
  o.models.solo = fit_solo(points, cfg.sim.grid_steps, cfg.sim.oracle.pad_bs);
  const bool has_colo = std::any_of(points.begin(), points.end(),
                                    [](const ProfilePoint& p) { return p.ft_frac > 0.0; });
  if (has_colo) {
    o.models.colo = fit_colo(points, o.models.solo);
  } else {
    o.colo_missing = true;
  }
  o.summary = summarize_fit(points, o.models.solo, o.models.colo);
  csv::write_file(out_path, models_to_json(o.models, &o.summary));
  return o;
}

ModelBundle obtain_models(const Config& cfg, const std::optional<std::string>& models_path) {
  if (models_path) {
    auto m = load_models(*models_path);
    if (m.solo.grid_steps() != cfg.sim.grid_steps) {
      throw Error(ErrorKind::InvalidInput,
                  fmt::format("{} was fitted on a {}-step grid, config uses {}", *models_path,
                              m.solo.grid_steps(), cfg.sim.grid_steps));
    }
    return m;
  }
  return fit_models(cfg.sim, cfg.profiles, cfg.profile_noise_sigma, cfg.profile_seed);
}

RunReport cmd_simulate(const Config& cfg, const std::optional<std::string>& models_path,
                       const std::string& out_dir) {
  const auto trace = make_trace(cfg.trace);
  std::optional<ModelBundle> models;
  if (cfg.sim.mode == SimMode::Adaptive && cfg.sim.finetune_enabled) {
    models = obtain_models(cfg, models_path);
  }
  const auto result = run(cfg.sim, trace, models ? &*models : nullptr);
  const auto report = make_report(cfg.sim.mode, result.metrics);
  ensure_dir(out_dir);
  csv::write_file(join(out_dir, "tpot_cdf.csv"), tpot_cdf_csv(result.metrics.tpot_samples));
  csv::write_file(join(out_dir, "sm_timeline.csv"), sm_timeline_csv(result.metrics));
  csv::write_file(join(out_dir, "mem_timeline.csv"), mem_timeline_csv(result.metrics));
  csv::write_file(join(out_dir, "events.csv"), "t_ms,kind,detail\n" + result.event_log);
  for (std::size_t i = 0; i < result.decision_logs.size(); ++i) {
    csv::write_file(join(out_dir, fmt::format("decisions_dev{}.csv", i)),
                    "t_ms,reason,infer_frac,ft_frac,predicted_ms\n" + result.decision_logs[i]);
  }
  // The report goes last so that its presence means every artifact exists.
  csv::write_file(join(out_dir, "report.json"), report_to_json(cfg, report, result));
  return report;
}

Comparison compare_modes(const Config& cfg, const ModelBundle& models) {
  const auto trace = make_trace(cfg.trace);
  const SimMode modes[] = {SimMode::Adaptive, SimMode::Static, SimMode::Separate};
  std::vector<std::future<SimResult>> runs;
  for (auto mode : modes) {
    SimConfig c = cfg.sim;
    c.mode = mode;
    c.log_steps = false;
    runs.push_back(std::async(std::launch::async, [c, &trace, &models] {
      return run(c, trace, &models);
    }));
  }
  Comparison out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto r = runs[i].get();
    out.reports.push_back(make_report(modes[i], r.metrics));
    out.metrics.push_back(std::move(r.metrics));
  }
  const double h = out.reports[0].finetune_throughput;
  auto gain = [h](double base) { return base > 0.0 ? h / base - 1.0 : 0.0; };
  out.gain_vs_static = gain(out.reports[1].finetune_throughput);
  out.gain_vs_separate = gain(out.reports[2].finetune_throughput);
  out.reports[1].improvement_vs_baseline = out.gain_vs_static;
  out.reports[2].improvement_vs_baseline = out.gain_vs_separate;
  return out;
}

std::string comparison_table(const Comparison& c) {
  std::string out = fmt::format("{:<10} {:>14} {:>10} {:>10} {:>10} {:>14}\n", "mode",
                                "ft_samples/s", "p50_ms", "p99_ms", "qos_viol", "adaptive_gain");
  for (const auto& r : c.reports) {
    const std::string gain = r.improvement_vs_baseline
                                 ? fmt::format("{:+.1f}%", 100.0 * *r.improvement_vs_baseline)
                                 : "-";
    out += fmt::format("{:<10} {:>14.4f} {:>10.2f} {:>10.2f} {:>9.4f}% {:>14}\n",
                       to_string(r.mode), r.finetune_throughput, r.tpot_p50_ms, r.tpot_p99_ms,
                       100.0 * r.qos_violation_rate, gain);
  }
  return out;
}

std::string comparison_json(const Config& cfg, const Comparison& c) {
  ordered_json j;
  j["seed"] = cfg.sim.seed;
  j["gpus"] = cfg.sim.gpus;
  j["noise_sigma"] = cfg.sim.noise_sigma;
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < c.reports.size(); ++i) {
    const auto& r = c.reports[i];
    const auto& m = c.metrics[i];
    ordered_json row;
    row["mode"] = to_string(r.mode);
    row["finetune_throughput"] = r.finetune_throughput;
    row["tpot_p50_ms"] = r.tpot_p50_ms;
    row["tpot_p99_ms"] = r.tpot_p99_ms;
    row["qos_violation_rate"] = r.qos_violation_rate;
    row["qos_violations"] = m.qos_violations;
    row["swap_count"] = m.swap_count;
    row["dropped"] = m.dropped;
    if (r.improvement_vs_baseline) {
      row["adaptive_gain"] = *r.improvement_vs_baseline;
    } else {
      row["adaptive_gain"] = nullptr;
    }
    rows.push_back(row);
  }
  j["runs"] = rows;
  j["gain_vs_static"] = c.gain_vs_static;
  j["gain_vs_separate"] = c.gain_vs_separate;
  return j.dump(2) + "\n";
}

Comparison cmd_compare(const Config& cfg, const std::optional<std::string>& models_path,
                       const std::string& out_dir) {
  const auto models = obtain_models(cfg, models_path);
  auto c = compare_modes(cfg, models);
  ensure_dir(out_dir);
  csv::write_file(join(out_dir, "compare.txt"), comparison_table(c));
  csv::write_file(join(out_dir, "compare.json"), comparison_json(cfg, c));
  return c;
}

std::vector<Request> cmd_gen_trace(const Config& cfg, const std::string& out_path) {
  if (cfg.trace.kind != TraceSpec::Kind::Synthetic) {
    throw Error(ErrorKind::InvalidArgument, "gen-trace needs a synthetic trace spec");
  }
  auto t = synth_trace(cfg.trace);
  write_trace(out_path, t);
  return t;
}

std::vector<ProfilePoint> cmd_gen_profiles(const Config& cfg, const std::string& out_path) {
  Noise noise(cfg.profile_noise_sigma, cfg.profile_seed);
  auto pts = generate_profiles(cfg.sim.resolved_oracle(), cfg.sim.gpu, cfg.sim.model_infer,
                               cfg.profiles, noise);
  csv::write_file(out_path, format_profiles(pts));
  return pts;
}

std::string error_line(const std::string& kind, const std::string& message) {
  std::string escaped;
  for (char ch : message) {
    if (ch == '"' || ch == '\\') escaped += '\\';
    escaped += ch == '\n' ? ' ' : ch;
  }
  return fmt::format("error kind={} message=\"{}\"", kind, escaped);
}

}  // namespace coloc::cli
