// SPDX-License-Identifier: Apache-2.0
#include "coloc/workload.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "coloc/core.hpp"
#include "coloc/csv.hpp"

namespace coloc {

void LengthDist::validate(const char* what) const {
  if (values.empty() || values.size() != weights.size()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("{} distribution needs matching non-empty values and weights", what));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] < 0.0 || values[i] < 0) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("{} distribution has a negative entry",
                                                          what));
    }
    total += weights[i];
  }
  if (!(total > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("{} distribution has zero weight", what));
  }
}

std::vector<Request> synth_trace(const TraceSpec& spec) {
  spec.prompt.validate("prompt");
  spec.output.validate("output");
  for (int v : spec.output.values) {
    if (v < 1) throw Error(ErrorKind::InvalidArgument, "output lengths must be >= 1");
  }
  std::vector<TracePhase> phases = spec.phases;
  if (phases.empty()) phases.push_back({spec.duration_s, spec.rate_rps});
  for (const auto& ph : phases) {
    if (!(ph.rate_rps > 0.0) || !(ph.duration_s > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "trace rate and duration must be > 0");
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<std::size_t> pick_prompt(spec.prompt.weights.begin(),
                                                      spec.prompt.weights.end());
  std::discrete_distribution<std::size_t> pick_output(spec.output.weights.begin(),
                                                      spec.output.weights.end());
  std::vector<Request> out;
  double phase_start_ms = 0.0;
  for (const auto& ph : phases) {
    const double end_ms = phase_start_ms + ph.duration_s * 1000.0;
    std::exponential_distribution<double> gap(ph.rate_rps / 1000.0);
    // Poisson processes are memoryless, so each phase restarts its clock.
    double t = phase_start_ms + gap(rng);
    while (t < end_ms) {
      Request r;
      r.arrival_ms = t;
      r.prompt_tokens = spec.prompt.values[pick_prompt(rng)];
      r.output_tokens = spec.output.values[pick_output(rng)];
      out.push_back(r);
      t += gap(rng);
    }
    phase_start_ms = end_ms;
  }
  return out;
}

std::vector<Request> make_trace(const TraceSpec& spec) {
  if (spec.kind == TraceSpec::Kind::File) return load_trace(spec.path);
  return synth_trace(spec);
}

std::vector<Request> parse_trace(const std::string& text, const std::string& source) {
  std::vector<Request> out;
  for (const auto& row : csv::parse(text, "arrival_ms,prompt_tokens,output_tokens", source)) {
    if (row.fields.size() != 3) {
      throw Error(ErrorKind::Parse, fmt::format("{}:{}: expected 3 fields, got {}", source,
                                                row.line, row.fields.size()));
    }
    Request r;
    r.arrival_ms = csv::to_double(row.fields[0], source, row.line);
    r.prompt_tokens = static_cast<int>(csv::to_int(row.fields[1], source, row.line));
    r.output_tokens = static_cast<int>(csv::to_int(row.fields[2], source, row.line));
    if (r.arrival_ms < 0.0 || r.prompt_tokens < 0) {
      throw Error(ErrorKind::Parse,
                  fmt::format("{}:{}: negative arrival or prompt length", source, row.line));
    }
    if (r.output_tokens < 1) {
      throw Error(ErrorKind::Parse,
                  fmt::format("{}:{}: output_tokens must be >= 1, got {}", source, row.line,
                              r.output_tokens));
    }
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Request& a, const Request& b) { return a.arrival_ms < b.arrival_ms; });
  return out;
}

std::vector<Request> load_trace(const std::string& path) {
  return parse_trace(csv::read_file(path), path);
}

std::string format_trace(std::span<const Request> requests) {
  std::string out = "arrival_ms,prompt_tokens,output_tokens\n";
  for (const auto& r : requests) {
    out += fmt::format("{},{},{}\n", r.arrival_ms, r.prompt_tokens, r.output_tokens);
  }
  return out;
}

void write_trace(const std::string& path, std::span<const Request> requests) {
  csv::write_file(path, format_trace(requests));
}

std::vector<Request> convert_trace(const std::string& text, const std::string& source,
                                   const std::string& arrival_col, const std::string& prompt_col,
                                   const std::string& output_col, double arrival_scale_to_ms) {
  const auto nl = text.find('\n');
  const std::string header = text.substr(0, nl);
  std::vector<std::string> names;
  std::size_t start = 0;
  while (true) {
    const auto comma = header.find(',', start);
    std::string name = header.substr(start, comma - start);
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    names.push_back(name);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  auto index_of = [&](const std::string& col) {
    auto it = std::find(names.begin(), names.end(), col);
    if (it == names.end()) {
      throw Error(ErrorKind::Parse, fmt::format("{}: no column named '{}'", source, col));
    }
    return static_cast<std::size_t>(it - names.begin());
  };
  const auto ia = index_of(arrival_col);
  const auto ip = index_of(prompt_col);
  const auto io = index_of(output_col);
  std::string trimmed_header = header;
  while (!trimmed_header.empty() && trimmed_header.back() == '\r') trimmed_header.pop_back();
  std::vector<Request> out;
  for (const auto& row : csv::parse(text, trimmed_header, source)) {
    if (row.fields.size() != names.size()) {
      throw Error(ErrorKind::Parse, fmt::format("{}:{}: expected {} fields", source, row.line,
                                                names.size()));
    }
    Request r;
    r.arrival_ms = csv::to_double(row.fields[ia], source, row.line) * arrival_scale_to_ms;
    r.prompt_tokens = static_cast<int>(csv::to_int(row.fields[ip], source, row.line));
    r.output_tokens = std::max(1, static_cast<int>(csv::to_int(row.fields[io], source, row.line)));
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Request& a, const Request& b) { return a.arrival_ms < b.arrival_ms; });
  if (!out.empty()) {
    const double t0 = out.front().arrival_ms;
    for (auto& r : out) r.arrival_ms -= t0;
  }
  return out;
}

TraceStats summarize_trace(std::span<const Request> requests) {
  TraceStats s;
  s.count = requests.size();
  if (requests.empty()) return s;
  double p = 0.0;
  double o = 0.0;
  for (const auto& r : requests) {
    p += r.prompt_tokens;
    o += r.output_tokens;
  }
  s.mean_prompt = p / static_cast<double>(s.count);
  s.mean_output = o / static_cast<double>(s.count);
  s.span_ms = requests.back().arrival_ms - requests.front().arrival_ms;
  if (s.span_ms > 0.0) s.rate_rps = static_cast<double>(s.count) / (s.span_ms / 1000.0);
  return s;
}

}  // namespace coloc
