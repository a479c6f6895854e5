// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace coloc {

struct Request {
  double arrival_ms = 0.0;
  int prompt_tokens = 0;
  int output_tokens = 1;

  friend bool operator==(const Request&, const Request&) = default;
};

/// Discrete length distribution: `values[i]` with relative weight `weights[i]`.
struct LengthDist {
  std::vector<int> values;
  std::vector<double> weights;

  void validate(const char* what) const;
};

/// A stretch of constant Poisson arrival rate.
struct TracePhase {
  double duration_s = 60.0;
  double rate_rps = 1.0;
};

struct TraceSpec {
  enum class Kind { File, Synthetic };
  Kind kind = Kind::Synthetic;
  std::string path;
  /// Used when `phases` is empty.
  double rate_rps = 5.0;
  double duration_s = 60.0;
  std::vector<TracePhase> phases;
  LengthDist prompt{{512, 1024, 2048, 3072, 4096}, {1, 2, 3, 2, 1}};
  LengthDist output{{64, 128, 256, 384, 512}, {1, 2, 3, 2, 1}};
  std::uint64_t seed = 1;
};

/// Poisson arrivals with lengths drawn from `spec.prompt` and `spec.output`; the
/// same TraceSpec always gives the same trace.
std::vector<Request> synth_trace(const TraceSpec& spec);

/// Materializes a trace from a spec: reads the file or synthesizes.
std::vector<Request> make_trace(const TraceSpec& spec);

std::vector<Request> load_trace(const std::string& path);
std::vector<Request> parse_trace(const std::string& text, const std::string& source);
std::string format_trace(std::span<const Request> requests);
void write_trace(const std::string& path, std::span<const Request> requests);

/// Converts a headered CSV with other column names (for example a public
/// production trace export) into requests. Arrival values are multiplied by
/// `arrival_scale_to_ms`; the earliest arrival becomes time zero.
std::vector<Request> convert_trace(const std::string& text, const std::string& source,
                                   const std::string& arrival_col, const std::string& prompt_col,
                                   const std::string& output_col, double arrival_scale_to_ms);

struct TraceStats {
  std::size_t count = 0;
  double span_ms = 0.0;
  double mean_prompt = 0.0;
  double mean_output = 0.0;
  double rate_rps = 0.0;
};

TraceStats summarize_trace(std::span<const Request> requests);

}  // namespace coloc
