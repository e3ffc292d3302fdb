// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: tensor generation and ingestion, format/window/
// granularity sweeps, and JSON/CSV report emission.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mxattn/attention.hpp"
#include "mxattn/block_quant.hpp"
#include "mxattn/matrix.hpp"
#include "mxattn/metrics.hpp"

namespace mxattn {

struct HeadTensors {
  Matrix q, k, v;
};

struct GaussianSource {
  std::size_t len_q = 1024;
  std::size_t len_k = 1024;
  std::size_t head_dim = 64;
  std::size_t heads = 1;
  std::uint64_t seed = 0;
  double stddev = 1.0;
};

struct FileSource {
  std::string q, k, v;
};

/// Gaussian tensors, reproducible for a given seed.
///
/// Generator: std::mt19937_64 seeded with `seed`; uniforms are the top 53
/// bits of each draw scaled by 2^-53; normals come from the Marsaglia polar
/// method, both outputs of each accepted pair used in order. Values are
/// multiplied by `stddev` and rounded to float so they round-trip through
/// MXT1 files exactly. Draw order: for each head, Q then K then V, each
/// row-major.
std::vector<HeadTensors> generate_tensors(std::size_t len_q, std::size_t len_k,
                                          std::size_t head_dim, std::size_t heads,
                                          std::uint64_t seed, double stddev = 1.0);

/// Reads Q/K/V MXT1 files shaped (L, D) or (H, L, D).
std::vector<HeadTensors> load_tensors(const FileSource& files);
void save_tensors(const std::vector<HeadTensors>& heads, const std::string& q_path,
                  const std::string& k_path, const std::string& v_path);

/// FNV-1a 64 over the float32 bit patterns of Q, K, V of every head.
std::uint64_t tensor_checksum(const std::vector<HeadTensors>& heads);

/// Low-precision format of one sweep point; std::nullopt means full precision.
using FormatChoice = std::optional<MxFormat>;
std::string format_label(const FormatChoice& f);
/// Accepts the MxFormat names plus "identity".
std::optional<FormatChoice> parse_format_choice(std::string_view text);

enum class ReportFormat : std::uint8_t { Json, Csv };

struct RunConfig {
  std::variant<GaussianSource, FileSource> source;
  /// Base attention settings; low_format, diag, sink and granularity are
  /// overridden by the sweep axes.
  AttentionConfig attention;
  std::vector<FormatChoice> formats{MxFormat::NVFP4};
  std::vector<std::size_t> diags{0};
  std::vector<std::size_t> sinks{0};
  std::vector<Granularity> granularities{Granularity::PerToken};
  bool score_metrics = true;
  std::string output_path;  // empty: stdout
  ReportFormat report = ReportFormat::Json;

  std::size_t sweep_size() const noexcept;
  void validate() const;
};

/// One sweep point on one head. Output metrics compare attention outputs;
/// score metrics compare post-softmax probability matrices.
struct MetricReport {
  std::size_t head = 0;
  std::string format;
  std::string high_format;
  std::size_t diag = 0;
  std::size_t sink = 0;
  std::string granularity;
  bool causal = true;
  std::size_t tile_m = 0;
  std::size_t tile_n = 0;
  std::size_t len_q = 0;
  std::size_t len_k = 0;
  std::size_t head_dim = 0;
  std::optional<std::uint64_t> seed;
  double bit_high_pct = 0.0;
  Similarity output;
  std::optional<Similarity> scores;
};

/// Runs every sweep point (formats x diags x sinks x granularities, in that
/// nesting order) on every head. Deterministic for a given config.
std::vector<MetricReport> run_experiment(const RunConfig& cfg);

std::string reports_to_json(std::span<const MetricReport> reports);
std::string reports_to_csv(std::span<const MetricReport> reports);

}  // namespace mxattn
