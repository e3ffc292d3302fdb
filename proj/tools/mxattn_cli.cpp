// SPDX-License-Identifier: Apache-2.0
//
// mxattn: run mixed-precision attention sweeps and emit JSON/CSV reports.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mxattn/error.hpp"
#include "mxattn/harness.hpp"

namespace {

template <typename T, typename Parse>
std::vector<T> parse_list(const std::vector<std::string>& items, Parse parse, const char* what) {
  std::vector<T> out;
  for (const std::string& s : items) {
    auto v = parse(s);
    if (!v) throw mxattn::ConfigError(std::string("unknown ") + what + " '" + s + "'");
    out.push_back(*v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision microscaling attention laboratory"};

  mxattn::GaussianSource gauss;
  std::size_t kv_len = 0;
  std::vector<std::string> formats{"nvfp4"};
  std::string high_format = "mxfp8-e4m3";
  std::vector<std::size_t> diags{0};
  std::vector<std::size_t> sinks{0};
  std::vector<std::string> grans{"token"};
  bool causal = true;
  std::size_t tile_m = 64;
  std::size_t tile_n = 64;
  std::string q_path, k_path, v_path, out_path, report = "json", dump_prefix;
  bool no_scores = false;

  app.add_option("--seq-len", gauss.len_q, "Query (and default key) sequence length")
      ->default_val(1024);
  app.add_option("--kv-len", kv_len, "Key/value length for non-causal runs (default: --seq-len)");
  app.add_option("--head-dim", gauss.head_dim, "Head dimension, a multiple of 32")->default_val(64);
  app.add_option("--heads", gauss.heads, "Number of heads")->default_val(1);
  app.add_option("--seed", gauss.seed, "Generator seed")->default_val(0);
  app.add_option("--stddev", gauss.stddev, "Standard deviation of generated tensors")->default_val(1.0);
  app.add_option("--format", formats, "Low-precision formats: mxfp8, mxfp8-e5m2, mxfp4, nvfp4, identity")
      ->delimiter(',');
  app.add_option("--high-format", high_format, "High-precision format: mxfp8-e4m3, mxfp8-e5m2, identity");
  app.add_option("--diag", diags, "Diagonal window sizes T (tokens)")->delimiter(',');
  app.add_option("--sink", sinks, "Sink window sizes (tokens)")->delimiter(',');
  app.add_option("--granularity", grans, "Quantization-scale granularity: tensor, block, token")
      ->delimiter(',');
  app.add_flag("--causal,!--non-causal", causal, "Causal (default) or non-causal attention");
  app.add_option("--tile-m", tile_m, "Query tile rows")->default_val(64);
  app.add_option("--tile-n", tile_n, "Key tile rows")->default_val(64);
  auto* q_opt = app.add_option("--q", q_path, "Query MXT1 file");
  auto* k_opt = app.add_option("--k", k_path, "Key MXT1 file");
  auto* v_opt = app.add_option("--v", v_path, "Value MXT1 file");
  q_opt->needs(k_opt, v_opt);
  k_opt->needs(q_opt, v_opt);
  v_opt->needs(q_opt, k_opt);
  app.add_option("--out", out_path, "Report path (default: stdout)");
  app.add_option("--report", report, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app.add_flag("--no-scores", no_scores, "Skip the attention-probability metrics");
  app.add_option("--dump-tensors", dump_prefix,
                 "Write the generated Q/K/V to <prefix>{q,k,v}.mxt and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    mxattn::RunConfig cfg;
    gauss.len_k = kv_len ? kv_len : gauss.len_q;
    if (!q_path.empty()) {
      cfg.source = mxattn::FileSource{q_path, k_path, v_path};
    } else {
      cfg.source = gauss;
    }
    if (!dump_prefix.empty()) {
      const auto heads = mxattn::generate_tensors(gauss.len_q, gauss.len_k, gauss.head_dim,
                                                  gauss.heads, gauss.seed, gauss.stddev);
      mxattn::save_tensors(heads, dump_prefix + "q.mxt", dump_prefix + "k.mxt", dump_prefix + "v.mxt");
      return 0;
    }

    cfg.attention.tile_m = tile_m;
    cfg.attention.tile_n = tile_n;
    cfg.attention.causal = causal;
    const auto high = mxattn::parse_format_choice(high_format);
    if (!high) throw mxattn::ConfigError("unknown high format '" + high_format + "'");
    cfg.attention.high_format = *high;
    cfg.formats = parse_list<mxattn::FormatChoice>(
        formats, [](const std::string& s) { return mxattn::parse_format_choice(s); }, "format");
    cfg.granularities = parse_list<mxattn::Granularity>(
        grans, [](const std::string& s) { return mxattn::parse_granularity(s); }, "granularity");
    cfg.diags = diags;
    cfg.sinks = sinks;
    cfg.score_metrics = !no_scores;
    cfg.report = report == "csv" ? mxattn::ReportFormat::Csv : mxattn::ReportFormat::Json;
    cfg.output_path = out_path;

    const auto reports = mxattn::run_experiment(cfg);
    const std::string text = cfg.report == mxattn::ReportFormat::Json
                                 ? mxattn::reports_to_json(reports)
                                 : mxattn::reports_to_csv(reports);
    if (out_path.empty()) {
      std::cout << text;
    } else {
      std::ofstream os(out_path, std::ios::binary | std::ios::trunc);
      if (!os) throw mxattn::ConfigError("cannot open " + out_path + " for writing");
      os << text;
    }
  } catch (const mxattn::Error& e) {
    std::fprintf(stderr, "mxattn: %s\n", e.what());
    return 1;
  }
  return 0;
}
