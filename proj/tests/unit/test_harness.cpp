// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mxattn/error.hpp"
#include "mxattn/harness.hpp"
#include "mxattn/tensor_file.hpp"

using namespace mxattn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / ("mxattn_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.source = GaussianSource{256, 256, 64, 2, 3, 2.0};
  cfg.formats = {MxFormat::MXFP8_E4M3, MxFormat::NVFP4, MxFormat::MXFP4};
  cfg.diags = {0, 64};
  cfg.sinks = {0};
  cfg.granularities = {Granularity::PerToken, Granularity::PerTensor};
  return cfg;
}

}  // namespace

TEST(Generate, DeterministicPerSeed) {
  const auto a = generate_tensors(16, 16, 32, 2, 5);
  const auto b = generate_tensors(16, 16, 32, 2, 5);
  const auto c = generate_tensors(16, 16, 32, 2, 6);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].q, b[0].q);
  EXPECT_EQ(a[1].v, b[1].v);
  EXPECT_NE(a[0].q, c[0].q);
  EXPECT_EQ(tensor_checksum(a), tensor_checksum(b));
  EXPECT_NE(tensor_checksum(a), tensor_checksum(c));
}

TEST(Generate, FrozenChecksum) {
  EXPECT_EQ(tensor_checksum(generate_tensors(8, 8, 4, 1, 42)), 18113951707084902303ull);
}

TEST(Generate, StddevScalesValues) {
  const auto a = generate_tensors(64, 64, 32, 1, 1, 1.0);
  const auto b = generate_tensors(64, 64, 32, 1, 1, 4.0);
  for (std::size_t i = 0; i < a[0].k.size(); ++i) {
    EXPECT_NEAR(b[0].k.values()[i], 4.0 * a[0].k.values()[i], 1e-5 * (1 + std::fabs(b[0].k.values()[i])));
  }
}

TEST(TensorFiles, RoundTripThroughDisk) {
  const fs::path dir = temp_dir();
  const auto heads = generate_tensors(32, 48, 32, 3, 9);
  save_tensors(heads, dir / "q.mxt", dir / "k.mxt", dir / "v.mxt");
  const auto back = load_tensors({dir / "q.mxt", dir / "k.mxt", dir / "v.mxt"});
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(tensor_checksum(back), tensor_checksum(heads));
  EXPECT_EQ(read_tensor_file(dir / "k.mxt").dims, (std::vector<std::uint32_t>{3, 48, 32}));
}

TEST(TensorFiles, ErrorsNameThePathAndField) {
  const fs::path dir = temp_dir();
  auto expect_error = [](const fs::path& p, const std::string& field) {
    try {
      read_tensor_file(p);
      ADD_FAILURE() << "no error for " << p;
    } catch (const FileFormatError& e) {
      EXPECT_NE(std::string(e.what()).find(p.string()), std::string::npos) << e.what();
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_error(dir / "missing.mxt", "open");
  write_bytes(dir / "magic.mxt", std::string("MXT2\0\0\0\0\1\0\0\0\1\0\0\0", 16) + std::string(4, '\0'));
  expect_error(dir / "magic.mxt", "magic");
  write_bytes(dir / "dtype.mxt", std::string("MXT1\7\0\0\0\1\0\0\0\1\0\0\0", 16) + std::string(4, '\0'));
  expect_error(dir / "dtype.mxt", "dtype");
  write_bytes(dir / "short.mxt", std::string("MXT1\0\0\0\0\1\0\0\0\4\0\0\0", 16) + std::string(4, '\0'));
  expect_error(dir / "short.mxt", "payload");

  write_tensor_file(dir / "q.mxt", {{4, 32}, std::vector<float>(128, 1.0f)});
  write_tensor_file(dir / "k.mxt", {{4, 64}, std::vector<float>(256, 1.0f)});
  try {
    load_tensors({dir / "q.mxt", dir / "k.mxt", dir / "k.mxt"});
    ADD_FAILURE() << "shape mismatch accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("k.mxt"), std::string::npos) << e.what();
  }
}

TEST(RunExperiment, IdentityFormatIsExact) {
  RunConfig cfg;
  cfg.source = GaussianSource{128, 128, 32, 1, 0, 1.0};
  cfg.formats = {std::nullopt};
  cfg.attention.high_format = std::nullopt;
  const auto reports = run_experiment(cfg);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_NEAR(reports[0].output.cos_sim, 1.0, 1e-12);
  EXPECT_EQ(reports[0].format, "identity");
}

TEST(RunExperiment, RowCountIsSweepTimesHeads) {
  const RunConfig cfg = small_config();
  EXPECT_EQ(cfg.sweep_size(), 12u);
  const auto reports = run_experiment(cfg);
  EXPECT_EQ(reports.size(), 24u);
  for (const MetricReport& r : reports) {
    EXPECT_GE(r.output.cos_sim, -1.0);
    EXPECT_LE(r.output.cos_sim, 1.0);
    EXPECT_GE(r.bit_high_pct, 0.0);
    EXPECT_LE(r.bit_high_pct, 100.0);
    ASSERT_TRUE(r.scores.has_value());
  }
}

TEST(RunExperiment, FormatOrderingOnScores) {
  RunConfig cfg;
  cfg.source = GaussianSource{512, 512, 64, 1, 0, 2.0};
  cfg.formats = {MxFormat::MXFP8_E4M3, MxFormat::NVFP4, MxFormat::MXFP4};
  const auto r = run_experiment(cfg);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_GT(r[0].scores->cos_sim, r[1].scores->cos_sim);
  EXPECT_GT(r[1].scores->cos_sim, r[2].scores->cos_sim);
}

TEST(Reports, JsonIsDeterministicAndWellFormed) {
  const RunConfig cfg = small_config();
  const std::string a = reports_to_json(run_experiment(cfg));
  const std::string b = reports_to_json(run_experiment(cfg));
  EXPECT_EQ(a, b);
  const auto doc = nlohmann::json::parse(a);
  ASSERT_TRUE(doc.is_array());
  ASSERT_EQ(doc.size(), 24u);
  for (const char* key : {"head", "format", "high_format", "diag", "sink", "granularity", "causal", "tile_m",
                          "tile_n", "seed", "bit_high_pct", "cos_sim", "rel_l1", "abs_l1", "rmse", "psnr",
                          "score_cos_sim", "score_psnr"}) {
    EXPECT_TRUE(doc[0].contains(key)) << key;
  }
}

TEST(Reports, InfinitePsnrIsASentinelString) {
  MetricReport r;
  r.output.cos_sim = 1.0;
  r.output.psnr = std::numeric_limits<double>::infinity();
  const auto doc = nlohmann::json::parse(reports_to_json(std::vector<MetricReport>{r}));
  EXPECT_EQ(doc[0]["psnr"], "inf");
  EXPECT_NE(reports_to_csv(std::vector<MetricReport>{r}).find(",inf"), std::string::npos);
}

TEST(Reports, CsvHasHeaderAndOneLinePerReport) {
  RunConfig cfg = small_config();
  const std::string csv = reports_to_csv(run_experiment(cfg));
  std::istringstream in(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 25u);
  EXPECT_EQ(csv.rfind("head,", 0), 0u);
}

TEST(RunConfig, Validation) {
  RunConfig cfg;
  cfg.formats.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.diags = {100};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.source = FileSource{"q", "", "v"};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_format_choice("identity"), std::optional<FormatChoice>(FormatChoice{}));
  EXPECT_EQ(parse_format_choice("mxfp8"), std::optional<FormatChoice>(MxFormat::MXFP8_E4M3));
  EXPECT_FALSE(parse_format_choice("fp16").has_value());
}
