// SPDX-License-Identifier: Apache-2.0
#include "mxattn/harness.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mxattn/error.hpp"
#include "mxattn/tensor_file.hpp"

namespace mxattn {

namespace {

class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : gen_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    double v = 0.0;
    double s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Matrix gaussian_matrix(GaussianStream& g, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& x : m.values()) x = static_cast<double>(static_cast<float>(g.next() * stddev));
  return m;
}

// Splits an (L, D) or (H, L, D) tensor into per-head matrices.
std::vector<Matrix> split_heads(const TensorFile& t, const std::string& path) {
  std::size_t heads = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (t.dims.size() == 2) {
    rows = t.dims[0];
    cols = t.dims[1];
  } else if (t.dims.size() == 3) {
    heads = t.dims[0];
    rows = t.dims[1];
    cols = t.dims[2];
  } else {
    throw FileFormatError(path + ": expected 2 or 3 dims, got " + std::to_string(t.dims.size()));
  }
  std::vector<Matrix> out;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> data(rows * cols);
    for (std::size_t i = 0; i < rows * cols; ++i) data[i] = t.data[h * rows * cols + i];
    out.emplace_back(rows, cols, std::move(data));
  }
  return out;
}

TensorFile to_tensor_file(const std::vector<HeadTensors>& heads, Matrix HeadTensors::*which) {
  TensorFile t;
  const Matrix& first = heads.front().*which;
  t.dims = {static_cast<std::uint32_t>(heads.size()), static_cast<std::uint32_t>(first.rows()),
            static_cast<std::uint32_t>(first.cols())};
  for (const HeadTensors& h : heads) {
    for (double x : (h.*which).values()) t.data.push_back(static_cast<float>(x));
  }
  return t;
}

nlohmann::ordered_json number_or_inf(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

std::string csv_number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void put_similarity(nlohmann::ordered_json& j, const std::string& prefix, const Similarity& s) {
  j[prefix + "cos_sim"] = s.cos_sim;
  j[prefix + "rel_l1"] = s.rel_l1;
  j[prefix + "abs_l1"] = s.abs_l1;
  j[prefix + "rmse"] = s.rmse;
  j[prefix + "psnr"] = number_or_inf(s.psnr);
}

}  // namespace

std::vector<HeadTensors> generate_tensors(std::size_t len_q, std::size_t len_k,
                                          std::size_t head_dim, std::size_t heads,
                                          std::uint64_t seed, double stddev) {
  GaussianStream g(seed);
  std::vector<HeadTensors> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    HeadTensors t;
    t.q = gaussian_matrix(g, len_q, head_dim, stddev);
    t.k = gaussian_matrix(g, len_k, head_dim, stddev);
    t.v = gaussian_matrix(g, len_k, head_dim, stddev);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<HeadTensors> load_tensors(const FileSource& files) {
  const std::vector<Matrix> q = split_heads(read_tensor_file(files.q), files.q);
  const std::vector<Matrix> k = split_heads(read_tensor_file(files.k), files.k);
  const std::vector<Matrix> v = split_heads(read_tensor_file(files.v), files.v);
  if (q.size() != k.size() || q.size() != v.size()) {
    throw ShapeError("head count differs between " + files.q + ", " + files.k + " and " + files.v);
  }
  std::vector<HeadTensors> out;
  for (std::size_t h = 0; h < q.size(); ++h) {
    if (k[h].cols() != q[h].cols()) {
      throw ShapeError(files.k + ": head dim " + std::to_string(k[h].cols()) + " != " +
                       std::to_string(q[h].cols()) + " in " + files.q);
    }
    if (!v[h].same_shape(k[h])) {
      throw ShapeError(files.v + ": shape differs from " + files.k);
    }
    out.push_back({q[h], k[h], v[h]});
  }
  return out;
}

void save_tensors(const std::vector<HeadTensors>& heads, const std::string& q_path,
                  const std::string& k_path, const std::string& v_path) {
  if (heads.empty()) throw ShapeError("save_tensors: no heads");
  write_tensor_file(q_path, to_tensor_file(heads, &HeadTensors::q));
  write_tensor_file(k_path, to_tensor_file(heads, &HeadTensors::k));
  write_tensor_file(v_path, to_tensor_file(heads, &HeadTensors::v));
}

std::uint64_t tensor_checksum(const std::vector<HeadTensors>& heads) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Matrix& m) {
    for (double x : m.values()) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (const HeadTensors& t : heads) {
    mix(t.q);
    mix(t.k);
    mix(t.v);
  }
  return h;
}

std::string format_label(const FormatChoice& f) {
  return f ? std::string(to_string(*f)) : std::string("identity");
}

std::optional<FormatChoice> parse_format_choice(std::string_view text) {
  if (text == "identity") return FormatChoice{};
  if (auto f = parse_format(text)) return FormatChoice{*f};
  return std::nullopt;
}

std::size_t RunConfig::sweep_size() const noexcept {
  return formats.size() * diags.size() * sinks.size() * granularities.size();
}

void RunConfig::validate() const {
  if (sweep_size() == 0) throw ConfigError("run config: every sweep axis needs at least one value");
  attention.validate();
  if (const auto* g = std::get_if<GaussianSource>(&source)) {
    if (g->len_q == 0 || g->len_k == 0 || g->head_dim == 0 || g->heads == 0) {
      throw ConfigError("run config: tensor dimensions must be positive");
    }
    if (!(g->stddev > 0.0)) throw ConfigError("run config: stddev must be positive");
  } else {
    const auto& f = std::get<FileSource>(source);
    if (f.q.empty() || f.k.empty() || f.v.empty()) {
      throw ConfigError("run config: --q, --k and --v must all be given");
    }
  }
  for (std::size_t d : diags) {
    if (d % attention.tile_n != 0) {
      throw ConfigError("run config: diagonal window " + std::to_string(d) +
                        " is not a multiple of tile_n");
    }
  }
  for (std::size_t s : sinks) {
    if (s % attention.tile_n != 0) {
      throw ConfigError("run config: sink window " + std::to_string(s) +
                        " is not a multiple of tile_n");
    }
  }
}

std::vector<MetricReport> run_experiment(const RunConfig& cfg) {
  cfg.validate();
  std::vector<HeadTensors> heads;
  std::optional<std::uint64_t> seed;
  if (const auto* g = std::get_if<GaussianSource>(&cfg.source)) {
    heads = generate_tensors(g->len_q, g->len_k, g->head_dim, g->heads, g->seed, g->stddev);
    seed = g->seed;
  } else {
    heads = load_tensors(std::get<FileSource>(cfg.source));
  }

  std::vector<MetricReport> reports;
  reports.reserve(cfg.sweep_size() * heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadTensors& t = heads[h];
    const bool causal = cfg.attention.causal;
    if (causal && t.q.rows() != t.k.rows()) {
      throw ShapeError("causal run needs equal query and key lengths (head " + std::to_string(h) + ")");
    }
    const Matrix ref = reference_attention(t.q, t.k, t.v, causal);

    for (const FormatChoice& fmt : cfg.formats) {
      for (std::size_t diag : cfg.diags) {
        for (std::size_t sink : cfg.sinks) {
          for (Granularity gran : cfg.granularities) {
            AttentionConfig ac = cfg.attention;
            ac.low_format = fmt;
            ac.diag = diag;
            ac.sink = sink;
            ac.granularity = gran;

            const DmaEngine engine(t.q, t.k, ac);
            const Matrix out = engine.run(t.v);

            MetricReport r;
            r.head = h;
            r.format = format_label(fmt);
            r.high_format = format_label(ac.high_format);
            r.diag = diag;
            r.sink = sink;
            r.granularity = std::string(to_string(gran));
            r.causal = causal;
            r.tile_m = ac.tile_m;
            r.tile_n = ac.tile_n;
            r.len_q = t.q.rows();
            r.len_k = t.k.rows();
            r.head_dim = t.q.cols();
            r.seed = seed;
            r.bit_high_pct = 100.0 * bit_high_fraction(r.len_q, r.len_k, ac);
            r.output = similarity(ref, out);

            if (cfg.score_metrics) {
              SimilarityAccumulator acc;
              for (std::size_t n_q = 0; n_q < engine.query_tiles(); ++n_q) {
                const std::size_t q0 = n_q * ac.tile_m;
                const std::size_t nq = std::min(ac.tile_m, r.len_q - q0);
                acc.add(reference_probabilities(t.q, t.k, causal, q0, nq), engine.probabilities(n_q));
              }
              r.scores = acc.result();
            }
            reports.push_back(std::move(r));
          }
        }
      }
    }
  }
  return reports;
}

std::string reports_to_json(std::span<const MetricReport> reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const MetricReport& r : reports) {
    nlohmann::ordered_json j;
    j["head"] = r.head;
    j["format"] = r.format;
    j["high_format"] = r.high_format;
    j["diag"] = r.diag;
    j["sink"] = r.sink;
    j["granularity"] = r.granularity;
    j["causal"] = r.causal;
    j["tile_m"] = r.tile_m;
    j["tile_n"] = r.tile_n;
    j["len_q"] = r.len_q;
    j["len_k"] = r.len_k;
    j["head_dim"] = r.head_dim;
    j["seed"] = r.seed ? nlohmann::ordered_json(*r.seed) : nlohmann::ordered_json(nullptr);
    j["bit_high_pct"] = r.bit_high_pct;
    put_similarity(j, "", r.output);
    if (r.scores) put_similarity(j, "score_", *r.scores);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string reports_to_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << "head,format,high_format,diag,sink,granularity,causal,tile_m,tile_n,len_q,len_k,"
        "head_dim,seed,bit_high_pct,cos_sim,rel_l1,abs_l1,rmse,psnr,"
        "score_cos_sim,score_rel_l1,score_abs_l1,score_rmse,score_psnr\n";
  for (const MetricReport& r : reports) {
    os << r.head << ',' << r.format << ',' << r.high_format << ',' << r.diag << ',' << r.sink
       << ',' << r.granularity << ',' << (r.causal ? "true" : "false") << ',' << r.tile_m << ','
       << r.tile_n << ',' << r.len_q << ',' << r.len_k << ',' << r.head_dim << ','
       << (r.seed ? std::to_string(*r.seed) : std::string()) << ',' << csv_number(r.bit_high_pct)
       << ',' << csv_number(r.output.cos_sim) << ',' << csv_number(r.output.rel_l1) << ','
       << csv_number(r.output.abs_l1) << ',' << csv_number(r.output.rmse) << ','
       << csv_number(r.output.psnr);
    if (r.scores) {
      os << ',' << csv_number(r.scores->cos_sim) << ',' << csv_number(r.scores->rel_l1) << ','
         << csv_number(r.scores->abs_l1) << ',' << csv_number(r.scores->rmse) << ','
         << csv_number(r.scores->psnr);
    } else {
      os << ",,,,,";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mxattn
