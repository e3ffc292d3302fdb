// SPDX-License-Identifier: Apache-2.0
#include "mxattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mxattn/error.hpp"

namespace mxattn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

long long ceil_div(long long a, long long b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

std::size_t clamp_tile(long long t, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long long>(t, 0, static_cast<long long>(n)));
}

bool is_fp4(MxFormat f) { return f == MxFormat::NVFP4 || f == MxFormat::MXFP4; }

Matrix prescaled_copy(const Matrix& x, bool is_query) {
  Matrix out = x;
  if (is_query) {
    const double f = softmax_prescale_factor(x.cols());
    for (double& v : out.values()) v *= f;
  }
  return out;
}

Matrix emulate_operand(const Matrix& x, bool is_query, std::optional<MxFormat> fmt,
                       QuantOptions opts) {
  if (!fmt) return prescaled_copy(x, is_query);
  if (is_fp4(*fmt)) {
    opts.low_format = *fmt;
    return dequantize_low(quantize_dual(x, is_query, opts));
  }
  opts.high_format = *fmt;
  return dequantize_high(quantize_dual(x, is_query, opts));
}

// Low and high copies of one operand. A single dual quantization serves both
// when the pair is (FP4, MXFP8), which is the default mixed configuration.
std::pair<Matrix, Matrix> emulate_pair(const Matrix& x, bool is_query,
                                       const AttentionConfig& cfg) {
  QuantOptions opts;
  opts.granularity = cfg.granularity;
  if (cfg.low_format && cfg.high_format && is_fp4(*cfg.low_format) &&
      !is_fp4(*cfg.high_format)) {
    opts.low_format = *cfg.low_format;
    opts.high_format = *cfg.high_format;
    const DualQuantizedTensor t = quantize_dual(x, is_query, opts);
    return {dequantize_low(t), dequantize_high(t)};
  }
  return {emulate_operand(x, is_query, cfg.low_format, opts),
          emulate_operand(x, is_query, cfg.high_format, opts)};
}

// rows [r0, r0 + nr) of a times rows [c0, c0 + nc) of b, transposed.
Matrix matmul_nt(const Matrix& a, std::size_t r0, std::size_t nr, const Matrix& b,
                 std::size_t c0, std::size_t nc) {
  Matrix s(nr, nc);
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < nr; ++i) {
    const double* ai = a.row(r0 + i).data();
    double* si = s.row(i).data();
    for (std::size_t j = 0; j < nc; ++j) {
      const double* bj = b.row(c0 + j).data();
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += ai[t] * bj[t];
      si[j] = acc;
    }
  }
  return s;
}

Matrix row_slice(const Matrix& m, std::size_t r0, std::size_t nr) {
  Matrix out(nr, m.cols());
  std::copy_n(m.row(r0).data(), nr * m.cols(), out.values().data());
  return out;
}

void check_qkv(const Matrix& q, const Matrix& k, const Matrix* v, bool causal) {
  if (q.cols() != k.cols()) throw ShapeError("attention: Q and K head dimensions differ");
  if (q.cols() == 0) throw ShapeError("attention: empty head dimension");
  if (k.rows() == 0) throw ShapeError("attention: no keys");
  if (v && (v->rows() != k.rows() || v->cols() != k.cols())) {
    throw ShapeError("attention: V must have the shape of K");
  }
  if (causal && q.rows() != k.rows()) {
    throw ShapeError("attention: causal attention needs equal query and key lengths");
  }
}

}  // namespace

void AttentionConfig::validate() const {
  if (tile_m == 0 || tile_n == 0) throw ConfigError("attention: tile sizes must be positive");
  if (diag % tile_n != 0) {
    throw ConfigError("attention: diagonal window " + std::to_string(diag) +
                      " is not a multiple of tile_n " + std::to_string(tile_n));
  }
  if (sink % tile_n != 0) {
    throw ConfigError("attention: sink window " + std::to_string(sink) +
                      " is not a multiple of tile_n " + std::to_string(tile_n));
  }
  if (low_format && !is_fp4(*low_format) && *low_format != MxFormat::MXFP8_E4M3 &&
      *low_format != MxFormat::MXFP8_E5M2) {
    throw ConfigError("attention: unsupported low format");
  }
}

std::vector<TileVisit> plan_query_tile(std::size_t query_tile, std::size_t len_q,
                                       std::size_t len_k, const AttentionConfig& cfg) {
  const auto bm = static_cast<long long>(cfg.tile_m);
  const auto bn = static_cast<long long>(cfg.tile_n);
  const auto t = static_cast<long long>(cfg.diag);
  const long long q_begin = static_cast<long long>(query_tile) * bm;
  const long long q_end = std::min(q_begin + bm, static_cast<long long>(len_q));
  const std::size_t key_tiles = static_cast<std::size_t>(ceil_div(static_cast<long long>(len_k), bn));

  std::vector<TileVisit> plan;
  if (cfg.causal) {
    // Key tiles holding positions <= the last query of this tile.
    const std::size_t end = std::min(key_tiles, clamp_tile(ceil_div(q_end, bn), key_tiles));
    const std::size_t sink_tiles = std::min(cfg.sink / cfg.tile_n, end);
    // The last T key positions of the causal range run in high precision.
    const std::size_t high_begin =
        std::max(sink_tiles, clamp_tile(ceil_div(q_end - t, bn), end));
    for (std::size_t i = 0; i < end; ++i) {
      const bool high = i < sink_tiles || i >= high_begin;
      plan.push_back({i, high ? TilePrecision::High : TilePrecision::Low});
    }
    return plan;
  }

  // Non-causal: band [q0 - T/2, q0 + T/2) in high precision, clipped to the sequence.
  const std::size_t lo = clamp_tile(ceil_div(2 * q_begin - t, 2 * bn), key_tiles);
  const std::size_t hi = std::max(lo, clamp_tile(ceil_div(2 * q_begin + t, 2 * bn), key_tiles));
  const std::size_t sink_tiles = std::min(cfg.sink / cfg.tile_n, key_tiles);

  for (std::size_t i = 0; i < sink_tiles; ++i) plan.push_back({i, TilePrecision::High});
  auto low_range = [&](std::size_t a, std::size_t b) {
    for (std::size_t i = std::max(a, sink_tiles); i < b; ++i) {
      plan.push_back({i, TilePrecision::Low});
    }
  };
  if (cfg.phase1_order == Phase1Order::LowerFirst) {
    low_range(0, lo);
    low_range(hi, key_tiles);
  } else {
    low_range(hi, key_tiles);
    low_range(0, lo);
  }
  for (std::size_t i = std::max(lo, sink_tiles); i < hi; ++i) {
    plan.push_back({i, TilePrecision::High});
  }
  return plan;
}

OnlineSoftmaxState::OnlineSoftmaxState(std::size_t rows, std::size_t head_dim)
    : m(rows, kNegInf), l(rows, 0.0), o(rows, head_dim, 0.0) {}

Matrix OnlineSoftmaxState::normalized() const {
  Matrix out(o.rows(), o.cols());
  for (std::size_t r = 0; r < o.rows(); ++r) {
    if (l[r] == 0.0) continue;
    const double inv = 1.0 / l[r];
    for (std::size_t c = 0; c < o.cols(); ++c) out(r, c) = o(r, c) * inv;
  }
  return out;
}

void online_softmax_update(OnlineSoftmaxState& state, const TileScores& scores,
                           const Matrix& v_tile, bool base2) {
  const Matrix& s = scores.s;
  if (s.rows() != state.o.rows() || s.cols() != v_tile.rows() ||
      v_tile.cols() != state.o.cols()) {
    throw ShapeError("online_softmax_update: inconsistent tile shapes");
  }
  auto expf = [base2](double x) { return base2 ? std::exp2(x) : std::exp(x); };
  const std::size_t d = v_tile.cols();

  for (std::size_t r = 0; r < s.rows(); ++r) {
    const std::span<const double> row = s.row(r);
    const double row_max = *std::max_element(row.begin(), row.end());
    const double m_new = std::max(state.m[r], row_max);
    if (m_new == kNegInf) continue;

    const double alpha = expf(state.m[r] - m_new);
    double* o = state.o.row(r).data();
    for (std::size_t c = 0; c < d; ++c) o[c] *= alpha;
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] == kNegInf) continue;
      const double p = expf(row[j] - m_new);
      sum += p;
      const double* vj = v_tile.row(j).data();
      for (std::size_t c = 0; c < d; ++c) o[c] += p * vj[c];
    }
    state.l[r] = state.l[r] * alpha + sum;
    state.m[r] = m_new;
  }
}

void causal_mask(TileScores& scores, const AttentionConfig& cfg) {
  const std::size_t q0 = scores.query_tile * cfg.tile_m;
  const std::size_t k0 = scores.key_tile * cfg.tile_n;
  Matrix& s = scores.s;
  for (std::size_t a = 0; a < s.rows(); ++a) {
    for (std::size_t b = 0; b < s.cols(); ++b) {
      if (q0 + a < k0 + b) s(a, b) = kNegInf;
    }
  }
}

Matrix reference_probabilities(const Matrix& q, const Matrix& k, bool causal,
                               std::size_t row_begin, std::size_t row_count) {
  check_qkv(q, k, nullptr, causal);
  if (row_begin + row_count > q.rows()) throw ShapeError("reference_probabilities: row range");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix p = matmul_nt(q, row_begin, row_count, k, 0, k.rows());
  for (std::size_t i = 0; i < row_count; ++i) {
    const std::size_t r = row_begin + i;
    const std::size_t valid = causal ? std::min(r + 1, k.rows()) : k.rows();
    std::span<double> row = p.row(i);
    double mx = kNegInf;
    for (std::size_t j = 0; j < valid; ++j) {
      row[j] *= inv_sqrt_d;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < valid; ++j) row[j] /= sum;
    for (std::size_t j = valid; j < row.size(); ++j) row[j] = 0.0;
  }
  return p;
}

Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal) {
  check_qkv(q, k, &v, causal);
  Matrix out(q.rows(), v.cols());
  constexpr std::size_t kChunk = 64;
  for (std::size_t r0 = 0; r0 < q.rows(); r0 += kChunk) {
    const std::size_t nr = std::min(kChunk, q.rows() - r0);
    const Matrix p = reference_probabilities(q, k, causal, r0, nr);
    for (std::size_t i = 0; i < nr; ++i) {
      double* o = out.row(r0 + i).data();
      const std::span<const double> pr = p.row(i);
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (pr[j] == 0.0) continue;
        const double* vj = v.row(j).data();
        for (std::size_t c = 0; c < v.cols(); ++c) o[c] += pr[j] * vj[c];
      }
    }
  }
  return out;
}

DmaEngine::DmaEngine(const Matrix& q, const Matrix& k, const AttentionConfig& cfg)
    : cfg_(cfg), len_q_(q.rows()), len_k_(k.rows()), head_dim_(q.cols()) {
  cfg_.validate();
  check_qkv(q, k, nullptr, cfg_.causal);
  std::tie(q_low_, q_high_) = emulate_pair(q, true, cfg_);
  std::tie(k_low_, k_high_) = emulate_pair(k, false, cfg_);
}

std::size_t DmaEngine::query_tiles() const noexcept {
  return (len_q_ + cfg_.tile_m - 1) / cfg_.tile_m;
}

TileScores DmaEngine::scores(std::size_t query_tile, const TileVisit& visit) const {
  const std::size_t q0 = query_tile * cfg_.tile_m;
  const std::size_t nq = std::min(cfg_.tile_m, len_q_ - q0);
  const std::size_t k0 = visit.key_tile * cfg_.tile_n;
  const std::size_t nk = std::min(cfg_.tile_n, len_k_ - k0);
  TileScores ts{matmul_nt(q_operand(visit.precision), q0, nq, k_operand(visit.precision), k0, nk),
                query_tile, visit.key_tile};
  // Only tiles that straddle the diagonal have anything to mask.
  if (cfg_.causal && k0 + nk > q0 + 1) causal_mask(ts, cfg_);
  return ts;
}

Matrix DmaEngine::run(const Matrix& v, const TileVisitor& visitor) const {
  if (v.rows() != len_k_ || v.cols() != head_dim_) throw ShapeError("attention: V must have the shape of K");
  Matrix out(len_q_, head_dim_);
  for (std::size_t n_q = 0; n_q < query_tiles(); ++n_q) {
    const std::size_t q0 = n_q * cfg_.tile_m;
    const std::size_t nq = std::min(cfg_.tile_m, len_q_ - q0);
    OnlineSoftmaxState state(nq, head_dim_);
    for (const TileVisit& visit : plan_query_tile(n_q, len_q_, len_k_, cfg_)) {
      if (visitor) visitor(n_q, visit);
      const std::size_t k0 = visit.key_tile * cfg_.tile_n;
      const std::size_t nk = std::min(cfg_.tile_n, len_k_ - k0);
      online_softmax_update(state, scores(n_q, visit), row_slice(v, k0, nk), true);
    }
    const Matrix tile_out = state.normalized();
    std::copy_n(tile_out.values().data(), tile_out.size(), out.row(q0).data());
  }
  return out;
}

Matrix DmaEngine::probabilities(std::size_t query_tile) const {
  const std::size_t q0 = query_tile * cfg_.tile_m;
  const std::size_t nq = std::min(cfg_.tile_m, len_q_ - q0);
  Matrix p(nq, len_k_, kNegInf);
  for (const TileVisit& visit : plan_query_tile(query_tile, len_q_, len_k_, cfg_)) {
    const TileScores ts = scores(query_tile, visit);
    const std::size_t k0 = visit.key_tile * cfg_.tile_n;
    for (std::size_t a = 0; a < nq; ++a) {
      std::copy_n(ts.s.row(a).data(), ts.s.cols(), p.row(a).data() + k0);
    }
  }
  for (std::size_t a = 0; a < nq; ++a) {
    std::span<double> row = p.row(a);
    const double mx = *std::max_element(row.begin(), row.end());
    if (mx == kNegInf) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    double sum = 0.0;
    for (double& x : row) {
      x = x == kNegInf ? 0.0 : std::exp2(x - mx);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  return p;
}

Matrix dma_causal(const Matrix& q, const Matrix& k, const Matrix& v, AttentionConfig cfg,
                  const TileVisitor& visitor) {
  cfg.causal = true;
  check_qkv(q, k, &v, true);
  return DmaEngine(q, k, cfg).run(v, visitor);
}

Matrix dma_noncausal(const Matrix& q, const Matrix& k, const Matrix& v, AttentionConfig cfg,
                     const TileVisitor& visitor) {
  cfg.causal = false;
  check_qkv(q, k, &v, false);
  return DmaEngine(q, k, cfg).run(v, visitor);
}

}  // namespace mxattn
