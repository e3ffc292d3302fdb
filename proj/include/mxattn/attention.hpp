// SPDX-License-Identifier: Apache-2.0
//
// Tiled single-head attention with tile-level mixed precision.
//
// Every query tile walks the key tiles with an online-softmax accumulator.
// Key tiles inside the diagonal window (the last T causal key positions, or
// the band [q0 - T/2, q0 + T/2) without a causal mask) and inside the sink
// window (the first `sink` keys) are scored with the high-precision copies
// of Q and K; all other tiles use the low-precision copies. Quantized
// operands are emulated by dequantizing to double and multiplying exactly.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mxattn/block_quant.hpp"
#include "mxattn/codec.hpp"
#include "mxattn/matrix.hpp"

namespace mxattn {

enum class Phase1Order : std::uint8_t { LowerFirst, UpperFirst };

struct AttentionConfig {
  std::size_t tile_m = 64;  // query rows per tile
  std::size_t tile_n = 64;  // key rows per tile
  std::size_t diag = 0;     // diagonal window T, in tokens
  std::size_t sink = 0;     // sink window, in tokens
  bool causal = true;
  /// std::nullopt keeps the operand in full working precision.
  std::optional<MxFormat> low_format = MxFormat::NVFP4;
  std::optional<MxFormat> high_format = MxFormat::MXFP8_E4M3;
  Granularity granularity = Granularity::PerToken;
  /// Visit order of the two low-precision intervals in the non-causal layout.
  Phase1Order phase1_order = Phase1Order::LowerFirst;

  /// Throws ConfigError unless tiles are non-empty and T, sink are multiples of tile_n.
  void validate() const;
};

enum class TilePrecision : std::uint8_t { Low, High };

struct TileVisit {
  std::size_t key_tile;
  TilePrecision precision;
  friend bool operator==(const TileVisit&, const TileVisit&) = default;
};

/// Ordered list of key tiles one query tile visits, with the precision of each.
std::vector<TileVisit> plan_query_tile(std::size_t query_tile, std::size_t len_q,
                                       std::size_t len_k, const AttentionConfig& cfg);

struct TileScores {
  Matrix s;  // rows of the query tile x rows of the key tile
  std::size_t query_tile = 0;
  std::size_t key_tile = 0;
};

/// Running row max m, normalizer l and unnormalized output O of one query tile.
struct OnlineSoftmaxState {
  std::vector<double> m;
  std::vector<double> l;
  Matrix o;

  OnlineSoftmaxState(std::size_t rows, std::size_t head_dim);
  /// diag(l)^-1 * O. Rows that never saw an unmasked key come out as zero.
  Matrix normalized() const;
};

/// m' = max(m, rowmax S); P = exp(S - m'); l' = l*exp(m - m') + rowsum P;
/// O' = O*exp(m - m') + P*V. Uses 2^x instead of e^x when `base2` is set.
/// Rows whose scores are all -inf are left untouched.
void online_softmax_update(OnlineSoftmaxState& state, const TileScores& scores,
                           const Matrix& v_tile, bool base2);

/// Writes -inf wherever the global query position is smaller than the key position.
void causal_mask(TileScores& scores, const AttentionConfig& cfg);

/// Untiled softmax(Q K^T / sqrt(D) + mask) V in double precision.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal);

/// Post-softmax probabilities of reference attention for query rows
/// [row_begin, row_begin + row_count). Masked entries are zero.
Matrix reference_probabilities(const Matrix& q, const Matrix& k, bool causal,
                               std::size_t row_begin, std::size_t row_count);

using TileVisitor = std::function<void(std::size_t query_tile, const TileVisit&)>;

/// Quantizes Q and K once and executes the tile plan over any V.
class DmaEngine {
 public:
  DmaEngine(const Matrix& q, const Matrix& k, const AttentionConfig& cfg);

  std::size_t query_tiles() const noexcept;
  const AttentionConfig& config() const noexcept { return cfg_; }

  Matrix run(const Matrix& v, const TileVisitor& visitor = {}) const;
  /// Softmax probabilities of one query tile (rows x L_K) under the same
  /// precision assignment that run() uses.
  Matrix probabilities(std::size_t query_tile) const;

  /// Dequantized, softmax-prescaled query copies and key copies.
  const Matrix& q_operand(TilePrecision p) const noexcept {
    return p == TilePrecision::Low ? q_low_ : q_high_;
  }
  const Matrix& k_operand(TilePrecision p) const noexcept {
    return p == TilePrecision::Low ? k_low_ : k_high_;
  }

 private:
  TileScores scores(std::size_t query_tile, const TileVisit& visit) const;

  AttentionConfig cfg_;
  std::size_t len_q_ = 0;
  std::size_t len_k_ = 0;
  std::size_t head_dim_ = 0;
  Matrix q_low_, q_high_, k_low_, k_high_;
};

/// Causal two-phase mixed-precision attention (cfg.causal is forced on).
Matrix dma_causal(const Matrix& q, const Matrix& k, const Matrix& v, AttentionConfig cfg,
                  const TileVisitor& visitor = {});
/// Non-causal variant: two low-precision intervals plus the diagonal band.
Matrix dma_noncausal(const Matrix& q, const Matrix& k, const Matrix& v, AttentionConfig cfg,
                     const TileVisitor& visitor = {});

}  // namespace mxattn
