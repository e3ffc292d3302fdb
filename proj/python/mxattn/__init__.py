# SPDX-License-Identifier: Apache-2.0
"""Mixed-precision microscaling attention emulation."""

from ._mxattn import (
    AttentionConfig,
    Granularity,
    MxFormat,
    Similarity,
    bit_high_fraction,
    decode_e2m1,
    decode_fp8,
    Error,
    QuantizedTensor,
    encode_e2m1,
    encode_fp8,
    generate_tensors,
    mixed_attention,
    plan_query_tile,
    quantize_dual,
    reference_attention,
    similarity,
)

__all__ = [
    "AttentionConfig",
    "Granularity",
    "MxFormat",
    "Similarity",
    "bit_high_fraction",
    "decode_e2m1",
    "decode_fp8",
    "Error",
    "QuantizedTensor",
    "encode_e2m1",
    "encode_fp8",
    "generate_tensors",
    "mixed_attention",
    "plan_query_tile",
    "quantize_dual",
    "reference_attention",
    "similarity",
]
