#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerate the golden attention outputs used by the unit tests.

Reads Q/K/V MXT1 files (as written by `mxattn --dump-tensors`) and evaluates
softmax(Q K^T / sqrt(D) + mask) V in numpy extended precision, independently
of the C++ code. Writes one text file per masking mode, 17 significant digits.
"""
import argparse
import struct
from pathlib import Path

import numpy as np


def read_mxt(path):
    raw = Path(path).read_bytes()
    if raw[:4] != b"MXT1":
        raise SystemExit(f"{path}: bad magic")
    dtype, ndim = struct.unpack_from("<II", raw, 4)
    if dtype != 0:
        raise SystemExit(f"{path}: unsupported dtype {dtype}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    data = np.frombuffer(raw, dtype="<f4", offset=12 + 4 * ndim)
    return data.reshape(dims)


def attention(q, k, v, causal):
    q, k, v = (x.astype(np.longdouble) for x in (q, k, v))
    s = q @ k.T / np.sqrt(np.longdouble(q.shape[1]))
    if causal:
        s[np.triu_indices(s.shape[0], 1)] = -np.inf
    s -= s.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("prefix", help="tensor prefix, e.g. tests/data/golden_ (reads <prefix>q.mxt ...)")
    args = ap.parse_args()
    q, k, v = (read_mxt(f"{args.prefix}{n}.mxt") for n in "qkv")
    if q.ndim == 3:  # (H, L, D): use the first head
        q, k, v = q[0], k[0], v[0]
    for causal, name in ((True, "causal"), (False, "noncausal")):
        out = attention(q, k, v, causal)
        with open(f"{args.prefix}out_{name}.txt", "w") as fh:
            for row in out:
                fh.write(" ".join(f"{float(x):.17g}" for x in row) + "\n")


if __name__ == "__main__":
    main()
