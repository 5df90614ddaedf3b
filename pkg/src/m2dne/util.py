"""Numerically stable scalar helpers and seeded RNG sub-streams."""

from __future__ import annotations

import os
import zlib

import numpy as np


def sigmoid(x):
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow: -softplus(-x)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if out.ndim == 0:
        return float(out)
    return out


def substream(seed: int, name: str) -> np.random.Generator:
    """Derive an independent generator from one master seed and a stream name.

    Each consumer (init / batch / negatives / eval-splits) pulls from its own
    named stream, so adding a consumer never perturbs the draws of another.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag]))


def resolve_workers(requested: int | None = None) -> int:
    """Worker cap: explicit argument, else M2DNE_THREADS, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("M2DNE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1
