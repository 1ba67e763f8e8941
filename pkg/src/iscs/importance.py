"""Per-channel importance signals computed from convolution weights alone.

Three signals per output channel: population variance of the kernel entries,
absolute bias magnitude, and pairwise cosine similarity between row-major
flattened kernels. Everything is float64 with a fixed summation order, so
results are bitwise reproducible for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import ConvKernelSet

# Norms below this are treated as zero vectors in cosine similarity.
NORM_EPS = 1e-30


@dataclass(frozen=True)
class ChannelScores:
    """variance (C,), bias_mag (C,), similarity (C, C) with unit diagonal."""

    variance: np.ndarray
    bias_mag: np.ndarray
    similarity: np.ndarray

    @property
    def channel_count(self) -> int:
        return int(self.variance.shape[0])


def variance_scores(kernels: ConvKernelSet) -> np.ndarray:
    """Population variance of each channel's kernel entries.

    Two-pass form: subtract the channel mean, then average the squared
    deviations over all C_in * K * K entries.
    """
    flat = kernels.weights.reshape(kernels.out_channels, -1)
    mean = flat.mean(axis=1)
    dev = flat - mean[:, None]
    return np.square(dev).mean(axis=1)


def bias_scores(kernels: ConvKernelSet) -> np.ndarray:
    """Absolute bias per channel; zeros when the layer has no bias."""
    if kernels.bias is None:
        return np.zeros(kernels.out_channels, dtype=np.float64)
    return np.abs(kernels.bias)


def cosine_similarity_matrix(kernels: ConvKernelSet) -> np.ndarray:
    """Cosine similarity between flattened kernels.

    Channels with norm below NORM_EPS get zero rows/columns; the diagonal is
    forced to exactly 1. The upper triangle is mirrored so the matrix is
    exactly symmetric rather than symmetric up to rounding.
    """
    flat = kernels.weights.reshape(kernels.out_channels, -1)
    norms = np.sqrt(np.square(flat).sum(axis=1))
    dead = norms < NORM_EPS
    safe = np.where(dead, 1.0, norms)
    unit = flat / safe[:, None]
    sim = unit @ unit.T
    sim[dead, :] = 0.0
    sim[:, dead] = 0.0
    lower = np.tril_indices(sim.shape[0], -1)
    sim[lower] = sim.T[lower]
    np.fill_diagonal(sim, 1.0)
    return sim


def rank_descending(values: np.ndarray) -> np.ndarray:
    """Channel indices sorted by value descending, ties by ascending index."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("rank_descending requires finite values")
    # Stable sort of -v: equal values keep their original (ascending) order.
    return np.argsort(-v, kind="stable")


def compute_scores(kernels: ConvKernelSet) -> ChannelScores:
    return ChannelScores(
        variance=variance_scores(kernels),
        bias_mag=bias_scores(kernels),
        similarity=cosine_similarity_matrix(kernels),
    )
