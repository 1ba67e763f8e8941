"""Salient channel structure discovery from weight-derived scores.

Pipeline: flag bias-dominated channels with a robust z-score over bias
magnitudes, pick the top-M variance channels as salient cores (SC), then
greedily and exclusively attach the N-1 most similar remaining channels to
each core (SA). Channels left over land in a residual ordered by descending
variance. The result partitions [0, C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .importance import ChannelScores, compute_scores, rank_descending
from .tensor_io import ConvKernelSet

SIMILARITY_MODES = ("raw", "absolute")

# Consistency constant for the normal distribution: sigma ~ 1.4826 * MAD.
_MAD_SCALE = 1.4826


@dataclass(frozen=True)
class DiscoveryParams:
    """Knobs for structure discovery.

    group_size is the total group size N including the core channel.
    num_groups of None means M = floor((C - |bias|) / N).
    """

    group_size: int
    num_groups: int | None = None
    bias_z_threshold: float = 3.5
    similarity_mode: str = "raw"

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.num_groups is not None and self.num_groups < 1:
            raise ValueError(f"num_groups must be >= 1, got {self.num_groups}")
        if not (self.bias_z_threshold > 0):
            raise ValueError(
                f"bias_z_threshold must be > 0, got {self.bias_z_threshold}"
            )
        if self.similarity_mode not in SIMILARITY_MODES:
            raise ValueError(
                f"similarity_mode must be one of {SIMILARITY_MODES}, "
                f"got {self.similarity_mode!r}"
            )


@dataclass(frozen=True)
class ChannelGroup:
    """One core channel plus its auxiliaries, similarity-descending."""

    sc: int
    sa: tuple[int, ...]

    @property
    def channels(self) -> tuple[int, ...]:
        return (self.sc,) + self.sa


@dataclass(frozen=True)
class IscsStructure:
    """Discovered partition: groups, bias-dominated set, residual."""

    groups: tuple[ChannelGroup, ...]
    bias_channels: tuple[int, ...]
    residual: tuple[int, ...]

    def validate(self, channel_count: int) -> None:
        """Raise RuntimeError unless groups/bias/residual partition [0, C)."""
        seen: list[int] = []
        for g in self.groups:
            seen.extend(g.channels)
        seen.extend(self.bias_channels)
        seen.extend(self.residual)
        if sorted(seen) != list(range(channel_count)):
            raise RuntimeError(
                "structure does not partition channel set: "
                f"{len(seen)} assignments over {channel_count} channels"
            )


def flag_bias_dominated(
    scores: ChannelScores | np.ndarray, threshold: float = 3.5
) -> set[int]:
    """Channels whose bias magnitude is a robust outlier.

    z = (bias - median) / (1.4826 * MAD), flagged when z > threshold.
    MAD of zero falls back to flagging bias > median (empty if all equal).
    Needs at least 2 channels for the statistics to mean anything.
    """
    bias = (
        scores.bias_mag
        if isinstance(scores, ChannelScores)
        else np.asarray(scores, dtype=np.float64)
    )
    if bias.shape[0] < 2:
        raise ValueError("bias outlier flagging needs at least 2 channels")
    if not (threshold > 0):
        raise ValueError(f"threshold must be > 0, got {threshold}")
    med = float(np.median(bias))
    mad = float(np.median(np.abs(bias - med)))
    if mad == 0.0:
        return {int(c) for c in np.nonzero(bias > med)[0]}
    z = (bias - med) / (_MAD_SCALE * mad)
    return {int(c) for c in np.nonzero(z > threshold)[0]}


def select_scs(
    scores: ChannelScores, bias_channels: set[int], num_groups: int
) -> list[int]:
    """Top-num_groups channels by variance, excluding bias-dominated ones."""
    order = rank_descending(scores.variance)
    pool = [int(c) for c in order if int(c) not in bias_channels]
    if num_groups > len(pool):
        raise ValueError(
            f"num_groups={num_groups} exceeds the {len(pool)} channels "
            "available after bias exclusion"
        )
    return pool[:num_groups]


def assign_sas(
    scores: ChannelScores,
    scs: list[int],
    bias_channels: set[int],
    group_size: int,
    similarity_mode: str = "raw",
) -> IscsStructure:
    """Greedy exclusive attachment of auxiliaries to cores.

    Cores are visited in the given (variance-descending) order; each takes
    the group_size - 1 highest-similarity channels still unclaimed. Short
    final groups are forbidden: a core whose pool cannot fill a group is
    demoted to the residual along with the leftovers.
    """
    if similarity_mode not in SIMILARITY_MODES:
        raise ValueError(f"unknown similarity_mode {similarity_mode!r}")
    sim = scores.similarity
    if similarity_mode == "absolute":
        sim = np.abs(sim)
    c = scores.channel_count
    claimed = set(scs) | bias_channels
    available = {ch for ch in range(c) if ch not in claimed}

    groups: list[ChannelGroup] = []
    demoted: list[int] = []
    for sc in scs:
        if len(available) >= group_size - 1:
            row = sim[sc]
            ranked = sorted(available, key=lambda ch: (-row[ch], ch))
            take = ranked[: group_size - 1]
            available.difference_update(take)
            groups.append(ChannelGroup(sc=sc, sa=tuple(take)))
        else:
            demoted.append(sc)

    leftovers = sorted(
        available.union(demoted), key=lambda ch: (-scores.variance[ch], ch)
    )
    return IscsStructure(
        groups=tuple(groups),
        bias_channels=tuple(sorted(bias_channels)),
        residual=tuple(leftovers),
    )


def discover(
    kernels: ConvKernelSet,
    params: DiscoveryParams,
    scores: ChannelScores | None = None,
) -> IscsStructure:
    """Full discovery: scores -> bias flags -> SC selection -> SA assignment.

    Precomputed scores may be passed to avoid recomputation; they must come
    from the same kernel set.
    """
    if scores is None:
        scores = compute_scores(kernels)
    c = scores.channel_count
    if c >= 2:
        bias = flag_bias_dominated(scores, params.bias_z_threshold)
    else:
        bias = set()

    if params.num_groups is not None:
        m = params.num_groups
    else:
        m = (c - len(bias)) // params.group_size
    if m > 0:
        scs = select_scs(scores, bias, m)
        structure = assign_sas(
            scores, scs, bias, params.group_size, params.similarity_mode
        )
    else:
        leftovers = sorted(
            (ch for ch in range(c) if ch not in bias),
            key=lambda ch: (-scores.variance[ch], ch),
        )
        structure = IscsStructure(
            groups=(),
            bias_channels=tuple(sorted(bias)),
            residual=tuple(leftovers),
        )
    structure.validate(c)
    return structure
