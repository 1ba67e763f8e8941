"""Slice grouping, channel permutations, and the run manifest.

The kn+i layout: a group's channels are ranked (core first, then auxiliaries
by descending similarity) and the channel at rank r goes to slice r mod S at
in-slice position floor(r / S). Alternative orderings (corr ascending or
descending, greedy nearest-neighbor chain) keep the ranked list contiguous
per slice instead of interleaving.

The global permutation lists groups in order (slice 0, slice 1, ... within
each group), then bias channels ascending, then the residual in its stored
variance-descending order. permutation[new_position] = original_channel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .discovery import ChannelGroup, DiscoveryParams, IscsStructure

ORDERING_STRATEGIES = ("kn_i", "corr_ascending", "corr_descending", "tsp_greedy")

MANIFEST_VERSION = 1


def slice_group(channels: list[int], slice_count: int) -> list[list[int]]:
    """Split a ranked channel list into slice_count interleaved slices.

    Rank r lands in slice r mod slice_count at position floor(r / slice_count),
    i.e. slice i is channels[i::slice_count]. slice_count must divide the
    group size.
    """
    n = len(channels)
    if slice_count < 1:
        raise ValueError(f"slice_count must be >= 1, got {slice_count}")
    if n % slice_count != 0:
        raise ValueError(
            f"slice_count {slice_count} does not divide group size {n}"
        )
    return [list(channels[i::slice_count]) for i in range(slice_count)]


def order_group(
    sc: int,
    members: tuple[int, ...],
    similarity: np.ndarray,
    strategy: str,
) -> list[int]:
    """Ranked channel list for one group under the given strategy.

    The core always comes first. kn_i and corr_descending rank auxiliaries by
    similarity to the core descending; corr_ascending ranks ascending;
    tsp_greedy grows a nearest-neighbor chain from the core. All ties break
    toward the lower channel index.
    """
    if strategy not in ORDERING_STRATEGIES:
        raise ValueError(f"unknown ordering strategy {strategy!r}")
    if strategy in ("kn_i", "corr_descending"):
        ordered = sorted(members, key=lambda ch: (-similarity[sc, ch], ch))
    elif strategy == "corr_ascending":
        ordered = sorted(members, key=lambda ch: (similarity[sc, ch], ch))
    else:  # tsp_greedy
        remaining = set(members)
        ordered = []
        last = sc
        while remaining:
            nxt = max(remaining, key=lambda ch: (similarity[last, ch], -ch))
            ordered.append(nxt)
            remaining.discard(nxt)
            last = nxt
    return [sc] + list(ordered)


@dataclass(frozen=True)
class GroupingPlan:
    """Slice tables per group plus the flat channel permutation."""

    permutation: tuple[int, ...]
    groups: tuple[tuple[tuple[int, ...], ...], ...]  # group -> slice -> channels
    slice_count: int
    ordering_strategy: str

    @property
    def channel_count(self) -> int:
        return len(self.permutation)

    @property
    def grouped_channel_count(self) -> int:
        return sum(len(ch) for g in self.groups for ch in g)


def build_plan(
    structure: IscsStructure,
    similarity: np.ndarray,
    slice_count: int,
    strategy: str = "kn_i",
) -> GroupingPlan:
    """Order and slice every group, then assemble the global permutation."""
    if strategy not in ORDERING_STRATEGIES:
        raise ValueError(f"unknown ordering strategy {strategy!r}")
    group_tables: list[tuple[tuple[int, ...], ...]] = []
    permutation: list[int] = []
    for group in structure.groups:
        ranked = order_group(group.sc, group.sa, similarity, strategy)
        if strategy == "kn_i":
            slices = slice_group(ranked, slice_count)
        else:
            # Contiguous blocks: the ranked order is kept unbroken per slice.
            n = len(ranked)
            if slice_count < 1 or n % slice_count != 0:
                raise ValueError(
                    f"slice_count {slice_count} does not divide group size {n}"
                )
            per = n // slice_count
            slices = [ranked[i * per : (i + 1) * per] for i in range(slice_count)]
        group_tables.append(tuple(tuple(s) for s in slices))
        for s in slices:
            permutation.extend(s)
    permutation.extend(structure.bias_channels)
    permutation.extend(structure.residual)

    plan = GroupingPlan(
        permutation=tuple(permutation),
        groups=tuple(group_tables),
        slice_count=slice_count,
        ordering_strategy=strategy,
    )
    if sorted(plan.permutation) != list(range(len(plan.permutation))):
        raise RuntimeError("permutation is not a bijection over the channel set")
    return plan


def permute_channels(data: np.ndarray, permutation, axis: int = 0) -> np.ndarray:
    """Reorder the channel axis: out[..., i, ...] = data[..., perm[i], ...]."""
    idx = np.asarray(tuple(permutation), dtype=np.intp)
    if idx.shape[0] != data.shape[axis]:
        raise ValueError(
            f"permutation length {idx.shape[0]} != axis size {data.shape[axis]}"
        )
    return np.take(data, idx, axis=axis)


def apply_permutation(data: np.ndarray, plan: GroupingPlan, axis: int = 0) -> np.ndarray:
    return permute_channels(data, plan.permutation, axis=axis)


def invert_permutation(plan_or_perm) -> tuple[int, ...]:
    """Inverse permutation q with q[perm[i]] = i."""
    perm = (
        plan_or_perm.permutation
        if isinstance(plan_or_perm, GroupingPlan)
        else tuple(plan_or_perm)
    )
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


@dataclass(frozen=True)
class IscsManifest:
    """Serializable record of one discovery + planning run."""

    version: int
    source: dict
    params: dict
    scores: dict
    structure: IscsStructure
    plan: GroupingPlan
    config: dict | None = None


def build_manifest(
    source: dict,
    params: DiscoveryParams,
    variance: np.ndarray,
    bias_mag: np.ndarray,
    structure: IscsStructure,
    plan: GroupingPlan,
    config: dict | None = None,
) -> IscsManifest:
    params_dict = {
        "group_size": params.group_size,
        "num_groups": params.num_groups,
        "num_groups_effective": len(structure.groups),
        "bias_z_threshold": params.bias_z_threshold,
        "similarity_mode": params.similarity_mode,
        "slice_count": plan.slice_count,
        "ordering_strategy": plan.ordering_strategy,
        "conventions": {
            "group_size_includes_core": True,
            "slice_rule": "rank r -> slice r mod S, position floor(r/S)",
            "permutation_layout": "groups_slice_major_then_bias_then_residual",
            "residual_order": "variance_descending",
        },
    }
    scores_dict = {
        "variance": [float(v) for v in variance],
        "bias_mag": [float(b) for b in bias_mag],
    }
    return IscsManifest(
        version=MANIFEST_VERSION,
        source=dict(source),
        params=params_dict,
        scores=scores_dict,
        structure=structure,
        plan=plan,
        config=dict(config) if config is not None else None,
    )


def manifest_to_dict(manifest: IscsManifest) -> dict:
    out: dict = {
        "version": manifest.version,
        "source": manifest.source,
        "params": manifest.params,
        "scores": manifest.scores,
        "structure": {
            "groups": [
                {"sc": g.sc, "sa": list(g.sa)} for g in manifest.structure.groups
            ],
            "bias_channels": list(manifest.structure.bias_channels),
            "residual": list(manifest.structure.residual),
        },
        "plan": {
            "permutation": list(manifest.plan.permutation),
            "groups": [
                [list(s) for s in group] for group in manifest.plan.groups
            ],
            "slice_count": manifest.plan.slice_count,
            "ordering_strategy": manifest.plan.ordering_strategy,
        },
    }
    if manifest.config is not None:
        out["config"] = manifest.config
    return out


def manifest_to_json(manifest: IscsManifest) -> str:
    # Keys keep insertion order; floats serialize via repr, which round-trips.
    return json.dumps(manifest_to_dict(manifest), indent=2) + "\n"


def manifest_from_dict(data: dict) -> IscsManifest:
    try:
        structure = IscsStructure(
            groups=tuple(
                ChannelGroup(sc=int(g["sc"]), sa=tuple(int(x) for x in g["sa"]))
                for g in data["structure"]["groups"]
            ),
            bias_channels=tuple(int(x) for x in data["structure"]["bias_channels"]),
            residual=tuple(int(x) for x in data["structure"]["residual"]),
        )
        plan = GroupingPlan(
            permutation=tuple(int(x) for x in data["plan"]["permutation"]),
            groups=tuple(
                tuple(tuple(int(x) for x in s) for s in group)
                for group in data["plan"]["groups"]
            ),
            slice_count=int(data["plan"]["slice_count"]),
            ordering_strategy=str(data["plan"]["ordering_strategy"]),
        )
        return IscsManifest(
            version=int(data["version"]),
            source=dict(data["source"]),
            params=dict(data["params"]),
            scores=dict(data["scores"]),
            structure=structure,
            plan=plan,
            config=dict(data["config"]) if "config" in data else None,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed manifest: {exc}") from exc


def manifest_digest(data: bytes) -> bytes:
    """8-byte identity of a serialized manifest, as stored in bitstreams."""
    return hashlib.sha256(data).digest()[:8]


def save_manifest(manifest: IscsManifest, path: str) -> bytes:
    payload = manifest_to_json(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(payload)
    return payload


def load_manifest(path: str) -> tuple[IscsManifest, bytes]:
    """Read a manifest and the exact bytes it was parsed from."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return manifest_from_dict(json.loads(raw.decode("utf-8"))), raw
