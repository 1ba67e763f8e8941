"""Synthetic inputs with known ground truth.

plant_kernel_set builds a convolution weight set whose grouped structure is
recoverable exactly: core directions are mutually orthogonal, every affiliate
sits at a fixed angle to its own core and at ninety degrees to all other
groups, decoys are orthogonal to everything, and all kernel-entry variances
are hit exactly by scaling unit directions that carry zero entry mean. The
resulting score margins are asserted before returning, so a recovery failure
in tests points at the discovery code rather than at generator luck.

one_over_f_images synthesizes natural-image-like grayscale inputs by shaping
white spectral noise with a 1/f amplitude envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .importance import bias_scores, cosine_similarity_matrix, variance_scores
from .tensor_io import ConvKernelSet, Image

SC_BASE_VARIANCE = 10.0
SC_VARIANCE_STEP = 1.0
SA_VARIANCE = 1.0
NOISE_VARIANCE = 0.5
BIAS_KERNEL_VARIANCE = 1e-4
AFFILIATE_MIX = 0.4          # affiliate = (core + mix * offset), normalized
PLANTED_BIAS = 2.0
PLANTED_BIAS_STEP = 0.25     # planted bias magnitudes stay distinct
BACKGROUND_BIAS_RANGE = (0.02, 0.06)


@dataclass(frozen=True)
class PlantedTruth:
    channels: int
    group_members: tuple[tuple[int, tuple[int, ...]], ...]  # (core, affiliates)
    bias_channels: tuple[int, ...]
    noise_channels: tuple[int, ...]

    @property
    def core_channels(self) -> tuple[int, ...]:
        return tuple(core for core, _ in self.group_members)

    def as_sets(self) -> dict[int, frozenset]:
        return {core: frozenset(affs) for core, affs in self.group_members}

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "groups": [
                {"core": core, "affiliates": list(affs)}
                for core, affs in self.group_members
            ],
            "bias_channels": list(self.bias_channels),
            "noise_channels": list(self.noise_channels),
        }


def _orthonormal_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Random orthonormal rows, all orthogonal to the all-ones direction."""
    flat = np.full(dim, 1.0 / np.sqrt(dim))
    raw = rng.standard_normal((dim, count + 4))
    raw -= np.outer(flat, flat @ raw)
    q, _ = np.linalg.qr(raw)
    rows = q[:, :count].T
    # qr can hand back a column with a stray flat component only through
    # rounding; re-project and re-normalize to keep the guarantees exact.
    rows = rows - np.outer(rows @ flat, flat)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows


def plant_kernel_set(
    groups: int = 4,
    group_size: int = 4,
    kernel_size: int = 8,
    noise_channels: int = 3,
    bias_channels: int = 1,
    seed: int = 0,
) -> tuple[ConvKernelSet, PlantedTruth]:
    """Kernel set with planted groups, decoys, and bias-dominated channels.

    Channel count is groups*group_size + noise_channels + bias_channels. Each
    group has one core (largest variances in the set, strictly ordered across
    groups) and group_size-1 affiliates at variance 1. Decoy channels sit at
    variance 0.5 with zero similarity to everything. Each planted bias channel
    has a near-zero kernel and a bias far outside the background spread; the
    planted magnitudes are distinct so their flags are individually checkable.
    Bias flagging is a majority-vote statistic, so the planted outliers must
    stay well under half the channel count (channels >= 2*bias_channels + 2).
    """
    if groups < 1 or group_size < 2:
        raise ValueError("need groups >= 1 and group_size >= 2")
    if noise_channels < 0:
        raise ValueError("noise_channels must be >= 0")
    if bias_channels < 0:
        raise ValueError("bias_channels must be >= 0")
    channels = groups * group_size + noise_channels + bias_channels
    if bias_channels > 0 and channels < 2 * bias_channels + 2:
        raise ValueError(
            "bias outliers would dominate the robust statistics: need "
            f"channels >= {2 * bias_channels + 2}, got {channels}"
        )
    dim = kernel_size * kernel_size
    per_group = group_size - 1
    n_dirs = groups * (1 + per_group) + noise_channels + bias_channels
    if n_dirs + 1 > dim:
        raise ValueError(
            f"kernel_size {kernel_size} gives {dim} dims, need {n_dirs + 1}"
        )
    rng = np.random.default_rng(seed)
    dirs = _orthonormal_rows(rng, n_dirs, dim)
    cores = dirs[:groups]
    offsets = dirs[groups : groups + groups * per_group].reshape(
        groups, per_group, dim
    )
    tail = groups + groups * per_group
    decoys = dirs[tail : tail + noise_channels]
    bias_dirs = dirs[tail + noise_channels :]

    # Unit directions with zero entry mean scale to exact target variances.
    def scaled(direction: np.ndarray, variance: float) -> np.ndarray:
        return np.sqrt(dim * variance) * direction

    kernel_rows = []
    roles = []  # parallel: ("core", g) | ("aff", g) | ("decoy",) | ("bias", i)
    for g in range(groups):
        var = SC_BASE_VARIANCE + SC_VARIANCE_STEP * (groups - g)
        kernel_rows.append(scaled(cores[g], var))
        roles.append(("core", g))
        for j in range(per_group):
            mix = cores[g] + AFFILIATE_MIX * offsets[g, j]
            mix /= np.linalg.norm(mix)
            kernel_rows.append(scaled(mix, SA_VARIANCE))
            roles.append(("aff", g))
    for d in range(noise_channels):
        kernel_rows.append(scaled(decoys[d], NOISE_VARIANCE))
        roles.append(("decoy",))
    for i in range(bias_channels):
        kernel_rows.append(scaled(bias_dirs[i], BIAS_KERNEL_VARIANCE))
        roles.append(("bias", i))

    order = rng.permutation(channels)
    weights = np.zeros((channels, 1, kernel_size, kernel_size))
    position = {}
    for slot, src in enumerate(order):
        weights[slot, 0] = kernel_rows[src].reshape(kernel_size, kernel_size)
        position[src] = slot

    # Membership comes from the role list, not index arithmetic.
    core_slots = {}
    aff_slots: dict[int, list[int]] = {g: [] for g in range(groups)}
    decoy_slots = []
    bias_slots = [0] * bias_channels
    for src, role in enumerate(roles):
        slot = position[src]
        if role[0] == "core":
            core_slots[role[1]] = slot
        elif role[0] == "aff":
            aff_slots[role[1]].append(slot)
        elif role[0] == "decoy":
            decoy_slots.append(slot)
        else:
            bias_slots[role[1]] = slot

    lo, hi = BACKGROUND_BIAS_RANGE
    background = np.linspace(lo, hi, channels - bias_channels)
    rng.shuffle(background)
    bias = np.empty(channels)
    planted = np.zeros(channels, dtype=bool)
    planted[bias_slots] = True
    bias[~planted] = background
    for i, slot in enumerate(bias_slots):
        bias[slot] = PLANTED_BIAS + PLANTED_BIAS_STEP * i

    kernels = ConvKernelSet(weights=weights, bias=bias)
    truth = PlantedTruth(
        channels=channels,
        group_members=tuple(
            (core_slots[g], tuple(sorted(aff_slots[g]))) for g in range(groups)
        ),
        bias_channels=tuple(sorted(bias_slots)),
        noise_channels=tuple(sorted(decoy_slots)),
    )
    _assert_margins(kernels, truth, groups)
    return kernels, truth


def _assert_margins(kernels: ConvKernelSet, truth: PlantedTruth, groups: int) -> None:
    """Hard guarantees the recovery tests rely on; failure is a generator bug."""
    var = variance_scores(kernels)
    bias = bias_scores(kernels)
    sim = cosine_similarity_matrix(kernels)

    cores = list(truth.core_channels)
    affs = [c for _, members in truth.group_members for c in members]
    rest = list(truth.noise_channels) + list(truth.bias_channels)

    assert min(var[cores]) > max(var[affs]) + 5.0, "core/affiliate variance margin"
    if rest:
        assert min(var[affs]) > max(var[rest]) + 0.4, "affiliate/decoy margin"
    core_order = [c for c in np.argsort(-var, kind="stable") if c in set(cores)]
    assert core_order == sorted(cores, key=lambda c: -var[c])

    for core, members in truth.group_members:
        own = sim[core, list(members)]
        assert own.min() > 0.9, "affiliates must sit close to their core"
        others = [
            c
            for c in range(truth.channels)
            if c != core and c not in members
        ]
        if others:
            assert np.abs(sim[core, others]).max() < 0.05, "cross-group leakage"

    med = np.median(bias)
    planted = list(truth.bias_channels)
    assert all(bias[c] >= 20.0 * med for c in planted), "planted bias too small"
    mad = np.median(np.abs(bias - med))
    z = (bias - med) / (1.4826 * mad)
    assert all(z[c] > 10.0 for c in planted), "planted bias must stand far out"
    background = np.delete(z, planted)
    assert background.size == 0 or background.max() < 3.0, (
        "background biases must stay unflagged"
    )


def one_over_f_images(
    count: int, size: int = 128, seed: int = 0, exponent: float = 1.0
) -> list[Image]:
    """Grayscale images with a 1/f^exponent spectral envelope, mean ~128."""
    if count < 1 or size < 4:
        raise ValueError("need count >= 1 and size >= 4")
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    freq = np.sqrt(fx * fx + fy * fy)
    freq[0, 0] = 1.0
    envelope = freq ** (-exponent)
    envelope[0, 0] = 0.0
    images = []
    for _ in range(count):
        spectrum = rng.standard_normal((size, size)) + 1j * rng.standard_normal(
            (size, size)
        )
        field = np.real(np.fft.ifft2(spectrum * envelope))
        field -= field.mean()
        sd = field.std()
        if sd > 0:
            field /= 5.0 * sd
        pixels = np.clip(field + 0.5, 0.0, 1.0)
        samples = np.rint(pixels * 255.0).astype(np.uint8)
        images.append(Image(width=size, height=size, channels=1, samples=samples))
    return images
