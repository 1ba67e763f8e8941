"""Independent reference implementations used to cross-check the package.

Everything here is written the slow, obvious way — explicit loops, stdlib
accumulation, linear scans — so agreement with the vectorized code is
meaningful evidence rather than a tautology. Nothing in this module imports
from the package under test except plain data containers.
"""

from __future__ import annotations

import math


def variance_oracle(weights) -> list[float]:
    """Population variance of each output channel's kernel entries."""
    out = []
    for channel in weights:
        entries = [float(v) for v in channel.reshape(-1)]
        n = len(entries)
        mean = math.fsum(entries) / n
        out.append(math.fsum((v - mean) ** 2 for v in entries) / n)
    return out


def bias_oracle(bias, channel_count: int) -> list[float]:
    if bias is None:
        return [0.0] * channel_count
    return [abs(float(v)) for v in bias]


def cosine_oracle(weights, norm_eps: float = 1e-30) -> list[list[float]]:
    """Pairwise cosine similarity of flattened kernels.

    Channels with norm below norm_eps zero their row and column; the diagonal
    is 1 everywhere, dead channels included.
    """
    flats = [[float(v) for v in channel.reshape(-1)] for channel in weights]
    norms = [math.sqrt(math.fsum(v * v for v in f)) for f in flats]
    c = len(flats)
    sim = [[0.0] * c for _ in range(c)]
    for i in range(c):
        for j in range(i + 1, c):
            if norms[i] < norm_eps or norms[j] < norm_eps:
                continue
            dot = sum(a * b for a, b in zip(flats[i], flats[j]))
            value = dot / (norms[i] * norms[j])
            sim[i][j] = value
            sim[j][i] = value
    for i in range(c):
        sim[i][i] = 1.0
    return sim


def rank_descending_oracle(values) -> list[int]:
    """Indices by value descending, ties by ascending index."""
    return sorted(range(len(values)), key=lambda i: (-float(values[i]), i))


def robust_flag_oracle(bias, threshold: float) -> set[int]:
    """Bias outliers by median/MAD z-score, with the MAD=0 fallback."""
    values = [float(v) for v in bias]
    med = _median(values)
    mad = _median([abs(v - med) for v in values])
    if mad == 0.0:
        return {i for i, v in enumerate(values) if v > med}
    return {
        i
        for i, v in enumerate(values)
        if (v - med) / (1.4826 * mad) > threshold
    }


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def slice_positions_oracle(rank: int, slice_count: int) -> tuple[int, int]:
    """Where similarity-rank `rank` lands: (slice index, position in slice)."""
    return rank % slice_count, rank // slice_count


def latents_oracle(model, pixels) -> list:
    """Quantized latent symbols via per-patch, per-channel loops.

    pixels must already be float in [0, 1] and aligned to the patch grid.
    Returns a nested list shaped (py, px, channels).
    """
    p = model.patch_size
    h, w = pixels.shape
    delta32 = float_to_f32(model.delta)
    beta32 = float_to_f32(model.beta)
    bias_q = round_half_even(beta32 / delta32)
    rows = []
    for py in range(h // p):
        row = []
        for px in range(w // p):
            patch = [
                float(pixels[py * p + dy, px * p + dx])
                for dy in range(p)
                for dx in range(p)
            ]
            symbols = [bias_q]
            for c in range(1, model.channels):
                z = math.fsum(
                    float(model.weights[c, d]) * (patch[d] - float(model.mean[d]))
                    for d in range(p * p)
                )
                shifted = z - float_to_f32(model.entropy_mu[c])
                symbols.append(round_half_even(shifted / delta32))
            row.append(symbols)
        rows.append(row)
    return rows


def float_to_f32(value: float) -> float:
    """Round-trip a double through IEEE single precision."""
    import struct

    return struct.unpack("<f", struct.pack("<f", value))[0]


def round_half_even(value: float) -> int:
    """Banker's rounding to the nearest integer, as IEEE rint does."""
    floor = math.floor(value)
    frac = value - floor
    if frac > 0.5:
        return floor + 1
    if frac < 0.5:
        return floor
    return floor if floor % 2 == 0 else floor + 1


def psnr_oracle(a, b) -> float:
    """Peak signal-to-noise ratio between two 8-bit sample grids."""
    diffs = [
        (float(x) - float(y)) ** 2
        for x, y in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist())
    ]
    mse = math.fsum(diffs) / len(diffs)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 * 255.0 / mse)


def spearman_oracle(x, y) -> float:
    """Rank correlation with midranks for ties."""
    rx = _midranks([float(v) for v in x])
    ry = _midranks([float(v) for v in y])
    n = len(rx)
    mx = math.fsum(rx) / n
    my = math.fsum(ry) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = math.fsum((a - mx) ** 2 for a in rx)
    vy = math.fsum((b - my) ** 2 for b in ry)
    if vx == 0.0 or vy == 0.0:
        return 0.0
    return cov / math.sqrt(vx * vy)


def _midranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    return ranks


def entropy_bits_oracle(freqs, total: int, bin_indices, escape_flags,
                        raw_bits: int = 32) -> float:
    """Ideal code length of a symbol sequence under an integer table."""
    bits = 0.0
    for b, escaped in zip(bin_indices, escape_flags):
        bits += -math.log2(freqs[b] / total)
        if escaped:
            bits += raw_bits
    return bits


def apportion_oracle(probs: list[float], total: int) -> list[int]:
    """Largest-remainder apportionment with a minimum of 1 per bin.

    Mirrors the documented contract: normalize, floor the ideal shares, bump
    everything to at least 1, then settle the difference — shortfall goes to
    the largest fractional parts (ties by index), overshoot is taken back
    from the largest bins (ties by index), never below 1.
    """
    s = math.fsum(probs)
    if s <= 0:
        p = [1.0 / len(probs)] * len(probs)
    else:
        p = [v / s for v in probs]
    ideal = [v * total for v in p]
    f = [max(1, math.floor(v)) for v in ideal]
    frac = [v - math.floor(v) for v in ideal]
    excess = sum(f) - total
    if excess > 0:
        for i in sorted(range(len(f)), key=lambda i: (-f[i], i)):
            give = min(excess, f[i] - 1)
            f[i] -= give
            excess -= give
            if excess == 0:
                break
    elif excess < 0:
        order = sorted(range(len(f)), key=lambda i: (-frac[i], i))
        need = -excess
        at = 0
        while need:
            f[order[at % len(order)]] += 1
            need -= 1
            at += 1
    assert sum(f) == total and min(f) >= 1
    return f


def schedule_oracle(chains: list[list[float]], workers: int,
                    sync_overhead: float) -> float:
    """Event-driven makespan for serial chains on identical workers.

    Same dispatch contract as the simulator — at each step the task that can
    start earliest runs next (ties by chain index), on the earliest-free
    worker (ties by lowest id) — but implemented with plain linear scans and
    explicit state instead of a heap.
    """
    free = [0.0] * workers
    next_task = [0] * len(chains)
    chain_ready = [0.0] * len(chains)
    chain_end = [0.0] * len(chains)
    remaining = sum(len(c) for c in chains)
    while remaining:
        free_time = min(free)
        best_chain = -1
        best_start = math.inf
        for c, tasks in enumerate(chains):
            if next_task[c] >= len(tasks):
                continue
            start = max(chain_ready[c], free_time)
            if start < best_start:
                best_chain = c
                best_start = start
        worker = free.index(min(free))
        start = max(chain_ready[best_chain], free[worker])
        end = start + chains[best_chain][next_task[best_chain]]
        free[worker] = end
        next_task[best_chain] += 1
        chain_ready[best_chain] = end
        chain_end[best_chain] = end
        remaining -= 1
    ends = [e + sync_overhead for e, c in zip(chain_end, chains) if c]
    return max(ends) if ends else 0.0
