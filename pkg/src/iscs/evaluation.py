"""Reconstruction quality metrics and the channel-ablation harness.

The ablation harness quantizes an image once, then re-synthesizes it with one
channel's symbols zeroed at a time. Pairing each channel's quality drop with
its analytic rate share gives the importance evidence the weight-space scores
are checked against: per-channel bits, PSNR drop, and MS-SSIM drop, plus the
kernel-entry variance of the exported analysis weights.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d
from scipy.stats import ConstantInputWarning, spearmanr

from .bitstream import build_tables
from .codec import (
    LatentBlock,
    ToyCodecModel,
    encode_latents,
    export_encoder_weights,
    image_to_float,
    pad_to_patch_grid,
    synthesize,
)
from .importance import variance_scores
from .tensor_io import Image

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def _as_plane(image: Image | np.ndarray) -> np.ndarray:
    arr = image.samples if isinstance(image, Image) else np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("metrics operate on single-plane images")
    return arr.astype(np.float64)


def psnr(reference: Image | np.ndarray, test: Image | np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the 8-bit scale; inf if identical."""
    a = _as_plane(reference)
    b = _as_plane(test)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def _filter_valid(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    r = window.size // 2
    out = convolve1d(plane, window, axis=0, mode="constant")
    out = convolve1d(out, window, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_components(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean (ssim, contrast-structure) over the valid window area."""
    w = _gaussian_window()
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a ** 2
    var_b = _filter_valid(b * b, w) - mu_b ** 2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    cs_map = (2.0 * cov + _C2) / (var_a + var_b + _C2)
    lum_map = (2.0 * mu_a * mu_b + _C1) / (mu_a ** 2 + mu_b ** 2 + _C1)
    return float(np.mean(lum_map * cs_map)), float(np.mean(cs_map))


def ssim(reference: Image | np.ndarray, test: Image | np.ndarray) -> float:
    a = _as_plane(reference)
    b = _as_plane(test)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}px ssim window")
    return _ssim_components(a, b)[0]


def _downsample2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    h2, w2 = h - h % 2, w - w % 2
    x = plane[:h2, :w2]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def ms_ssim(reference: Image | np.ndarray, test: Image | np.ndarray) -> float:
    """Five-scale structural similarity with 2x mean-pool between scales.

    Images too small for all five scales use however many scales fit, with
    the scale weights renormalized. At least one scale must fit.
    """
    a = _as_plane(reference)
    b = _as_plane(test)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    usable = 0
    h, w = a.shape
    for _ in MSSSIM_WEIGHTS:
        if min(h, w) < _SSIM_WINDOW:
            break
        usable += 1
        h //= 2
        w //= 2
    if usable == 0:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}px ssim window")
    weights = np.array(MSSSIM_WEIGHTS[:usable])
    weights = weights / weights.sum()

    score = 1.0
    for level in range(usable):
        lum_cs, cs = _ssim_components(a, b)
        if level == usable - 1:
            score *= max(lum_cs, 1e-12) ** weights[level]
        else:
            score *= max(cs, 1e-12) ** weights[level]
            a = _downsample2(a)
            b = _downsample2(b)
    return float(score)


def ablate_channel(latents: LatentBlock, channel: int) -> LatentBlock:
    """Copy of the latents with one channel's symbols forced to zero."""
    q = latents.symbols.copy()
    if not (0 <= channel < q.shape[2]):
        raise ValueError(f"channel {channel} out of range")
    q[:, :, channel] = 0
    return LatentBlock(symbols=q)


@dataclass(frozen=True)
class AblationRow:
    channel: int
    kernel_variance: float
    bpp: float
    delta_psnr: float
    delta_msssim: float


@dataclass(frozen=True)
class AblationResult:
    rows: tuple[AblationRow, ...]
    baseline_psnr: float
    baseline_msssim: float

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def ablation_sweep(
    model: ToyCodecModel,
    image: Image | np.ndarray,
    channels: list[int] | None = None,
) -> AblationResult:
    """Zero each channel in turn and measure the reconstruction damage.

    Quality deltas are (baseline - ablated), so positive means the channel
    was carrying useful signal. Rates are the ideal per-channel code lengths
    under the stream's own tables, in bits per source pixel.
    """
    pixels = image_to_float(image)
    height, width = pixels.shape
    padded = pad_to_patch_grid(pixels, model.patch_size)
    latents = encode_latents(model, padded)
    reference = np.rint(pixels * 255.0).astype(np.uint8)

    def recon(block: LatentBlock) -> np.ndarray:
        return synthesize(block, model).samples[:height, :width]

    baseline = recon(latents)
    base_psnr = psnr(reference, baseline)
    base_msssim = ms_ssim(reference, baseline)

    tables = build_tables(model)
    kernels = export_encoder_weights(model)
    variances = variance_scores(kernels)

    todo = list(range(model.channels)) if channels is None else list(channels)
    n_pixels = width * height
    rows = []
    for c in todo:
        table = tables[c]
        residuals = latents.symbols[:, :, c].astype(np.int64).ravel() - table.offset
        bits = float(table.residual_bits(residuals).sum())
        ablated = recon(ablate_channel(latents, c))
        abl_psnr = psnr(reference, ablated)
        # Two perfect reconstructions would give inf - inf here.
        dpsnr = 0.0 if base_psnr == abl_psnr else base_psnr - abl_psnr
        rows.append(
            AblationRow(
                channel=c,
                kernel_variance=float(variances[c]),
                bpp=bits / n_pixels,
                delta_psnr=dpsnr,
                delta_msssim=base_msssim - ms_ssim(reference, ablated),
            )
        )
    return AblationResult(
        rows=tuple(rows), baseline_psnr=base_psnr, baseline_msssim=base_msssim
    )


def merge_ablation_results(results: list[AblationResult]) -> AblationResult:
    """Average rows channel-wise across images (channels must line up)."""
    if not results:
        raise ValueError("no ablation results to merge")
    first = [r.channel for r in results[0].rows]
    for res in results[1:]:
        if [r.channel for r in res.rows] != first:
            raise ValueError("ablation results cover different channels")
    rows = []
    for i, c in enumerate(first):
        rows.append(
            AblationRow(
                channel=c,
                kernel_variance=results[0].rows[i].kernel_variance,
                bpp=float(np.mean([r.rows[i].bpp for r in results])),
                delta_psnr=float(np.mean([r.rows[i].delta_psnr for r in results])),
                delta_msssim=float(
                    np.mean([r.rows[i].delta_msssim for r in results])
                ),
            )
        )
    return AblationResult(
        rows=tuple(rows),
        baseline_psnr=float(np.mean([r.baseline_psnr for r in results])),
        baseline_msssim=float(np.mean([r.baseline_msssim for r in results])),
    )


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation; nan degenerates to 0."""
    with warnings.catch_warnings():
        # Constant input is a supported degenerate case, mapped to 0 below.
        warnings.simplefilter("ignore", ConstantInputWarning)
        res = spearmanr(
            np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        )
    rho = float(res.statistic)
    return 0.0 if np.isnan(rho) else rho


def fit_log_curve(
    x: np.ndarray, y: np.ndarray, eps: float = 1e-6
) -> tuple[float, float]:
    """Least-squares fit y ~ a*ln(x + eps) + b; returns (a, b)."""
    lx = np.log(np.asarray(x, dtype=np.float64) + eps)
    a, b = np.polyfit(lx, np.asarray(y, dtype=np.float64), 1)
    return float(a), float(b)


def write_table(
    path: str,
    fieldnames: list[str],
    rows: list[dict],
    config: dict | None = None,
) -> None:
    """CSV writer; an optional config dict is echoed as a comment line."""
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fieldnames})


def _cell(value):
    # np.float64 subclasses float, so one combined branch covers both and
    # keeps the numpy scalar repr out of the file.
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value
