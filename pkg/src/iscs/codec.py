"""Patch-PCA toy codec: model fitting and the analysis/synthesis transforms.

The model analyzes non-overlapping p x p grayscale patches scaled to [0, 1].
Channel 0 is a planted bias channel: its analysis weights are +-1e-6 noise,
its bias equals beta, and its latent is the constant z_0 = beta. Synthesis
reconstructs the global mean patch through that channel alone (u = m / beta),
so zeroing its quantized symbol genuinely removes the mean term. Channels
c >= 1 carry the principal components: analysis row W_c = sqrt(lambda_c) v_c
over mean-centered patches, quantized after subtracting the per-channel
entropy mean.

Quantization: q_c = round((z_c - mu_c) / Delta) for c >= 1 and
q_0 = round(z_0 / Delta), both clamped to [-2^15, 2^15 - 1]. Synthesis:
x_hat = q_0 Delta u + sum_c (q_c Delta + mu_c) v_c / sqrt(lambda_c), with
channels at lambda <= 1e-12 contributing nothing. Float32 copies of Delta and
the entropy parameters are used on both sides so encode and decode agree
bit-for-bit with the values stored in bitstream headers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelError
from .tensor_io import (
    ConvKernelSet,
    Image,
    TensorFile,
    build_tensor_file,
    serialize_tensor_file,
)

BIAS_CHANNEL = 0
SIGMA_FLOOR = 1e-4
LAMBDA_FLOOR = 1e-12
SYMBOL_MIN = -(1 << 15)
SYMBOL_MAX = (1 << 15) - 1

MODEL_FORMAT_TAG = "iscs-toy-codec"
MODEL_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class ToyCodecModel:
    patch_size: int
    channels: int
    mean: np.ndarray          # (p*p,) mean training patch
    basis: np.ndarray         # (channels-1, p*p) rows for channels 1..C-1
    eigenvalues: np.ndarray   # (channels-1,) non-increasing, >= 0
    weights: np.ndarray       # (channels, p*p) analysis rows incl. channel 0
    bias: np.ndarray          # (channels,) = [beta, 0, 0, ...]
    delta: float
    beta: float
    entropy_mu: np.ndarray    # (channels,) latent means
    entropy_sigma: np.ndarray  # (channels,) latent stds, floored
    model_hash: bytes

    @property
    def synthesis_anchor(self) -> np.ndarray:
        """Direction u reconstructing the mean patch: u = mean / beta."""
        return self.mean / self.beta

    def with_delta(self, delta: float) -> "ToyCodecModel":
        """Same model at a different operating point. Identity hash is
        delta-independent, so it is carried over unchanged."""
        if not (delta > 0):
            raise ValueError(f"delta must be > 0, got {delta}")
        return replace(self, delta=float(delta))


@dataclass(frozen=True)
class LatentBlock:
    """Integer symbols on the patch grid, shape (patches_y, patches_x, C)."""

    symbols: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.symbols)
        if s.ndim != 3:
            raise ValueError(f"symbols must be 3-d, got shape {s.shape}")
        if s.dtype != np.int32:
            s = s.astype(np.int32)
        if s.size and (s.min() < SYMBOL_MIN or s.max() > SYMBOL_MAX):
            raise ValueError("symbols exceed the 16-bit alphabet bound")
        object.__setattr__(self, "symbols", s)

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.symbols.shape  # type: ignore[return-value]


def jacobi_eigendecompose(
    matrix: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi for symmetric matrices, fixed (p, q) sweep order.

    Iterates full upper-triangle sweeps until the off-diagonal Frobenius norm
    is <= tol. Returns (eigenvalues, eigenvectors-as-rows) sorted by
    eigenvalue descending, ties by original diagonal position.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix must be square, got {a.shape}")
    if n and not np.allclose(a, a.T, atol=1e-9, rtol=1e-9):
        raise ValueError("matrix must be symmetric")

    def off_norm(mat: np.ndarray) -> float:
        # Summing the actual off-diagonal squares avoids the catastrophic
        # cancellation of the ||A||^2 - ||diag||^2 shortcut, whose error
        # floor (eps * ||A||^2) can sit above a tight tolerance.
        b = mat.copy()
        np.fill_diagonal(b, 0.0)
        return float(np.linalg.norm(b))

    v = np.eye(n)
    for _ in range(max_sweeps):
        off = off_norm(a)
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) > 1e154 * abs(apq):
                    # tau would overflow; the rotation is t ~ 1/(2*tau).
                    t = apq / h
                else:
                    tau = h / (2.0 * apq)
                    t = (1.0 if tau >= 0.0 else -1.0) / (
                        abs(tau) + np.sqrt(1.0 + tau * tau)
                    )
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = off_norm(a)
        if off > tol:
            raise RuntimeError(
                f"Jacobi did not converge: off-diagonal norm {off:.3e} > {tol:.1e}"
            )
    diag = np.diag(a).copy()
    order = np.argsort(-diag, kind="stable")
    return diag[order], v[:, order].T.copy()


def image_to_float(image: Image | np.ndarray) -> np.ndarray:
    """Grayscale samples as float64 in [0, 1].

    Accepts an Image or a uint8 array (scaled down by 255) or an already
    float array assumed to be in [0, 1] (passed through).
    """
    arr = image.samples if isinstance(image, Image) else np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("codec accepts grayscale (single-plane) images only")
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64)
    return arr.astype(np.float64) / 255.0


def pad_to_patch_grid(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """Edge-replicate so both dims are multiples of patch_size."""
    h, w = pixels.shape
    ph = (-h) % patch_size
    pw = (-w) % patch_size
    if ph == 0 and pw == 0:
        return pixels
    return np.pad(pixels, ((0, ph), (0, pw)), mode="edge")


def _blockify(pixels: np.ndarray, p: int) -> np.ndarray:
    h, w = pixels.shape
    if h % p or w % p:
        raise ValueError(f"image {w}x{h} is not a multiple of patch size {p}")
    py, px = h // p, w // p
    return pixels.reshape(py, p, px, p).transpose(0, 2, 1, 3).reshape(py, px, p * p)


def _unblockify(patches: np.ndarray, p: int) -> np.ndarray:
    py, px = patches.shape[:2]
    return (
        patches.reshape(py, px, p, p).transpose(0, 2, 1, 3).reshape(py * p, px * p)
    )


def fit(
    images: list[Image],
    patch_size: int = 8,
    channels: int = 32,
    delta: float = 0.05,
    beta: float = 4.0,
    seed: int = 0,
) -> ToyCodecModel:
    """Fit the patch-PCA model on the given grayscale training images.

    The patch covariance is projected onto the zero-mean subspace before the
    eigendecomposition, so every basis vector has exactly zero entry mean.
    That makes Var(W_c) = lambda_c / p^2, keeping kernel-entry variance a
    strictly increasing function of the eigenvalue. The flat (per-patch DC)
    direction is therefore not representable; the global mean patch instead
    travels through the planted bias channel 0 at synthesis.
    """
    p = patch_size
    if p < 2:
        raise ValueError(f"patch_size must be >= 2, got {p}")
    if not (2 <= channels <= p * p):
        raise ValueError(f"channels must be in [2, {p * p}], got {channels}")
    if not (delta > 0) or not (beta > 0):
        raise ValueError("delta and beta must be > 0")

    blocks = []
    for img in images:
        pixels = image_to_float(img)
        h = (pixels.shape[0] // p) * p
        w = (pixels.shape[1] // p) * p
        if h and w:
            blocks.append(_blockify(pixels[:h, :w], p).reshape(-1, p * p))
    if not blocks:
        raise ValueError("no usable training patches")
    x = np.concatenate(blocks, axis=0)
    n = x.shape[0]
    if n < channels:
        raise ValueError(f"need at least {channels} training patches, got {n}")

    m = x.mean(axis=0)
    xc = x - m
    cov = (xc.T @ xc) / n

    # Deflate the flat direction; its variance is intentionally unmodeled.
    flat = np.full(p * p, 1.0 / p)
    proj = np.eye(p * p) - np.outer(flat, flat)
    cov = proj @ cov @ proj

    eigvals, eigvecs = jacobi_eigendecompose(cov, tol=1e-10)
    eigvals = np.maximum(eigvals, 0.0)
    lam = eigvals[: channels - 1].copy()
    basis = eigvecs[: channels - 1].copy()

    weights = np.empty((channels, p * p))
    rng = np.random.default_rng(seed)
    weights[BIAS_CHANNEL] = rng.choice((-1e-6, 1e-6), size=p * p)
    weights[1:] = np.sqrt(lam)[:, None] * basis

    bias = np.zeros(channels)
    bias[BIAS_CHANNEL] = beta

    z = np.empty((n, channels))
    z[:, BIAS_CHANNEL] = beta
    z[:, 1:] = xc @ weights[1:].T
    mu = z.mean(axis=0)
    sigma = np.maximum(z.std(axis=0), SIGMA_FLOOR)

    model = ToyCodecModel(
        patch_size=p,
        channels=channels,
        mean=m,
        basis=basis,
        eigenvalues=lam,
        weights=weights,
        bias=bias,
        delta=float(delta),
        beta=float(beta),
        entropy_mu=mu,
        entropy_sigma=sigma,
        model_hash=b"",
    )
    return replace(model, model_hash=compute_model_hash(model))


def analysis_transform(model: ToyCodecModel, pixels: np.ndarray) -> np.ndarray:
    """Continuous latents z on the patch grid, shape (py, px, C).

    z_c = <W_c, x - m> for c >= 1 and z_0 = beta exactly (the near-zero
    channel-0 weights are a decoy for weight-space analysis, not part of the
    transform).
    """
    patches = _blockify(pixels, model.patch_size)
    z = np.empty(patches.shape[:2] + (model.channels,))
    z[..., BIAS_CHANNEL] = model.beta
    z[..., 1:] = (patches - model.mean) @ model.weights[1:].T
    return z


def _quant_params32(model: ToyCodecModel) -> tuple[float, float, np.ndarray]:
    """Float32-cast quantization constants, as stored in stream headers."""
    delta32 = float(np.float32(model.delta))
    beta32 = float(np.float32(model.beta))
    mu32 = np.float32(model.entropy_mu).astype(np.float64)
    return delta32, beta32, mu32


def bias_symbol(model: ToyCodecModel) -> int:
    """The constant quantized symbol of the bias channel."""
    delta32, beta32, _ = _quant_params32(model)
    return int(np.rint(beta32 / delta32))


def encode_latents(model: ToyCodecModel, image: Image | np.ndarray) -> LatentBlock:
    """Quantize the analysis latents of an aligned grayscale image."""
    pixels = image_to_float(image)
    z = analysis_transform(model, pixels)
    delta32, beta32, mu32 = _quant_params32(model)
    shifted = z.copy()
    shifted[..., 1:] -= mu32[1:]
    # Bias channel quantizes unshifted so its symbol carries the mean term;
    # the f32 cast keeps it bit-identical to what decoders rebuild from the
    # stream header.
    shifted[..., BIAS_CHANNEL] = beta32
    q = np.rint(shifted / delta32)
    np.clip(q, SYMBOL_MIN, SYMBOL_MAX, out=q)
    return LatentBlock(symbols=q.astype(np.int32))


def synthesis_directions(model: ToyCodecModel) -> np.ndarray:
    """Per-channel patch-space directions; rows at lambda <= floor are zero."""
    d = np.zeros((model.channels, model.patch_size ** 2))
    d[BIAS_CHANNEL] = model.synthesis_anchor
    live = model.eigenvalues > LAMBDA_FLOOR
    d[1:][live] = model.basis[live] / np.sqrt(model.eigenvalues[live])[:, None]
    return d


def synthesize_patches(latents: LatentBlock, model: ToyCodecModel) -> np.ndarray:
    """Float reconstruction per patch, unclipped, shape (py, px, p*p)."""
    delta32, _, mu32 = _quant_params32(model)
    deq = latents.symbols.astype(np.float64) * delta32
    add = mu32.copy()
    add[BIAS_CHANNEL] = 0.0
    # Dead channels contribute nothing, entropy mean included.
    add[1:][model.eigenvalues <= LAMBDA_FLOOR] = 0.0
    deq += add
    return deq @ synthesis_directions(model)


def synthesize(latents: LatentBlock, model: ToyCodecModel) -> Image:
    """8-bit reconstruction: clamp to [0, 1], scale by 255, round."""
    patches = synthesize_patches(latents, model)
    pixels = _unblockify(np.clip(patches, 0.0, 1.0), model.patch_size)
    samples = np.rint(pixels * 255.0).astype(np.uint8)
    h, w = samples.shape
    return Image(width=w, height=h, channels=1, samples=samples)


def export_encoder_weights(model: ToyCodecModel) -> ConvKernelSet:
    """The analysis operator as a conv layer: shape (C, 1, p, p) plus bias."""
    p = model.patch_size
    return ConvKernelSet(
        weights=model.weights.reshape(model.channels, 1, p, p).copy(),
        bias=model.bias.copy(),
    )


def model_to_tensor_file(model: ToyCodecModel) -> TensorFile:
    p = model.patch_size
    arrays = {
        "analysis.weight": model.weights.reshape(model.channels, 1, p, p),
        "analysis.bias": model.bias,
        "analysis.mean": model.mean,
        "analysis.basis": model.basis,
        "analysis.eigenvalues": model.eigenvalues,
        "entropy.mu": model.entropy_mu,
        "entropy.sigma": model.entropy_sigma,
    }
    metadata = {
        "format": MODEL_FORMAT_TAG,
        "format_version": MODEL_FORMAT_VERSION,
        "patch_size": str(p),
        "channels": str(model.channels),
        "delta": repr(float(model.delta)),
        "beta": repr(float(model.beta)),
    }
    return build_tensor_file(
        {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}, metadata
    )


def compute_model_hash(model: ToyCodecModel) -> bytes:
    """8-byte identity: prefix of sha256 over canonical container bytes.

    The step size delta is an operating point, not part of the identity
    (rate sweeps re-encode the same model at many deltas, and bitstreams
    carry their own delta). It is pinned to 1.0 before hashing.
    """
    pinned = replace(model, delta=1.0, model_hash=b"")
    return hashlib.sha256(serialize_tensor_file(model_to_tensor_file(pinned))).digest()[
        :8
    ]


def save_model(model: ToyCodecModel, path: str) -> None:
    data = serialize_tensor_file(model_to_tensor_file(model))
    with open(path, "wb") as fh:
        fh.write(data)


def model_from_tensor_file(tf: TensorFile) -> ToyCodecModel:
    meta = tf.metadata
    if meta.get("format") != MODEL_FORMAT_TAG:
        raise ModelError(
            f"not a codec model container (format tag {meta.get('format')!r})"
        )
    try:
        p = int(meta["patch_size"])
        channels = int(meta["channels"])
        delta = float(meta["delta"])
        beta = float(meta["beta"])
    except (KeyError, ValueError) as exc:
        raise ModelError(f"bad model metadata: {exc}") from exc

    def grab(name: str, shape: tuple[int, ...]) -> np.ndarray:
        arr = tf.tensor(name).astype(np.float64)
        if arr.shape != shape:
            raise ModelError(f"tensor {name!r}: shape {arr.shape} != {shape}")
        return arr

    weights = grab("analysis.weight", (channels, 1, p, p)).reshape(channels, p * p)
    bias = grab("analysis.bias", (channels,))
    mean = grab("analysis.mean", (p * p,))
    basis = grab("analysis.basis", (channels - 1, p * p))
    lam = grab("analysis.eigenvalues", (channels - 1,))
    mu = grab("entropy.mu", (channels,))
    sigma = grab("entropy.sigma", (channels,))

    if np.any(np.diff(lam) > 1e-12):
        raise ModelError("eigenvalues are not sorted non-increasing")
    if np.any(lam < 0):
        raise ModelError("eigenvalues must be >= 0")
    gram = basis @ basis.T
    live = lam > LAMBDA_FLOOR
    check = gram[np.ix_(live, live)]
    if check.size and not np.allclose(
        check, np.eye(check.shape[0]), atol=1e-8, rtol=0.0
    ):
        raise ModelError("basis rows with live eigenvalues are not orthonormal")
    if not (delta > 0) or not (beta > 0):
        raise ModelError("delta and beta must be > 0")

    model = ToyCodecModel(
        patch_size=p,
        channels=channels,
        mean=mean,
        basis=basis,
        eigenvalues=lam,
        weights=weights,
        bias=bias,
        delta=delta,
        beta=beta,
        entropy_mu=mu,
        entropy_sigma=np.maximum(sigma, SIGMA_FLOOR),
        model_hash=b"",
    )
    # Hash over the canonical re-serialization, not the on-disk bytes, so
    # containers differing only in layout identify as the same model.
    return replace(model, model_hash=compute_model_hash(model))


def load_model(path: str) -> ToyCodecModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    from .tensor_io import parse_tensor_container

    return model_from_tensor_file(parse_tensor_container(raw))
