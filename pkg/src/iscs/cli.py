"""Command line interface.

One executable, subcommand per pipeline stage:

    analyze        weight container -> per-channel score report (JSON)
    discover       weight container -> grouping manifest (JSON)
    fit            training images  -> codec model container
    encode         model + image    -> entropy-coded stream (+ rate report)
    decode         model + stream   -> reconstructed PGM
    ablate         model + images   -> per-channel ablation table (CSV)
    schedule       manifest         -> grouped vs flat schedule table (CSV)
    synth-images   spectral-noise test images
    plant-weights  synthetic weight container with known structure

Every tunable flag can also come from a JSON config file (--config);
precedence is built-in default < config file < explicit flag. Unknown config
keys are rejected. The merged configuration is echoed into outputs: JSON
outputs embed it under "config", CSV outputs carry it as a leading comment
line. All outputs are byte-deterministic for a fixed invocation.

Exit codes: 0 success, 2 usage or input errors, 3 integrity failures
(checksum or identity mismatches), 4 internal errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .bitstream import decode_image, encode_image
from .codec import fit as fit_model
from .codec import load_model, save_model
from .discovery import SIMILARITY_MODES, DiscoveryParams, discover
from .errors import ConfigError, Error, IntegrityError
from .evaluation import (
    ablation_sweep,
    fit_log_curve,
    merge_ablation_results,
    spearman,
    write_table,
)
from .grouping import (
    ORDERING_STRATEGIES,
    build_manifest,
    build_plan,
    load_manifest,
    manifest_digest,
    save_manifest,
)
from .importance import compute_scores, rank_descending
from .scheduler import CostModel, compare_strategies
from .synthetic import one_over_f_images, plant_kernel_set
from .tensor_io import (
    build_tensor_file,
    extract_kernel_set,
    read_image,
    read_tensor_file,
    write_image,
    write_tensor_file,
)

_DEFAULT_WEIGHT_NAME = "analysis.weight"
_DEFAULT_BIAS_NAME = "analysis.bias"


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _sha256_hex(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _collect_images(path_args: list[str]) -> list[str]:
    """Expand files and directories into a sorted, de-duplicated path list."""
    paths: list[str] = []
    for arg in path_args:
        if os.path.isdir(arg):
            inside = sorted(
                os.path.join(arg, name)
                for name in os.listdir(arg)
                if name.lower().endswith((".pgm", ".ppm"))
            )
            if not inside:
                raise Error(f"directory {arg!r} contains no .pgm/.ppm images")
            paths.extend(inside)
        elif os.path.exists(arg):
            paths.append(arg)
        else:
            raise Error(f"no such image file or directory: {arg!r}")
    seen = set()
    unique = []
    for p in paths:
        if p not in seen:
            seen.add(p)
            unique.append(p)
    return unique


def _load_kernels(opts: dict, explicit: set):
    tf = read_tensor_file(opts["weights"])
    bias_name = opts["bias_name"]
    if bias_name not in tf.entries:
        if "bias_name" in explicit:
            raise Error(f"bias tensor {bias_name!r} not present in container")
        bias_name = None
    return extract_kernel_set(tf, opts["weight_name"], bias_name)


# -- subcommand handlers ----------------------------------------------------


def _cmd_analyze(opts: dict, explicit: set, echo: dict) -> None:
    kernels = _load_kernels(opts, explicit)
    scores = compute_scores(kernels)
    payload = {
        "channels": scores.channel_count,
        "variance": [float(v) for v in scores.variance],
        "bias_mag": [float(b) for b in scores.bias_mag],
        "variance_rank": [int(c) for c in rank_descending(scores.variance)],
        "bias_rank": [int(c) for c in rank_descending(scores.bias_mag)],
        "config": echo,
    }
    _write_json(opts.get("out"), payload)


def _cmd_discover(opts: dict, explicit: set, echo: dict) -> None:
    kernels = _load_kernels(opts, explicit)
    scores = compute_scores(kernels)
    params = DiscoveryParams(
        group_size=opts["group_size"],
        num_groups=opts["num_groups"],
        bias_z_threshold=opts["bias_z_threshold"],
        similarity_mode=opts["similarity_mode"],
    )
    structure = discover(kernels, params, scores=scores)
    plan = build_plan(
        structure, scores.similarity, opts["slice_count"], opts["ordering"]
    )
    manifest = build_manifest(
        source={
            "weights_file": os.path.basename(opts["weights"]),
            "weights_sha256": _sha256_hex(opts["weights"]),
            "weight_name": opts["weight_name"],
            "bias_name": opts["bias_name"],
        },
        params=params,
        variance=scores.variance,
        bias_mag=scores.bias_mag,
        structure=structure,
        plan=plan,
        config=echo,
    )
    save_manifest(manifest, opts["out"])


def _cmd_fit(opts: dict, explicit: set, echo: dict) -> None:
    paths = _collect_images(opts["images"])
    images = [read_image(p) for p in paths]
    for p, img in zip(paths, images):
        if img.channels != 1:
            raise Error(f"training image {p!r} is not grayscale")
    model = fit_model(
        images,
        patch_size=opts["patch_size"],
        channels=opts["channels"],
        delta=opts["delta"],
        beta=opts["beta"],
        seed=opts["seed"],
    )
    save_model(model, opts["out"])


def _cmd_encode(opts: dict, explicit: set, echo: dict) -> None:
    model = load_model(opts["model"])
    if opts["delta"] is not None:
        model = model.with_delta(opts["delta"])
    image = read_image(opts["image"])
    if image.channels != 1:
        raise Error("encode expects a grayscale image")
    permutation = None
    digest = None
    if opts["manifest"] is not None:
        manifest, raw = load_manifest(opts["manifest"])
        permutation = manifest.plan.permutation
        if len(permutation) != model.channels:
            raise Error(
                f"manifest permutation covers {len(permutation)} channels, "
                f"model has {model.channels}"
            )
        digest = manifest_digest(raw)
    stream, report = encode_image(
        model,
        image,
        scalar_bias=opts["scalar_bias"],
        permutation=permutation,
        manifest_digest=digest,
    )
    with open(opts["out"], "wb") as fh:
        fh.write(stream)
    if opts.get("report") is not None:
        _write_json(
            opts["report"],
            {
                "width": report.width,
                "height": report.height,
                "payload_bytes": report.payload_bytes,
                "header_bytes": report.header_bytes,
                "total_bytes": report.total_bytes,
                "analytic_bpp": report.analytic_bpp,
                "actual_bpp": report.actual_bpp,
                "scalar_bias": report.scalar_bias,
                "permuted": report.permuted,
                "channel_bpp": [float(b) for b in report.channel_bpp],
                "escape_counts": [int(e) for e in report.escape_counts],
                "config": echo,
            },
        )


def _cmd_decode(opts: dict, explicit: set, echo: dict) -> None:
    model = load_model(opts["model"])
    with open(opts["stream"], "rb") as fh:
        data = fh.read()
    digest = None
    if opts["manifest"] is not None:
        _, raw = load_manifest(opts["manifest"])
        digest = manifest_digest(raw)
    image, _header = decode_image(data, model, expected_manifest_digest=digest)
    write_image(image, opts["out"])


def _cmd_ablate(opts: dict, explicit: set, echo: dict) -> None:
    model = load_model(opts["model"])
    if opts["delta"] is not None:
        model = model.with_delta(opts["delta"])
    paths = _collect_images(opts["images"])
    results = []
    for p in paths:
        image = read_image(p)
        if image.channels != 1:
            raise Error(f"ablation image {p!r} is not grayscale")
        results.append(ablation_sweep(model, image))
    merged = merge_ablation_results(results)
    rows = [
        {
            "channel": r.channel,
            "kernel_variance": r.kernel_variance,
            "bpp": r.bpp,
            "delta_psnr": r.delta_psnr,
            "delta_msssim": r.delta_msssim,
        }
        for r in merged.rows
    ]
    write_table(
        opts["out"],
        ["channel", "kernel_variance", "bpp", "delta_psnr", "delta_msssim"],
        rows,
        config=echo,
    )
    if opts.get("summary") is not None:
        bpp = merged.column("bpp")
        dpsnr = merged.column("delta_psnr")
        kvar = merged.column("kernel_variance")
        finite = np.isfinite(dpsnr)
        slope, intercept = (
            fit_log_curve(bpp[finite], dpsnr[finite])
            if finite.sum() >= 2
            else (float("nan"), float("nan"))
        )
        _write_json(
            opts["summary"],
            {
                "images": len(paths),
                "channels": model.channels,
                "baseline_psnr": merged.baseline_psnr,
                "baseline_msssim": merged.baseline_msssim,
                "spearman_bpp_vs_delta_psnr": spearman(bpp, dpsnr),
                "spearman_variance_vs_bpp": spearman(kvar, bpp),
                "spearman_variance_vs_delta_psnr": spearman(kvar, dpsnr),
                "log_fit_slope": slope,
                "log_fit_intercept": intercept,
                "config": echo,
            },
        )


def _cmd_schedule(opts: dict, explicit: set, echo: dict) -> None:
    manifest, _ = load_manifest(opts["manifest"])
    try:
        workers = [int(w) for w in str(opts["workers"]).split(",") if w.strip()]
    except ValueError as exc:
        raise Error(f"bad workers list {opts['workers']!r}: {exc}") from exc
    if not workers or any(w < 1 for w in workers):
        raise Error(f"workers must be positive integers, got {opts['workers']!r}")
    costs = CostModel(
        base_cost=opts["base_cost"],
        per_channel_cost=opts["per_channel_cost"],
        sync_overhead=opts["sync_overhead"],
    )
    rows = compare_strategies(manifest.plan, costs, workers)
    write_table(
        opts["out"],
        [
            "workers",
            "grouped_makespan",
            "flat_makespan",
            "grouped_speedup_vs_serial",
            "speedup_grouped_vs_flat",
        ],
        [
            {
                "workers": r.workers,
                "grouped_makespan": r.grouped_makespan,
                "flat_makespan": r.flat_makespan,
                "grouped_speedup_vs_serial": r.grouped_speedup_vs_serial,
                "speedup_grouped_vs_flat": r.speedup_grouped_vs_flat,
            }
            for r in rows
        ],
        config=echo,
    )


def _cmd_synth_images(opts: dict, explicit: set, echo: dict) -> None:
    images = one_over_f_images(
        count=opts["count"],
        size=opts["size"],
        seed=opts["seed"],
        exponent=opts["exponent"],
    )
    os.makedirs(opts["out_dir"], exist_ok=True)
    for i, image in enumerate(images):
        write_image(image, os.path.join(opts["out_dir"], f"synthetic_{i:04d}.pgm"))


def _cmd_plant_weights(opts: dict, explicit: set, echo: dict) -> None:
    kernels, truth = plant_kernel_set(
        groups=opts["groups"],
        group_size=opts["group_size"],
        kernel_size=opts["kernel_size"],
        noise_channels=opts["noise_channels"],
        bias_channels=opts["bias_channels"],
        seed=opts["seed"],
    )
    tf = build_tensor_file(
        {
            _DEFAULT_WEIGHT_NAME: kernels.weights,
            _DEFAULT_BIAS_NAME: kernels.bias,
        },
        metadata={"format": "iscs-planted-weights"},
    )
    write_tensor_file(tf, opts["out"])
    if opts.get("truth") is not None:
        _write_json(opts["truth"], {**truth.to_dict(), "config": echo})


# -- parser plumbing --------------------------------------------------------


def _add(sub, name: str, help_text: str, handler, defaults: dict, required: dict,
         tunables: dict):
    """Register one subcommand.

    required: dest -> (flags, kwargs) always taken from the command line.
    tunables: dest -> (flags, kwargs) defaulted, config-file overridable.
    """
    p = sub.add_parser(name, help=help_text)
    p.set_defaults(_handler=handler, _defaults=defaults, _command=name)
    for dest, (flags, kwargs) in required.items():
        p.add_argument(*flags, dest=dest, **kwargs)
    for dest, (flags, kwargs) in tunables.items():
        p.add_argument(*flags, dest=dest, default=argparse.SUPPRESS, **kwargs)
    p.add_argument(
        "--config",
        dest="_config_path",
        default=None,
        help="JSON file of tunable option values",
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iscs",
        description="Channel structure discovery and desk-scale validation "
        "for convolutional compression encoders.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="_command_name", required=True)

    weight_args = {
        "weights": (["--weights"], {"required": True, "help": "weight container"}),
    }
    naming = {
        "weight_name": (
            ["--weight-name"],
            {"type": str, "help": f"conv weight tensor (default {_DEFAULT_WEIGHT_NAME})"},
        ),
        "bias_name": (
            ["--bias-name"],
            {"type": str, "help": f"bias tensor (default {_DEFAULT_BIAS_NAME})"},
        ),
    }
    naming_defaults = {
        "weight_name": _DEFAULT_WEIGHT_NAME,
        "bias_name": _DEFAULT_BIAS_NAME,
    }

    _add(
        sub,
        "analyze",
        "score channels from weights alone",
        _cmd_analyze,
        {**naming_defaults, "out": None},
        weight_args,
        {
            **naming,
            "out": (["--out"], {"help": "output JSON (default stdout)"}),
        },
    )

    _add(
        sub,
        "discover",
        "derive the grouping manifest from weights",
        _cmd_discover,
        {
            **naming_defaults,
            "group_size": 4,
            "num_groups": None,
            "bias_z_threshold": 3.5,
            "similarity_mode": "raw",
            "slice_count": 2,
            "ordering": "kn_i",
        },
        {
            **weight_args,
            "out": (["--out"], {"required": True, "help": "manifest JSON path"}),
        },
        {
            **naming,
            "group_size": (["--group-size"], {"type": int}),
            "num_groups": (["--num-groups"], {"type": int}),
            "bias_z_threshold": (["--bias-z-threshold"], {"type": float}),
            "similarity_mode": (
                ["--similarity-mode"],
                {"choices": list(SIMILARITY_MODES)},
            ),
            "slice_count": (["--slice-count"], {"type": int}),
            "ordering": (["--ordering"], {"choices": list(ORDERING_STRATEGIES)}),
        },
    )

    _add(
        sub,
        "fit",
        "fit the toy codec on grayscale images",
        _cmd_fit,
        {
            "patch_size": 8,
            "channels": 32,
            "delta": 0.05,
            "beta": 4.0,
            "seed": 0,
        },
        {
            "images": (
                ["--images"],
                {"nargs": "+", "required": True, "help": "files or directories"},
            ),
            "out": (["--out"], {"required": True, "help": "model container path"}),
        },
        {
            "patch_size": (["--patch-size"], {"type": int}),
            "channels": (["--channels"], {"type": int}),
            "delta": (["--delta"], {"type": float}),
            "beta": (["--beta"], {"type": float}),
            "seed": (["--seed"], {"type": int}),
        },
    )

    _add(
        sub,
        "encode",
        "entropy-code an image with a fitted model",
        _cmd_encode,
        {"delta": None, "scalar_bias": False, "manifest": None, "report": None},
        {
            "model": (["--model"], {"required": True}),
            "image": (["--image"], {"required": True}),
            "out": (["--out"], {"required": True}),
        },
        {
            "delta": (["--delta"], {"type": float, "help": "step size override"}),
            "scalar_bias": (
                ["--scalar-bias"],
                {"action": "store_true", "help": "send the bias plane as one scalar"},
            ),
            "manifest": (
                ["--manifest"],
                {"help": "grouping manifest; codes channels in permuted order"},
            ),
            "report": (["--report"], {"help": "rate report JSON path"}),
        },
    )

    _add(
        sub,
        "decode",
        "reconstruct an image from a stream",
        _cmd_decode,
        {"manifest": None},
        {
            "model": (["--model"], {"required": True}),
            "stream": (["--stream"], {"required": True}),
            "out": (["--out"], {"required": True}),
        },
        {
            "manifest": (
                ["--manifest"],
                {"help": "verify the stream's manifest digest against this file"},
            ),
        },
    )

    _add(
        sub,
        "ablate",
        "per-channel rate and quality-drop table",
        _cmd_ablate,
        {"delta": None, "summary": None},
        {
            "model": (["--model"], {"required": True}),
            "images": (["--images"], {"nargs": "+", "required": True}),
            "out": (["--out"], {"required": True, "help": "CSV path"}),
        },
        {
            "delta": (["--delta"], {"type": float}),
            "summary": (["--summary"], {"help": "summary stats JSON path"}),
        },
    )

    _add(
        sub,
        "schedule",
        "simulate grouped vs flat decode schedules",
        _cmd_schedule,
        {
            "workers": "1,2,4,8",
            "base_cost": 1.0,
            "per_channel_cost": 0.25,
            "sync_overhead": 0.0,
        },
        {
            "manifest": (["--manifest"], {"required": True}),
            "out": (["--out"], {"required": True, "help": "CSV path"}),
        },
        {
            "workers": (["--workers"], {"help": "comma-separated worker counts"}),
            "base_cost": (["--base-cost"], {"type": float}),
            "per_channel_cost": (["--per-channel-cost"], {"type": float}),
            "sync_overhead": (["--sync-overhead"], {"type": float}),
        },
    )

    _add(
        sub,
        "synth-images",
        "generate 1/f spectral noise test images",
        _cmd_synth_images,
        {"count": 8, "size": 128, "seed": 0, "exponent": 1.0},
        {
            "out_dir": (["--out-dir"], {"required": True}),
        },
        {
            "count": (["--count"], {"type": int}),
            "size": (["--size"], {"type": int}),
            "seed": (["--seed"], {"type": int}),
            "exponent": (["--exponent"], {"type": float}),
        },
    )

    _add(
        sub,
        "plant-weights",
        "generate a weight container with planted structure",
        _cmd_plant_weights,
        {
            "groups": 4,
            "group_size": 4,
            "kernel_size": 8,
            "noise_channels": 3,
            "bias_channels": 1,
            "seed": 0,
            "truth": None,
        },
        {
            "out": (["--out"], {"required": True}),
        },
        {
            "groups": (["--groups"], {"type": int}),
            "group_size": (["--group-size"], {"type": int}),
            "kernel_size": (["--kernel-size"], {"type": int}),
            "noise_channels": (["--noise-channels"], {"type": int}),
            "bias_channels": (["--bias-channels"], {"type": int}),
            "seed": (["--seed"], {"type": int}),
            "truth": (["--truth"], {"help": "ground-truth JSON path"}),
        },
    )

    return parser


def _resolve(args: argparse.Namespace) -> tuple[dict, set, dict]:
    """Merge defaults, config file, and explicit flags; reject unknown keys."""
    raw = vars(args)
    explicit = {
        k for k in raw if not k.startswith("_") and k != "config"
    }
    defaults: dict = raw["_defaults"]
    merged = dict(defaults)

    config_path = raw.get("_config_path")
    file_config: dict = {}
    if config_path:
        try:
            with open(config_path) as fh:
                file_config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path!r}: {exc}") from exc
        if not isinstance(file_config, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(file_config) - set(defaults))
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; valid keys: {sorted(defaults)}"
            )
        merged.update(file_config)

    for key in explicit:
        merged[key] = raw[key]

    echo = {k: merged[k] for k in sorted(merged)}
    return merged, explicit, echo


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts, explicit, echo = _resolve(args)
        args._handler(opts, explicit, echo)
        return 0
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (Error, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # anything else is a bug, not a usage problem
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main(sys.argv[1:]))
