"""Shared fixtures: random weight sets, a small fitted model, test images."""

from __future__ import annotations

import numpy as np
import pytest

from iscs.codec import fit
from iscs.synthetic import one_over_f_images
from iscs.tensor_io import ConvKernelSet


def random_kernel_set(
    rng: np.random.Generator,
    channels: int | None = None,
    in_channels: int | None = None,
    kernel_size: int | None = None,
    with_bias: bool = True,
) -> ConvKernelSet:
    """A random dense kernel set within the supported shape envelope."""
    c = channels if channels is not None else int(rng.integers(1, 65))
    ci = in_channels if in_channels is not None else int(rng.integers(1, 9))
    k = kernel_size if kernel_size is not None else int(rng.integers(1, 8))
    weights = rng.standard_normal((c, ci, k, k))
    bias = rng.standard_normal(c) if with_bias else None
    return ConvKernelSet(weights=weights, bias=bias)


@pytest.fixture(scope="session")
def train_images():
    return one_over_f_images(4, size=64, seed=11)


@pytest.fixture(scope="session")
def test_image():
    return one_over_f_images(1, size=64, seed=99)[0]


@pytest.fixture(scope="session")
def small_model(train_images):
    """A compact fitted model shared by codec/bitstream/evaluation tests."""
    return fit(train_images, patch_size=4, channels=12, delta=0.05, beta=4.0,
               seed=3)
