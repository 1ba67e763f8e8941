"""Container and image I/O: roundtrips, canonical form, malformed inputs."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from iscs.errors import ImageFormatError, TensorFileError
from iscs.tensor_io import (
    ConvKernelSet,
    Image,
    build_tensor_file,
    extract_kernel_set,
    parse_image,
    parse_tensor_container,
    read_image,
    read_tensor_file,
    serialize_image,
    serialize_tensor_file,
    write_image,
    write_tensor_file,
)


def _container(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header).encode()
    return struct.pack("<Q", len(head)) + head + payload


class TestTensorContainer:
    def test_build_serialize_parse_roundtrip(self):
        rng = np.random.default_rng(0)
        arrays = {
            "conv.weight": rng.standard_normal((3, 2, 5, 5)),
            "conv.bias": rng.standard_normal(3).astype(np.float32),
            "half": rng.standard_normal((4, 4)).astype(np.float16),
        }
        tf = build_tensor_file(arrays, metadata={"origin": "unit-test"})
        back = parse_tensor_container(serialize_tensor_file(tf))
        assert sorted(back.names()) == sorted(arrays)
        assert back.metadata == {"origin": "unit-test"}
        for name, arr in arrays.items():
            got = back.tensor(name)
            assert got.dtype.itemsize == arr.dtype.itemsize
            assert np.array_equal(got, arr)

    def test_serialization_is_canonical_fixpoint(self):
        rng = np.random.default_rng(1)
        tf = build_tensor_file(
            {"b": rng.standard_normal(4), "a": rng.standard_normal((2, 3))},
            metadata={"k": "v"},
        )
        once = serialize_tensor_file(tf)
        twice = serialize_tensor_file(parse_tensor_container(once))
        assert once == twice

    def test_file_roundtrip(self, tmp_path):
        tf = build_tensor_file({"w": np.arange(6.0).reshape(2, 3)})
        path = str(tmp_path / "weights.tensors")
        write_tensor_file(tf, path)
        back = read_tensor_file(path)
        assert np.array_equal(back.tensor("w"), np.arange(6.0).reshape(2, 3))

    def test_handwritten_container_with_payload_gap(self):
        # Offsets are relative to the end of the header; unreferenced gap
        # bytes between tensors are legal, only overlap is not.
        payload = struct.pack("<4f", 1, 2, 3, 4) + b"\xee" * 3 + struct.pack("<d", 9)
        header = {
            "second": {"dtype": "F64", "shape": [1], "data_offsets": [19, 27]},
            "first": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]},
        }
        tf = parse_tensor_container(_container(header, payload))
        assert np.array_equal(tf.tensor("first"), [[1, 2], [3, 4]])
        assert tf.tensor("second")[0] == 9.0

    def test_missing_tensor_name(self):
        tf = build_tensor_file({"w": np.zeros(2)})
        with pytest.raises(TensorFileError, match="not present"):
            tf.tensor("nope")

    @pytest.mark.parametrize(
        "data,message",
        [
            (b"\x01\x02\x03", "missing 8-byte header length"),
            (struct.pack("<Q", 100) + b"{}", "header claims"),
            (struct.pack("<Q", 2) + b"{]", "malformed JSON header"),
            (struct.pack("<Q", 2) + b"[]", "not an object"),
        ],
    )
    def test_malformed_framing(self, data, message):
        with pytest.raises(TensorFileError, match=message):
            parse_tensor_container(data)

    @pytest.mark.parametrize(
        "record,message",
        [
            ({"dtype": "I8", "shape": [1], "data_offsets": [0, 1]}, "unknown dtype"),
            ({"dtype": "F32", "shape": [0], "data_offsets": [0, 0]}, ">= 1"),
            ({"dtype": "F32", "shape": [True], "data_offsets": [0, 4]}, "list of ints"),
            ({"dtype": "F32", "shape": "x", "data_offsets": [0, 4]}, "list of ints"),
            ({"dtype": "F32", "shape": [1], "data_offsets": [0]}, "begin, end"),
            ({"dtype": "F32", "shape": [1], "data_offsets": [4, 0]}, "out of bounds"),
            ({"dtype": "F32", "shape": [1], "data_offsets": [0, 400]}, "out of bounds"),
            ({"dtype": "F32", "shape": [2], "data_offsets": [0, 4]}, "needs 8"),
            ({"shape": [1], "data_offsets": [0, 4]}, "missing header field"),
        ],
    )
    def test_entry_validation(self, record, message):
        data = _container({"t": record}, b"\x00" * 8)
        with pytest.raises(TensorFileError, match=message):
            parse_tensor_container(data)

    def test_overlap_rejected(self):
        header = {
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        }
        with pytest.raises(TensorFileError, match="overlaps"):
            parse_tensor_container(_container(header, b"\x00" * 12))

    def test_metadata_must_be_string_map(self):
        data = _container({"__metadata__": {"n": 3}}, b"")
        with pytest.raises(TensorFileError, match="strings to strings"):
            parse_tensor_container(data)

    def test_build_rejects_integer_arrays(self):
        with pytest.raises(TensorFileError, match="unsupported dtype"):
            build_tensor_file({"w": np.arange(4)})

    def test_build_rejects_empty_dims(self):
        with pytest.raises(TensorFileError, match=">= 1"):
            build_tensor_file({"w": np.zeros((0, 3))})


class TestKernelExtraction:
    def test_promotion_is_exact(self):
        rng = np.random.default_rng(2)
        w32 = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
        b16 = rng.standard_normal(4).astype(np.float16)
        tf = build_tensor_file({"layer.weight": w32, "layer.bias": b16})
        kernels = extract_kernel_set(tf, "layer.weight", "layer.bias")
        assert kernels.weights.dtype == np.float64
        assert np.array_equal(kernels.weights, w32.astype(np.float64))
        assert np.array_equal(kernels.bias, b16.astype(np.float64))

    def test_bias_is_optional(self):
        tf = build_tensor_file({"w": np.zeros((2, 1, 3, 3))})
        kernels = extract_kernel_set(tf, "w")
        assert kernels.bias is None
        assert kernels.out_channels == 2

    def test_wrong_rank_reports_tensor_name(self):
        tf = build_tensor_file({"w": np.zeros((2, 3))})
        with pytest.raises(TensorFileError, match="'w'.*rank 4"):
            extract_kernel_set(tf, "w")


class TestConvKernelSet:
    def test_valid_set(self):
        k = ConvKernelSet(weights=np.ones((3, 2, 5, 5)), bias=np.ones(3))
        assert k.out_channels == 3
        assert k.weights.dtype == np.float64

    @pytest.mark.parametrize(
        "weights,bias,message",
        [
            (np.ones((2, 3)), None, "rank 4"),
            (np.ones((2, 1, 3, 4)), None, "square"),
            (np.full((1, 1, 2, 2), np.nan), None, "non-finite"),
            (np.ones((2, 1, 3, 3)), np.ones(3), "bias must have shape"),
            (np.ones((2, 1, 3, 3)), np.array([1.0, np.inf]), "non-finite"),
        ],
    )
    def test_validation(self, weights, bias, message):
        with pytest.raises(ValueError, match=message):
            ConvKernelSet(weights=weights, bias=bias)


class TestImageIO:
    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        samples = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
        image = Image(width=7, height=5, channels=1, samples=samples)
        path = str(tmp_path / "img.pgm")
        write_image(image, path)
        back = read_image(path)
        assert (back.width, back.height, back.channels) == (7, 5, 1)
        assert np.array_equal(back.samples, samples)

    def test_ppm_roundtrip(self):
        rng = np.random.default_rng(4)
        samples = rng.integers(0, 256, size=(3, 2, 3), dtype=np.uint8)
        image = Image(width=2, height=3, channels=3, samples=samples)
        back = parse_image(serialize_image(image))
        assert back.channels == 3
        assert np.array_equal(back.samples, samples)

    def test_comments_and_odd_whitespace(self):
        data = b"P5 # magic\n# a comment line\n 2\t2 # dims\n255\n" + bytes(4)
        image = parse_image(data)
        assert (image.width, image.height) == (2, 2)
        assert image.samples.sum() == 0

    @pytest.mark.parametrize(
        "data,message",
        [
            (b"P4\n2 2\n255\n" + bytes(4), "unsupported magic"),
            (b"P5\n2 2\n65535\n" + bytes(8), "maxval must be 255"),
            (b"P5\n0 2\n255\n", "bad dimensions"),
            (b"P5\n2 x\n255\n" + bytes(4), "non-numeric"),
            (b"P5\n2 2\n255\n" + bytes(3), "truncated payload"),
            (b"P5\n2 2\n255\n" + bytes(5), "size mismatch"),
            (b"P5\n2 2\n255", "missing single whitespace"),
            (b"P5\n2 2", "truncated image header"),
        ],
    )
    def test_malformed_images(self, data, message):
        with pytest.raises(ImageFormatError, match=message):
            parse_image(data)

    def test_image_shape_validation(self):
        with pytest.raises(ValueError, match="channels must be 1 or 3"):
            Image(width=2, height=2, channels=2, samples=np.zeros((2, 2, 2)))
        with pytest.raises(ValueError, match="samples shape"):
            Image(width=3, height=2, channels=1, samples=np.zeros((3, 2)))
