import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aed_eend.container import VERSION, decode, encode, read_container, write_container
from aed_eend.errors import ContainerError


def sample_arrays():
    rng = np.random.default_rng(0)
    return {"w": rng.normal(size=(3, 4)), "i": np.arange(5, dtype=np.int64),
            "mask": np.array([[1, 0], [0, 1]], dtype=np.uint8), "scalar": np.float64(2.5)}


def test_roundtrip(tmp_path):
    arrays = sample_arrays()
    meta = {"kind": "test", "nested": {"a": [1, 2]}, "none": None}
    write_container(tmp_path / "x.aedd", meta, arrays)
    m, a = read_container(tmp_path / "x.aedd")
    assert m == meta
    assert set(a) == set(arrays)
    for k, v in arrays.items():
        assert np.array_equal(a[k], v) and a[k].dtype == np.asarray(v).dtype


@settings(max_examples=40, deadline=None)
@given(arr=hnp.arrays(dtype=st.sampled_from([np.float64, np.float32, np.int32, np.uint8]),
                      shape=hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)))
def test_roundtrip_property(arr):
    _, out = decode(encode({}, {"a": arr}))
    assert out["a"].shape == arr.shape
    assert out["a"].tobytes() == arr.tobytes()


def test_encoding_is_canonical():
    a = sample_arrays()
    b = dict(reversed(list(a.items())))
    assert encode({"x": 1, "y": 2}, a) == encode({"y": 2, "x": 1}, b)


def test_big_endian_input_normalised():
    arr = np.arange(4, dtype=">f8")
    _, out = decode(encode({}, {"a": arr}))
    assert out["a"].dtype.str == "<f8" and np.array_equal(out["a"], arr)


def test_unsupported_dtype():
    with pytest.raises(ContainerError):
        encode({}, {"c": np.zeros(2, dtype=np.complex128)})


def test_every_truncation_detected():
    blob = encode({"k": 1}, {"a": np.arange(6.0)})
    for cut in range(len(blob)):
        with pytest.raises(ContainerError):
            decode(blob[:cut])


def test_corruption_detected():
    blob = bytearray(encode({}, {"a": np.arange(6.0)}))
    blob[-10] ^= 0xFF  # inside the array data
    with pytest.raises(ContainerError, match="checksum"):
        decode(bytes(blob))


def test_bad_magic_and_newer_version():
    blob = encode({}, {})
    with pytest.raises(ContainerError):
        decode(b"XXXX" + blob[4:])
    newer = blob[:4] + struct.pack("<I", VERSION + 1) + blob[8:]
    with pytest.raises(ContainerError, match="newer"):
        decode(newer)


def test_missing_file(tmp_path):
    with pytest.raises(ContainerError):
        read_container(tmp_path / "absent.aedd")


def test_atomic_write_leaves_no_temp(tmp_path):
    write_container(tmp_path / "a.aedd", {}, {"x": np.zeros(2)})
    write_container(tmp_path / "a.aedd", {}, {"x": np.ones(2)})
    assert [p.name for p in tmp_path.iterdir()] == ["a.aedd"]
    assert np.array_equal(read_container(tmp_path / "a.aedd")[1]["x"], np.ones(2))
