import struct

import numpy as np
import pytest

from talkinghead import container
from talkinghead.container import ContainerError


def test_round_trip_preserves_order_dtype_and_meta(tmp_path):
    arrays = {"b": np.arange(6, dtype=np.int64).reshape(2, 3), "a": np.linspace(0, 1, 5)}
    container.save(tmp_path / "x.thc", arrays, {"kind": "demo", "n": 3})
    out, meta = container.load(tmp_path / "x.thc")
    assert list(out) == ["b", "a"]
    assert out["b"].dtype == np.int32 and out["a"].dtype == np.float32
    np.testing.assert_array_equal(out["b"], arrays["b"])
    np.testing.assert_allclose(out["a"], arrays["a"], rtol=1e-7)
    assert meta == {"kind": "demo", "n": 3}


def test_header_layout_is_magic_length_json():
    blob = container.dumps({"x": np.ones(2)}, {})
    assert blob[:4] == b"THC1"
    (hlen,) = struct.unpack("<I", blob[4:8])
    assert len(blob) == 8 + hlen + 8
    assert np.frombuffer(blob[8 + hlen:], "<f4").tolist() == [1.0, 1.0]


def test_rejects_garbage():
    with pytest.raises(ContainerError):
        container.loads(b"NOPE" + bytes(10))


def test_rejects_truncated_payload():
    blob = container.dumps({"x": np.ones(4)})
    with pytest.raises(ContainerError):
        container.loads(blob[:-3])


def test_rejects_complex_arrays():
    with pytest.raises(ContainerError):
        container.dumps({"z": np.ones(2, dtype=complex)})
