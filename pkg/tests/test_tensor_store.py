import struct

import numpy as np
import pytest

from smseg import tensor_store as ts


def test_header_arithmetic_2x2_f32(tmp_path):
    path = tmp_path / "t.smtf"
    ts.save_tensor(np.array([[1, 2], [3, 4]], dtype=np.float32), path)
    assert path.stat().st_size == 4 + 4 + 1 + 1 + 16 + 16 == 42


@pytest.mark.parametrize("shape,dtype", [
    ((5,), np.float32), ((2, 3), np.float32), ((2, 3, 4), np.float32),
    ((2, 3, 4, 5), np.float32), ((3, 3), np.uint8), ((7,), np.uint8),
])
def test_roundtrip_bit_exact(tmp_path, shape, dtype):
    rng = np.random.default_rng(hash(shape) % 2**32)
    if dtype == np.float32:
        arr = rng.standard_normal(shape).astype(np.float32)
    else:
        arr = rng.integers(0, 256, size=shape).astype(np.uint8)
    path = tmp_path / "t.smtf"
    ts.save_tensor(arr, path)
    back = ts.load_tensor(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert arr.tobytes() == back.tobytes()


def test_u8_ones_payload_bytes(tmp_path):
    path = tmp_path / "m.smtf"
    ts.save_tensor(np.ones((3, 3), dtype=np.uint8), path)
    blob = path.read_bytes()
    assert blob[ts.header_size(2):] == b"\x01" * 9


def test_layout_is_little_endian(tmp_path):
    path = tmp_path / "t.smtf"
    ts.save_tensor(np.array([1.0], dtype=np.float32), path)
    blob = path.read_bytes()
    assert blob[:4] == b"SMTF"
    assert struct.unpack("<I", blob[4:8])[0] == 1
    assert blob[8] == 0 and blob[9] == 1
    assert struct.unpack("<Q", blob[10:18])[0] == 1
    assert blob[18:] == struct.pack("<f", 1.0)


def _valid_header(dims, code=0, version=1):
    return (b"SMTF" + struct.pack("<IBB", version, code, len(dims))
            + struct.pack(f"<{len(dims)}Q", *dims))


def test_bad_magic(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(ts.BadMagicError):
        ts.load_tensor(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((1,), version=9) + b"\x00" * 4)
    with pytest.raises(ts.UnsupportedVersionError):
        ts.load_tensor(path)


def test_unsupported_dtype_code(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((1,), code=7) + b"\x00" * 4)
    with pytest.raises(ts.UnsupportedDtypeError):
        ts.load_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((2, 2)) + b"\x00" * 8)   # 8 of 16 bytes
    with pytest.raises(ts.TruncatedPayloadError):
        ts.load_tensor(path)


def test_excess_payload_rejected(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((1,)) + b"\x00" * 8)
    with pytest.raises(ts.TruncatedPayloadError):
        ts.load_tensor(path)


def test_nan_payload_rejected(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((1,)) + struct.pack("<f", np.nan))
    with pytest.raises(ts.NonFiniteError):
        ts.load_tensor(path)


def test_zero_extent_rejected(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(_valid_header((0, 2)))
    with pytest.raises(ts.BadHeaderError):
        ts.load_tensor(path)


def test_bad_rank_rejected(tmp_path):
    path = tmp_path / "x.smtf"
    path.write_bytes(b"SMTF" + struct.pack("<IBB", 1, 0, 5) + b"\x00" * 40)
    with pytest.raises(ts.BadHeaderError):
        ts.load_tensor(path)


def test_save_rejects_bad_inputs(tmp_path):
    with pytest.raises(ts.UnsupportedDtypeError):
        ts.save_tensor(np.zeros((2, 2), dtype=np.float64), tmp_path / "a")
    with pytest.raises(ts.NonFiniteError):
        ts.save_tensor(np.array([np.inf], dtype=np.float32), tmp_path / "b")


def test_reshape_view():
    arr = np.arange(6, dtype=np.float32).reshape(1, 6)
    out = ts.reshape_view(arr, (2, 3))
    assert out.shape == (2, 3)
    assert np.array_equal(out.ravel(), arr.ravel())
    with pytest.raises(ValueError):
        ts.reshape_view(np.zeros((2, 3), dtype=np.float32), (4, 2))
    chw = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    flat = ts.reshape_view(chw, (2, 12))
    assert np.array_equal(flat[1], chw[1].ravel())
