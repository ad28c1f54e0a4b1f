"""Bit-exact binary container for dense arrays (the "SMTF" format).

Pipeline stages exchange every dense array — feature maps, masks, class
embeddings, query banks, parameter packs — through this container, so the
on-disk layout is a contract, not an implementation detail:

    bytes 0..3    magic ``b"SMTF"``
    bytes 4..7    format version, little-endian u32 (currently 1)
    byte  8       dtype code, u8: 0 = float32, 1 = uint8
    byte  9       rank, u8, one of 1..4
    next 8*rank   extents, little-endian u64 each, all >= 1
    remainder     raw row-major payload, little-endian scalars

The header is exactly ``10 + 8 * rank`` bytes and the payload holds
exactly ``prod(extents)`` scalars. Files are written and parsed
little-endian regardless of host byte order, and a save/load round trip
preserves payload bits exactly.

float32 payloads are validated on load: NaN or Inf anywhere is a hard
error, so a corrupt feature file fails fast instead of silently poisoning
downstream cost matrices. Each way a file can be malformed raises its own
exception class (all subclasses of :class:`TensorFormatError`, itself a
``ValueError``).
"""

import struct

import numpy as np

MAGIC = b"SMTF"
VERSION = 1
MAX_RANK = 4

_F32LE = np.dtype("<f4")
_U8 = np.dtype("u1")
_DTYPE_CODES = {_F32LE: 0, _U8: 1}
_CODE_DTYPES = {0: _F32LE, 1: _U8}


class TensorFormatError(ValueError):
    """A file or array violates the SMTF container contract."""


class BadMagicError(TensorFormatError):
    """File does not begin with the ``SMTF`` magic bytes."""


class UnsupportedVersionError(TensorFormatError):
    """Header declares a format version this library does not speak."""


class UnsupportedDtypeError(TensorFormatError):
    """Header declares a dtype code outside {0: f32, 1: u8}."""


class BadHeaderError(TensorFormatError):
    """Header is truncated, or rank/extents are out of range."""


class TruncatedPayloadError(TensorFormatError):
    """Payload byte count does not match the declared extents."""


class NonFiniteError(TensorFormatError):
    """A float32 payload contains NaN or Inf."""


def header_size(rank):
    return 10 + 8 * rank


def validate_tensor(arr):
    """Check an in-memory array against the container invariants.

    Returns the array unchanged on success so calls can be chained.
    """
    arr = np.asarray(arr)
    if arr.dtype not in (np.dtype(np.float32), _U8):
        raise UnsupportedDtypeError(
            f"tensor dtype must be float32 or uint8, got {arr.dtype}")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise BadHeaderError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise BadHeaderError(f"tensor extents must all be >= 1, got {arr.shape}")
    if arr.dtype == np.dtype(np.float32) and not np.isfinite(arr).all():
        raise NonFiniteError("float32 tensor contains NaN or Inf")
    return arr


def save_tensor(arr, path):
    """Write ``arr`` (float32 or uint8, rank 1..4) to ``path`` as SMTF."""
    arr = validate_tensor(arr)
    code = 0 if arr.dtype == np.dtype(np.float32) else 1
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_CODE_DTYPES[code], copy=False)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_tensor(path):
    """Parse an SMTF file into a native-order numpy array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < header_size(1):
        raise BadHeaderError(f"{path}: file shorter than the minimum header")
    version, code, rank = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise BadHeaderError(f"{path}: rank {rank} outside 1..{MAX_RANK}")
    if len(blob) < header_size(rank):
        raise BadHeaderError(f"{path}: header truncated")
    dims = struct.unpack_from(f"<{rank}Q", blob, 10)
    if any(d < 1 for d in dims):
        raise BadHeaderError(f"{path}: zero extent in dims {dims}")
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    got = len(blob) - header_size(rank)
    if got != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {got} bytes, dims {dims} require {expected}")
    flat = np.frombuffer(blob, dtype=dtype, offset=header_size(rank))
    arr = flat.reshape(dims).astype(dtype.newbyteorder("="))
    if code == 0 and not np.isfinite(arr).all():
        raise NonFiniteError(f"{path}: float32 payload contains NaN or Inf")
    return arr


def reshape_view(arr, dims):
    """Reinterpret ``arr`` with new extents covering the same payload."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK or any(d < 1 for d in dims):
        raise BadHeaderError(f"target dims {dims} outside the container contract")
    if int(np.prod(dims)) != arr.size:
        raise ValueError(
            f"cannot view {arr.shape} ({arr.size} scalars) as {dims}")
    return arr.reshape(dims)
