"""Tour of the SMTF tensor container.

Every stage of the library exchanges arrays through one tiny binary
format: magic, version, dtype code, rank, extents, raw little-endian
payload. This script writes a tensor, inspects the bytes, and shows the
fail-fast validation.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from smseg import load_tensor, reshape_view, save_tensor
from smseg.tensor_store import NonFiniteError, header_size

work = Path(tempfile.mkdtemp())

# A 2x2 float32 tensor: header is 10 + 8*rank bytes, payload 16 bytes.
t = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
path = work / "t.smtf"
save_tensor(t, path)
blob = path.read_bytes()
print("file size:", len(blob), "bytes (header", header_size(t.ndim), "+ payload 16)")
print("magic:", blob[:4], " version:", struct.unpack("<I", blob[4:8])[0],
      " dtype code:", blob[8], " rank:", blob[9])
print("extents:", struct.unpack("<2Q", blob[10:26]))

# Round trips are bit exact.
back = load_tensor(path)
print("round trip equal:", np.array_equal(back, t), " dtype:", back.dtype)

# Views reinterpret the same payload; the decoder uses this to flatten
# C x H x W feature maps into C x (H*W) pixel matrices.
chw = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
flat = reshape_view(chw, (2, 12))
print("flattened shape:", flat.shape)

# Corrupt payloads fail fast instead of poisoning downstream cost math.
bad = work / "bad.smtf"
bad.write_bytes(blob[:header_size(2)] + struct.pack("<4f", 1, 2, np.nan, 4))
try:
    load_tensor(bad)
except NonFiniteError as exc:
    print("rejected:", exc)
