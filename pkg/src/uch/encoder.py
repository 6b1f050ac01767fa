"""Out-of-sample hashing: project new samples with the learned linear
maps and sign-quantize, plus the packed on-disk code format."""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .model import CodeMatrix, FeatureMatrix, UchModel, sign_quantize

CODE_MAGIC = b"UCHC"


def encode(model: UchModel, x, modality_id: int, raw: bool = False) -> CodeMatrix:
    """Hash rows of one modality into binary codes.

    `x` must already be centered with the model's stored training mean;
    pass raw=True to have the mean subtracted here.  Accepts a plain
    array or a FeatureMatrix.
    """
    if not 1 <= modality_id <= len(model.projections):
        raise DataError(
            f"modality_id must be in [1, {len(model.projections)}], got {modality_id}"
        )
    data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"input must be 2-d, got shape {data.shape}")
    p = model.projections[modality_id - 1]
    if data.shape[1] != p.shape[0]:
        raise DataError(
            f"modality {modality_id} expects {p.shape[0]} columns, got {data.shape[1]}"
        )
    if raw:
        data = data - model.means[modality_id - 1]
    return sign_quantize(data @ p)


def pack_codes(codes: CodeMatrix) -> np.ndarray:
    """Pack +1 bits as 1 and -1 bits as 0, little-endian within each byte.

    Returns a uint8 array of shape (n, ceil(r/8)); pad bits are zero.
    """
    bits = (codes.codes > 0).astype(np.uint8)
    return np.packbits(bits, axis=1, bitorder="little")


def unpack_codes(packed: np.ndarray, n: int, r: int) -> CodeMatrix:
    """Inverse of pack_codes for known (n, r)."""
    packed = np.asarray(packed, dtype=np.uint8)
    nbytes = (r + 7) // 8
    if packed.shape != (n, nbytes):
        raise DataError(
            f"packed codes have shape {packed.shape}, expected ({n}, {nbytes})"
        )
    bits = np.unpackbits(packed, axis=1, count=r, bitorder="little")
    return CodeMatrix(codes=np.where(bits > 0, 1, -1).astype(np.int8))


def save_codes(codes: CodeMatrix, path) -> None:
    """Write codes as a small binary file: magic, n, r, packed bits."""
    packed = pack_codes(codes)
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(struct.pack("<II", codes.n, codes.nbits))
        fh.write(packed.tobytes())


def load_codes(path) -> CodeMatrix:
    """Read a code file written by save_codes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CODE_MAGIC:
        raise DataError(f"{path}: not a code file (bad magic)")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated code file")
    n, r = struct.unpack("<II", blob[4:12])
    nbytes = (r + 7) // 8
    body = blob[12:]
    if len(body) != n * nbytes:
        raise DataError(
            f"{path}: expected {n * nbytes} code bytes, found {len(body)}"
        )
    packed = np.frombuffer(body, dtype=np.uint8).reshape(n, nbytes)
    return unpack_codes(packed, n, r)


def training_disagreement(model: UchModel, split) -> np.ndarray:
    """Per-modality fraction of re-encoded training bits differing from
    the stored unified codes.  Diagnostic only: quantizing each modality
    separately need not reproduce the jointly learned codes."""
    rates = []
    for v, fm in enumerate(split.train_features, start=1):
        re_enc = encode(model, fm, v)
        rates.append(float((re_enc.codes != model.training_codes.codes).mean()))
    return np.asarray(rates)
