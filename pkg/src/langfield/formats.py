"""Bit-exact on-disk formats.

VLFT tensor container: magic ``VLFT``, u8 version (1), u8 dtype code
(1 = float32), u8 ndim, ndim x u32 little-endian shape, then the row-major
little-endian payload. No padding, no compression.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

VLFT_MAGIC = b"VLFT"
VLFT_VERSION = 1
DTYPE_F32 = 1

_CODE_TO_DTYPE = {DTYPE_F32: np.dtype("<f4")}
_DTYPE_TO_CODE = {np.dtype("float32"): DTYPE_F32}


def write_vlft(path, array):
    """Write a float32 tensor. Other dtypes are rejected, not silently cast."""
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise FormatError(f"VLFT stores float32 tensors, got dtype {arr.dtype}")
    code = _DTYPE_TO_CODE[arr.dtype]
    header = VLFT_MAGIC + struct.pack(
        f"<BBB{arr.ndim}I", VLFT_VERSION, code, arr.ndim, *arr.shape
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes())


def read_vlft(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing VLFT file: {path}")
    data = path.read_bytes()
    if len(data) < 7 or data[:4] != VLFT_MAGIC:
        raise FormatError(f"{path}: not a VLFT file (bad magic)")
    version, code, ndim = data[4], data[5], data[6]
    if version != VLFT_VERSION:
        raise FormatError(f"{path}: unsupported VLFT version {version}")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"{path}: unknown dtype code {code}")
    offset = 7 + 4 * ndim
    if len(data) < offset:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", data, 7)
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(data) != offset + count * dtype.itemsize:
        raise FormatError(f"{path}: payload size mismatch for shape {shape}")
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).copy()


def write_floats_line(values):
    """Space-separated decimals using shortest round-trip repr."""
    return " ".join(repr(float(v)) for v in values)


def write_labels_tsv(path, names, embeddings):
    """labels.tsv: one label per line — name, TAB, D space-separated floats."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    with open(path, "w") as fh:
        for name, emb in zip(names, embeddings):
            fh.write(f"{name}\t{write_floats_line(emb)}\n")


def read_labels_tsv(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing labels file: {path}")
    names, rows = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'name<TAB>floats'")
        names.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1].split()])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad embedding value: {exc}") from exc
    if not names:
        raise FormatError(f"{path}: no labels")
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise FormatError(f"{path}: inconsistent embedding dimensions {sorted(dims)}")
    return names, np.asarray(rows, dtype=np.float64)


def write_ppm(path, image):
    """8-bit P6 preview. Accepts HxW (grayscale) or HxWx3 float in [0,1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM preview needs HxW or HxWx3, got {img.shape}")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(u8.tobytes())
