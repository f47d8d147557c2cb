"""Writers for the engine's on-disk interfaces.

The adapter produces files, the engine consumes them; the byte layout below
is the contract between the two packages (VLFT container, intrinsics/poses/
bounds text files, labels.tsv).
"""

import struct
from pathlib import Path

import numpy as np


class ExtractError(Exception):
    pass


class ModelLoadError(ExtractError):
    pass


def write_vlft(path, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = b"VLFT" + struct.pack(f"<BBB{arr.ndim}I", 1, 1, arr.ndim, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def floats_line(values):
    return " ".join(repr(float(v)) for v in values)


def write_labels_tsv(path, names, embeddings):
    if len(set(names)) != len(names):
        raise ExtractError("duplicate label names")
    with open(path, "w") as fh:
        for name, emb in zip(names, np.asarray(embeddings, dtype=np.float64)):
            fh.write(f"{name}\t{floats_line(emb)}\n")


def write_dataset_sidecars(out_dir, intrinsics, poses, near, far, bound_lo, bound_hi):
    out = Path(out_dir)
    fx, fy, cx, cy, w, h = intrinsics
    (out / "intrinsics.txt").write_text(f"{floats_line([fx, fy, cx, cy])} {w} {h}\n")
    with open(out / "poses.txt", "w") as fh:
        for pose in poses:
            fh.write(floats_line(np.asarray(pose).ravel()) + "\n")
    (out / "bounds.txt").write_text(
        f"{floats_line([near, far])}\n{floats_line([*bound_lo, *bound_hi])}\n"
    )
