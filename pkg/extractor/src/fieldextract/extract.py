"""Convert a posed RGB-D capture into the engine's dataset layout.

Source directory (native capture layout):
    intrinsics.txt             fx fy cx cy width height
    poses.txt                  one 4x4 camera-to-world per line, row-major
    color_%05d.png             8-bit RGB
    depth_%05d.png or .npy     16-bit millimeters, or float32 meters

Output: frame_%05d.{rgb,depth,feat}.vlft at the target resolution plus
re-emitted intrinsics (rescaled), poses, bounds, so the result loads through
the engine's dataset reader unchanged. Feature maps are HxWx512.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import EMBED_DIM, make_backend
from .formats import ExtractError, write_dataset_sidecars, write_labels_tsv, write_vlft


@dataclass
class ExtractionManifest:
    source_dir: str
    out_dir: str
    target_height: int = 390
    target_width: int = 520
    backend: str = "hashed"
    model_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.target_height < 8 or self.target_width < 8:
            raise ExtractError("target resolution too small")
        if self.target_height > 4096 or self.target_width > 4096:
            raise ExtractError("target resolution exceeds supported bounds")


def _read_intrinsics(path):
    tokens = path.read_text().split()
    if len(tokens) != 6:
        raise ExtractError(f"{path}: expected 6 values")
    return [float(t) for t in tokens[:4]] + [int(tokens[4]), int(tokens[5])]


def _read_poses(path):
    poses = []
    for line in path.read_text().splitlines():
        if line.strip():
            vals = [float(v) for v in line.split()]
            if len(vals) != 16:
                raise ExtractError(f"{path}: pose lines need 16 values")
            poses.append(np.array(vals).reshape(4, 4))
    return poses


def _load_depth(src, index):
    npy = src / f"depth_{index:05d}.npy"
    if npy.is_file():
        return np.load(npy).astype(np.float32)
    png = src / f"depth_{index:05d}.png"
    if png.is_file():
        img = np.asarray(Image.open(png))
        if img.dtype != np.uint16:
            raise ExtractError(f"{png}: expected 16-bit depth PNG")
        return img.astype(np.float32) / 1000.0  # millimeters -> meters
    raise ExtractError(f"missing depth for frame {index} under {src}")


def _resize_rgb(rgb_u8, w, h):
    return np.asarray(
        Image.fromarray(rgb_u8).resize((w, h), Image.BILINEAR), dtype=np.float32
    ) / 255.0


def _resize_depth(depth, w, h):
    # nearest neighbour: interpolating metric depth across object edges
    # fabricates geometry
    img = Image.fromarray(depth, mode="F").resize((w, h), Image.NEAREST)
    return np.asarray(img, dtype=np.float32)


def _pixel_dirs(fx, fy, cx, cy, w, h):
    vs, us = np.mgrid[0:h, 0:w]
    x = (us + 0.5 - cx) / fx
    y = (vs + 0.5 - cy) / fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def extract_features(manifest):
    """Run the backend over every source frame and write the dataset dir.

    Returns the list of written feature files.
    """
    src = Path(manifest.source_dir)
    out = Path(manifest.out_dir)
    if not src.is_dir():
        raise ExtractError(f"missing source directory: {src}")
    out.mkdir(parents=True, exist_ok=True)

    fx, fy, cx, cy, sw, sh = _read_intrinsics(src / "intrinsics.txt")
    poses = _read_poses(src / "poses.txt")
    if not poses:
        raise ExtractError(f"{src}: no poses")

    tw, th = manifest.target_width, manifest.target_height
    sx, sy = tw / sw, th / sh
    intr_out = (fx * sx, fy * sy, cx * sx, cy * sy, tw, th)

    backend = make_backend(manifest.backend, manifest.model_dir, seed=manifest.seed)
    dirs = _pixel_dirs(*intr_out[:4], tw, th)

    written = []
    pts_min = np.full(3, np.inf)
    pts_max = np.full(3, -np.inf)
    max_ray = 0.0
    min_depth = np.inf
    for i, pose in enumerate(poses):
        color_path = src / f"color_{i:05d}.png"
        if not color_path.is_file():
            raise ExtractError(f"missing color for frame {i} under {src}")
        rgb_u8 = np.asarray(Image.open(color_path).convert("RGB"))
        if rgb_u8.shape[:2] != (sh, sw):
            raise ExtractError(
                f"{color_path}: resolution {rgb_u8.shape[:2]} != intrinsics {(sh, sw)}"
            )
        rgb = _resize_rgb(rgb_u8, tw, th)
        depth = _resize_depth(_load_depth(src, i), tw, th)
        feat = backend.image_features(rgb)
        if feat.shape != (th, tw, EMBED_DIM):
            raise ExtractError(f"backend produced {feat.shape}, expected {(th, tw, EMBED_DIM)}")

        write_vlft(out / f"frame_{i:05d}.rgb.vlft", rgb)
        write_vlft(out / f"frame_{i:05d}.depth.vlft", depth)
        feat_path = out / f"frame_{i:05d}.feat.vlft"
        write_vlft(feat_path, feat)
        written.append(feat_path)

        valid = depth > 0
        if valid.any():
            pc = dirs[valid] * depth[valid][:, None].astype(np.float64)
            pw = pc @ pose[:3, :3].T + pose[:3, 3]
            pts_min = np.minimum(pts_min, pw.min(axis=0))
            pts_max = np.maximum(pts_max, pw.max(axis=0))
            ray = depth[valid] * np.linalg.norm(dirs[valid], axis=1)
            max_ray = max(max_ray, float(ray.max()))
            min_depth = min(min_depth, float(depth[valid].min()))
        pts_min = np.minimum(pts_min, pose[:3, 3])
        pts_max = np.maximum(pts_max, pose[:3, 3])

    if not np.all(np.isfinite(pts_min)):
        raise ExtractError("no valid depth anywhere in the capture")
    near = max(1e-3, 0.05 * min_depth)
    far = 1.05 * max_ray
    write_dataset_sidecars(out, intr_out, poses, near, far,
                           pts_min - 1e-3, pts_max + 1e-3)
    return written


def encode_labels(names, out_path, backend="hashed", model_dir=None, seed=0):
    """Write labels.tsv with one 512-d embedding per label name."""
    names = list(names)
    if not names:
        raise ExtractError("no label names given")
    if len(set(names)) != len(names):
        raise ExtractError("duplicate label names")
    be = make_backend(backend, model_dir, seed=seed)
    emb = be.text_embeddings(names)
    if emb.shape != (len(names), EMBED_DIM):
        raise ExtractError(f"backend produced {emb.shape}, expected {(len(names), EMBED_DIM)}")
    write_labels_tsv(out_path, names, emb)
    return out_path
