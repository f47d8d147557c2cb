"""Posed RGB-D dataset model, dataset directory I/O, rays, and batch sampling.

Conventions (fixed across the package):
  - camera looks along +z; pixel (u, v) casts through its center (u+0.5, v+0.5)
  - stored depth is plane depth (distance along the camera z-axis); distance
    along the ray is plane_depth * norm((u',v',1)) with u' = (u+0.5-cx)/fx
  - invalid depth is encoded as 0 and flagged, never interpolated

Dataset directory layout:
  intrinsics.txt   "fx fy cx cy width height"
  poses.txt        one line per frame, 16 row-major floats (camera-to-world)
  bounds.txt       line 1 "near far", line 2 "x0 y0 z0 x1 y1 z1" (scene box)
  frame_%05d.rgb.vlft / .depth.vlft / optional .feat.vlft
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .formats import read_vlft, write_floats_line, write_vlft

ORTHO_TOL = 1e-6
UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box, inclusive of its boundary."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        if not np.all(self.hi > self.lo):
            raise ValidationError(f"degenerate box: lo={self.lo}, hi={self.hi}")

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def contains(self, points, atol=0.0):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lo - atol) & (pts <= self.hi + atol), axis=1)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive: {self}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"principal point outside image: {self}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image dimensions must be positive: {self}")


@dataclass(frozen=True)
class Pose:
    """4x4 camera-to-world rigid transform."""

    transform: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.transform, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValidationError(f"pose must be 4x4, got {m.shape}")
        object.__setattr__(self, "transform", m)
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValidationError("pose rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValidationError("pose rotation has det != 1 (reflection?)")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError("pose bottom row must be exactly [0,0,0,1]")

    @property
    def rotation(self):
        return self.transform[:3, :3]

    @property
    def translation(self):
        return self.transform[:3, 3]


@dataclass
class Frame:
    """One posed RGB-D observation with an optional per-pixel feature map."""

    rgb: np.ndarray  # HxWx3 float32 in [0,1]
    depth: np.ndarray  # HxW float32 meters, 0 = invalid
    pose: Pose
    intrinsics: CameraIntrinsics
    feature: np.ndarray | None = None  # HxWxD float32

    def validate(self, index):
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.rgb.shape != (h, w, 3):
            raise ValidationError(f"frame {index}: rgb shape {self.rgb.shape} != {(h, w, 3)}")
        if self.depth.shape != (h, w):
            raise ValidationError(f"frame {index}: depth shape {self.depth.shape} != {(h, w)}")
        if self.rgb.min() < 0.0 or self.rgb.max() > 1.0:
            raise ValidationError(f"frame {index}: rgb values outside [0,1]")
        if self.depth.min() < 0.0:
            raise ValidationError(f"frame {index}: negative depth")
        if self.feature is not None and self.feature.shape[:2] != (h, w):
            raise ValidationError(
                f"frame {index}: feature shape {self.feature.shape} mismatches image"
            )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,) world
    direction: np.ndarray  # (3,) unit world
    pixel: tuple[int, int]  # (u, v)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise ValidationError("ray direction must be unit norm")


@dataclass
class Dataset:
    frames: list[Frame]
    near: float
    far: float
    scene_bound: Box

    @property
    def feature_dim(self):
        for f in self.frames:
            if f.feature is not None:
                return f.feature.shape[2]
        return 0

    def validate(self):
        if not self.frames:
            raise ValidationError("dataset has no frames")
        if not (0 <= self.near < self.far):
            raise ValidationError(f"need 0 <= near < far, got {self.near}, {self.far}")
        dims = {f.feature.shape[2] for f in self.frames if f.feature is not None}
        if len(dims) > 1:
            raise ValidationError(f"inconsistent feature dimensions {sorted(dims)}")
        if len({f.intrinsics for f in self.frames}) > 1:
            raise ValidationError("all frames must share one set of intrinsics")
        for i, frame in enumerate(self.frames):
            frame.validate(i)
            origin = frame.pose.translation
            if not self.scene_bound.contains(origin[None, :])[0]:
                raise ValidationError(f"frame {i}: camera origin outside scene bound")
            pts = backproject_frame(frame)
            if pts.size and not np.all(self.scene_bound.contains(pts, atol=1e-6)):
                raise ValidationError(f"frame {i}: depth points outside scene bound")


def _pixel_dirs_cam(intrinsics, us, vs):
    """Unnormalized camera-frame directions through pixel centers, z = 1."""
    x = (us + 0.5 - intrinsics.cx) / intrinsics.fx
    y = (vs + 0.5 - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def ray_scale_factors(intrinsics, us, vs):
    """Per-pixel plane-depth -> ray-distance factor: norm of (x, y, 1)."""
    d = _pixel_dirs_cam(intrinsics, np.asarray(us, np.float64), np.asarray(vs, np.float64))
    return np.linalg.norm(d, axis=-1)


def pixel_to_ray(intrinsics, pose, u, v):
    """World-frame unit ray through the center of pixel (u, v)."""
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise ValueError(f"pixel ({u},{v}) outside {intrinsics.width}x{intrinsics.height}")
    d_cam = _pixel_dirs_cam(intrinsics, np.float64(u), np.float64(v))
    d_world = pose.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(origin=pose.translation.copy(), direction=d_world, pixel=(int(u), int(v)))


def frame_rays(intrinsics, pose, us, vs):
    """Vectorized pixel_to_ray: returns (origins (B,3), unit dirs (B,3), scale (B,))."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d_cam = _pixel_dirs_cam(intrinsics, us, vs)
    scale = np.linalg.norm(d_cam, axis=-1)
    d_world = d_cam @ pose.rotation.T
    d_world /= scale[..., None]
    origins = np.broadcast_to(pose.translation, d_world.shape).copy()
    return origins, d_world, scale


def backproject_frame(frame, stride=1):
    """World points of valid-depth pixels (plane-depth convention)."""
    h, w = frame.depth.shape
    vs, us = np.mgrid[0:h:stride, 0:w:stride]
    us, vs = us.ravel(), vs.ravel()
    z = frame.depth[vs, us].astype(np.float64)
    valid = z > 0
    if not np.any(valid):
        return np.empty((0, 3))
    us, vs, z = us[valid], vs[valid], z[valid]
    d_cam = _pixel_dirs_cam(frame.intrinsics, us.astype(np.float64), vs.astype(np.float64))
    pts_cam = d_cam * z[:, None]
    return pts_cam @ frame.pose.rotation.T + frame.pose.translation


@dataclass
class RayBatch:
    """Sampled training rays with per-ray supervision targets.

    depth targets are in ray-distance units (already converted from the
    stored plane depth); rows with depth_valid False had sensor depth 0.
    """

    origins: np.ndarray  # (B,3)
    dirs: np.ndarray  # (B,3) unit
    frame_idx: np.ndarray  # (B,)
    pixels: np.ndarray  # (B,2) (u,v)
    color: np.ndarray  # (B,3)
    depth: np.ndarray  # (B,) ray distance
    depth_valid: np.ndarray  # (B,) bool
    depth_scale: np.ndarray  # (B,) plane->ray factor
    feature: np.ndarray | None  # (B,D) or None
    feature_valid: np.ndarray  # (B,) bool

    def __len__(self):
        return self.origins.shape[0]


def sample_ray_batch(dataset, batch_size, rng_seed):
    """Uniform (frame, pixel) sampling with replacement, deterministic per seed."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(rng_seed)
    n_frames = len(dataset.frames)
    fidx = rng.integers(0, n_frames, size=batch_size)
    # all frames share intrinsics dimensions after validation
    w = dataset.frames[0].intrinsics.width
    h = dataset.frames[0].intrinsics.height
    us = rng.integers(0, w, size=batch_size)
    vs = rng.integers(0, h, size=batch_size)

    d = dataset.feature_dim
    origins = np.empty((batch_size, 3))
    dirs = np.empty((batch_size, 3))
    scale = np.empty(batch_size)
    color = np.empty((batch_size, 3), dtype=np.float32)
    depth_plane = np.empty(batch_size, dtype=np.float32)
    feature = np.zeros((batch_size, d), dtype=np.float32) if d else None
    feature_valid = np.zeros(batch_size, dtype=bool)

    for k in np.unique(fidx):
        sel = fidx == k
        frame = dataset.frames[k]
        o, dr, sc = frame_rays(frame.intrinsics, frame.pose, us[sel], vs[sel])
        origins[sel], dirs[sel], scale[sel] = o, dr, sc
        color[sel] = frame.rgb[vs[sel], us[sel]]
        depth_plane[sel] = frame.depth[vs[sel], us[sel]]
        if frame.feature is not None:
            feature[sel] = frame.feature[vs[sel], us[sel]]
            feature_valid[sel] = True

    depth_valid = depth_plane > 0
    depth_ray = depth_plane.astype(np.float64) * scale
    return RayBatch(
        origins=origins,
        dirs=dirs,
        frame_idx=fidx,
        pixels=np.stack([us, vs], axis=1),
        color=color,
        depth=depth_ray,
        depth_valid=depth_valid,
        depth_scale=scale,
        feature=feature,
        feature_valid=feature_valid,
    )


# ---------------------------------------------------------------------------
# dataset directory I/O


def save_dataset(dataset, dir_path):
    """Write a dataset directory; round-trips bit-exactly through load_dataset."""
    if not dataset.frames:
        raise ValidationError("refusing to save an empty dataset")
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    intr = dataset.frames[0].intrinsics
    (out / "intrinsics.txt").write_text(
        f"{write_floats_line([intr.fx, intr.fy, intr.cx, intr.cy])} "
        f"{intr.width} {intr.height}\n"
    )
    with open(out / "poses.txt", "w") as fh:
        for frame in dataset.frames:
            fh.write(write_floats_line(frame.pose.transform.ravel()) + "\n")
    bound = dataset.scene_bound
    (out / "bounds.txt").write_text(
        f"{write_floats_line([dataset.near, dataset.far])}\n"
        f"{write_floats_line(np.concatenate([bound.lo, bound.hi]))}\n"
    )
    for i, frame in enumerate(dataset.frames):
        write_vlft(out / f"frame_{i:05d}.rgb.vlft", frame.rgb)
        write_vlft(out / f"frame_{i:05d}.depth.vlft", frame.depth)
        if frame.feature is not None:
            write_vlft(out / f"frame_{i:05d}.feat.vlft", frame.feature)


def _require(path):
    if not path.is_file():
        raise FormatError(f"missing file: {path}")
    return path


def load_dataset(dir_path):
    """Load and fully validate a dataset directory."""
    root = Path(dir_path)
    if not root.is_dir():
        raise FormatError(f"not a directory: {root}")

    tokens = _require(root / "intrinsics.txt").read_text().split()
    if len(tokens) != 6:
        raise FormatError(f"{root/'intrinsics.txt'}: expected 6 values, got {len(tokens)}")
    try:
        fx, fy, cx, cy = (float(t) for t in tokens[:4])
        width, height = int(tokens[4]), int(tokens[5])
    except ValueError as exc:
        raise FormatError(f"{root/'intrinsics.txt'}: {exc}") from exc
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)

    pose_lines = _require(root / "poses.txt").read_text().splitlines()
    poses = []
    for i, line in enumerate(pose_lines):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 16:
            raise FormatError(f"{root/'poses.txt'}: line {i+1} has {len(vals)} values, need 16")
        try:
            m = np.array([float(v) for v in vals]).reshape(4, 4)
        except ValueError as exc:
            raise FormatError(f"{root/'poses.txt'}: line {i+1}: {exc}") from exc
        try:
            poses.append(Pose(m))
        except ValidationError as exc:
            raise ValidationError(f"frame {i}: {exc}") from exc

    bounds_lines = _require(root / "bounds.txt").read_text().splitlines()
    if len(bounds_lines) < 2:
        raise FormatError(f"{root/'bounds.txt'}: expected 2 lines")
    try:
        near, far = (float(v) for v in bounds_lines[0].split())
        box_vals = [float(v) for v in bounds_lines[1].split()]
    except ValueError as exc:
        raise FormatError(f"{root/'bounds.txt'}: {exc}") from exc
    if len(box_vals) != 6:
        raise FormatError(f"{root/'bounds.txt'}: bound line needs 6 values")
    bound = Box(lo=box_vals[:3], hi=box_vals[3:])

    frames = []
    for i in range(len(poses)):
        rgb = read_vlft(_require(root / f"frame_{i:05d}.rgb.vlft"))
        depth = read_vlft(_require(root / f"frame_{i:05d}.depth.vlft"))
        feat_path = root / f"frame_{i:05d}.feat.vlft"
        feat = read_vlft(feat_path) if feat_path.is_file() else None
        frames.append(Frame(rgb=rgb, depth=depth, pose=poses[i], intrinsics=intr, feature=feat))

    ds = Dataset(frames=frames, near=near, far=far, scene_bound=bound)
    ds.validate()
    return ds
