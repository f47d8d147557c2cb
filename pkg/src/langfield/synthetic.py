"""Analytic scenes with exact ground truth: spheres and axis-aligned boxes
inside a closed room, flat-shaded with a fixed light so targets are
view-independent. Used to generate fully self-contained datasets (RGB, depth,
features, labels, class maps) and as the rendering oracle in tests.

Scene spec file (key = value, same syntax as the run config):
    room = x0 y0 z0 x1 y1 z1
    room.color = r g b
    room.class = 0
    prim.0 = sphere cx cy cz radius color r g b class 1
    prim.1 = box x0 y0 z0 x1 y1 z1 color r g b class 2
    feature_dim = 16
    seed = 7
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .formats import write_vlft
from .geometry import Box, CameraIntrinsics, Dataset, Frame, Pose, save_dataset
from .segmentation import LabelCatalog

LIGHT_DIR = np.array([0.32, -0.45, 0.83])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.4
DIFFUSE = 0.6


@dataclass(frozen=True)
class SpherePrim:
    center: np.ndarray
    radius: float
    color: np.ndarray
    cls: int


@dataclass(frozen=True)
class BoxPrim:
    lo: np.ndarray
    hi: np.ndarray
    color: np.ndarray
    cls: int


@dataclass
class SceneSpec:
    room: Box
    wall_color: np.ndarray
    wall_class: int
    primitives: list = field(default_factory=list)
    feature_dim: int = 16
    seed: int = 0

    @property
    def num_classes(self):
        ids = {self.wall_class} | {p.cls for p in self.primitives}
        k = len(ids)
        if ids != set(range(k)):
            raise ValidationError(f"class ids must be dense in [0,K), got {sorted(ids)}")
        return k


def default_scene(feature_dim=16, seed=0):
    """Four primitives + walls (5 classes) in a 4 x 4 x 2.5 m room. Primitive
    extents stay inside the camera orbit (see orbit_poses)."""
    return SceneSpec(
        room=Box(lo=[-2.0, -2.0, 0.0], hi=[2.0, 2.0, 2.5]),
        wall_color=np.array([0.72, 0.70, 0.66]),
        wall_class=0,
        primitives=[
            SpherePrim(np.array([-0.7, -0.6, 0.5]), 0.45, np.array([0.85, 0.15, 0.12]), 1),
            SpherePrim(np.array([0.7, 0.8, 0.4]), 0.35, np.array([0.12, 0.25, 0.85]), 2),
            BoxPrim(np.array([0.15, -1.1, 0.0]), np.array([0.95, -0.35, 0.7]),
                    np.array([0.1, 0.7, 0.2]), 3),
            BoxPrim(np.array([-1.05, 0.4, 0.0]), np.array([-0.45, 1.0, 0.9]),
                    np.array([0.9, 0.75, 0.1]), 4),
        ],
        feature_dim=feature_dim,
        seed=seed,
    )


def make_catalog(spec):
    """Mutually near-orthogonal random unit embeddings, one per class."""
    k = spec.num_classes
    rng = np.random.default_rng(spec.seed + 1000)
    vectors = []
    attempts = 0
    while len(vectors) < k:
        v = rng.standard_normal(spec.feature_dim)
        v /= np.linalg.norm(v)
        if all(abs(np.dot(v, u)) <= 0.2 for u in vectors):
            vectors.append(v)
        attempts += 1
        if attempts > 10000:
            raise ValidationError(
                f"could not draw {k} near-orthogonal vectors in {spec.feature_dim}-d"
            )
    names = [f"class_{i}" for i in range(k)]
    return LabelCatalog(names=names, embeddings=np.stack(vectors))


# ---------------------------------------------------------------------------
# exact intersections (all shapes (B,) over rays)


def _sphere_hits(origins, dirs, prim):
    oc = origins - prim.center
    b = 2.0 * np.einsum("bi,bi->b", dirs, oc)
    c = np.einsum("bi,bi->b", oc, oc) - prim.radius**2
    disc = b * b - 4.0 * c  # a = 1 for unit directions
    t = np.full(origins.shape[0], np.inf)
    hit = disc > 0
    if np.any(hit):
        sq = np.sqrt(disc[hit])
        t0 = (-b[hit] - sq) / 2.0
        t1 = (-b[hit] + sq) / 2.0
        tt = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        t[hit] = tt
    return t


def _box_hits(origins, dirs, lo, hi):
    """Entry distance for rays starting outside, exit for rays inside."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (lo - origins) * inv
        t_hi = (hi - origins) * inv
    t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
    t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
    t = np.where((t_near <= t_far) & (t_far > 1e-9), np.where(t_near > 1e-9, t_near, t_far),
                 np.inf)
    return t


def _sphere_normal(points, prim):
    n = points - prim.center
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _box_normal(points, lo, hi, inward=False):
    """Outward face normal of the closest face at each surface point."""
    d_lo = np.abs(points - lo)
    d_hi = np.abs(points - hi)
    dist = np.concatenate([d_lo, d_hi], axis=1)
    face = np.argmin(dist, axis=1)
    normals = np.zeros_like(points)
    axis = face % 3
    sign = np.where(face < 3, -1.0, 1.0)
    normals[np.arange(points.shape[0]), axis] = sign
    return -normals if inward else normals


def _shade(base_color, normals):
    lam = np.clip(normals @ LIGHT_DIR, 0.0, None)
    return np.clip(base_color * (AMBIENT + DIFFUSE * lam)[:, None], 0.0, 1.0)


def intersect_scene(spec, origins, dirs):
    """Nearest primitive hit per ray, walls as fallback (rays start inside the
    room). Returns (t, class_id, rgb) with t the ray distance."""
    b = origins.shape[0]
    best_t = _box_hits(origins, dirs, spec.room.lo, spec.room.hi)
    if np.any(~np.isfinite(best_t)):
        raise ValidationError("ray missed the room box; camera outside the room?")
    pts = origins + best_t[:, None] * dirs
    normals = _box_normal(pts, spec.room.lo, spec.room.hi, inward=True)
    cls = np.full(b, spec.wall_class, dtype=np.int64)
    color = _shade(spec.wall_color, normals)

    for prim in spec.primitives:
        if isinstance(prim, SpherePrim):
            t = _sphere_hits(origins, dirs, prim)
        else:
            t = _box_hits(origins, dirs, prim.lo, prim.hi)
        closer = t < best_t
        if np.any(closer):
            p = origins[closer] + t[closer, None] * dirs[closer]
            if isinstance(prim, SpherePrim):
                n = _sphere_normal(p, prim)
            else:
                n = _box_normal(p, prim.lo, prim.hi)
            best_t[closer] = t[closer]
            cls[closer] = prim.cls
            color[closer] = _shade(prim.color, n)
    return best_t, cls, color


def analytic_render(spec, pose, intrinsics):
    """Exact closed-form render: (rgb HxWx3, plane-depth HxW, class HxW)."""
    from .geometry import frame_rays

    h, w = intrinsics.height, intrinsics.width
    vs, us = np.mgrid[0:h, 0:w]
    origins, dirs, scale = frame_rays(intrinsics, pose, us.ravel(), vs.ravel())
    t, cls, color = intersect_scene(spec, origins, dirs)
    depth_plane = t / scale  # ray distance -> distance along camera z
    return (
        color.reshape(h, w, 3).astype(np.float32),
        depth_plane.reshape(h, w).astype(np.float32),
        cls.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# camera paths and dataset generation


def _look_at(eye, target, up=np.array([0.0, 0.0, 1.0])):
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(-up, fwd)
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nrm
    down = np.cross(fwd, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = fwd
    m[:3, 3] = eye
    return Pose(m)


def _inside_primitive(spec, point):
    for prim in spec.primitives:
        if isinstance(prim, SpherePrim):
            if np.linalg.norm(point - prim.center) <= prim.radius:
                return True
        elif np.all(point >= prim.lo) and np.all(point <= prim.hi):
            return True
    return False


def orbit_poses(spec, count, rng, radius_frac=0.42, jitter=0.06):
    """Jittered orbit around the room center, looking inward."""
    center = (spec.room.lo + spec.room.hi) / 2.0
    span = spec.room.hi - spec.room.lo
    radius = radius_frac * min(span[0], span[1])
    poses = []
    k = 0
    while len(poses) < count:
        ang = 2.0 * np.pi * len(poses) / count + rng.uniform(-0.5, 0.5) / count
        r = radius * (1.0 + jitter * rng.uniform(-1, 1))
        z = center[2] + 0.22 * span[2] * rng.uniform(-1, 1)
        eye = np.array([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang), z])
        target = center + 0.1 * span * rng.uniform(-1, 1, size=3)
        k += 1
        if k > 50 * count:
            raise ValidationError("could not place cameras outside all primitives")
        if _inside_primitive(spec, eye):
            continue
        poses.append(_look_at(eye, target))
    return poses


def _frame_from_pose(spec, pose, intrinsics, catalog):
    rgb, depth, cls = analytic_render(spec, pose, intrinsics)
    feat = catalog.embeddings[cls].astype(np.float32)
    frame = Frame(rgb=rgb, depth=depth, pose=pose, intrinsics=intrinsics, feature=feat)
    return frame, cls


def scene_near_far(spec):
    diag = spec.room.diagonal
    return 0.005 * diag, 1.02 * diag


def scene_bound(spec, pad=1e-3):
    return Box(lo=spec.room.lo - pad, hi=spec.room.hi + pad)


def generate_dataset(spec, n_train, n_test, intrinsics, out_dir=None):
    """Build train/test datasets with exact supervision; optionally write the
    directory layout (train/, test/, labels.tsv, per-view class_%05d.vlft).

    Returns (train_ds, test_ds, catalog, train_class_maps, test_class_maps).
    """
    if n_train < 1 or n_test < 0:
        raise ValidationError("need n_train >= 1 and n_test >= 0")
    catalog = make_catalog(spec)
    rng = np.random.default_rng(spec.seed)
    near, far = scene_near_far(spec)
    bound = scene_bound(spec)

    def build(count):
        frames, class_maps = [], []
        for pose in orbit_poses(spec, count, rng):
            frame, cls = _frame_from_pose(spec, pose, intrinsics, catalog)
            frames.append(frame)
            class_maps.append(cls)
        return Dataset(frames=frames, near=near, far=far, scene_bound=bound), class_maps

    train_ds, train_cls = build(n_train)
    test_ds, test_cls = build(n_test) if n_test else (None, [])

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(train_ds, out / "train")
        for i, cls in enumerate(train_cls):
            write_vlft(out / "train" / f"class_{i:05d}.vlft", cls.astype(np.float32))
        if test_ds is not None:
            save_dataset(test_ds, out / "test")
            for i, cls in enumerate(test_cls):
                write_vlft(out / "test" / f"class_{i:05d}.vlft", cls.astype(np.float32))
        catalog.save(out / "labels.tsv")
    return train_ds, test_ds, catalog, train_cls, test_cls


# ---------------------------------------------------------------------------
# scene spec file parsing


def _parse_prim(value):
    tokens = value.split()
    kind = tokens[0]
    if "color" not in tokens or "class" not in tokens:
        raise ValidationError(f"primitive needs 'color' and 'class': {value!r}")
    ci = tokens.index("color")
    ki = tokens.index("class")
    geom = [float(v) for v in tokens[1:ci]]
    color = np.array([float(v) for v in tokens[ci + 1 : ki]])
    cls = int(tokens[ki + 1])
    if color.shape != (3,):
        raise ValidationError(f"primitive color needs 3 values: {value!r}")
    if kind == "sphere":
        if len(geom) != 4:
            raise ValidationError(f"sphere needs 'cx cy cz r': {value!r}")
        return SpherePrim(np.array(geom[:3]), geom[3], color, cls)
    if kind == "box":
        if len(geom) != 6:
            raise ValidationError(f"box needs 6 corner values: {value!r}")
        return BoxPrim(np.array(geom[:3]), np.array(geom[3:]), color, cls)
    raise ValidationError(f"unknown primitive kind {kind!r}")


def load_scene_spec(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing scene spec: {path}")
    room = None
    wall_color = np.array([0.7, 0.7, 0.7])
    wall_class = 0
    prims = {}
    feature_dim = 16
    seed = 0
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "room":
            vals = [float(v) for v in value.split()]
            if len(vals) != 6:
                raise ValidationError(f"{path}:{lineno}: room needs 6 values")
            room = Box(lo=vals[:3], hi=vals[3:])
        elif key == "room.color":
            wall_color = np.array([float(v) for v in value.split()])
        elif key == "room.class":
            wall_class = int(value)
        elif key.startswith("prim."):
            prims[int(key.split(".", 1)[1])] = _parse_prim(value)
        elif key == "feature_dim":
            feature_dim = int(value)
        elif key == "seed":
            seed = int(value)
        else:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
    if room is None:
        raise ValidationError(f"{path}: missing 'room' entry")
    spec = SceneSpec(
        room=room,
        wall_color=wall_color,
        wall_class=wall_class,
        primitives=[prims[i] for i in sorted(prims)],
        feature_dim=feature_dim,
        seed=seed,
    )
    spec.num_classes  # validates density of class ids
    return spec


def write_scene_spec(spec, path):
    lines = [
        f"room = {' '.join(str(v) for v in np.concatenate([spec.room.lo, spec.room.hi]))}",
        f"room.color = {' '.join(str(v) for v in spec.wall_color)}",
        f"room.class = {spec.wall_class}",
    ]
    for i, prim in enumerate(spec.primitives):
        if isinstance(prim, SpherePrim):
            geom = " ".join(str(v) for v in [*prim.center, prim.radius])
            lines.append(
                f"prim.{i} = sphere {geom} color {' '.join(str(v) for v in prim.color)} "
                f"class {prim.cls}"
            )
        else:
            geom = " ".join(str(v) for v in [*prim.lo, *prim.hi])
            lines.append(
                f"prim.{i} = box {geom} color {' '.join(str(v) for v in prim.color)} "
                f"class {prim.cls}"
            )
    lines += [f"feature_dim = {spec.feature_dim}", f"seed = {spec.seed}"]
    Path(path).write_text("\n".join(lines) + "\n")
