import numpy as np
import pytest
from PIL import Image


@pytest.fixture()
def mini_capture(tmp_path):
    """3-frame native capture: 40x30 color PNGs, 16-bit depth PNGs, poses."""
    src = tmp_path / "capture"
    src.mkdir()
    rng = np.random.default_rng(0)
    w, h = 40, 30
    src.joinpath("intrinsics.txt").write_text(f"35.0 35.0 {w/2} {h/2} {w} {h}\n")
    poses = []
    for i in range(3):
        ang = 0.3 * i
        c, s = np.cos(ang), np.sin(ang)
        pose = np.array([
            [c, 0.0, s, 0.2 * i],
            [0.0, 1.0, 0.0, 0.0],
            [-s, 0.0, c, 0.1],
            [0.0, 0.0, 0.0, 1.0],
        ])
        poses.append(" ".join(repr(float(v)) for v in pose.ravel()))
        rgb = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        Image.fromarray(rgb).save(src / f"color_{i:05d}.png")
        depth_m = rng.uniform(0.8, 2.5, (h, w)).astype(np.float32)
        depth_m[0, :2] = 0.0  # sensor holes
        depth_mm = np.round(depth_m * 1000).astype(np.uint16)
        Image.fromarray(depth_mm, mode="I;16").save(src / f"depth_{i:05d}.png")
    src.joinpath("poses.txt").write_text("\n".join(poses) + "\n")
    return src
