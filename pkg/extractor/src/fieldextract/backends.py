"""Feature and text-embedding backends.

A backend pair turns RGB frames into per-pixel 512-d feature maps and label
names into 512-d embeddings. Two families:

  - clip: real pretrained weights loaded from a local directory (CLIP text
    encoder for labels; per-pixel image features from tiled CLIP patch
    embeddings, bilinearly upsampled - a coarse stand-in for a dense
    language-driven segmentation model when only CLIP is available).
  - hashed: deterministic random-projection features with no model
    dependency. Keeps the pipeline and its tests runnable offline; the
    emitted files are format-identical to the real thing.
"""

import hashlib

import numpy as np

from .formats import ModelLoadError

EMBED_DIM = 512


class HashedProjectionBackend:
    """Deterministic stand-in: fixed random projection of RGB per pixel and a
    name-keyed unit vector per label. Byte-identical across runs."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((4, EMBED_DIM)).astype(np.float32)

    def image_features(self, rgb):
        h, w, _ = rgb.shape
        flat = np.concatenate([rgb.reshape(-1, 3), np.ones((h * w, 1), np.float32)], axis=1)
        feats = flat.astype(np.float32) @ self._proj
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        feats /= np.where(norms > 0, norms, 1.0)
        return feats.reshape(h, w, EMBED_DIM)

    def text_embeddings(self, names):
        out = np.empty((len(names), EMBED_DIM), dtype=np.float64)
        for i, name in enumerate(names):
            digest = hashlib.sha256(name.encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(EMBED_DIM)
            out[i] = v / np.linalg.norm(v)
        return out


class ClipBackend:
    """Pretrained CLIP from a local directory (no downloads).

    Text: the CLIP text encoder, 512-d per label. Images: the image is tiled
    into overlapping square patches, each embedded by the image tower, and
    the patch grid is bilinearly upsampled to per-pixel resolution.
    """

    def __init__(self, model_dir, patch=96, stride=48, device="cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_dir, local_files_only=True)
            self._proc = CLIPProcessor.from_pretrained(model_dir, local_files_only=True)
        except Exception as exc:
            raise ModelLoadError(f"could not load CLIP weights from {model_dir}: {exc}") from exc
        self._torch = torch
        self._model.eval().to(device)
        self._device = device
        self._patch = patch
        self._stride = stride
        if self._model.config.projection_dim != EMBED_DIM:
            raise ModelLoadError(
                f"expected {EMBED_DIM}-d projections, got {self._model.config.projection_dim}"
            )

    def text_embeddings(self, names):
        torch = self._torch
        with torch.no_grad():
            inputs = self._proc(text=list(names), return_tensors="pt", padding=True)
            emb = self._model.get_text_features(**{k: v.to(self._device)
                                                   for k, v in inputs.items()})
        return emb.cpu().numpy().astype(np.float64)

    def image_features(self, rgb):
        torch = self._torch
        h, w, _ = rgb.shape
        ys = list(range(0, max(h - self._patch, 0) + 1, self._stride)) or [0]
        xs = list(range(0, max(w - self._patch, 0) + 1, self._stride)) or [0]
        tiles, centers = [], []
        for y in ys:
            for x in xs:
                tile = rgb[y : y + self._patch, x : x + self._patch]
                tiles.append(np.clip(tile * 255.0, 0, 255).astype(np.uint8))
                centers.append((y + tile.shape[0] / 2, x + tile.shape[1] / 2))
        with torch.no_grad():
            inputs = self._proc(images=tiles, return_tensors="pt")
            emb = self._model.get_image_features(pixel_values=inputs["pixel_values"]
                                                 .to(self._device))
        grid = emb.cpu().numpy().reshape(len(ys), len(xs), EMBED_DIM).astype(np.float32)
        return _upsample_grid(grid, np.array(centers).reshape(len(ys), len(xs), 2), h, w)


def _upsample_grid(grid, centers, h, w):
    """Bilinear upsampling of a patch-center grid to per-pixel resolution."""
    gy = centers[:, 0, 0]
    gx = centers[0, :, 1]
    yi = np.clip(np.searchsorted(gy, np.arange(h) + 0.5) - 1, 0, max(len(gy) - 2, 0))
    xi = np.clip(np.searchsorted(gx, np.arange(w) + 0.5) - 1, 0, max(len(gx) - 2, 0))
    if len(gy) > 1:
        wy = np.clip((np.arange(h) + 0.5 - gy[yi]) / (gy[yi + 1] - gy[yi]), 0, 1)
    else:
        wy = np.zeros(h)
        yi = np.zeros(h, dtype=int)
    if len(gx) > 1:
        wx = np.clip((np.arange(w) + 0.5 - gx[xi]) / (gx[xi + 1] - gx[xi]), 0, 1)
    else:
        wx = np.zeros(w)
        xi = np.zeros(w, dtype=int)
    y1 = np.minimum(yi + 1, len(gy) - 1)
    x1 = np.minimum(xi + 1, len(gx) - 1)
    a = grid[yi[:, None], xi[None, :]]
    b = grid[yi[:, None], x1[None, :]]
    c = grid[y1[:, None], xi[None, :]]
    d = grid[y1[:, None], x1[None, :]]
    wy_ = wy[:, None, None]
    wx_ = wx[None, :, None]
    return ((a * (1 - wx_) + b * wx_) * (1 - wy_) + (c * (1 - wx_) + d * wx_) * wy_).astype(
        np.float32
    )


def make_backend(name, model_dir=None, seed=0):
    if name == "hashed":
        return HashedProjectionBackend(seed=seed)
    if name == "clip":
        if model_dir is None:
            raise ModelLoadError("clip backend needs --model-dir with local weights")
        return ClipBackend(model_dir)
    raise ModelLoadError(f"unknown backend {name!r} (expected 'clip' or 'hashed')")
