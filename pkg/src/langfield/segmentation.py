"""Open-vocabulary classification of rendered feature maps and mIoU metrics.

Classification is argmax of the raw dot product between the per-pixel feature
and each catalog embedding (cosine available behind a flag, off by default);
ties break to the lowest label index.
"""

from dataclasses import dataclass

import numpy as np

from . import render
from .errors import ValidationError
from .formats import read_labels_tsv, write_labels_tsv


@dataclass
class LabelCatalog:
    names: list[str]
    embeddings: np.ndarray  # (K, D) float64

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.names) != self.embeddings.shape[0]:
            raise ValidationError("catalog names and embeddings differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("catalog label names must be unique")

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def save(self, path):
        write_labels_tsv(path, self.names, self.embeddings)

    @classmethod
    def load(cls, path):
        names, emb = read_labels_tsv(path)
        return cls(names=names, embeddings=emb)


def classify_features(feature_map, catalog, cosine=False):
    """Per-pixel argmax over label embeddings of <feature, embedding_k>."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    if fmap.shape[-1] != catalog.dim:
        raise ValueError(
            f"feature dim {fmap.shape[-1]} != catalog dim {catalog.dim}"
        )
    emb = catalog.embeddings
    if cosine:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        emb = emb / np.where(norms > 0, norms, 1.0)
    scores = fmap @ emb.T
    # np.argmax returns the first maximum: lowest label index on ties
    return np.argmax(scores, axis=-1)


def render_feature_map(cfg, params, pose, intrinsics, near, far, n_samples, seed,
                       catalog=None, deterministic=True):
    """Render the per-pixel feature map for a view; with a catalog, also the
    class map."""
    maps = render.render_view(
        cfg, params, pose, intrinsics, near, far, n_samples, seed,
        deterministic=deterministic,
    )
    if catalog is None:
        return maps["feature"]
    return maps["feature"], classify_features(maps["feature"], catalog)


@dataclass
class SegMetrics:
    confusion: np.ndarray  # (K,K) int64, rows = truth, cols = prediction
    iou_per_class: np.ndarray  # (K,), NaN for classes absent from truth and pred
    miou_class_mean: float
    miou_freq_weighted: float
    pixel_accuracy: float

    @property
    def present_classes(self):
        return np.flatnonzero(~np.isnan(self.iou_per_class))


def _confusion(preds, truths, k):
    conf = np.zeros((k, k), dtype=np.int64)
    for pred, truth in zip(preds, truths):
        # class maps may arrive as f32 tensors holding integral values
        pred = np.rint(np.asarray(pred)).astype(np.int64).ravel()
        truth = np.rint(np.asarray(truth)).astype(np.int64).ravel()
        if pred.shape != truth.shape:
            raise ValueError("prediction and truth shapes differ")
        if pred.min() < 0 or pred.max() >= k or truth.min() < 0 or truth.max() >= k:
            raise ValueError(f"class ids must lie in [0,{k})")
        conf += np.bincount(truth * k + pred, minlength=k * k).reshape(k, k)
    return conf


def compute_metrics(pred, truth, k):
    """Aggregate confusion over one or more views and derive the three
    segmentation summary metrics.

    iou_k = TP/(TP+FP+FN); class-mean mIoU averages IoU over classes present
    in truth or prediction; frequency-weighted mIoU weights IoU_k by the
    class's share of truth pixels; pixel accuracy is trace/total.
    """
    preds = pred if isinstance(pred, (list, tuple)) else [pred]
    truths = truth if isinstance(truth, (list, tuple)) else [truth]
    if len(preds) != len(truths):
        raise ValueError("need the same number of prediction and truth maps")
    conf = _confusion(preds, truths, k)

    tp = np.diag(conf).astype(np.float64)
    fn = conf.sum(axis=1) - tp  # truth pixels predicted as something else
    fp = conf.sum(axis=0) - tp
    union = tp + fp + fn
    present = union > 0
    iou = np.full(k, np.nan)
    iou[present] = tp[present] / union[present]

    total = conf.sum()
    truth_share = conf.sum(axis=1) / total
    miou_class_mean = float(np.mean(iou[present])) if present.any() else 0.0
    miou_freq_weighted = float(np.nansum(truth_share[present] * iou[present]))
    pixel_accuracy = float(tp.sum() / total)
    return SegMetrics(
        confusion=conf,
        iou_per_class=iou,
        miou_class_mean=miou_class_mean,
        miou_freq_weighted=miou_freq_weighted,
        pixel_accuracy=pixel_accuracy,
    )


def query_heatmap(feature_map, query_embedding):
    """Per-pixel dot product with one embedding, min-max normalized to [0,1].

    Returns (heatmap, is_flat). A zero-range score map yields all zeros with
    is_flat = True.
    """
    fmap = np.asarray(feature_map, dtype=np.float64)
    q = np.asarray(query_embedding, dtype=np.float64)
    if fmap.shape[-1] != q.shape[0]:
        raise ValueError(f"feature dim {fmap.shape[-1]} != query dim {q.shape[0]}")
    scores = fmap @ q
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo == 0.0:
        return np.zeros(scores.shape), True
    return (scores - lo) / (hi - lo), False
