"""Flat key-value run configuration.

Sources merge with precedence: command line (--set key=value) > config file
(key = value lines, '#' comments) > built-in defaults. Unknown keys are
rejected so typos fail loudly.
"""

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .field import FieldConfig, MlpConfig
from .hashgrid import HashGridConfig
from .training import LossWeights, TrainConfig


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


# key -> (default, type, help)
DEFAULTS = {
    "hash.levels": (18, int, "hash encoding levels"),
    "hash.features": (8, int, "features per table entry"),
    "hash.table_log2": (19, int, "log2 of table entries per level"),
    "hash.base_res": (16, int, "coarsest grid resolution"),
    "hash.finest_res": (512, int, "finest grid resolution"),
    "mlp.trunk_layers": (2, int, "trunk layer count"),
    "mlp.trunk_width": (512, int, "trunk layer width"),
    "mlp.feature_dim": (512, int, "feature head output dimension"),
    "train.rays": (2048, int, "rays per iteration"),
    "train.iters": (1000, int, "training iterations"),
    "train.samples": (128, int, "samples per ray"),
    "train.lr": (1e-3, float, "learning rate for MLP and heads"),
    "train.lr_grid": (1e-2, float, "learning rate for hash tables"),
    "train.beta1": (0.9, float, "first moment decay"),
    "train.beta2": (0.99, float, "second moment decay"),
    "train.eps": (1e-15, float, "optimizer epsilon"),
    "train.seed": (0, int, "global seed"),
    "train.ckpt_every": (0, int, "checkpoint period in iterations (0 = final only)"),
    "train.deterministic": (True, _bool, "fixed-order reductions, batch-invariant"),
    "loss.w_p": (1.0, float, "photometric weight"),
    "loss.w_g": (0.8, float, "geometric weight"),
    "loss.w_vl": (0.8, float, "visual-language weight"),
    "loss.detach_vl_density": (False, _bool, "stop feature-loss gradients into density"),
    "render.near": (0.0, float, "near bound override (0 = dataset value)"),
    "render.far": (0.0, float, "far bound override (0 = dataset value)"),
    "data.dir": ("", str, "dataset directory"),
    "out.dir": ("", str, "output directory"),
}


class RunConfig:
    def __init__(self, values=None):
        self._values = {k: v for k, (v, _, _) in DEFAULTS.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ValidationError(f"unknown configuration key {key!r}")
        _, conv, _ = DEFAULTS[key]
        try:
            self._values[key] = conv(value) if isinstance(value, str) else conv(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {key}: {value!r} ({exc})") from exc

    def __getitem__(self, key):
        if key not in DEFAULTS:
            raise ValidationError(f"unknown configuration key {key!r}")
        return self._values[key]

    def update_from_file(self, path):
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"missing config file: {path}")
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            self.set(key, value)

    def update_from_pairs(self, pairs):
        for pair in pairs or []:
            if "=" not in pair:
                raise ValidationError(f"--set needs key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            self.set(key.strip(), value.strip())

    def field_config(self, bound):
        grid = HashGridConfig(
            bound=bound,
            levels=self["hash.levels"],
            features=self["hash.features"],
            table_log2=self["hash.table_log2"],
            base_res=self["hash.base_res"],
            finest_res=self["hash.finest_res"],
        )
        mlp = MlpConfig(
            trunk_layers=self["mlp.trunk_layers"],
            trunk_width=self["mlp.trunk_width"],
            feature_dim=self["mlp.feature_dim"],
        )
        return FieldConfig(grid=grid, mlp=mlp)

    def train_config(self):
        return TrainConfig(
            rays_per_iter=self["train.rays"],
            iterations=self["train.iters"],
            samples_per_ray=self["train.samples"],
            lr=self["train.lr"],
            lr_grid=self["train.lr_grid"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            eps=self["train.eps"],
            seed=self["train.seed"],
            ckpt_every=self["train.ckpt_every"],
            deterministic=self["train.deterministic"],
            detach_vl_density=self["loss.detach_vl_density"],
        )

    def loss_weights(self):
        return LossWeights(w_p=self["loss.w_p"], w_g=self["loss.w_g"], w_vl=self["loss.w_vl"])

    def near_far(self, dataset):
        near = self["render.near"] or dataset.near
        far = self["render.far"] or dataset.far
        return near, far


def load_run_config(config_path=None, overrides=None):
    cfg = RunConfig()
    if config_path:
        cfg.update_from_file(config_path)
    cfg.update_from_pairs(overrides)
    return cfg
