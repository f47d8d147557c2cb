"""Shared helpers for the engine test suite."""

import numpy as np

from langfield.field import FieldConfig, MlpConfig
from langfield.hashgrid import HashGridConfig


def tiny_field_config(bound, feature_dim=16, levels=4, features=2, table_log2=10,
                      base_res=4, finest_res=16, width=16, layers=2):
    return FieldConfig(
        grid=HashGridConfig(
            bound=bound, levels=levels, features=features, table_log2=table_log2,
            base_res=base_res, finest_res=finest_res,
        ),
        mlp=MlpConfig(trunk_layers=layers, trunk_width=width, feature_dim=feature_dim),
    )


def rand_rotation(rng):
    """Random proper rotation via QR with positive diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q
