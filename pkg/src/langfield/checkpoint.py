"""VLFC checkpoint container.

Layout: magic ``VLFC``, u8 version (1), u32 little-endian header length, then
a UTF-8 key=value header (model config, scene bound, iteration, optimizer
step), then tensors in a fixed documented order, each encoded as in VLFT:
u8 dtype code (1 = f32), u8 ndim, ndim x u32 shape, row-major payload.

Tensor order: every entry of FieldParams.named_arrays(), then (when optimizer
state is present) the Adam first moments in the same order, then the second
moments. Loading rejects checkpoints whose config mismatches the caller's.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .field import FieldConfig, FieldParams, MlpConfig
from .formats import write_floats_line
from .geometry import Box
from .hashgrid import HashGridConfig, HashGridParams

VLFC_MAGIC = b"VLFC"
VLFC_VERSION = 1


def _pack_tensor(arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype != np.float32:
        raise FormatError(f"checkpoints store float32 tensors, got {arr.dtype}")
    head = struct.pack(f"<BB{arr.ndim}I", 1, arr.ndim, *arr.shape)
    return head + arr.astype("<f4", copy=False).tobytes()


def _unpack_tensor(buf, offset, path):
    if offset + 2 > len(buf):
        raise FormatError(f"{path}: truncated tensor header")
    code, ndim = buf[offset], buf[offset + 1]
    if code != 1:
        raise FormatError(f"{path}: unknown tensor dtype code {code}")
    offset += 2
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    end = offset + 4 * count
    if end > len(buf):
        raise FormatError(f"{path}: truncated tensor payload")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    return arr, end


def _header_text(field_cfg, iteration, adam_step, has_adam):
    g, m = field_cfg.grid, field_cfg.mlp
    lines = [
        f"hash.levels={g.levels}",
        f"hash.features={g.features}",
        f"hash.table_log2={g.table_log2}",
        f"hash.base_res={g.base_res}",
        f"hash.finest_res={g.finest_res}",
        f"bound={write_floats_line(np.concatenate([g.bound.lo, g.bound.hi]))}",
        f"mlp.trunk_layers={m.trunk_layers}",
        f"mlp.trunk_width={m.trunk_width}",
        f"mlp.feature_dim={m.feature_dim}",
        f"iteration={iteration}",
        f"adam_step={adam_step}",
        f"has_adam={int(has_adam)}",
    ]
    return "\n".join(lines) + "\n"


def save_checkpoint(path, field_cfg, params, adam=None, iteration=0):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header_text(
        field_cfg, iteration, adam.step_count if adam is not None else 0, adam is not None
    ).encode()
    chunks = [VLFC_MAGIC, bytes([VLFC_VERSION]), struct.pack("<I", len(header)), header]
    names = [name for name, _ in params.named_arrays()]
    for _, arr in params.named_arrays():
        chunks.append(_pack_tensor(arr))
    if adam is not None:
        for name in names:
            chunks.append(_pack_tensor(adam.m[name]))
        for name in names:
            chunks.append(_pack_tensor(adam.v[name]))
    path.write_bytes(b"".join(chunks))


def _parse_header(text, path):
    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}: bad header line {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def load_checkpoint(path, expect_cfg=None):
    """Load a checkpoint; returns (field_cfg, params, adam_state_dict, iteration).

    adam_state_dict is None when the file has no optimizer state, else
    {"m": {...}, "v": {...}, "step": int}.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing checkpoint: {path}")
    buf = path.read_bytes()
    if len(buf) < 9 or buf[:4] != VLFC_MAGIC:
        raise FormatError(f"{path}: not a VLFC checkpoint")
    if buf[4] != VLFC_VERSION:
        raise FormatError(f"{path}: unsupported VLFC version {buf[4]}")
    (hlen,) = struct.unpack_from("<I", buf, 5)
    header = _parse_header(buf[9 : 9 + hlen].decode(), path)
    try:
        bound_vals = [float(v) for v in header["bound"].split()]
        grid_cfg = HashGridConfig(
            bound=Box(lo=bound_vals[:3], hi=bound_vals[3:]),
            levels=int(header["hash.levels"]),
            features=int(header["hash.features"]),
            table_log2=int(header["hash.table_log2"]),
            base_res=int(header["hash.base_res"]),
            finest_res=int(header["hash.finest_res"]),
        )
        mlp_cfg = MlpConfig(
            trunk_layers=int(header["mlp.trunk_layers"]),
            trunk_width=int(header["mlp.trunk_width"]),
            feature_dim=int(header["mlp.feature_dim"]),
        )
        iteration = int(header["iteration"])
        adam_step = int(header["adam_step"])
        has_adam = bool(int(header["has_adam"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    field_cfg = FieldConfig(grid=grid_cfg, mlp=mlp_cfg)

    if expect_cfg is not None and expect_cfg != field_cfg:
        raise FormatError(
            f"{path}: checkpoint config does not match the requested configuration"
        )

    offset = 9 + hlen
    tables, offset = _unpack_tensor(buf, offset, path)
    trunk_w, trunk_b = [], []
    for _ in range(mlp_cfg.trunk_layers):
        w, offset = _unpack_tensor(buf, offset, path)
        b, offset = _unpack_tensor(buf, offset, path)
        trunk_w.append(w)
        trunk_b.append(b)
    geo_w, offset = _unpack_tensor(buf, offset, path)
    geo_b, offset = _unpack_tensor(buf, offset, path)
    feat_w, offset = _unpack_tensor(buf, offset, path)
    feat_b, offset = _unpack_tensor(buf, offset, path)
    params = FieldParams(
        grid=HashGridParams(tables=tables),
        trunk_w=trunk_w,
        trunk_b=trunk_b,
        geo_w=geo_w,
        geo_b=geo_b,
        feat_w=feat_w,
        feat_b=feat_b,
    )

    adam_state = None
    if has_adam:
        names = [name for name, _ in params.named_arrays()]
        m, v = {}, {}
        for name in names:
            m[name], offset = _unpack_tensor(buf, offset, path)
        for name in names:
            v[name], offset = _unpack_tensor(buf, offset, path)
        adam_state = {"m": m, "v": v, "step": adam_step}
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after tensors")
    return field_cfg, params, adam_state, iteration


def restore_train_state(path, train_cfg, expect_cfg=None):
    """Rebuild a TrainState (params + Adam moments + iteration) for resuming."""
    from .training import AdamState, TrainState

    field_cfg, params, adam_state, iteration = load_checkpoint(path, expect_cfg)
    adam = AdamState(params, train_cfg)
    if adam_state is not None:
        adam.m = adam_state["m"]
        adam.v = adam_state["v"]
        adam.step_count = adam_state["step"]
    return field_cfg, TrainState(params=params, adam=adam, iteration=iteration)
