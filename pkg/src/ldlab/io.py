"""On-disk artifacts: snapshot container, checkpoints, and JSON reports.

A snapshot is a pair  <name>.json + <name>.bin : the header records grid
dimensions, face coordinates, the layer configuration, the transition width,
background width, model tag, time, format version, and endianness; the
payload is the flat IEEE-754 float64 field in (z-fastest, then x, then y)
order. A checkpoint adds the RNG state and step counter.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .domain import Grid, LayerConfig

FORMAT_VERSION = 1

__all__ = ["write_snapshot", "read_snapshot", "write_checkpoint", "read_checkpoint",
           "write_json", "read_json"]


def _header(psi: np.ndarray, grid: Grid, cfg: LayerConfig | None, meta: dict) -> dict:
    head = {
        "format_version": FORMAT_VERSION,
        "endianness": sys.byteorder,
        "dtype": "float64",
        "order": "z-fastest,then-x,then-y",
        "nx": grid.nx, "ny": grid.ny, "nz": grid.nz,
        "L": grid.L, "H": grid.H,
        "zfaces": [float(z) for z in grid.zf],
    }
    if cfg is not None:
        head["layers"] = {
            "interfaces": list(cfg.interfaces), "K": list(cfg.K), "D": list(cfg.D),
            "c_top": cfg.c_top, "c_bottom": cfg.c_bottom,
        }
    head.update(meta)
    return head


def write_snapshot(directory, name: str, psi: np.ndarray, grid: Grid,
                   cfg: LayerConfig | None = None, **meta) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    head = _header(psi, grid, cfg, meta)
    payload = np.ascontiguousarray(psi.transpose(1, 0, 2), dtype="<f8")
    (directory / f"{name}.bin").write_bytes(payload.tobytes())
    with open(directory / f"{name}.json", "w") as f:
        json.dump(head, f, indent=1, sort_keys=True)
        f.write("\n")
    return directory / f"{name}.json"


def read_snapshot(directory, name: str):
    directory = Path(directory)
    with open(directory / f"{name}.json") as f:
        head = json.load(f)
    if head["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot format {head['format_version']}")
    raw = np.frombuffer((directory / f"{name}.bin").read_bytes(), dtype="<f8")
    nx, ny, nz = head["nx"], head["ny"], head["nz"]
    psi = raw.reshape(ny, nx, nz).transpose(1, 0, 2).copy()
    return psi, head


def snapshot_grid(head: dict) -> Grid:
    return Grid(L=head["L"], H=head["H"], nx=head["nx"], ny=head["ny"],
                zf=np.asarray(head["zfaces"]))


def snapshot_layer_config(head: dict) -> LayerConfig:
    lay = head["layers"]
    from .domain import build_layer_config
    return build_layer_config(head["L"], head["H"], lay["interfaces"], lay["K"],
                              lay["D"], lay["c_top"], lay["c_bottom"])


def write_checkpoint(directory, name: str, psi: np.ndarray, grid: Grid,
                     rng: np.random.Generator | None, step: int,
                     cfg: LayerConfig | None = None, **meta) -> Path:
    state = rng.bit_generator.state if rng is not None else None
    return write_snapshot(directory, name, psi, grid, cfg=cfg, step=step,
                          rng_state=state, kind="checkpoint", **meta)


def read_checkpoint(directory, name: str):
    psi, head = read_snapshot(directory, name)
    rng = None
    if head.get("rng_state") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = head["rng_state"]
    return psi, head, rng, head.get("step", 0)


class _NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.bool_,)):
            return bool(obj)
        return super().default(obj)


def write_json(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True, cls=_NumpyEncoder)
        f.write("\n")


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)
