"""Binary field dumps and checkpoint manifests.

Each dump is a 64-byte header followed by little-endian float64 samples with
x1 varying fastest. The header packs the magic ``b"SFLB"``, a format version,
the three mode counts and the three box lengths; surface fields are written
with ``N3 = 1``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid

MAGIC = b"SFLB"
VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<4sI3q3d")


def write_field(path: str | Path, f: np.ndarray, grid: Grid) -> None:
    f = np.asarray(f, dtype=np.float64)
    if f.shape == grid.shape:
        n3 = grid.N3
    elif f.shape == grid.surface_shape:
        n3 = 1
    else:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    head = _HEADER.pack(MAGIC, VERSION, grid.N1, grid.N2, n3, grid.L1, grid.L2, grid.b)
    head = head.ljust(HEADER_SIZE, b"\0")
    data = f.reshape(grid.N1, grid.N2, n3).ravel(order="F").astype("<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes())


def read_field(path: str | Path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    magic, version, n1, n2, n3, L1, L2, b = _HEADER.unpack(raw[: _HEADER.size])
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    data = np.frombuffer(raw[HEADER_SIZE:], dtype="<f8")
    if data.size != n1 * n2 * n3:
        raise ValueError(f"{path}: expected {n1 * n2 * n3} samples, found {data.size}")
    f = data.reshape((n1, n2, n3), order="F").copy()
    if n3 == 1:
        f = f[:, :, 0]
    return f, {"N1": n1, "N2": n2, "N3": n3, "L1": L1, "L2": L2, "b": b}


class CheckpointWriter:
    """Observer that dumps (u, p, eta) at each call and keeps a JSON manifest."""

    def __init__(self, directory: str | Path, grid: Grid):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.grid = grid
        self.entries: list[dict] = []

    def __call__(self, state, step_index: int) -> None:
        stem = f"snap{step_index:07d}"
        files = {}
        for name, arr in (("u1", state.u[0]), ("u2", state.u[1]), ("u3", state.u[2]),
                          ("p", state.p), ("eta", state.eta)):
            fname = f"{stem}_{name}.sflb"
            write_field(self.directory / fname, arr, self.grid)
            files[name] = fname
        self.entries.append({"step": step_index, "t": state.t, "files": files})
        self._write_manifest()

    def _write_manifest(self) -> None:
        g = self.grid
        manifest = {
            "format": "SFLB",
            "version": VERSION,
            "grid": {"L1": g.L1, "L2": g.L2, "b": g.b, "N1": g.N1, "N2": g.N2, "N3": g.N3},
            "snapshots": self.entries,
        }
        (self.directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
