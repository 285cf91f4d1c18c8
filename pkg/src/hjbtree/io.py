"""Binary tree/basis files and CSV outputs.

Tree file (all little-endian)::

    magic      8 bytes  b"HJBTREE\\0"
    version    u32      1
    d          u32      state dimension
    N          u32      number of time steps
    M          u32      number of controls
    m          u32      control dimension
    t0, dt     f64, f64
    epsilon    f64
    controls   M*m f64
    counts     (N+1) u64   nodes per level
    nodes, in global-id order, each:
        level      u32
        parent     i64   (-1 for the root)
        control    i32   (-1 for the root)
        successors M i64 (-1 on the last level)
        state      d f64

Basis file::

    magic      8 bytes  b"HJBPOD\\0\\0"
    version    u32      1
    d, l, k    u32 x 3  (k = 0 without DEIM)
    n_sigma    u32
    Psi        d*l f64  (row-major)
    sigma      n_sigma f64
    Phi        d*k f64
    points     k i64
    projector  l*k f64
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .reduction import DeimOperator, PodBasis
from .stepper import TimeGrid
from .tree import ControlGrid, Level, PruneParams, Tree

TREE_MAGIC = b"HJBTREE\0"
BASIS_MAGIC = b"HJBPOD\0\0"
VERSION = 1

__all__ = [
    "write_tree",
    "read_tree",
    "read_tree_header",
    "write_basis",
    "read_basis",
    "read_basis_header",
    "write_csv",
    "read_csv",
    "fmt",
]


def fmt(x) -> str:
    """Shortest round-trip decimal form."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (int, float, np.number)) else v for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# --- trees ---------------------------------------------------------------------------


def write_tree(tree: Tree, path) -> Path:
    path = Path(path)
    d = tree.dim
    N = len(tree.levels) - 1
    M = tree.controls.count
    m = tree.controls.values.shape[1]
    rec = np.dtype([("level", "<u4"), ("parent", "<i8"), ("control", "<i4"), ("succ", "<i8", (M,)), ("state", "<f8", (d,))])
    with path.open("wb") as fh:
        fh.write(TREE_MAGIC)
        fh.write(struct.pack("<5I3d", VERSION, d, N, M, m, tree.time.t0, tree.time.dt, tree.prune.epsilon))
        fh.write(tree.controls.values.astype("<f8").tobytes())
        fh.write(np.array([len(lv) for lv in tree.levels], dtype="<u8").tobytes())
        for n, lv in enumerate(tree.levels):
            buf = np.zeros(len(lv), dtype=rec)
            buf["level"] = n
            buf["parent"] = lv.parent
            buf["control"] = lv.control
            buf["succ"] = -1 if lv.successors is None else lv.successors
            buf["state"] = lv.states
            fh.write(buf.tobytes())
    return path


def _read_tree_header(fh) -> dict:
    if fh.read(8) != TREE_MAGIC:
        raise ValueError("not a tree file (bad magic)")
    version, d, N, M, m, t0, dt, eps = struct.unpack("<5I3d", fh.read(struct.calcsize("<5I3d")))
    if version != VERSION:
        raise ValueError(f"unsupported tree file version {version}")
    controls = np.frombuffer(fh.read(8 * M * m), dtype="<f8").reshape(M, m)
    counts = np.frombuffer(fh.read(8 * (N + 1)), dtype="<u8").astype(np.int64)
    return {"version": version, "d": d, "N": N, "M": M, "m": m, "t0": t0, "dt": dt, "epsilon": eps,
            "controls": controls, "counts": counts}


def read_tree_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_tree_header(fh)


def read_tree(path) -> Tree:
    with Path(path).open("rb") as fh:
        h = _read_tree_header(fh)
        d, M = h["d"], h["M"]
        rec = np.dtype([("level", "<u4"), ("parent", "<i8"), ("control", "<i4"), ("succ", "<i8", (M,)), ("state", "<f8", (d,))])
        levels = []
        for n, c in enumerate(h["counts"]):
            buf = np.frombuffer(fh.read(rec.itemsize * int(c)), dtype=rec)
            if len(buf) != c or np.any(buf["level"] != n):
                raise ValueError(f"truncated or corrupt tree file at level {n}")
            succ = None if n == h["N"] else buf["succ"].astype(np.int64)
            levels.append(Level(buf["state"].astype(float), buf["parent"].astype(np.int64),
                                buf["control"].astype(np.int64), succ))
    tg = TimeGrid(h["t0"], h["t0"] + h["N"] * h["dt"], h["dt"])
    return Tree(levels, ControlGrid(h["controls"]), tg, PruneParams(h["epsilon"]))


# --- bases ---------------------------------------------------------------------------


def write_basis(basis: PodBasis, path, deim: DeimOperator | None = None) -> Path:
    path = Path(path)
    Psi = basis.basis
    d, ell = Psi.shape
    k = 0 if deim is None else deim.k
    sigma = np.asarray(basis.singular_values)
    with path.open("wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<5I", VERSION, d, ell, k, len(sigma)))
        fh.write(Psi.astype("<f8").tobytes())
        fh.write(sigma.astype("<f8").tobytes())
        if deim is not None:
            fh.write(deim.nl_basis.astype("<f8").tobytes())
            fh.write(deim.points.astype("<i8").tobytes())
            fh.write(deim.projector.astype("<f8").tobytes())
    return path


def _read_basis_header(fh) -> dict:
    if fh.read(8) != BASIS_MAGIC:
        raise ValueError("not a basis file (bad magic)")
    version, d, ell, k, ns = struct.unpack("<5I", fh.read(20))
    if version != VERSION:
        raise ValueError(f"unsupported basis file version {version}")
    return {"version": version, "d": d, "l": ell, "k": k, "n_sigma": ns}


def read_basis_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_basis_header(fh)


def read_basis(path) -> tuple[PodBasis, DeimOperator | None]:
    with Path(path).open("rb") as fh:
        h = _read_basis_header(fh)
        d, ell, k = h["d"], h["l"], h["k"]
        Psi = np.frombuffer(fh.read(8 * d * ell), dtype="<f8").reshape(d, ell).copy()
        sigma = np.frombuffer(fh.read(8 * h["n_sigma"]), dtype="<f8").copy()
        basis = PodBasis(Psi, sigma)
        deim = None
        if k:
            Phi = np.frombuffer(fh.read(8 * d * k), dtype="<f8").reshape(d, k).copy()
            pts = np.frombuffer(fh.read(8 * k), dtype="<i8").astype(np.int64)
            proj = np.frombuffer(fh.read(8 * ell * k), dtype="<f8").reshape(ell, k).copy()
            deim = DeimOperator(Phi, pts, proj, np.ascontiguousarray(Psi[pts]),
                                float(np.linalg.norm(np.linalg.inv(Phi[pts]), 2)))
    return basis, deim
