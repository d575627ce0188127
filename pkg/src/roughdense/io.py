"""Plain-text artifacts: CSV tables, JSON sidecars and reports, system files.

Every float is written with ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .density import DensityEstimate, EnvelopeParams, InequalityReport, gaussian_envelope, subgaussian_envelope
from .driver import EnhancedDriver, FbmSample, HurstParam, TimeGrid
from .fields import VectorFieldSystem, builtin_system, check_bracket
from .increments import Increment
from .malliavin import DerivativeProcess
from .solver import SolutionPath

__all__ = [
    "fmt",
    "write_table",
    "read_table",
    "write_json",
    "write_path",
    "read_path",
    "write_level2",
    "write_solution",
    "write_derivative",
    "write_reports",
    "write_plot_data",
    "write_increment",
    "load_system",
]

PathLike = Union[str, Path]


def fmt(x) -> str:
    """Shortest decimal string that round-trips the float (integers stay integers)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if hasattr(obj, "value") and not isinstance(obj, str):
        return obj.value
    return obj


def write_json(path: PathLike, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_table(path: PathLike) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_path(path: PathLike, sample: FbmSample) -> Path:
    """CSV ``t,comp_0,...`` plus a JSON sidecar ``{h, T, m, seed}``."""
    path = Path(path)
    header = ["t"] + [f"comp_{j}" for j in range(sample.dim)]
    write_table(path, header, np.column_stack([sample.times, sample.values.T]))
    meta = {
        "h": None if sample.hurst is None else sample.hurst.h,
        "T": sample.grid.horizon,
        "m": sample.grid.level,
        "seed": sample.seed,
    }
    write_json(_sidecar(path), meta)
    return path


def read_path(path: PathLike) -> FbmSample:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    header, data = read_table(path)
    grid = TimeGrid(int(meta["m"]), float(meta["T"]))
    if not np.allclose(data[:, 0], grid.points, rtol=0, atol=1e-12):
        raise ValueError(f"{path}: time column does not match the level-{meta['m']} grid")
    hurst = None if meta["h"] is None else HurstParam(float(meta["h"]))
    return FbmSample(grid, data[:, 1:].T, hurst, meta["seed"])


def write_level2(path: PathLike, driver: EnhancedDriver, level=None) -> Path:
    """Level-2 cell blocks as ``i,j,k,value``: cell ``i``, components ``j, k``."""
    _, l2 = driver.blocks(driver.level if level is None else level)
    n, d, _ = l2.shape
    cell, j, k = np.meshgrid(np.arange(n), np.arange(d), np.arange(d), indexing="ij")
    rows = zip(cell.ravel(), j.ravel(), k.ravel(), l2.ravel())
    return write_table(path, ["i", "j", "k", "value"], rows)


def write_solution(path: PathLike, solution: SolutionPath) -> Path:
    d = solution.values.shape[1]
    header = ["t"] + [f"x_{a}" for a in range(d)]
    return write_table(path, header, np.column_stack([solution.times, solution.values]))


def write_derivative(path: PathLike, process: DerivativeProcess) -> Path:
    """``s,m_00,m_01,...`` with entries in row-major order."""
    n, d, _ = process.matrices.shape
    header = ["s"] + [f"m_{a}{b}" for a in range(d) for b in range(d)]
    return write_table(path, header, np.column_stack([process.times, process.matrices.reshape(n, d * d)]))


def write_reports(path: PathLike, reports: Sequence[InequalityReport]) -> Path:
    """JSON list of ``{name, lhs, rhs, stderr, params, verdict}``."""
    return write_json(path, [r.to_dict() for r in reports])


def write_plot_data(path: PathLike, density: DensityEstimate, params: EnvelopeParams, hurst, t: float) -> Path:
    """``y,p_hat,band_lo,band_hi,envelope`` per bin; ``y`` is the bin centre's norm."""
    grids = np.meshgrid(*density.centres, indexing="ij")
    y = np.sqrt(sum(g * g for g in grids)).ravel()
    lo, hi = density.bands
    if params.delta is None:
        env = gaussian_envelope(y, params, hurst, t)
    else:
        env = subgaussian_envelope(y, params)
    rows = zip(y, density.density.ravel(), lo.ravel(), hi.ravel(), env)
    return write_table(path, ["y", "p_hat", "band_lo", "band_hi", "envelope"], rows)


def write_increment(path: PathLike, inc: Increment) -> Path:
    """Debug dump ``s,t,value...`` of a rank-2 increment over all grid pairs ``s < t``."""
    if inc.rank != 2:
        raise ValueError("only rank-2 increments can be dumped")
    s, t = np.triu_indices(inc.n_points, k=1)
    vals = np.asarray(inc(s, t)).reshape(len(s), -1)
    header = ["s", "t"] + [f"value_{q}" for q in range(vals.shape[1])]
    return write_table(path, header, np.column_stack([inc.times[s], inc.times[t], vals]))


def load_system(path: PathLike) -> VectorFieldSystem:
    """System file ``{d, fields, omega, V0, params}``.

    ``fields`` names a built-in system; ``omega`` is ``"builtin"`` or a
    constant table ``[i][j][k]`` (checked against the brackets); ``V0`` is a
    constant drift for the constant frame.
    """
    spec = json.loads(Path(path).read_text())
    fields = spec.get("fields")
    if isinstance(fields, list):
        if len(fields) != 1:
            raise ValueError("fields: exactly one built-in name is supported")
        fields = fields[0]
    if not isinstance(fields, str):
        raise ValueError("fields: expected a built-in system name")
    params = dict(spec.get("params", {}))
    if "V0" in spec:
        if fields != "constant-frame":
            raise ValueError("V0: a constant drift is only accepted with the constant frame")
        params["drift"] = spec["V0"]
    if fields in ("constant-frame", "linear-drift") and "d" in spec:
        params.setdefault("d", int(spec["d"]))
    system = builtin_system(fields, **params)
    if "d" in spec and int(spec["d"]) != system.dim:
        raise ValueError(f"d: file says {spec['d']}, system {fields!r} has dimension {system.dim}")
    omega = spec.get("omega", "builtin")
    if isinstance(omega, str):
        if omega != "builtin":
            raise ValueError(f"omega: expected 'builtin' or a table, got {omega!r}")
        return system
    table = np.asarray(omega, dtype=float)
    d = system.dim
    if table.shape != (d + 1, d, d):
        raise ValueError(f"omega: table must have shape {(d + 1, d, d)}, got {table.shape}")
    custom = VectorFieldSystem(
        d,
        system.drift,
        system.frame,
        system.jacobian,
        omega=lambda x: np.broadcast_to(table, x.shape[:-1] + table.shape),
        omega_derivative=lambda x: np.zeros(x.shape[:-1] + (d, d + 1, d, d)),
        name=f"{system.name}+table",
    )
    probe = np.linspace(-1.0, 1.0, 5)[:, None] * np.ones(d)
    if check_bracket(custom, probe) > 1e-6:
        raise ValueError("omega: table does not reproduce the brackets of the frame")
    return custom
