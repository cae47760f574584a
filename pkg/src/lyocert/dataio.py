"""Trajectory containers, CSV/manifest serialization and numerical differentiation."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.17g}"


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    xdot: np.ndarray | None = None
    source_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if len(t) < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if x.shape[0] != len(t) or x.shape[1] < 1:
            raise ValueError("x must have one row per time stamp")
        xdot = self.xdot
        if xdot is not None:
            xdot = np.asarray(xdot, dtype=float)
            if xdot.ndim == 1:
                xdot = xdot[:, None]
            if xdot.shape != x.shape:
                raise ValueError("xdot must match x in shape")
        _check_grid(t)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xdot", xdot)

    @property
    def dt(self) -> float:
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    @property
    def has_xdot(self) -> bool:
        return self.xdot is not None


def _check_grid(t: np.ndarray) -> None:
    """Raise if t is not strictly increasing on a uniform grid (1-based data row in message)."""
    dt = t[1] - t[0]
    if not dt > 0:
        raise TrajectoryFormatError("non-uniform time grid at row 2")
    tol = 1e-9 * dt
    expected = t[0] + dt * np.arange(len(t))
    bad = np.nonzero(np.abs(t - expected) > tol)[0]
    if bad.size:
        raise TrajectoryFormatError(f"non-uniform time grid at row {bad[0] + 1}")


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple
    role: str = "train"

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("dataset must be nonempty")
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        if len({tr.n for tr in trajs}) != 1:
            raise ValueError("all trajectories must share the state dimension")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n(self) -> int:
        return self.trajectories[0].n

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    @property
    def has_xdot(self) -> bool:
        return all(tr.has_xdot for tr in self.trajectories)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples concatenated trajectory by trajectory: (X, Xdot), each (N, n)."""
        if not self.has_xdot:
            raise ValueError("dataset is missing derivatives; run differentiate() first")
        X = np.concatenate([tr.x for tr in self.trajectories])
        Xd = np.concatenate([tr.xdot for tr in self.trajectories])
        return X, Xd


def differentiate(traj: Trajectory) -> Trajectory:
    """Fill xdot with second-order finite differences.

    Central differences in the interior, one-sided three-point stencils at
    both ends; exact for polynomials up to degree two.
    """
    if len(traj) < 3:
        raise ValueError("differentiate needs at least 3 samples")
    if traj.has_xdot:
        raise ValueError("trajectory already carries derivatives")
    x, h = traj.x, traj.dt
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * h)
    d[0] = (-3 * x[0] + 4 * x[1] - x[2]) / (2 * h)
    d[-1] = (3 * x[-1] - 4 * x[-2] + x[-3]) / (2 * h)
    return replace(traj, xdot=d)


def differentiate_dataset(ds: Dataset) -> Dataset:
    return Dataset(tuple(differentiate(tr) for tr in ds.trajectories), ds.role)


def split_dataset(ds: Dataset, train_count: int, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < train_count < len(ds):
        raise ValueError(f"train_count must be in (0, {len(ds)}), got {train_count}")
    order = np.random.default_rng(seed).permutation(len(ds))
    trajs = ds.trajectories
    train = Dataset(tuple(trajs[i] for i in order[:train_count]), "train")
    test = Dataset(tuple(trajs[i] for i in order[train_count:]), "test")
    return train, test


# -- CSV ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return FLOAT_FMT.format(v)


def dumps_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become null.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return "null"
        text = _fmt(v)
        # keep floats recognisable as floats on reload
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps_json(v, indent, _level + 1) for v in seq) + "]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj) + "\n")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_header(n: int, with_xdot: bool, extra: tuple = ()) -> list[str]:
    cols = ["t"] + [f"x{i}" for i in range(n)]
    if with_xdot:
        cols += [f"dx{i}" for i in range(n)]
    return cols + list(extra)


def trajectory_to_csv(traj: Trajectory, extra: dict | None = None) -> str:
    """Render in the trajectory CSV format; ``extra`` appends named columns."""
    extra = extra or {}
    cols = [traj.t[:, None], traj.x]
    if traj.has_xdot:
        cols.append(traj.xdot)
    for v in extra.values():
        cols.append(np.asarray(v, dtype=float).reshape(len(traj), -1))
    table = np.hstack(cols)
    lines = [",".join(trajectory_header(traj.n, traj.has_xdot, tuple(extra)))]
    lines += [",".join(_fmt(v) for v in row) for row in table]
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, path) -> None:
    atomic_write_text(path, trajectory_to_csv(traj))


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TrajectoryFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    n_x = sum(1 for h in header if h.startswith("x"))
    if n_x < 1 or header[0] != "t":
        raise TrajectoryFormatError(f"{path}: malformed header {header!r}")
    with_xdot = len(header) == 1 + 2 * n_x
    if header != trajectory_header(n_x, with_xdot):
        raise TrajectoryFormatError(f"{path}: malformed header {header!r}")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise TrajectoryFormatError(f"{path}: expected {len(header)} cells at row {i}")
        try:
            data[i - 1] = [float(c) for c in row]
        except ValueError:
            raise TrajectoryFormatError(f"{path}: non-numeric cell at row {i}") from None
    if len(data) < 2:
        raise TrajectoryFormatError(f"{path}: need at least 2 samples")
    if not np.all(np.isfinite(data)):
        raise TrajectoryFormatError(f"{path}: non-finite value")
    t = data[:, 0]
    try:
        _check_grid(t)
    except TrajectoryFormatError as e:
        raise TrajectoryFormatError(f"{path}: {e}") from None
    x = data[:, 1 : 1 + n_x]
    xdot = data[:, 1 + n_x :] if with_xdot else None
    return Trajectory(t, x, xdot, source_id=path.stem)


# -- manifests ---------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir, prefix: str = "traj") -> Path:
    """Write every trajectory as CSV plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    files = []
    width = max(3, len(str(len(ds) - 1)))
    for i, tr in enumerate(ds.trajectories):
        name = f"{prefix}_{i:0{width}d}.csv"
        save_trajectory(tr, out_dir / name)
        files.append(name)
    manifest = {"dt": ds.trajectories[0].dt, "files": files, "role": ds.role}
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        m = json.load(fh)
    if not isinstance(m, dict) or "files" not in m:
        raise TrajectoryFormatError(f"{manifest_path}: not a dataset manifest")
    base = manifest_path.parent
    trajs = tuple(load_trajectory(base / f) for f in m["files"])
    dt = m.get("dt")
    if dt is not None:
        for tr in trajs:
            if abs(tr.dt - dt) > 1e-9 * dt:
                raise TrajectoryFormatError(f"{tr.source_id}: dt {tr.dt} disagrees with manifest {dt}")
    return Dataset(trajs, m.get("role", "train"))
