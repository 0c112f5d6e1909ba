"""Sampled trajectories, composite-Simpson quadrature and repeated integration.

Signals are stored as uniform samples on ``[0, tau]`` with an odd number of
nodes so that composite Simpson applies on the whole interval.  All exact
integrals of the operator calculus are discretized with the rules in this
module.

CSV layout (one file per trajectory)::

    t,u1,...,um,y1,...,yp[,v1,...,vp]

A dataset manifest is a JSON object::

    {"L": 2, "m": 1, "p": 2, "trajectories": ["traj_000.csv", ...],
     "theta": [[1e-6, 0], [0, 1e-6]]}

Relative trajectory paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataFormatError,
    DimensionMismatch,
    EvenSampleCount,
    GridNotUniform,
    MalformedRow,
    NoiseUnavailable,
)

GRID_RTOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """One experiment: inputs ``u`` (n x m), outputs ``y`` (n x p) on a uniform grid."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        t = _frozen(self.t).reshape(-1)
        n = t.size
        u = _frozen(self.u)
        y = _frozen(self.y)
        if u.ndim == 1:
            u = _frozen(u.reshape(n, -1))
        if y.ndim == 1:
            y = _frozen(y.reshape(n, -1))
        if u.shape[0] != n or y.shape[0] != n:
            raise DimensionMismatch(
                f"sample counts differ: t has {n}, u has {u.shape[0]}, y has {y.shape[0]}"
            )
        v = self.v
        if v is not None:
            v = _frozen(v)
            if v.ndim == 1:
                v = _frozen(v.reshape(n, -1))
            if v.shape != y.shape:
                raise DimensionMismatch(f"noise shape {v.shape} != output shape {y.shape}")
        check_grid(t)
        for name, arr in (("u", u), ("y", y), ("v", v)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DataFormatError(f"non-finite samples in {name}", field=name)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def tau(self) -> float:
        return float(self.t[-1])

    @property
    def h(self) -> float:
        return self.tau / (self.n - 1)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def w(self) -> np.ndarray:
        """Stacked input-output samples ``[u, y]`` (n x q)."""
        return np.hstack([self.u, self.y])

    def noise(self) -> np.ndarray:
        if self.v is None:
            raise NoiseUnavailable("trajectory carries no noise record")
        return self.v


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple
    L: int
    m: int
    p: int
    theta: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise DataFormatError("dataset needs at least one trajectory")
        if self.L < 1:
            raise DataFormatError(f"model order L must be >= 1, got {self.L}")
        for k, tr in enumerate(trajs):
            if tr.m != self.m or tr.p != self.p:
                raise DimensionMismatch(
                    f"trajectory {k} has (m, p) = ({tr.m}, {tr.p}), expected ({self.m}, {self.p})"
                )
        object.__setattr__(self, "trajectories", trajs)
        if self.theta is not None:
            object.__setattr__(self, "theta", _frozen(np.atleast_2d(self.theta)))

    @property
    def K(self) -> int:
        return len(self.trajectories)

    @property
    def q(self) -> int:
        return self.m + self.p

    @property
    def has_noise(self) -> bool:
        return all(tr.v is not None for tr in self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)


def check_grid(t, *, path=None):
    t = np.asarray(t, dtype=float)
    n = t.size
    if n < 3:
        raise EvenSampleCount(f"need at least 3 samples, got {n}", path=path)
    if n % 2 == 0:
        raise EvenSampleCount(f"composite Simpson needs an odd sample count, got {n}", path=path)
    if t[0] != 0.0:
        raise GridNotUniform(f"grid must start at t=0, got {t[0]!r}", path=path, row=1)
    tau = t[-1]
    if not tau > 0:
        raise GridNotUniform("grid must end at tau > 0", path=path)
    h = tau / (n - 1)
    dev = np.abs(np.diff(t) - h)
    bad = np.flatnonzero(dev > GRID_RTOL * tau)
    if bad.size:
        i = int(bad[0])
        raise GridNotUniform(
            f"step {t[i + 1] - t[i]!r} at t={t[i]!r} deviates from uniform step {h!r}",
            path=path,
            row=i + 2,
            field="t",
        )


def _check_odd(n):
    if n < 3 or n % 2 == 0:
        raise EvenSampleCount(f"composite Simpson needs an odd sample count >= 3, got {n}")


def simpson_weights(n: int, h: float) -> np.ndarray:
    _check_odd(n)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def quadrature(samples, h: float) -> np.ndarray:
    """Composite-Simpson integral over the whole grid (along axis 0)."""
    f = np.asarray(samples, dtype=float)
    return np.tensordot(simpson_weights(f.shape[0], h), f, axes=(0, 0))


def cumulative_simpson(samples, h: float) -> np.ndarray:
    """Running integral ``F(t_i) = int_0^{t_i} f`` at every node.

    Even nodes use composite Simpson; odd nodes add the half-panel
    three-point rule ``h/12 (5 f0 + 8 f1 - f2)`` to the preceding even node.
    """
    f = np.asarray(samples, dtype=float)
    n = f.shape[0]
    _check_odd(n)
    f0, f1, f2 = f[0:-1:2], f[1::2], f[2::2]
    panels = (h / 3.0) * (f0 + 4.0 * f1 + f2)
    out = np.empty_like(f)
    out[0] = 0.0
    out[2::2] = np.cumsum(panels, axis=0)
    out[1::2] = out[0:-1:2] + (h / 12.0) * (5.0 * f0 + 8.0 * f1 - f2)
    return out


def repeated_integrals(samples, h: float, max_order: int) -> list:
    """``[J^0 f, J^1 f, ..., J^max_order f]`` evaluated at every node."""
    out = [np.asarray(samples, dtype=float)]
    for _ in range(max_order):
        out.append(cumulative_simpson(out[-1], h))
    return out


def repeated_integral(samples, h: float, order: int) -> np.ndarray:
    """The ``order``-fold iterated integral ``(J^order f)(t_i)``."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    return repeated_integrals(samples, h, order)[-1]


# ---------------------------------------------------------------------------
# file I/O


def _header(m, p, with_noise):
    cols = ["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
    if with_noise:
        cols += [f"v{i + 1}" for i in range(p)]
    return cols


def read_trajectory_csv(path, m: int, p: int) -> Trajectory:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedRow("empty file", path=path, row=1)
    header = [c.strip() for c in rows[0]]
    plain, noisy = _header(m, p, False), _header(m, p, True)
    if header == plain:
        with_noise = False
    elif header == noisy:
        with_noise = True
    else:
        for i, (got, want) in enumerate(zip(header, noisy)):
            if got != want:
                raise DimensionMismatch(
                    f"unexpected column {got!r}, expected {want!r} for m={m}, p={p}",
                    path=path, row=1, field=got,
                )
        raise DimensionMismatch(
            f"header has {len(header)} columns, expected {len(plain)} or {len(noisy)} "
            f"for m={m}, p={p}",
            path=path, row=1,
        )
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedRow(
                f"expected {len(header)} fields, got {len(row)}", path=path, row=r
            )
        for c, cell in enumerate(row):
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise MalformedRow(f"cannot parse {cell!r} as a number",
                                   path=path, row=r, field=header[c]) from None
            if not np.isfinite(data[r - 2, c]):
                raise MalformedRow(f"non-finite value {cell!r}",
                                   path=path, row=r, field=header[c])
    check_grid(data[:, 0], path=path)
    t = data[:, 0]
    u = data[:, 1:1 + m]
    y = data[:, 1 + m:1 + m + p]
    v = data[:, 1 + m + p:] if with_noise else None
    return Trajectory(t, u, y, v)


def write_trajectory_csv(traj: Trajectory, path, *, include_noise=True):
    path = Path(path)
    with_noise = include_noise and traj.v is not None
    cols = [traj.t[:, None], traj.u, traj.y]
    if with_noise:
        cols.append(traj.v)
    data = np.hstack(cols)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(_header(traj.m, traj.p, with_noise)) + "\n")
        for row in data:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _config_get(config, key):
    if config is None:
        return None
    if isinstance(config, dict):
        return config.get(key)
    return getattr(config, key, None)


def load_dataset(path, config=None) -> Dataset:
    """Load either a JSON manifest or a single trajectory CSV.

    ``config`` (a mapping or object with ``L``, ``m``, ``p``) is required for
    a bare CSV and, for a manifest, must agree with the manifest's values.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        with path.open(encoding="utf-8") as fh:
            man = json.load(fh)
        for key in ("L", "m", "p", "trajectories"):
            if key not in man:
                raise DataFormatError(f"manifest lacks {key!r}", path=path, field=key)
        dims = {k: int(man[k]) for k in ("L", "m", "p")}
        for k in ("L", "m", "p"):
            want = _config_get(config, k)
            if want is not None and int(want) != dims[k]:
                raise DimensionMismatch(
                    f"manifest {k}={dims[k]} disagrees with config {k}={want}",
                    path=path, field=k,
                )
        files = [path.parent / f for f in man["trajectories"]]
        trajs = [read_trajectory_csv(f, dims["m"], dims["p"]) for f in files]
        theta = man.get("theta")
        if theta is not None:
            theta = np.array(theta, dtype=float).reshape(dims["p"], dims["p"])
        return Dataset(tuple(trajs), theta=theta, **dims)
    dims = {k: _config_get(config, k) for k in ("L", "m", "p")}
    if any(v is None for v in dims.values()):
        raise DataFormatError("a bare CSV needs a config with L, m and p", path=path)
    dims = {k: int(v) for k, v in dims.items()}
    traj = read_trajectory_csv(path, dims["m"], dims["p"])
    return Dataset((traj,), **dims)


def write_dataset(ds: Dataset, directory, *, theta=None, prefix="traj", extra=None) -> Path:
    """Write one CSV per trajectory plus ``dataset.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, tr in enumerate(ds.trajectories):
        name = f"{prefix}_{k:03d}.csv"
        write_trajectory_csv(tr, directory / name)
        names.append(name)
    theta = ds.theta if theta is None else theta
    man = {"L": ds.L, "m": ds.m, "p": ds.p, "trajectories": names}
    if theta is not None:
        man["theta"] = np.asarray(theta, dtype=float).tolist()
    if extra:
        man.update(extra)
    out = directory / "dataset.json"
    with out.open("w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2)
    return out


def trajectories_from_arrays(t, us: Sequence, ys: Sequence, vs: Optional[Sequence] = None):
    vs = vs if vs is not None else [None] * len(us)
    return tuple(Trajectory(t, u, y, v) for u, y, v in zip(us, ys, vs))
