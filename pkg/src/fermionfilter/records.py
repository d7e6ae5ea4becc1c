"""Measurement records on a uniform time grid, plus their CSV format.

A record file has the header ``step,t,dY``; ``t`` is the left end of the
increment's interval.  Counting records store ``dY`` as integers, diffusive
(classical) records as 17-significant-digit decimals.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch

FLOAT_FMT = "{:.17g}"


def fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-step increments ``dY`` of an observed process.

    For counting records ``increments`` holds 0/1 values (at most one
    detection per step); for diffusive records it holds real increments.
    ``seed`` and ``trajectory_id`` identify the random stream that produced
    the record, when known.
    """

    t0: float
    dt: float
    increments: np.ndarray
    seed: int | None = None
    trajectory_id: int = 0
    counting: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments)
        if inc.ndim != 1 or inc.size < 1:
            raise ValueError("a record needs at least one increment")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.counting:
            if not np.all((inc == 0) | (inc == 1)):
                raise ValueError("counting increments must be 0 or 1")
            inc = inc.astype(np.int8)
        else:
            inc = inc.astype(float)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.size

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        """Grid points ``t0, t0+dt, ..., t0+n*dt`` (one more than increments)."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def Y(self) -> np.ndarray:
        """Cumulative record, starting at ``Y(t0) = 0``."""
        return np.concatenate([[0], np.cumsum(self.increments)])

    def check_grid(self, dt=None, n_steps=None):
        if dt is not None and not np.isclose(dt, self.dt, rtol=1e-12, atol=0.0):
            raise GridMismatch(f"record has dt={self.dt}, expected {dt}")
        if n_steps is not None and n_steps != self.n_steps:
            raise GridMismatch(f"record has {self.n_steps} steps, expected {n_steps}")

    def to_csv(self, path):
        t = self.t0 + self.dt * np.arange(self.n_steps)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "dY"])
            if self.counting:
                for k, (tk, dy) in enumerate(zip(t, self.increments)):
                    w.writerow([k, fmt(tk), int(dy)])
            else:
                for k, (tk, dy) in enumerate(zip(t, self.increments)):
                    w.writerow([k, fmt(tk), fmt(dy)])

    @classmethod
    def from_csv(cls, path, dt=None, seed=None, trajectory_id=0):
        """Read a record written by :meth:`to_csv`.

        ``dt`` is inferred from the first two rows unless given.  A
        non-uniform grid raises :class:`GridMismatch`.
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["step", "t", "dY"]:
            raise ValueError(f"{path}: expected header 'step,t,dY'")
        body = rows[1:]
        if not body:
            raise ValueError(f"{path}: record has no increments")
        steps = np.array([int(r[0]) for r in body])
        t = np.array([float(r[1]) for r in body])
        raw = [r[2].strip() for r in body]
        counting = all(s in ("0", "1") for s in raw)
        inc = np.array([int(s) if counting else float(s) for s in raw])
        if not np.array_equal(steps, np.arange(len(body))):
            raise GridMismatch(f"{path}: step column is not 0..n-1")
        if dt is None:
            if len(t) < 2:
                raise GridMismatch(f"{path}: cannot infer dt from a single row")
            dt = t[1] - t[0]
        expected = t[0] + dt * np.arange(len(t))
        if not np.allclose(t, expected, rtol=1e-12, atol=1e-12 * max(1.0, abs(t[-1]))):
            raise GridMismatch(f"{path}: time column is not a uniform grid with dt={dt}")
        return cls(float(t[0]), float(dt), inc, seed=seed,
                   trajectory_id=trajectory_id, counting=counting)


def write_table(path, header, columns):
    """Write equal-length columns as CSV with 17-significant-digit floats.

    Integer-typed columns are written as integers; complex columns must be
    split by the caller.
    """
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    is_int = [np.issubdtype(c.dtype, np.integer) for c in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([str(int(c[i])) if ii else fmt(c[i]) for c, ii in zip(cols, is_int)])


def read_table(path):
    """Read a CSV written by :func:`write_table` into ``{column: array}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
