"""Classical filtering baselines for a scalar diffusion observed in noise.

Signal and observation::

    d xi = g(xi) dt + dV1,      dY = h(xi) dt + dV2

with independent standard Wiener processes ``V1`` and ``V2``.  For the
linear case ``g = a x``, ``h = c x`` the conditional law is Gaussian and the
Kalman filter is exact; for general ``g``, ``h`` the conditional density is
propagated on a grid by the Kushner-Stratonovich equation

    dp = L*(p) dt + (h - pi(h)) p dW,    L*(p) = p''/2 - (g p)'

with innovation ``dW = dY - pi(h) dt``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_banded

from .errors import BoundaryMassLeak, GridMismatch, InvariantViolation, UnsafeTimeStep
from .records import MeasurementRecord, fmt, read_table
from .stochastics import uniform_stream
from .dynamics import n_steps_for

NORMALIZATION_TOL = 1e-8
NEGATIVITY_TOL = 1e-10
LEAK_TOL = 1e-4
KS_UPDATES = ("likelihood", "euler")


@dataclass(frozen=True)
class LinearGaussianModel:
    """``d xi = a xi dt + dV1``, ``dY = c xi dt + dV2``, ``xi(0) ~ N(mean, var)``.

    ``process_noise=False`` drops ``dV1`` (deterministic signal).
    """

    a: float
    c: float
    xi0_mean: float = 0.0
    xi0_var: float = 1.0
    process_noise: bool = True

    def __post_init__(self):
        if not self.xi0_var >= 0:
            raise ValueError("xi0_var must be non-negative")

    @property
    def q(self) -> float:
        return 1.0 if self.process_noise else 0.0

    def g(self, x):
        return self.a * x

    def h(self, x):
        return self.c * x

    def stationary_variance(self):
        """Prior variance limit ``-q / 2a`` (stable drift only)."""
        if self.a >= 0:
            raise ValueError("no stationary law for a >= 0")
        return -self.q / (2 * self.a)

    def prior_variance(self, t):
        """Solution of ``Gamma' = 2a Gamma + q`` from ``xi0_var``."""
        t = np.asarray(t, dtype=float)
        a, q, v0 = self.a, self.q, self.xi0_var
        if a == 0:
            return v0 + q * t
        e = np.exp(2 * a * t)
        return v0 * e + q * (e - 1) / (2 * a)

    def riccati_limit(self):
        """Positive root of ``2a S + q - c^2 S^2 = 0``."""
        a, c, q = self.a, self.c, self.q
        if c == 0:
            return self.stationary_variance()
        return (a + np.sqrt(a * a + c * c * q)) / (c * c)


@dataclass(frozen=True)
class DoubleWellModel:
    """``d xi = (alpha xi - beta xi^3) dt + dV1``, ``dY = c xi dt + dV2``."""

    alpha: float = 1.0
    beta: float = 1.0
    c: float = 1.0
    xi0_mean: float = 0.0
    xi0_var: float = 1.0
    process_noise: bool = True

    def __post_init__(self):
        if not self.xi0_var >= 0:
            raise ValueError("xi0_var must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def q(self) -> float:
        return 1.0 if self.process_noise else 0.0

    def g(self, x):
        return self.alpha * x - self.beta * x**3

    def h(self, x):
        return self.c * x


class SignalPaths(NamedTuple):
    times: np.ndarray
    xi: np.ndarray          # (n_traj, n+1)
    dY: np.ndarray          # (n_traj, n)
    trajectory_ids: np.ndarray

    def record(self, i=0, seed=None) -> MeasurementRecord:
        return MeasurementRecord(float(self.times[0]), float(self.times[1] - self.times[0]),
                                 self.dY[i], seed=seed,
                                 trajectory_id=int(self.trajectory_ids[i]), counting=False)


def simulate_signal_batch(model, T, dt, seed, trajectory_ids) -> SignalPaths:
    """Euler-Maruyama paths, one keyed normal stream per trajectory.

    ``model`` provides ``g``, ``h``, ``q`` and the Gaussian initial law.
    Each stream yields ``xi(0)``'s standard normal first, then per step the
    pair ``(dV1, dV2) / sqrt(dt)``.
    """
    n = n_steps_for(T, dt)
    ids = np.asarray(list(trajectory_ids), dtype=np.int64)
    z0 = np.empty(len(ids))
    Z = np.empty((len(ids), n, 2))
    for i, tid in enumerate(ids):
        gen = uniform_stream(seed, int(tid))
        z0[i] = gen.standard_normal()
        Z[i] = gen.standard_normal((n, 2))
    sq = np.sqrt(dt)
    xi = np.empty((len(ids), n + 1))
    xi[:, 0] = model.xi0_mean + np.sqrt(model.xi0_var) * z0
    dY = np.empty((len(ids), n))
    for k in range(n):
        x = xi[:, k]
        dY[:, k] = model.h(x) * dt + sq * Z[:, k, 1]
        xi[:, k + 1] = x + model.g(x) * dt + model.q * sq * Z[:, k, 0]
    return SignalPaths(dt * np.arange(n + 1), xi, dY, ids)


simulate_linear_batch = simulate_signal_batch


def simulate_linear(model: LinearGaussianModel, T, dt, seed, trajectory_id=0):
    """One signal path and its observation record: ``(xi, record)``."""
    paths = simulate_signal_batch(model, T, dt, seed, [trajectory_id])
    return paths.xi[0], paths.record(0, seed=seed)


class KalmanResult(NamedTuple):
    """Kalman estimates with per-step telemetry.

    ``values[k+1] = prediction[k] + gain[k] * innovation[k]`` as for the
    quantum scalar filters; ``variance`` is the Riccati solution.
    """

    times: np.ndarray
    values: np.ndarray
    prediction: np.ndarray
    gain: np.ndarray
    innovation: np.ndarray
    variance: np.ndarray


def riccati(model: LinearGaussianModel, n_steps, dt):
    """Euler solution of ``S' = 2a S + q - c^2 S^2`` (independent of data)."""
    S = np.empty(n_steps + 1)
    S[0] = model.xi0_var
    a, c, q = model.a, model.c, model.q
    for k in range(n_steps):
        s = S[k]
        S[k + 1] = s + (2 * a * s + q - c * c * s * s) * dt
    return S


def kalman_run(model: LinearGaussianModel, record: MeasurementRecord, dt=None) -> KalmanResult:
    """Kalman-Bucy filter on a uniform-grid record (explicit Euler)."""
    record.check_grid(dt=dt)
    h = record.dt
    dY = np.asarray(record.increments, dtype=float)
    n = record.n_steps
    S = riccati(model, n, h)
    a, c = model.a, model.c
    m = np.empty(n + 1)
    pred = np.empty(n)
    gain = c * S[:-1]
    innov = np.empty(n)
    m[0] = model.xi0_mean
    for k in range(n):
        innov[k] = dY[k] - c * m[k] * h
        pred[k] = m[k] + a * m[k] * h
        m[k + 1] = pred[k] + gain[k] * innov[k]
    return KalmanResult(record.times, m, pred, gain, innov, S)


# ---------------------------------------------------------------------------
# grid densities

@dataclass(frozen=True)
class GridDensity:
    """Density sampled at ``nx`` equispaced nodes on ``[x_min, x_max]``.

    Nodes are cell centres of width ``dx = (x_max - x_min) / (nx - 1)``, so
    ``sum(values) * dx`` is the total mass.
    """

    x_min: float
    x_max: float
    nx: int
    values: np.ndarray

    def __post_init__(self):
        if self.nx < 3 or not self.x_max > self.x_min:
            raise ValueError("need nx >= 3 and x_max > x_min")
        v = np.array(self.values, dtype=float)
        if v.shape != (self.nx,):
            raise GridMismatch(f"values of shape {v.shape} for nx={self.nx}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def mass(self):
        return float(self.values.sum() * self.dx)

    def expect(self, f):
        return float(np.sum(f(self.x) * self.values) * self.dx)

    @property
    def mean(self):
        return self.expect(lambda x: x)

    @property
    def variance(self):
        m = self.mean
        return self.expect(lambda x: (x - m) ** 2)

    def check(self):
        if abs(self.mass - 1.0) > NORMALIZATION_TOL:
            raise InvariantViolation(f"density mass {self.mass!r} is not 1")
        if self.values.min() < -NEGATIVITY_TOL:
            raise InvariantViolation(f"density minimum {self.values.min():.3e} is negative")
        return self

    @classmethod
    def gaussian(cls, mean, var, n_std=10.0, nx=801, x_min=None, x_max=None):
        """Normalized Gaussian on ``mean +/- n_std * sqrt(var)`` unless bounds given."""
        sd = np.sqrt(var)
        lo = mean - n_std * sd if x_min is None else x_min
        hi = mean + n_std * sd if x_max is None else x_max
        x = np.linspace(lo, hi, nx)
        p = np.exp(-0.5 * (x - mean) ** 2 / var)
        p /= p.sum() * (hi - lo) / (nx - 1)
        return cls(lo, hi, nx, p)

    def with_values(self, values):
        return GridDensity(self.x_min, self.x_max, self.nx, values)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,value\n")
            for xi, v in zip(self.x, self.values):
                fh.write(f"{fmt(xi)},{fmt(v)}\n")

    @classmethod
    def from_csv(cls, path):
        t = read_table(path)
        x = t["x"]
        return cls(float(x[0]), float(x[-1]), len(x), t["value"])


def forward_operator(g: Callable, grid: GridDensity):
    """Banded ``(3, nx)`` matrix of ``L*(p) = p''/2 - (g p)'``.

    Finite-volume form: the flux through the face between nodes ``i`` and
    ``i+1`` is ``g_f p_f - (p_{i+1} - p_i) / (2 dx)`` and vanishes at both
    ends (reflecting boundaries), so mass is conserved exactly.  ``p_f`` is
    the central average where the cell Peclet number ``|g_f| dx`` is at most
    1 and the upwind value elsewhere, which keeps the off-diagonal entries
    non-negative.
    """
    nx, dx = grid.nx, grid.dx
    faces = grid.x[:-1] + 0.5 * dx
    gf = np.asarray(g(faces), dtype=float) * np.ones(nx - 1)
    central = np.abs(gf) * dx <= 1.0
    w_lo = np.where(central, 0.5, (gf > 0).astype(float))   # weight of p_i in p_f
    D = 0.5 / dx**2
    lo = gf * w_lo / dx + D            # coefficient of p_i in F/dx
    hi = gf * (1.0 - w_lo) / dx - D    # coefficient of p_{i+1} in F/dx
    A = np.zeros((3, nx))              # rows: super, main, sub (solve_banded layout)
    A[1, :-1] -= lo
    A[0, 1:] -= hi
    A[2, :-1] += lo
    A[1, 1:] += hi
    return A


def stable_substep(A, dx):
    """Largest explicit substep: ``dx^2 / 2``, tightened so the diagonal stays >= 0."""
    return min(dx * dx / 2, 1.0 / np.max(np.abs(A[1])))


def _banded_apply(A, p):
    out = A[1] * p
    out[:-1] += A[0, 1:] * p[1:]
    out[1:] += A[2, :-1] * p[:-1]
    return out


class KSResult(NamedTuple):
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    pi_h: np.ndarray
    innovation: np.ndarray
    snapshots: dict
    final: GridDensity
    substeps: int


def ks_grid_run(g: Callable, h: Callable, record: MeasurementRecord, p0: GridDensity,
                scheme="explicit", substeps=None, snapshot_times=(), dt=None,
                leak_tol=LEAK_TOL, boundary_cells=None, update="likelihood") -> KSResult:
    """Kushner-Stratonovich filter on a fixed grid.

    Per record step: innovation ``dW = dY - pi(h) dt`` from the current
    density, a multiplicative measurement update, renormalization, then
    propagation by ``L*`` over ``dt``.

    ``update="likelihood"`` multiplies by ``exp((h - pi(h)) dW - (h - pi(h))^2 dt / 2)``,
    the Bayes factor of a Gaussian increment (for linear ``h`` it
    reproduces the Kalman update to O(dt^2) per step).  ``update="euler"``
    uses ``1 + (h - pi(h)) dW``, whose variance update depends on the
    realized ``dW^2`` rather than ``dt``.

    ``scheme="explicit"`` splits ``dt`` into Euler substeps no longer than
    :func:`stable_substep` (``dx^2 / 2`` unless the drift is steep), or into
    exactly ``substeps`` of them, rejected with :class:`UnsafeTimeStep` if
    that breaks the bound; ``scheme="implicit"``
    takes ``substeps`` (default 1) backward-Euler steps.

    Raises :class:`BoundaryMassLeak` when more than ``leak_tol`` of the mass
    sits in the ``boundary_cells`` outermost nodes at either end (default
    ``nx // 100``, at least 1).
    """
    record.check_grid(dt=dt)
    if scheme not in ("explicit", "implicit"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if update not in KS_UPDATES:
        raise ValueError(f"unknown update {update!r}")
    p0.check()
    step = record.dt
    dx, nx = p0.dx, p0.nx
    A = forward_operator(g, p0)
    if scheme == "explicit":
        cfl = stable_substep(A, dx)
        m = ceil(step / cfl * (1 - 1e-12)) if substeps is None else int(substeps)
        if step / m > cfl * (1 + 1e-12):
            raise UnsafeTimeStep(f"substep {step / m:.3g} exceeds the stable bound {cfl:.3g}")
    else:
        m = 1 if substeps is None else int(substeps)
    sub = step / m
    if scheme == "implicit":
        M = -sub * A
        M[1] += 1.0
    hx = np.asarray(h(p0.x), dtype=float) * np.ones(nx)
    x = p0.x
    nb = max(1, nx // 100) if boundary_cells is None else int(boundary_cells)
    dY = np.asarray(record.increments, dtype=float)
    n = record.n_steps
    snap_steps = {int(round((t - record.t0) / step)): t for t in snapshot_times}
    for k in snap_steps:
        if not 0 <= k <= n:
            raise GridMismatch(f"snapshot time {snap_steps[k]} outside the record")

    mean = np.empty(n + 1)
    var = np.empty(n + 1)
    pih = np.empty(n)
    innov = np.empty(n)
    snaps = {}
    p = p0.values.copy()

    def stats(p, k):
        mu = np.sum(x * p) * dx
        mean[k] = mu
        var[k] = np.sum((x - mu) ** 2 * p) * dx
        lost = max(p[:nb].sum(), p[-nb:].sum()) * dx
        if lost > leak_tol:
            raise BoundaryMassLeak(f"{lost:.3e} of the mass in the boundary cells", step=k)
        if p.min() < -NEGATIVITY_TOL:
            raise InvariantViolation(f"density minimum {p.min():.3e}", step=k)
        if k in snap_steps:
            snaps[snap_steps[k]] = p0.with_values(p.copy())

    stats(p, 0)
    for k in range(n):
        ph = np.sum(hx * p) * dx
        dW = dY[k] - ph * step
        pih[k], innov[k] = ph, dW
        dh = hx - ph
        if update == "likelihood":
            p = p * np.exp(dh * dW - 0.5 * dh * dh * step)
        else:
            p = p * (1.0 + dh * dW)
        p /= p.sum() * dx
        for _ in range(m):
            if scheme == "explicit":
                p = p + sub * _banded_apply(A, p)
            else:
                p = solve_banded((1, 1), M, p)
        p /= p.sum() * dx
        stats(p, k + 1)
    return KSResult(record.times, mean, var, pih, innov, snaps, p0.with_values(p), m)
