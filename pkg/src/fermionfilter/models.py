"""System models coupled to one boson and two fermion channels.

A model is the sextuple ``(H, S, L, S0, L0, L1)`` on a composite graded
space.  Channel 0 is the unoccupied fermion reservoir whose output is
counted; channel 1 is the fully occupied reservoir.  Absent channels are
encoded as zero coupling and identity scattering.

Two presets are provided (the quantum dot between a source and a drain, and
an atom monitored through a three-level photodetector), each with its
closed-form scalar filter.  The scalar filters discretize exactly like the
matrix filter in :mod:`fermionfilter.stochastics`:

* no detection in ``[t, t+dt)``: the exact no-detection flow (default) or
  one Euler step ``x <- x + (drift - gain * intensity) dt``
* detection: ``x <- x + gain`` (the jump map)

so that the two routes agree to rounding error on any record.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from . import algebra as alg
from .algebra import GradedOperator, GradedSpace, Parity
from .errors import DegenerateRatio, ModelValidationError
from .records import MeasurementRecord

#: No-jump integration schemes shared by the scalar and matrix filters.
SCHEMES = ("exponential", "euler")

VALIDATION_TOL = 1e-12

#: Smallest jump intensity at which a detection is still accepted.
RATIO_FLOOR = 1e-12


class Check(NamedTuple):
    passed: bool
    violation: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: dict
    filtering_available: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def failures(self) -> list:
        return [name for name, c in self.checks.items() if not c.passed]

    def __str__(self):
        lines = []
        for name, c in self.checks.items():
            flag = "ok  " if c.passed else "FAIL"
            lines.append(f"{flag} {name:<14} violation={c.violation:.3e} {c.detail}".rstrip())
        if not self.filtering_available:
            lines.append("note: L0 = 0, no counting signal; filtering unavailable")
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Coupling data for a system driven by boson and fermion fields.

    Use :meth:`from_matrices` to build one from plain arrays; omitted
    operators default to zero (``H, L, L0, L1``) or the identity
    (``S, S0``).
    """

    space: tuple
    H: GradedOperator
    S: GradedOperator
    L: GradedOperator
    S0: GradedOperator
    L0: GradedOperator
    L1: GradedOperator
    name: str = "custom"
    params: dict = field(default_factory=dict)
    catalog: dict = field(default_factory=dict)

    @classmethod
    def from_matrices(cls, space, H=None, S=None, L=None, S0=None, L0=None, L1=None,
                      name="custom", params=None, catalog=None):
        space = alg._as_composite(space)
        d = alg.composite_dim(space)

        def op(x, default):
            if x is None:
                x = default
            if isinstance(x, GradedOperator):
                return x
            return GradedOperator(x, space)

        zero, eye = np.zeros((d, d)), np.eye(d)
        cat = {"I": alg.identity(space)}
        cat.update(catalog or {})
        return cls(space, op(H, zero), op(S, eye), op(L, zero), op(S0, eye),
                   op(L0, zero), op(L1, zero), name, dict(params or {}), cat)

    @property
    def dim(self) -> int:
        return alg.composite_dim(self.space)

    @property
    def channel_flags(self) -> dict:
        nz = lambda X: bool(np.any(X.matrix != 0))
        return {"boson": nz(self.L) or not np.array_equal(self.S.matrix, np.eye(self.dim)),
                "fermion0": nz(self.L0),
                "fermion1": nz(self.L1),
                "hamiltonian": nz(self.H)}

    @cached_property
    def report(self) -> ValidationReport:
        return validate(self)

    def require_valid(self):
        if not self.report.passed:
            raise ModelValidationError(self.report)
        return self

    def observable(self, name) -> GradedOperator:
        try:
            return self.catalog[name]
        except KeyError:
            raise KeyError(f"model {self.name!r} has no observable {name!r}; "
                           f"known: {sorted(self.catalog)}") from None


def _norm(m):
    return float(np.linalg.norm(m))


def validate(model: SystemModel) -> ValidationReport:
    """Check hermiticity, unitarity and the parity constraints of a model."""
    d = model.dim
    eye = np.eye(d)
    checks = {}

    ops = {"H": model.H, "S": model.S, "L": model.L, "S0": model.S0,
           "L0": model.L0, "L1": model.L1}
    for name, X in ops.items():
        ok = X.space == model.space
        checks[f"space_{name}"] = Check(ok, 0.0 if ok else float("inf"))

    H = model.H.matrix
    v = _norm(H - H.conj().T)
    checks["hermitian_H"] = Check(v <= VALIDATION_TOL * max(1.0, _norm(H)), v)
    for name in ("S", "S0"):
        U = ops[name].matrix
        v = _norm(U.conj().T @ U - eye)
        checks[f"unitary_{name}"] = Check(v <= VALIDATION_TOL, v)

    mask = np.outer(alg.composite_signs(model.space), alg.composite_signs(model.space))
    for name in ("H", "S", "L", "S0"):
        X = ops[name]
        v = _norm(X.matrix[mask < 0])
        checks[f"even_{name}"] = Check(X.parity is Parity.EVEN, v, X.parity.value)
    for name in ("L0", "L1"):
        X = ops[name]
        v = _norm(X.matrix[mask > 0])
        is_zero = not np.any(X.matrix)
        checks[f"odd_{name}"] = Check(X.parity is Parity.ODD or is_zero, v,
                                      "zero" if is_zero else X.parity.value)

    return ValidationReport(checks, filtering_available=bool(np.any(model.L0.matrix)))


# ---------------------------------------------------------------------------
# quantum dot

@dataclass(frozen=True)
class DotParams:
    gamma_L: float
    gamma_R: float

    def __post_init__(self):
        if not (self.gamma_L >= 0 and self.gamma_R >= 0):
            raise ValueError("tunnelling rates must be non-negative")
        if not self.gamma_L + self.gamma_R > 0:
            raise ValueError("gamma_L + gamma_R must be positive")


def quantum_dot(p: DotParams) -> SystemModel:
    """Single fermion mode fed by a full source (channel 1), drained into an
    empty reservoir (channel 0) whose electron count is monitored."""
    space = alg.fermion_space("dot")
    c, c_dag, n = alg.build_fermion_mode(space)
    L1 = 1j * np.sqrt(p.gamma_L) * c
    L0 = 1j * np.sqrt(p.gamma_R) * c
    return SystemModel.from_matrices(
        (space,), L0=L0, L1=L1, name="dot",
        params={"gamma_L": p.gamma_L, "gamma_R": p.gamma_R},
        catalog={"n": n, "c": c, "c_dag": c_dag})


class ScalarFilterResult(NamedTuple):
    """Time series from a closed-form filter.

    ``values[k]`` is the estimate at ``times[k]``; ``prediction``, ``gain``
    and ``innovation`` describe step ``k`` so that
    ``values[k+1] = prediction[k] + gain[k] * innovation[k]``.
    """

    times: np.ndarray
    values: np.ndarray
    prediction: np.ndarray
    gain: np.ndarray
    innovation: np.ndarray
    excursions: list


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


def dot_scalar_filter(record: MeasurementRecord, p: DotParams, n0: float,
                      dt=None, excursion_tol=1e-6, scheme="exponential") -> ScalarFilterResult:
    """Conditional dot occupation from the drain counting record.

    Integrates ``dn = gL (1-n) dt - gR n dt - n (dY - gR n dt)``.  Between
    detections ``scheme="exponential"`` uses the exact flow (the occupation
    ratio of the linear system ``p0' = -gL p0``, ``p1' = gL p0 - gR p1``);
    ``scheme="euler"`` takes one explicit Euler step.  Values are never
    clamped; steps where ``n`` leaves ``[0, 1]`` by more than
    ``excursion_tol`` are listed in ``excursions``.
    """
    _check_scheme(scheme)
    record.check_grid(dt=dt)
    if not 0.0 <= n0 <= 1.0:
        raise ValueError("n0 must lie in [0, 1]")
    gL, gR, h = p.gamma_L, p.gamma_R, record.dt
    E = expm(h * np.array([[-gL, 0.0], [gL, -gR]]))
    dY = record.increments
    N = record.n_steps
    values = np.empty(N + 1)
    pred = np.empty(N)
    gain = np.empty(N)
    innov = np.empty(N)
    excursions = []
    n = float(n0)
    values[0] = n
    for k in range(N):
        rate = gR * n
        g = -n
        if dY[k]:
            if rate < RATIO_FLOOR:
                raise DegenerateRatio(f"detection at intensity {rate:.3e}", step=k)
            pred[k], innov[k] = n, 1.0
            n_new = n + g
        else:
            innov[k] = -rate * h
            if scheme == "euler":
                pred[k] = n + (gL * (1.0 - n) - gR * n) * h
                n_new = pred[k] + g * innov[k]
            else:
                q0 = E[0, 0] * (1.0 - n)
                q1 = E[1, 0] * (1.0 - n) + E[1, 1] * n
                n_new = q1 / (q0 + q1)
                pred[k] = n_new - g * innov[k]
        gain[k] = g
        n = n_new
        values[k + 1] = n
        if n < -excursion_tol or n > 1.0 + excursion_tol:
            excursions.append(k + 1)
    return ScalarFilterResult(record.times, values, pred, gain, innov, excursions)


# ---------------------------------------------------------------------------
# atom + photodetector

@dataclass(frozen=True)
class DetectorParams:
    kappa: float
    gamma: float
    gamma0: float
    gamma1: float

    def __post_init__(self):
        vals = (self.kappa, self.gamma, self.gamma0, self.gamma1)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("detector rates must be finite and non-negative")


#: Order of the components tracked by :func:`photodetector_scalar_filter`.
DETECTOR_COMPONENTS = ("n", "sigma_22", "sigma_12p", "sigma_11pm", "sigma_22pm", "sigma_33pm")


def photodetector(p: DetectorParams) -> SystemModel:
    """Two-level atom cascaded into a three-level electron-emitting detector.

    The composite is ``atom (x) detector`` (dimension 6).  The atom carries
    trivial grading, so atomic operators are even and ampliation is the
    plain Kronecker product.
    """
    atom_space = GradedSpace.trivial(2, "atom")
    atom = alg.build_two_level(atom_space)
    sig = alg.build_three_level()
    det_space = sig[(1, 1)].space[0]
    composite = (atom_space, det_space)

    A = {name: alg.ampliate(op, 0, composite) for name, op in atom._asdict().items()}
    D = {jk: alg.ampliate(op, 1, composite) for jk, op in sig.items()}

    sk, sg = np.sqrt(p.kappa), np.sqrt(p.gamma)
    H = (0.5j * np.sqrt(p.kappa * p.gamma)) * (
        D[(1, 2)] @ A["sigma_plus"] - D[(2, 1)] @ A["sigma_minus"])
    L = sk * A["sigma_minus"] + sg * D[(1, 2)]
    L0 = np.sqrt(p.gamma0) * D[(3, 2)]
    L1 = np.sqrt(p.gamma1) * D[(3, 1)]

    n = A["n"]
    catalog = {"n": n, "sigma_minus": A["sigma_minus"], "sigma_plus": A["sigma_plus"],
               "sigma_z": A["sigma_z"]}
    for (j, k), op in D.items():
        catalog[f"sigma_{j}{k}"] = op
    catalog["sigma_12p"] = D[(1, 2)] @ A["sigma_plus"]
    for j in (1, 2, 3):
        catalog[f"sigma_{j}{j}pm"] = D[(j, j)] @ n
    return SystemModel.from_matrices(
        composite, H=H, L=L, L0=L0, L1=L1, name="photodetector",
        params={"kappa": p.kappa, "gamma": p.gamma, "gamma0": p.gamma0, "gamma1": p.gamma1},
        catalog=catalog)


def _detector_generator(p: DetectorParams, c22):
    """Linear no-detection generator of the unnormalized closure.

    Acts on ``(trace, n, sigma_22, sigma_12p, conj(sigma_12p), sigma_11pm,
    sigma_22pm, sigma_33pm)``; dividing by the trace component recovers
    the normalized no-detection equations.
    """
    k_, g_, g0, g1 = p.kappa, p.gamma, p.gamma0, p.gamma1
    skg = np.sqrt(k_ * g_)
    B = np.zeros((8, 8))
    B[0, 2] = -g0
    B[1, 1], B[1, 6] = -k_, -g0
    B[2, 2], B[2, 3], B[2, 4] = -(g_ + g0), -skg, -skg
    for i in (3, 4):
        B[i, i], B[i, 5], B[i, 6] = -0.5 * (k_ + g_ + g0), -skg, c22
    B[5, 5], B[5, 6], B[5, 7] = -k_, g_, g1
    B[6, 6] = -(k_ + g_ + g0)
    B[7, 7] = -(k_ + g1)
    return B


def photodetector_scalar_filter(record: MeasurementRecord, p: DetectorParams, x0,
                                dt=None, drop_s22pm_drift=False,
                                scheme="exponential") -> ScalarFilterResult:
    """Closed six-component filter for the atom/photodetector model.

    ``x0`` holds the initial conditional values in the order of
    :data:`DETECTOR_COMPONENTS`:
    ``(n, sigma_22, sigma_12 sigma_+, sigma_11 n, sigma_22 n, sigma_33 n)``.
    The returned ``values`` array has shape ``(n_steps + 1, 6)`` (complex).

    The drift of ``sigma_12 sigma_+`` is
    ``-(kappa+gamma+gamma0)/2 sigma_12p + sqrt(kappa gamma) (sigma_22pm - sigma_11pm)``,
    which is what the model's generator gives.  ``drop_s22pm_drift=True``
    omits the ``sigma_22pm`` term; that reduced closure does not match the
    matrix filter and is kept only to make the difference testable.

    Between detections ``scheme="euler"`` takes one explicit Euler step of
    the normalized equations, with the innovation gain always multiplied by
    the intensity ``gamma0 * sigma_22`` so no ratio is formed.
    ``scheme="exponential"`` propagates the equivalent linear unnormalized
    system exactly and divides by its trace.  At a detection the ratio
    ``sigma_22pm / sigma_22`` is required; a detection at intensity below
    :data:`RATIO_FLOOR` raises :class:`DegenerateRatio`.
    """
    _check_scheme(scheme)
    record.check_grid(dt=dt)
    x = np.array(x0, dtype=complex)
    if x.shape != (6,):
        raise ValueError("x0 must have six components")
    k_, g_, g0, g1 = p.kappa, p.gamma, p.gamma0, p.gamma1
    skg = np.sqrt(k_ * g_)
    c22 = 0.0 if drop_s22pm_drift else skg
    h = record.dt
    E = expm(h * _detector_generator(p, c22))
    dY = record.increments
    N = record.n_steps
    values = np.empty((N + 1, 6), dtype=complex)
    pred = np.empty((N, 6), dtype=complex)
    gain = np.empty((N, 6), dtype=complex)
    innov = np.empty(N)
    values[0] = x
    for k in range(N):
        n, s22, s12p, s11, s22pm, s33 = x
        rate = g0 * s22.real
        if dY[k]:
            if rate < RATIO_FLOOR:
                raise DegenerateRatio(f"detection at intensity {rate:.3e}", step=k)
            ratio = s22pm / s22
            g = np.array([ratio - n, -s22, -s12p, -s11, -s22pm, ratio - s33])
            pred[k] = x
            innov[k] = 1.0
            x = x + g
        else:
            innov[k] = -rate * h
            # gain * intensity, written without dividing by sigma_22
            gain_rate = g0 * np.array([s22pm - n * s22, -s22 * s22, -s12p * s22,
                                       -s11 * s22, -s22pm * s22, s22pm - s33 * s22])
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(s22 != 0, gain_rate / (g0 * s22) if g0 else 0.0, np.nan)
            if scheme == "euler":
                drift = np.array([
                    -k_ * n,
                    -(g_ + g0) * s22 - skg * (s12p + np.conj(s12p)),
                    -0.5 * (k_ + g_ + g0) * s12p - skg * s11 + c22 * s22pm,
                    -k_ * s11 + g_ * s22pm + g1 * s33,
                    -(k_ + g_ + g0) * s22pm,
                    -(k_ + g1) * s33 + g0 * s22pm,
                ])
                pred[k] = x + drift * h
                x = pred[k] - gain_rate * h
            else:
                y = E @ np.array([1.0, n, s22, s12p, np.conj(s12p), s11, s22pm, s33])
                x = np.delete(y, 4)[1:] / y[0]
                pred[k] = x + gain_rate * h
        gain[k] = g
        values[k + 1] = x
    return ScalarFilterResult(record.times, values, pred, gain, innov, [])


def preset(name: str, **params) -> SystemModel:
    """Build a preset model by name (``"dot"`` or ``"photodetector"``)."""
    if name == "dot":
        return quantum_dot(DotParams(**params))
    if name == "photodetector":
        return photodetector(DetectorParams(**params))
    raise KeyError(f"unknown model preset {name!r}")
