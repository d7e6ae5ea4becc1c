"""Unconditional evolution: Liouvillian, Heisenberg generator, master
equation and steady states."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import algebra as alg
from .algebra import GradedOperator, Parity
from .errors import DimensionMismatch, InvariantViolation, MixedParity, NonUniqueSteadyState
from .models import SystemModel

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8
EVENNESS_TOL = 1e-10
TRACE_DRIFT_TOL = 1e-12


def _matrix(X):
    return X.matrix if isinstance(X, GradedOperator) else np.asarray(X)


def state_violations(rhos, space):
    """Per-state invariant residuals for an array of shape ``(..., d, d)``.

    Returns a dict of arrays: hermiticity, trace error, minimum eigenvalue
    and norm of the odd part.
    """
    rhos = np.asarray(rhos)
    mask = alg._sign_mask(space)
    herm = np.linalg.norm(rhos - np.conj(np.swapaxes(rhos, -1, -2)), axis=(-2, -1))
    tr = np.abs(np.trace(rhos, axis1=-2, axis2=-1) - 1.0)
    sym = 0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2)))
    min_eig = np.linalg.eigvalsh(sym)[..., 0]
    odd = np.linalg.norm(np.where(mask < 0, rhos, 0), axis=(-2, -1))
    return {"hermiticity": herm, "trace": tr, "min_eig": min_eig, "evenness": odd}


def check_states(rhos, space, step_offset=0):
    """Raise :class:`InvariantViolation` at the first invalid state.

    ``rhos`` is ``(n, d, d)``; the reported step is ``step_offset + index``.
    """
    rhos = np.asarray(rhos)
    if rhos.ndim == 2:
        rhos = rhos[None]
    v = state_violations(rhos, space)
    bad = ((v["hermiticity"] > HERMITIAN_TOL) | (v["trace"] > TRACE_TOL)
           | (v["min_eig"] < -POSITIVITY_TOL) | (v["evenness"] > EVENNESS_TOL))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvariantViolation(
            "invalid density matrix: "
            f"hermiticity={v['hermiticity'][i]:.3e} trace_err={v['trace'][i]:.3e} "
            f"min_eig={v['min_eig'][i]:.3e} odd_part={v['evenness'][i]:.3e}",
            step=step_offset + i)
    return v


class ConditionalState:
    """Density matrix on a composite graded space.

    Construction validates hermiticity, unit trace, positivity (down to
    ``-1e-8``) and evenness; nothing is repaired.
    """

    __slots__ = ("rho", "space")

    def __init__(self, rho, space, check=True):
        space = alg._as_composite(space)
        r = np.array(rho, dtype=complex)
        d = alg.composite_dim(space)
        if r.shape != (d, d):
            raise DimensionMismatch(f"rho of shape {r.shape} on a space of dim {d}")
        r.setflags(write=False)
        self.rho = r
        self.space = space
        if check:
            check_states(r, space)

    @classmethod
    def from_vector(cls, psi, space):
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), space)

    @classmethod
    def basis(cls, index, space):
        d = alg.composite_dim(space)
        e = np.zeros(d)
        e[index] = 1.0
        return cls.from_vector(e, space)

    @classmethod
    def maximally_mixed(cls, space):
        d = alg.composite_dim(space)
        return cls(np.eye(d) / d, space)

    @property
    def dim(self):
        return self.rho.shape[0]

    def expect(self, X):
        return expectation(self, X)

    def __repr__(self):
        return f"ConditionalState(dim={self.dim})"


def _check_rho(model, rho):
    rho = rho.rho if isinstance(rho, ConditionalState) else np.asarray(rho)
    d = model.dim
    if rho.shape[-2:] != (d, d):
        raise DimensionMismatch(f"rho of shape {rho.shape} for a model of dim {d}")
    return rho


def _dag(m):
    return m.conj().T


def liouvillian_apply(model: SystemModel, rho):
    """Right-hand side of the master equation, ``d rho / dt``.

    Accepts a single matrix or a stack ``(..., d, d)``.  The occupied
    reservoir (channel 1) enters through ``L1^* rho L1``; the empty one
    (channel 0) through ``L0 rho L0^*``.
    """
    rho = _check_rho(model, rho)
    H = model.H.matrix
    L, L1, L0 = model.L.matrix, model.L1.matrix, model.L0.matrix
    Ld, L1d, L0d = _dag(L), _dag(L1), _dag(L0)
    LdL, L1L1d, L0dL0 = Ld @ L, L1 @ L1d, L0d @ L0
    out = -1j * (H @ rho - rho @ H)
    out = out + L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
    out = out + L1d @ rho @ L1 - 0.5 * (L1L1d @ rho + rho @ L1L1d)
    out = out + L0 @ rho @ L0d - 0.5 * (L0dL0 @ rho + rho @ L0dL0)
    return out


def heisenberg_apply(model: SystemModel, X):
    """Generator of ``<X>`` in the Heisenberg picture.

    For odd ``X`` the fermionic dissipators act on ``tau(X) = -X`` in the
    sandwiched term.  Mixed-parity operators are rejected.
    """
    if not isinstance(X, GradedOperator):
        X = GradedOperator(X, model.space)
    if X.space != model.space:
        raise DimensionMismatch("observable does not act on the model space")
    if X.parity is Parity.MIXED:
        raise MixedParity("heisenberg_apply needs an operator of definite parity")
    x = X.matrix
    tx = -x if X.parity is Parity.ODD else x
    H = model.H.matrix
    L, L1, L0 = model.L.matrix, model.L1.matrix, model.L0.matrix
    Ld, L1d, L0d = _dag(L), _dag(L1), _dag(L0)
    LdL, L1L1d, L0dL0 = Ld @ L, L1 @ L1d, L0d @ L0
    out = -1j * (x @ H - H @ x)
    out = out + Ld @ x @ L - 0.5 * (x @ LdL + LdL @ x)
    out = out + L1 @ tx @ L1d - 0.5 * (x @ L1L1d + L1L1d @ x)
    out = out + L0d @ tx @ L0 - 0.5 * (x @ L0dL0 + L0dL0 @ x)
    return out


def superoperator(fn, d):
    """Matrix of a linear map on ``d x d`` matrices in row-major vec form.

    ``fn`` must accept a stack of matrices.  Column ``i*d + j`` is
    ``vec(fn(|i><j|))``.
    """
    basis = np.eye(d * d, dtype=complex).reshape(d * d, d, d)
    return np.asarray(fn(basis)).reshape(d * d, d * d).T


def liouvillian_superop(model: SystemModel):
    return superoperator(lambda r: liouvillian_apply(model, r), model.dim)


def expectation(state, X):
    """``tr(rho X)`` for a state or a stack of density matrices."""
    rho = state.rho if isinstance(state, ConditionalState) else np.asarray(state)
    x = _matrix(X)
    if rho.shape[-2:] != x.shape:
        raise DimensionMismatch(f"state of shape {rho.shape[-2:]} vs operator {x.shape}")
    val = np.einsum("...ij,ji->...", rho, x)
    return val if np.ndim(val) else complex(val)


class MasterRun(NamedTuple):
    times: np.ndarray
    rhos: np.ndarray
    space: tuple

    def expect(self, X):
        return expectation(self.rhos, X)

    def state(self, k) -> ConditionalState:
        return ConditionalState(self.rhos[k], self.space, check=False)

    @property
    def states(self):
        return [self.state(k) for k in range(len(self.times))]


def n_steps_for(T, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt * (1 - 1e-12):
        raise ValueError("T must be at least dt")
    n = int(round(T / dt))
    if not np.isclose(n * dt, T, rtol=1e-9, atol=0.0):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def rk4_propagator(A, dt):
    """One classical RK4 step for the linear system ``v' = A v``.

    For a linear autonomous right-hand side the four RK4 stages collapse to
    the degree-4 Taylor polynomial of ``exp(dt A)``.
    """
    hA = dt * A
    eye = np.eye(A.shape[0], dtype=complex)
    hA2 = hA @ hA
    return eye + hA + hA2 / 2 + hA2 @ hA / 6 + hA2 @ hA2 / 24


def evolve_master(model: SystemModel, rho0, T, dt, store_every=1, check=True) -> MasterRun:
    """Integrate the master equation with fixed-step RK4.

    Every stored state is checked against the density-matrix invariants and
    the per-step trace drift is bounded by ``1e-12``.
    """
    model.require_valid()
    rho0 = _check_rho(model, rho0)
    if rho0.ndim != 2:
        raise ValueError("rho0 must be a single matrix")
    if check:
        check_states(rho0, model.space)
    n = n_steps_for(T, dt)
    d = model.dim
    P = rk4_propagator(liouvillian_superop(model), dt)
    v = rho0.reshape(-1).astype(complex)
    diag = np.arange(d) * (d + 1)
    keep = list(range(0, n + 1, store_every))
    if keep[-1] != n:
        keep.append(n)
    out = np.empty((len(keep), d * d), dtype=complex)
    out[0] = v
    j = 1
    tr_prev = v[diag].sum()
    for k in range(1, n + 1):
        v = P @ v
        tr = v[diag].sum()
        if check and abs(tr - tr_prev) > TRACE_DRIFT_TOL:
            raise InvariantViolation(f"trace drift {abs(tr - tr_prev):.3e} per step", step=k)
        tr_prev = tr
        if j < len(keep) and k == keep[j]:
            out[j] = v
            j += 1
    rhos = out.reshape(-1, d, d)
    if check:
        v = state_violations(rhos, model.space)
        bad = ((v["hermiticity"] > HERMITIAN_TOL) | (v["trace"] > TRACE_TOL)
               | (v["min_eig"] < -POSITIVITY_TOL) | (v["evenness"] > EVENNESS_TOL))
        if np.any(bad):
            i = int(np.argmax(bad))
            check_states(rhos[i], model.space, step_offset=keep[i])
    times = dt * np.asarray(keep, dtype=float)
    return MasterRun(times, rhos, model.space)


def steady_state(model: SystemModel, tol=1e-9) -> ConditionalState:
    """Null vector of the Liouvillian restricted to even operators.

    Raises :class:`NonUniqueSteadyState` when the numerical null space in the
    even sector is not one-dimensional.
    """
    model.require_valid()
    d = model.dim
    mask = alg._sign_mask(model.space).reshape(-1) > 0
    A = liouvillian_superop(model)[np.ix_(mask, mask)]
    _, s, vh = np.linalg.svd(A)
    scale = max(s[0], 1.0)
    nullity = int(np.sum(s <= tol * scale))
    if nullity != 1:
        raise NonUniqueSteadyState(f"even-sector null space has dimension {nullity}")
    full = np.zeros(d * d, dtype=complex)
    full[mask] = vh[-1].conj()
    rho = full.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho)
    resid = np.linalg.norm(liouvillian_apply(model, rho))
    if resid > 1e-10:
        raise NonUniqueSteadyState(f"steady-state residual {resid:.3e} exceeds 1e-10")
    return ConditionalState(rho, model.space)
