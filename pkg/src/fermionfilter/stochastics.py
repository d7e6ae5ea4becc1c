"""Counting records for fermion channel 0 and the fermion quantum filter.

Records are synthesized by Bernoulli thinning on a fixed grid: in each step
a detection occurs with probability ``intensity * dt`` where the intensity
is ``tr(L0 rho L0^*)``.  The conditional state is then updated with

* a detection:   ``rho <- L0 rho L0^* / tr(L0 rho L0^*)``
* no detection:  integrate
  ``d rho = [Liouvillian(rho) - L0 rho L0^* + tr(L0 rho L0^*) rho] dt``
  over one step, then divide by the trace.

Two no-detection schemes are available.  ``"exponential"`` (the default)
applies ``exp(dt (Liouvillian - L0 . L0^*))``, the exact flow, which is
completely positive, so states stay positive semidefinite.  ``"euler"``
takes one explicit Euler step of the normalized equation; it is cheaper to
reason about but loses positivity at order ``dt`` for models with coherent
couplings (the atom/photodetector preset reaches eigenvalues near
``-0.16 dt``), which the invariant checks then reject.

The filter consuming a record uses exactly the same update, so a filter
started from the generating state reproduces the generating trajectory.

Uniform variates come from numpy's Philox counter-based generator keyed by
``(seed, trajectory_id)``; the draw for step ``k`` is the ``k``-th output of
that stream, independent of how trajectories are batched or distributed.

Internally states are handled as row-major vectorized matrices, one row per
trajectory, so that a batch of trajectories advances with a few matrix
products per step.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import algebra as alg
from .dynamics import (
    EVENNESS_TOL,
    HERMITIAN_TOL,
    POSITIVITY_TOL,
    TRACE_TOL,
    ConditionalState,
    _check_rho,
    check_states,
    liouvillian_superop,
    n_steps_for,
    state_violations,
    superoperator,
)
from .errors import DegenerateRatio, InvariantViolation, UnsafeTimeStep
from .models import RATIO_FLOOR, SystemModel, _check_scheme
from .records import MeasurementRecord, fmt

#: Upper bound on ``dt * ||L0||^2``, the worst-case jump probability per step.
MAX_JUMP_PROBABILITY = 0.1

INTENSITY_TOL = 1e-12

_SEED_MASK = (1 << 64) - 1


def uniform_stream(seed: int, trajectory_id: int) -> np.random.Generator:
    """Philox stream for one trajectory; key = ``seed + 2**64 * trajectory_id``."""
    key = (int(seed) & _SEED_MASK) | ((int(trajectory_id) & _SEED_MASK) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def check_time_step(model: SystemModel, dt):
    bound = float(np.linalg.norm(model.L0.matrix, 2) ** 2)
    if dt * bound > MAX_JUMP_PROBABILITY:
        raise UnsafeTimeStep(
            f"dt * ||L0||^2 = {dt * bound:.3g} exceeds {MAX_JUMP_PROBABILITY}; reduce dt")


class _Kernel:
    """Per-step maps for a fixed model and step size, in vectorized form."""

    def __init__(self, model: SystemModel, dt: float, scheme="exponential"):
        _check_scheme(scheme)
        model.require_valid()
        check_time_step(model, dt)
        d = model.dim
        L0 = model.L0.matrix
        L0d = L0.conj().T
        Lsup = liouvillian_superop(model)
        Jsup = superoperator(lambda r: L0 @ r @ L0d, d)
        eye = np.eye(d * d, dtype=complex)
        self.model = model
        self.d = d
        self.dt = dt
        self.scheme = scheme
        self.diag = np.arange(d) * (d + 1)
        if scheme == "euler":
            step = eye + dt * (Lsup - Jsup)
        else:
            step = expm(dt * (Lsup - Jsup))
        self.no_jump_T = np.ascontiguousarray(step.T)
        self.jump_T = np.ascontiguousarray(Jsup.T)
        self.kvec = Jsup[self.diag].sum(axis=0)

    def intensity(self, V):
        return (V @ self.kvec).real

    def no_jump(self, V, rate):
        W = V @ self.no_jump_T
        if self.scheme == "euler":
            W += (self.dt * rate)[:, None] * V
        W /= W[:, self.diag].sum(axis=1)[:, None]
        return W

    def jump(self, V, rate):
        return (V @ self.jump_T) / rate[:, None]


def _as_state_vec(model, rho):
    r = _check_rho(model, rho)
    if r.ndim != 2:
        raise ValueError("expected a single density matrix")
    check_states(r, model.space)
    return r.reshape(1, -1).astype(complex)


def jump_intensity(model: SystemModel, state) -> float:
    """``tr(L0 rho L0^*)``, the detection rate in channel 0."""
    rho = _check_rho(model, state)
    L0 = model.L0.matrix
    return float(np.trace(L0 @ rho @ L0.conj().T).real)


def no_jump_step(model: SystemModel, state, dt, scheme="exponential") -> ConditionalState:
    """Conditional state after an interval ``dt`` without detection."""
    k = _Kernel(model, dt, scheme)
    V = _as_state_vec(model, state)
    rate = k.intensity(V)
    out = k.no_jump(V, rate).reshape(model.dim, model.dim)
    return ConditionalState(out, model.space)


def jump_apply(model: SystemModel, state) -> ConditionalState:
    """Conditional state right after a detection in channel 0."""
    rho = _check_rho(model, state)
    rate = jump_intensity(model, rho)
    if rate < RATIO_FLOOR:
        raise DegenerateRatio(f"detection at intensity {rate:.3e}")
    L0 = model.L0.matrix
    out = L0 @ rho @ L0.conj().T / rate
    return ConditionalState(out, model.space)


@dataclass
class FilterRun:
    """Conditional trajectory produced by (or consumed as) a counting record.

    ``intensities[k]`` and ``innovations[k]`` refer to step ``k``, i.e. the
    interval ``[times[k], times[k+1])``.  ``expectations`` holds
    ``tr(rho(t) X)`` at every grid time for the observables requested when
    the run was made; ``rhos`` holds the states at ``stored_steps``.
    """

    times: np.ndarray
    intensities: np.ndarray
    innovations: np.ndarray
    record: MeasurementRecord
    expectations: dict
    rhos: np.ndarray
    stored_steps: np.ndarray
    space: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def W(self):
        """Innovations process ``W(t_k)``, with ``W(t_0) = 0``."""
        return np.concatenate([[0.0], np.cumsum(self.innovations)])

    @property
    def states(self):
        return [ConditionalState(r, self.space, check=False) for r in self.rhos]

    def expect(self, X):
        """``tr(rho X)`` at the stored steps."""
        x = X.matrix if isinstance(X, alg.GradedOperator) else np.asarray(X)
        return np.einsum("kij,ji->k", self.rhos, x)

    def to_csv(self, path, names=None):
        """Write ``step,t,intensity,dW,<observables>`` (one row per step)."""
        names = list(self.expectations) if names is None else list(names)
        header, cols = ["step", "t", "intensity", "dW"], []
        for name in names:
            vals = self.expectations[name][:-1]
            if np.all(vals.imag == 0) or np.max(np.abs(vals.imag)) <= 1e-12 * max(1.0, np.max(np.abs(vals))):
                header.append(name)
                cols.append(vals.real)
            else:
                header += [f"{name}.re", f"{name}.im"]
                cols += [vals.real, vals.imag]
        n = len(self.intensities)
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(n):
                row = [str(k), fmt(self.times[k]), fmt(self.intensities[k]), fmt(self.innovations[k])]
                row += [fmt(c[k]) for c in cols]
                fh.write(",".join(row) + "\n")


def _observable_matrix(model, observables):
    names = list(observables)
    mats = []
    for name in names:
        X = observables[name]
        x = X.matrix if isinstance(X, alg.GradedOperator) else np.asarray(X)
        mats.append(x.T.reshape(-1))
    if not mats:
        return names, np.zeros((model.dim ** 2, 0), dtype=complex)
    return names, np.stack(mats, axis=1).astype(complex)


def _resolve_observables(model, observables):
    if observables is None:
        return dict(model.catalog)
    if isinstance(observables, dict):
        return observables
    return {name: model.observable(name) for name in observables}


def _propagate(kernel: _Kernel, V0, n_steps, *, dY=None, streams=None, obs_mat=None,
               store_every=1, sample_every=1, chunk=2048, check=True):
    """Advance a batch of conditional states over ``n_steps``.

    Exactly one of ``dY`` (given records, shape ``(N, n)``) and ``streams``
    (one uniform generator per trajectory) must be provided.

    Returns a dict with increments, intensities, observable samples (every
    ``sample_every`` steps, plus the last), stored states and invariant
    diagnostics.
    """
    N, D = V0.shape
    d = kernel.d
    space = kernel.model.space
    dt = kernel.dt
    simulate = streams is not None
    n_obs = 0 if obs_mat is None else obs_mat.shape[1]

    sample_steps = np.arange(0, n_steps + 1, sample_every)
    if sample_steps[-1] != n_steps:
        sample_steps = np.append(sample_steps, n_steps)
    store_steps = np.arange(0, n_steps + 1, store_every) if store_every else np.array([0, n_steps])
    if store_steps[-1] != n_steps:
        store_steps = np.append(store_steps, n_steps)

    incs = np.zeros((N, n_steps), dtype=np.int8)
    rates = np.empty((N, n_steps))
    samples = np.empty((N, len(sample_steps), n_obs), dtype=complex)
    stored = np.empty((N, len(store_steps), D), dtype=complex)
    diag = {"max_hermiticity": 0.0, "max_trace_error": 0.0, "min_eigenvalue": np.inf,
            "max_odd_part": 0.0, "min_intensity": np.inf, "n_jumps": 0}

    sample_pos = {int(s): i for i, s in enumerate(sample_steps)}
    store_pos = {int(s): i for i, s in enumerate(store_steps)}
    buf = np.empty((chunk, N, D), dtype=complex)

    def flush(start, count):
        # states buf[:count] are at steps start..start+count-1
        block = buf[:count]
        if check:
            mats = block.reshape(count * N, d, d)
            v = state_violations(mats, space)
            diag["max_hermiticity"] = max(diag["max_hermiticity"], float(v["hermiticity"].max()))
            diag["max_trace_error"] = max(diag["max_trace_error"], float(v["trace"].max()))
            diag["min_eigenvalue"] = min(diag["min_eigenvalue"], float(v["min_eig"].min()))
            diag["max_odd_part"] = max(diag["max_odd_part"], float(v["evenness"].max()))
            bad = ((v["hermiticity"] > HERMITIAN_TOL) | (v["trace"] > TRACE_TOL)
                   | (v["min_eig"] < -POSITIVITY_TOL) | (v["evenness"] > EVENNESS_TOL))
            if np.any(bad):
                i = int(np.argmax(bad))
                check_states(mats[i], space, step_offset=start + i // N)
        for j in range(count):
            step = start + j
            if step in sample_pos and n_obs:
                samples[:, sample_pos[step]] = block[j] @ obs_mat
            if step in store_pos:
                stored[:, store_pos[step]] = block[j]

    V = V0.copy()
    buf[0] = V
    filled, start = 1, 0
    chunk_u = None
    for k in range(n_steps):
        rate = kernel.intensity(V)
        rates[:, k] = rate
        if simulate:
            if k % chunk == 0:
                m = min(chunk, n_steps - k)
                chunk_u = np.stack([s.random(m) for s in streams])
            jumped = chunk_u[:, k % chunk] < rate * dt
        else:
            jumped = dY[:, k] == 1
        Vn = kernel.no_jump(V, rate)
        if jumped.any():
            idx = np.flatnonzero(jumped)
            low = rate[idx] < RATIO_FLOOR
            if low.any():
                raise DegenerateRatio(
                    f"detection demanded at intensity {rate[idx[low][0]]:.3e}", step=k)
            Vn[idx] = kernel.jump(V[idx], rate[idx])
            incs[idx, k] = 1
        V = Vn
        if filled == chunk:
            flush(start, filled)
            start += filled
            filled = 0
        buf[filled] = V
        filled += 1
    flush(start, filled)

    if n_steps:
        diag["min_intensity"] = float(rates.min())
        if diag["min_intensity"] < -INTENSITY_TOL:
            k = int(np.argmin(rates.min(axis=0)))
            raise InvariantViolation(f"negative intensity {diag['min_intensity']:.3e}", step=k)
    diag["n_jumps"] = int(incs.sum())
    return {"increments": incs, "intensities": rates, "samples": samples,
            "sample_steps": sample_steps, "stored": stored, "store_steps": store_steps,
            "final": V, "diagnostics": diag}


def _runs_from(kernel, out, records, names, t0):
    d = kernel.d
    runs = []
    n = out["intensities"].shape[1]
    times = t0 + kernel.dt * np.arange(n + 1)
    per_step = np.array_equal(out["sample_steps"], np.arange(n + 1))
    for i, rec in enumerate(records):
        innov = rec.increments - out["intensities"][i] * kernel.dt
        if per_step:
            ex = {name: out["samples"][i, :, j] for j, name in enumerate(names)}
        else:
            ex = {}
        diag = dict(out["diagnostics"], n_jumps=int(rec.increments.sum()))
        runs.append(FilterRun(times, out["intensities"][i], innov, rec, ex,
                              out["stored"][i].reshape(-1, d, d), out["store_steps"],
                              kernel.model.space, diag))
    return runs


def simulate_records(model: SystemModel, rho0, T, dt, seed, trajectory_ids,
                     observables=None, store_every=1, t0=0.0, check=True,
                     scheme="exponential"):
    """Synthesize several counting records in one vectorized batch.

    Returns a list of ``(MeasurementRecord, FilterRun)`` pairs, one per
    trajectory id; the run is the generating conditional trajectory.
    """
    n = n_steps_for(T, dt)
    kernel = _Kernel(model, dt, scheme)
    v0 = _as_state_vec(model, rho0)
    ids = [int(i) for i in trajectory_ids]
    V0 = np.repeat(v0, len(ids), axis=0)
    names, obs_mat = _observable_matrix(model, _resolve_observables(model, observables))
    streams = [uniform_stream(seed, i) for i in ids]
    out = _propagate(kernel, V0, n, streams=streams, obs_mat=obs_mat,
                     store_every=store_every, check=check)
    records = [MeasurementRecord(t0, dt, out["increments"][i], seed=int(seed) & _SEED_MASK,
                                 trajectory_id=tid) for i, tid in enumerate(ids)]
    runs = _runs_from(kernel, out, records, names, t0)
    return list(zip(records, runs))


def simulate_record(model: SystemModel, rho0, T, dt, seed, trajectory_id=0,
                    observables=None, store_every=1, t0=0.0, check=True,
                    scheme="exponential"):
    """Synthesize one counting record and its generating conditional state."""
    return simulate_records(model, rho0, T, dt, seed, [trajectory_id],
                            observables=observables, store_every=store_every, t0=t0,
                            check=check, scheme=scheme)[0]


def run_filters(model: SystemModel, rho0_hat, records, observables=None, store_every=1,
                check=True, scheme="exponential"):
    """Run the quantum filter on several records sharing one time grid."""
    records = list(records)
    first = records[0]
    for rec in records[1:]:
        rec.check_grid(dt=first.dt, n_steps=first.n_steps)
    if not all(rec.counting for rec in records):
        raise ValueError("the fermion filter needs counting (0/1) records")
    kernel = _Kernel(model, first.dt, scheme)
    v0 = _as_state_vec(model, rho0_hat)
    V0 = np.repeat(v0, len(records), axis=0)
    dY = np.stack([rec.increments for rec in records])
    names, obs_mat = _observable_matrix(model, _resolve_observables(model, observables))
    out = _propagate(kernel, V0, first.n_steps, dY=dY, obs_mat=obs_mat,
                     store_every=store_every, check=check)
    return _runs_from(kernel, out, records, names, first.t0)


def run_filter(model: SystemModel, rho0_hat, record: MeasurementRecord, observables=None,
               store_every=1, check=True, scheme="exponential") -> FilterRun:
    """Conditional state given a counting record in channel 0.

    ``rho0_hat`` is the filter's prior and may differ from the state that
    generated the record.  A detection at vanishing filtered intensity
    raises :class:`DegenerateRatio`.
    """
    return run_filters(model, rho0_hat, [record], observables=observables,
                       store_every=store_every, check=check, scheme=scheme)[0]


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleResult:
    """Observable samples of many generating trajectories.

    ``values`` has shape ``(n_traj, n_samples, n_obs)``; rows are sorted by
    trajectory id.  ``W_T`` is the innovations process at the final time.
    """

    times: np.ndarray
    names: list
    values: np.ndarray
    W_T: np.ndarray
    n_jumps: np.ndarray
    trajectory_ids: np.ndarray
    diagnostics: dict

    def _col(self, name):
        return self.values[:, :, self.names.index(name)]

    def mean(self, name):
        return self._col(name).mean(axis=0)

    def stderr(self, name):
        x = self._col(name)
        return x.real.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def _ensemble_chunk(args):
    model, rho0, T, dt, seed, ids, obs, sample_every, scheme = args
    n = n_steps_for(T, dt)
    kernel = _Kernel(model, dt, scheme)
    v0 = _as_state_vec(model, rho0)
    V0 = np.repeat(v0, len(ids), axis=0)
    names, obs_mat = _observable_matrix(model, obs)
    streams = [uniform_stream(seed, i) for i in ids]
    out = _propagate(kernel, V0, n, streams=streams, obs_mat=obs_mat,
                     store_every=0, sample_every=sample_every)
    W_T = out["increments"].sum(axis=1) - out["intensities"].sum(axis=1) * dt
    return (np.asarray(ids), out["sample_steps"], out["samples"], W_T,
            out["increments"].sum(axis=1), out["diagnostics"])


def run_ensemble(model: SystemModel, rho0, T, dt, n_traj, seed, observables=None,
                 sample_every=1, chunk_size=250, workers=1, first_id=0,
                 scheme="exponential") -> EnsembleResult:
    """Simulate ``n_traj`` trajectories and collect observable samples.

    Trajectories are split into fixed chunks of ``chunk_size`` ids, so the
    result does not depend on ``workers``.
    """
    obs = _resolve_observables(model, observables)
    ids = np.arange(first_id, first_id + n_traj)
    chunks = [ids[i:i + chunk_size].tolist() for i in range(0, n_traj, chunk_size)]
    jobs = [(model, rho0, T, dt, seed, c, obs, sample_every, scheme) for c in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ensemble_chunk, jobs))
    else:
        parts = [_ensemble_chunk(j) for j in jobs]
    parts.sort(key=lambda p: p[0][0])
    steps = parts[0][1]
    diag = {}
    for p in parts:
        for key, val in p[5].items():
            if key.startswith("min"):
                diag[key] = min(diag.get(key, np.inf), val)
            elif key == "n_jumps":
                diag[key] = diag.get(key, 0) + val
            else:
                diag[key] = max(diag.get(key, 0.0), val)
    return EnsembleResult(
        times=steps * dt,
        names=list(obs),
        values=np.concatenate([p[2] for p in parts]),
        W_T=np.concatenate([p[3] for p in parts]),
        n_jumps=np.concatenate([p[4] for p in parts]),
        trajectory_ids=np.concatenate([p[0] for p in parts]),
        diagnostics=diag,
    )
