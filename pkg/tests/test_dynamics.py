import numpy as np
import pytest
from scipy.linalg import expm

from fermionfilter import algebra as alg
from fermionfilter import dynamics as dyn
from fermionfilter import models as M
from fermionfilter.errors import (
    DimensionMismatch,
    InvariantViolation,
    MixedParity,
    NonUniqueSteadyState,
)

from oracles import dot_occupation, model_lindbladian, random_even_state

DOT = M.quantum_dot(M.DotParams(1.0, 2.0))
DET = M.photodetector(M.DetectorParams(1.0, 1.0, 1.0, 1.0))
DET_SIGNS = np.kron([1, 1], [1, 1, -1])


@pytest.mark.parametrize("model", [DOT, DET, M.photodetector(M.DetectorParams(0.2, 3, 0.5, 1.5))],
                         ids=["dot", "det", "det2"])
def test_liouvillian_matches_kron_oracle(model):
    assert np.allclose(dyn.liouvillian_superop(model), model_lindbladian(model), atol=1e-13)


def test_liouvillian_is_trace_free_and_batched():
    rng = np.random.default_rng(0)
    rhos = np.stack([random_even_state(rng, DET_SIGNS) for _ in range(4)])
    out = dyn.liouvillian_apply(DET, rhos)
    assert out.shape == rhos.shape
    assert np.max(np.abs(np.trace(out, axis1=1, axis2=2))) < 1e-14
    assert np.allclose(out[2], dyn.liouvillian_apply(DET, rhos[2]))
    with pytest.raises(DimensionMismatch):
        dyn.liouvillian_apply(DET, np.eye(2))


def test_heisenberg_dual_for_even_observables():
    rng = np.random.default_rng(1)
    for name in ("n", "sigma_22", "sigma_12p", "sigma_33pm", "sigma_z"):
        X = DET.observable(name)
        for _ in range(3):
            rho = random_even_state(rng, DET_SIGNS)
            lhs = np.trace(X.matrix @ dyn.liouvillian_apply(DET, rho))
            rhs = np.trace(dyn.heisenberg_apply(DET, X) @ rho)
            assert abs(lhs - rhs) < 1e-12


def test_heisenberg_odd_dot_operator():
    c = DOT.observable("c")
    assert np.allclose(dyn.heisenberg_apply(DOT, c), -1.5 * c.matrix)
    with pytest.raises(MixedParity):
        dyn.heisenberg_apply(DOT, c + DOT.observable("n"))


def test_heisenberg_atomic_decay():
    # d<n>/dt = -kappa <n> when the detector is decoupled
    m = M.photodetector(M.DetectorParams(0.7, 0, 0, 0))
    n = m.observable("n")
    assert np.allclose(dyn.heisenberg_apply(m, n), -0.7 * n.matrix)


def test_conditional_state_rejects_invalid():
    F = (alg.fermion_space(),)
    dyn.ConditionalState(np.diag([0.5, 0.5]), F)
    for bad in (np.diag([0.5, 0.6]),                 # trace
                np.array([[0.5, 0.1], [0.1, 0.5]]),  # odd part
                np.diag([1.2, -0.2]),                # negative
                np.array([[0.5, 0.0], [1e-3, 0.5]])):
        with pytest.raises(InvariantViolation):
            dyn.ConditionalState(bad, F)
    # tolerance on negativity
    dyn.ConditionalState(np.diag([1 + 5e-9, -5e-9]), F)


def test_expectation():
    st = dyn.ConditionalState(np.diag([0.25, 0.75]), DOT.space)
    assert st.expect(DOT.observable("n")) == pytest.approx(0.75)
    assert st.expect(DOT.observable("c")) == 0
    with pytest.raises(DimensionMismatch):
        dyn.expectation(st, np.eye(3))


def test_evolve_master_matches_closed_form():
    run = dyn.evolve_master(DOT, np.diag([1.0, 0.0]), 3.0, 1e-3, store_every=10)
    exact = dot_occupation(run.times, 1.0, 2.0, 0.0)
    assert np.max(np.abs(run.expect(DOT.observable("n")).real - exact)) < 1e-12
    assert len(run.times) == 301 and run.times[-1] == pytest.approx(3.0)


def test_evolve_master_matches_expm():
    rng = np.random.default_rng(2)
    rho0 = random_even_state(rng, DET_SIGNS)
    run = dyn.evolve_master(DET, rho0, 2.0, 1e-3, store_every=500)
    A = model_lindbladian(DET)
    for t, rho in zip(run.times, run.rhos):
        ref = (expm(t * A) @ rho0.reshape(-1)).reshape(6, 6)
        assert np.max(np.abs(rho - ref)) < 1e-12


def test_rk4_propagator_is_taylor_polynomial():
    A = model_lindbladian(DET)
    h = 1e-2
    v = np.random.default_rng(3).normal(size=36).astype(complex)
    k1 = A @ v
    k2 = A @ (v + h / 2 * k1)
    k3 = A @ (v + h / 2 * k2)
    k4 = A @ (v + h * k3)
    rk4 = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(dyn.rk4_propagator(A, h) @ v, rk4, atol=1e-14)


def test_evolve_master_rejects_bad_grid_and_state():
    with pytest.raises(ValueError):
        dyn.evolve_master(DOT, np.diag([1.0, 0.0]), 1.0005, 1e-3)
    with pytest.raises(InvariantViolation):
        dyn.evolve_master(DOT, np.diag([1.1, -0.1]), 1.0, 1e-3)


def test_empty_source_drains_dot():
    m = M.quantum_dot(M.DotParams(0.0, 1.0))
    run = dyn.evolve_master(m, np.diag([0.0, 1.0]), 20.0, 1e-3, store_every=1000)
    assert run.expect(m.observable("n"))[-1].real < 1e-8
    assert dyn.steady_state(m).expect(m.observable("n")).real < 1e-12


def test_steady_state_dot():
    ss = dyn.steady_state(DOT)
    assert np.allclose(ss.rho, np.diag([2 / 3, 1 / 3]), atol=1e-12)


def test_steady_state_photodetector_is_stationary():
    ss = dyn.steady_state(DET)
    assert np.linalg.norm(dyn.liouvillian_apply(DET, ss.rho)) < 1e-10


def test_steady_state_non_unique():
    F = (alg.fermion_space(),)
    with pytest.raises(NonUniqueSteadyState):
        dyn.steady_state(M.SystemModel.from_matrices(F))
