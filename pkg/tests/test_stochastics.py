import numpy as np
import pytest

from fermionfilter import models as M
from fermionfilter import stochastics as S
from fermionfilter.dynamics import ConditionalState
from fermionfilter.errors import DegenerateRatio, GridMismatch, InvariantViolation, UnsafeTimeStep
from fermionfilter.records import MeasurementRecord, read_table

from oracles import logistic_no_detection

DOTP = M.DotParams(1.0, 2.0)
DOT = M.quantum_dot(DOTP)
DETP = M.DetectorParams(1.0, 1.0, 1.0, 1.0)
DET = M.photodetector(DETP)
EMPTY, FULL = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])


def det_state(index):
    rho = np.zeros((6, 6), dtype=complex)
    rho[index, index] = 1
    return rho


def test_jump_intensity_examples():
    assert S.jump_intensity(DOT, FULL) == pytest.approx(2.0)
    assert S.jump_intensity(DOT, EMPTY) == 0.0
    # atom ground (0), detector level 2 (index 1)
    assert S.jump_intensity(DET, det_state(1)) == pytest.approx(1.0)
    assert S.jump_intensity(DET, ConditionalState(det_state(4), DET.space)) == pytest.approx(1.0)


def test_no_jump_fixed_point_for_empty_dot():
    m = M.quantum_dot(M.DotParams(0.0, 1.0))
    out = S.no_jump_step(m, EMPTY, 1e-2)
    assert np.array_equal(out.rho, EMPTY)


@pytest.mark.parametrize("scheme", M.SCHEMES)
def test_repeated_no_jump_steps_follow_logistic(scheme):
    m = M.quantum_dot(M.DotParams(0.0, 1.0))
    dt = 1e-3
    st = ConditionalState(np.diag([0.5, 0.5]), m.space)
    for _ in range(1000):
        st = S.no_jump_step(m, st, dt, scheme=scheme)
    ref = logistic_no_detection(1.0, 1.0, 0.5)
    tol = 1e-12 if scheme == "exponential" else 10 * dt
    assert abs(st.rho[1, 1].real - ref) < tol


def test_euler_step_halving_is_second_order():
    m = M.quantum_dot(M.DotParams(0.5, 1.0))
    rho = np.diag([0.3, 0.7])
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        one = S.no_jump_step(m, rho, dt, scheme="euler").rho
        two = S.no_jump_step(m, S.no_jump_step(m, rho, dt / 2, scheme="euler"), dt / 2,
                             scheme="euler").rho
        errs.append(np.abs(one - two).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_euler_loses_positivity_on_coherent_model():
    st = ConditionalState(det_state(3), DET.space)     # atom excited, detector |1>
    with pytest.raises(InvariantViolation):
        for _ in range(5):
            st = S.no_jump_step(DET, st, 1e-4, scheme="euler")
    st = ConditionalState(det_state(3), DET.space)
    for _ in range(5):
        st = S.no_jump_step(DET, st, 1e-4)
    assert np.linalg.eigvalsh(st.rho)[0] > -1e-15


def test_jump_apply_examples():
    out = S.jump_apply(DOT, np.diag([0.4, 0.6]))
    assert np.allclose(out.rho, EMPTY)
    out = S.jump_apply(DET, det_state(1))
    assert np.allclose(out.rho, det_state(2))        # level 2 -> level 3
    with pytest.raises(DegenerateRatio):
        S.jump_apply(DOT, EMPTY)


def test_unsafe_time_step_rejected():
    with pytest.raises(UnsafeTimeStep):
        S.simulate_record(DOT, FULL, 1.0, 0.1, seed=0)


def test_no_drain_gives_empty_record():
    m = M.quantum_dot(M.DotParams(1.0, 0.0))
    rec, run = S.simulate_record(m, EMPTY, 2.0, 1e-3, seed=3)
    assert not rec.increments.any()
    assert np.all(run.intensities == 0)


def test_replay_is_bit_identical():
    a = S.simulate_record(DOT, EMPTY, 3.0, 1e-3, seed=99, trajectory_id=5)
    b = S.simulate_record(DOT, EMPTY, 3.0, 1e-3, seed=99, trajectory_id=5)
    assert np.array_equal(a[0].increments, b[0].increments)
    assert np.array_equal(a[1].rhos, b[1].rhos)
    c = S.simulate_record(DOT, EMPTY, 3.0, 1e-3, seed=99, trajectory_id=6)
    assert not np.array_equal(a[0].increments, c[0].increments)


def test_batching_does_not_change_records():
    batch = S.simulate_records(DOT, EMPTY, 2.0, 1e-3, seed=12, trajectory_ids=[0, 1, 2, 3],
                               store_every=0)
    single = S.simulate_record(DOT, EMPTY, 2.0, 1e-3, seed=12, trajectory_id=2, store_every=0)
    assert np.array_equal(batch[2][0].increments, single[0].increments)
    assert np.allclose(batch[2][1].expectations["n"], single[1].expectations["n"], atol=1e-14)


def test_empirical_jump_rate_at_steady_state():
    ss = np.diag([2 / 3, 1 / 3])
    pairs = S.simulate_records(DOT, ss, 50.0, 1e-3, seed=2024, trajectory_ids=range(40),
                               observables=["n"], store_every=0)
    rates = np.array([rec.increments.sum() / rec.T for rec, _ in pairs])
    se = rates.std(ddof=1) / np.sqrt(len(rates))
    assert abs(rates.mean() - 2 / 3) <= 3 * se


def test_filter_at_true_state_reproduces_trajectory():
    rec, truth = S.simulate_record(DOT, EMPTY, 5.0, 1e-3, seed=8, store_every=7)
    run = S.run_filter(DOT, EMPTY, rec, store_every=7)
    assert np.array_equal(run.rhos, truth.rhos)
    assert np.array_equal(run.intensities, truth.intensities)
    assert np.array_equal(run.stored_steps, truth.stored_steps)


def test_odd_expectations_vanish():
    rec, _ = S.simulate_record(DET, det_state(4), 3.0, 1e-3, seed=3, store_every=0,
                               observables=["sigma_32", "sigma_13", "n"])
    run = S.run_filter(DET, np.eye(6) / 6, rec, observables=["sigma_32", "sigma_13"],
                       store_every=0)
    for name in ("sigma_32", "sigma_13"):
        assert np.max(np.abs(run.expectations[name])) <= 1e-12


def test_degenerate_record_rejected():
    rec = MeasurementRecord(0.0, 1e-3, [0, 1, 0])
    m = M.quantum_dot(M.DotParams(0.0, 1.0))
    with pytest.raises(DegenerateRatio) as info:
        S.run_filter(m, EMPTY, rec)
    assert info.value.step == 1


def test_filters_need_common_grid():
    a = MeasurementRecord(0.0, 1e-3, [0, 0])
    b = MeasurementRecord(0.0, 2e-3, [0, 0])
    with pytest.raises(GridMismatch):
        S.run_filters(DOT, EMPTY, [a, b])
    with pytest.raises(ValueError):
        S.run_filter(DOT, EMPTY, MeasurementRecord(0.0, 1e-3, [0.5, 0.1], counting=False))


def test_filter_forgets_wrong_prior():
    # true dot starts empty, filter believes it is full
    pairs = S.simulate_records(DOT, EMPTY, 10.0, 1e-3, seed=77, trajectory_ids=range(20),
                               store_every=0)
    recs = [r for r, _ in pairs]
    runs = S.run_filters(DOT, FULL, recs, store_every=0)
    half = len(recs[0].times) // 2
    sup = [np.max(np.abs(run.expectations["n"][half:] - truth.expectations["n"][half:]))
           for run, (_, truth) in zip(runs, pairs)]
    assert np.mean(sup) < 0.05


def test_halving_dt_changes_path_by_order_dt():
    rec, _ = S.simulate_record(DOT, EMPTY, 5.0, 2e-3, seed=21, store_every=0)
    fine_inc = np.zeros(2 * rec.n_steps, dtype=int)
    fine_inc[0::2] = rec.increments
    fine = MeasurementRecord(0.0, 1e-3, fine_inc)
    coarse = S.run_filter(DOT, EMPTY, rec, store_every=0).expectations["n"].real
    refined = S.run_filter(DOT, EMPTY, fine, store_every=0).expectations["n"].real[::2]
    assert np.max(np.abs(coarse - refined)) <= 10 * rec.dt


def test_filter_run_exports(tmp_path):
    rec, run = S.simulate_record(DOT, EMPTY, 1.0, 1e-2, seed=4, observables=["n", "c"])
    assert run.W[0] == 0 and np.isclose(run.W[-1], run.innovations.sum())
    assert np.allclose(run.innovations, rec.increments - run.intensities * rec.dt)
    assert np.allclose(run.expect(DOT.observable("n")), run.expectations["n"])
    path = tmp_path / "run.csv"
    run.to_csv(path)
    table = read_table(path)
    assert list(table) == ["step", "t", "intensity", "dW", "n", "c"]
    assert np.array_equal(table["dW"], run.innovations)
    assert np.array_equal(table["n"], run.expectations["n"][:-1].real)
    assert len(run.states) == rec.n_steps + 1


def test_ensemble_independent_of_chunks_and_workers():
    kw = dict(observables=["n"], sample_every=50)
    a = S.run_ensemble(DOT, EMPTY, 1.0, 1e-3, 12, seed=5, chunk_size=5, **kw)
    b = S.run_ensemble(DOT, EMPTY, 1.0, 1e-3, 12, seed=5, chunk_size=5, workers=2, **kw)
    c = S.run_ensemble(DOT, EMPTY, 1.0, 1e-3, 12, seed=5, chunk_size=12, **kw)
    assert np.array_equal(a.values, b.values)
    assert np.allclose(a.values, c.values, atol=1e-14)
    assert np.array_equal(a.n_jumps, c.n_jumps)
    assert np.array_equal(a.trajectory_ids, np.arange(12))
    assert a.times[-1] == pytest.approx(1.0) and len(a.times) == 21
    single = S.simulate_record(DOT, EMPTY, 1.0, 1e-3, seed=5, trajectory_id=7, store_every=0)
    assert a.n_jumps[7] == single[0].increments.sum()
