"""Electron counting on the drain lead and the filter that reads the counts.

Each detection empties the dot.  Between detections the estimate drifts
toward the source-fed value and is pulled down by the absence of clicks.
"""
import numpy as np

from fermionfilter import DotParams, dot_scalar_filter, quantum_dot, run_filter, simulate_record

params = DotParams(1.0, 2.0)
dot = quantum_dot(params)
empty = np.diag([1.0, 0.0])

# %% A reproducible record: the same (seed, trajectory id) gives the same clicks.
record, truth = simulate_record(dot, empty, T=10.0, dt=1e-3, seed=2024, trajectory_id=0,
                                observables=["n", "c"], store_every=0)
clicks = np.flatnonzero(record.increments) * record.dt
print(f"{clicks.size} detections, first few at t =", np.round(clicks[:6], 3))

# %% Filtering the record from a wrong prior (dot believed full).
# Certainty is a fixed point of the no-click flow, so the wrong estimate
# holds at 1 until the first click empties the dot in both pictures.
est = run_filter(dot, np.diag([0.0, 1.0]), record, observables=["n", "c"], store_every=0)
for t in (0.0, 0.5, 1.0, 2.0, 5.0, 10.0):
    k = int(round(t / record.dt))
    print(f"t={t:4.1f}  true-prior <n>={truth.expectations['n'][k].real:.4f}"
          f"  wrong-prior <n>={est.expectations['n'][k].real:.4f}")
print("largest |<c>| along the run:", np.abs(est.expectations["c"]).max())

# %% The same estimate from the one-line scalar filter.
scalar = dot_scalar_filter(record, params, n0=1.0)
print("matrix vs scalar filter:", np.abs(est.expectations["n"].real - scalar.values).max())

# %% Innovations: counts minus the filtered intensity.
print("W(T) =", est.W[-1])
