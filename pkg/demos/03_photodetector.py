"""A two-level atom watched by a three-level fermionic detector.

The excited atom hands its energy to the detector, which promotes an
electron from level 2 to level 3; the level-3 electron leaves through the
output lead and is counted.  The six tracked averages obey a closed set of
equations that the full density-matrix filter must reproduce.
"""
import numpy as np

from fermionfilter import (
    DETECTOR_COMPONENTS, DetectorParams, photodetector, photodetector_scalar_filter,
    run_filter, simulate_record)

params = DetectorParams(kappa=1.0, gamma=1.0, gamma0=1.0, gamma1=1.0)
model = photodetector(params)
print(model.report)

# atom excited, detector evenly spread over its two lower levels
rho0 = np.kron(np.diag([0.0, 1.0]), np.diag([0.5, 0.5, 0.0]))
record, _ = simulate_record(model, rho0, T=5.0, dt=1e-3, seed=11, store_every=0)
print("detections at t =", np.round(np.flatnonzero(record.increments) * record.dt, 3))

run = run_filter(model, rho0, record, observables=DETECTOR_COMPONENTS, store_every=0)
x0 = [np.trace(rho0 @ model.observable(k).matrix) for k in DETECTOR_COMPONENTS]
closed = photodetector_scalar_filter(record, params, x0)
for j, name in enumerate(DETECTOR_COMPONENTS):
    diff = np.abs(run.expectations[name] - closed.values[:, j]).max()
    print(f"{name:12s} final={run.expectations[name][-1].real:+.5f}  max difference={diff:.1e}")
