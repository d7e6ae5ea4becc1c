"""Classical baselines: Kalman-Bucy against a grid density filter.

For a linear signal in Gaussian noise the conditional density stays
Gaussian, so the grid filter's mean must track the Kalman mean.  The
double-well signal shows where the two part ways.
"""
import numpy as np

from fermionfilter import (
    DoubleWellModel, GridDensity, LinearGaussianModel, kalman_run, ks_grid_run,
    simulate_signal_batch)

lin = LinearGaussianModel(a=-1.0, c=1.0)
paths = simulate_signal_batch(lin, T=10.0, dt=1e-3, seed=5, trajectory_ids=[0])
record = paths.record(0)
kal = kalman_run(lin, record)
print("stationary error variance:", kal.variance[-1], " sqrt(2) - 1 =", np.sqrt(2) - 1)

p0 = GridDensity.gaussian(0.0, 1.0, nx=801)
ks = ks_grid_run(lin.g, lin.h, record, p0)
print("grid vs Kalman mean, sup:", np.abs(ks.mean - kal.values).max())

# %% Double well: the posterior can become bimodal.
dw = DoubleWellModel(alpha=2.0, beta=1.0, c=0.5, xi0_var=0.25)
paths = simulate_signal_batch(dw, T=6.0, dt=1e-3, seed=3, trajectory_ids=[0])
res = ks_grid_run(dw.g, dw.h, paths.record(0), GridDensity.gaussian(0.0, 0.25, nx=801),
                  snapshot_times=(0.0, 2.0, 6.0))
for t, dens in sorted(res.snapshots.items()):
    print(f"t={t:3.1f}  mean={dens.mean:+.3f}  variance={dens.variance:.3f}"
          f"  mass left of 0={dens.values[dens.x < 0].sum() * dens.dx:.3f}")
print("true signal at the end:", paths.xi[0, -1])
