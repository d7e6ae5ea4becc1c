"""Averaging filtered estimates over many records recovers the master equation.

The mean of the conditional expectations equals the unconditional
expectation, and the innovations have mean zero.  Both are checked here
with 2000 trajectories spread over worker processes.
"""
import numpy as np

from fermionfilter import DotParams, evolve_master, quantum_dot, run_ensemble

dot = quantum_dot(DotParams(1.0, 2.0))
rho0 = np.diag([1.0, 0.0])
ens = run_ensemble(dot, rho0, T=5.0, dt=1e-3, n_traj=2000, seed=99, observables=["n"],
                   sample_every=500, workers=2)
master = evolve_master(dot, rho0, T=5.0, dt=1e-3, store_every=500)
mu = master.expect(dot.observable("n")).real
for t, m, se, u in zip(ens.times, ens.mean("n").real, ens.stderr("n"), mu):
    print(f"t={t:3.1f}  ensemble={m:.4f} +/- {se:.4f}  master={u:.4f}")

W = ens.W_T
print(f"mean W(T) = {W.mean():+.4f}, standard error {W.std(ddof=1) / np.sqrt(W.size):.4f}")
