"""A quantum dot between two leads.

The source lead is fully occupied and feeds electrons in at rate gamma_L.
The drain lead is empty and takes them out at rate gamma_R.  On average the
dot relaxes to occupation gamma_L / (gamma_L + gamma_R).
"""
import numpy as np

from fermionfilter import DotParams, evolve_master, quantum_dot, steady_state

params = DotParams(gamma_L=1.0, gamma_R=2.0)
dot = quantum_dot(params)
print(dot.report)

# %% Operators carry their parity: the annihilator is odd, the number operator even.
c, n = dot.observable("c"), dot.observable("n")
print("c parity:", c.parity.name, " n parity:", n.parity.name)

# %% Master equation from an empty dot.
run = evolve_master(dot, np.diag([1.0, 0.0]), T=5.0, dt=1e-3, store_every=500)
exact = 1 / 3 * (1 - np.exp(-3 * run.times))
for t, v, e in zip(run.times, run.expect(n).real, exact):
    print(f"t={t:4.1f}  <n>={v:.10f}  closed form={e:.10f}")

# %% The stationary state from the null space of the generator.
ss = steady_state(dot)
print("steady <n> =", ss.expect(n).real, "expected", 1 / 3)
