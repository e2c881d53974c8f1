"""Borwein-Preiss on a sampled objective, then polynomial approximation of a Lipschitz Phi.

Run:  python demos/bp_and_approx.py
"""
import numpy as np

from kslab import measures as ms
from kslab import model
from kslab.filter import Scenario
from kslab.varprinciple import GaugeFunction, SampledObjective, bp_search, comparison_pipeline, lipschitz_benchmark

grid = ms.DomainGrid(0.0, 1.0, 128, "torus")
fam = ms.build_metric_family(grid, 16)
rho = GaugeFunction(fam)
rng = np.random.default_rng(3)

# objective: closeness to a target bump, with a time preference and noise
target = ms.gaussian_bump(grid, 0.6, 0.08)
points = [(ms.gaussian_bump(grid, rng.uniform(), rng.uniform(0.03, 0.2)), float(rng.uniform(0, 0.5))) for _ in range(150)]
values = np.array([-ms.d2(m, target, fam) - 0.2 * t + 0.01 * rng.normal() for m, t in points])
G = SampledObjective(tuple(points), values, "demo")
eps = 0.02
start = int(np.flatnonzero(values >= values.max() - eps)[-1])
res = bp_search(G, rho, delta=1.0, eps=eps, start=start)
print(f"start {start} -> limit {res.index} via {res.sequence}")
for name, cert in res.certificates.items():
    print(f"  certificate {name}: {'pass' if cert['passed'] else 'FAIL'}")

# polynomial approximations of Phi = d2(., mu*) and the induced u_n at a probe
Phi = lipschitz_benchmark(ms.gaussian_bump(grid, 0.5, 0.1), fam)
samples = [ms.sample_random_measure(grid, s, c) for s, c in zip(range(200), [0.05, 1.0] * 100)]
sc = Scenario(grid, model.torus_ou(), T=0.5, dt=1e-3)
rep = comparison_pipeline(Phi, (ms.gaussian_bump(grid, 0.2, 0.05), 0.0), [0, 1, 2, 3, 4], 200, sc, samples, seed=1)
print(f"\nu(probe) = {rep.u:.5f} +- {rep.u_stderr:.1e}")
print(f"{'degree':>6} {'u_n':>9} {'|u_n - u|':>10} {'sup |Phi_n - Phi|':>18}")
for r in rep.rows:
    print(f"{r.degree:6d} {r.u_n:9.5f} {abs(r.difference):10.2e} {r.sampled_sup:18.2e}")
