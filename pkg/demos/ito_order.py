"""Why the pathwise Ito residual of <mu, phi>^2 only shrinks like sqrt(dt).

Run:  python demos/ito_order.py

Along one noise path, each Euler step moves m = <pi, phi> by a dt + s dI,
so u = m^2 changes by 2 m (a dt + s dI) + (a dt + s dI)^2.  The discretised
Ito formula keeps 2 m a dt + s^2 dt + 2 m s dI, leaving s^2 (dI^2 - dt) per
step: a martingale whose RMS is about s^2 sqrt(2 T dt).  For a linear u the
same bookkeeping leaves no such term and the residual is first order.
"""
import numpy as np

from kslab import functions as fn
from kslab import measures as ms
from kslab import model
from kslab.calculus import linear, squared
from kslab.filter import NoisePath, Scenario, ito_residuals

grid = ms.DomainGrid(0.0, 1.0, 64, "torus")
sc = Scenario(grid, model.torus_ou(), T=0.5, dt=1e-3)
mu = ms.gaussian_bump(grid, 0.2, 0.08)
phi = fn.cosine(2 * np.pi)
fine = [NoisePath.generate(11, 5e-4, 0.0, 0.5, j) for j in range(100)]

for label, u in (("<mu,phi>", linear(phi)), ("<mu,phi>^2", squared(phi))):
    rms = []
    for factor in (4, 2, 1):
        paths = [p.coarsen(factor) if factor > 1 else p for p in fine]
        r, _ = ito_residuals(u, mu, 0.0, sc, paths)
        rms.append(float(np.sqrt(np.mean(r**2))))
    ratios = [a / b for a, b in zip(rms, rms[1:])]
    print(f"{label:>11}: RMS residual " + ", ".join(f"{v:.2e}" for v in rms) + "  halving ratios " + ", ".join(f"{q:.2f}" for q in ratios))
print(f"sqrt(2) = {np.sqrt(2):.2f}")
