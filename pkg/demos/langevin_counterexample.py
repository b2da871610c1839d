"""
A process that is not eventually continuous at 0
================================================

``dX = (1.5 X - X^3) dt + X dB`` never leaves 0, but from any positive start
it settles into the density ``2 x exp(-x^2)``. Starting a hair away from 0
therefore lands somewhere very different.
"""

import math

from fellerlab.criteria import eventual_continuity_defect
from fellerlab.measures import hat_function
from fellerlab.sde_sim import LangevinCubicModel

model = LangevinCubicModel()
f = hat_function(0.0, 0.5)

# stationary mass of (0, 0.5) weighted by the hat, from the density
grid = [i / 10_000 for i in range(5_000)]
mass = sum(2 * x * math.exp(-x * x) * f(x) for x in grid) / 10_000
print(f"oracle defect 1 - E f(X_inf) = {1 - mass:.3f}")

surf, rep = eventual_continuity_defect(model, 0.0, f, [0.2, 0.05], [5.0, 10.0], 3000,
                                       master_seed=11, dt=2e-3)
print(surf.to_csv())
print("verdict:", rep.verdict, " summary:", round(rep.summary, 3))
