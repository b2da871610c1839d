"""
How long until the flow and the jumps reach sqrt(a/b)
=====================================================

The schedule splits starting points into three cases and gives each a
positive probability of sitting in ``B(1, eps)`` after time ``T``.
"""

import math

from fellerlab.criteria import chebyshev_lower_bound, poisson_certificate, reachability_schedule
from fellerlab.sde_sim import PoissonCubicModel, Sigma, flow_entry_time, sample_law

sched = reachability_schedule(a=1.0, b=1.0, m=0.5, M=1.25, delta_tilde=0.1, eps=0.1,
                              r_request=7.0)
print(sched.to_json())

# case 1 by simulation: no jump before T1 already suffices
model = PoissonCubicModel(1.0, 1.0, Sigma("sinusoidal", 1.0, 0.25), 0.75, 1.25, 0.25)
T1 = flow_entry_time(1.5, 1.5, 1.0, 0.1, 1.0, 1.0)
law = sample_law(model, 1.5, T1 + 1, 20_000, master_seed=5)
hit = sum(abs(v - 1.0) < 0.1 for v in law.samples) / len(law)
print(f"P(|X - 1| < 0.1) at T1 + 1 = {hit:.3f}, bound e^-(T1+1) = {math.exp(-T1 - 1):.3f}")

# the moment certificate turns into a ball probability
cert = poisson_certificate(model)
print("Chebyshev bound for B(1, 7) from x = 5 at t = 10:",
      round(chebyshev_lower_bound(cert, 7.0, 10.0, 5.0), 4))
