"""
Exact answers on a two-state chain
==================================

A finite chain is the one place every quantity has a closed form, so it is
where the Monte Carlo estimators get checked.
"""

import numpy as np

from fellerlab.chain_oracle import (FiniteChain, alpha_splitting_decomposition,
                                    exact_condition_report, invariant_measure, power_distribution)
from fellerlab.measures import wilson_interval
from fellerlab.sde_sim import FiniteChainModel, sample_law

chain = FiniteChain(np.array([[0.9, 0.1], [0.2, 0.8]]))
print("invariant measure:", invariant_measure(chain).probs)

# Monte Carlo against matrix powers, with 99% Wilson intervals
for t in (1, 2, 5, 10):
    law = sample_law(FiniteChainModel(chain), 0, t, 20_000, master_seed=1)
    est = float(np.mean(law.samples == 0))
    lo, hi = wilson_interval(est, len(law), 0.99)
    exact = power_distribution(chain, 0, t).probs[0]
    print(f"t={t:2d}  exact {exact:.4f}  MC {est:.4f}  [{lo:.4f}, {hi:.4f}]")

# the limits behind C1, C2 and C4 are exact here
for cond, rep in exact_condition_report(chain, 0, 0.5).items():
    print(cond, round(rep.summary, 6), rep.verdict)

# Doeblin splitting: the residual mass shrinks like (1 - alpha)^k
trace = alpha_splitting_decomposition(chain, 0, 1, [0], 1, 8)
print("alpha =", trace.alpha, " residual bound after 8 rounds:", trace.residual_bound)
print("largest reconstruction error:", trace.max_reconstruction_error())
