import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fellerlab.coupling import (CouplingParams, VacuousBoundWarning, coupling_diagnostics,
                                defect_upper_bound, equilibrium_residual, lambda_threshold,
                                simulate_coupled_batch, simulate_feedback_coupling,
                                stable_equilibrium_p, z_squared_bound, ztilde_bound)
from fellerlab.errors import DomainError, ODEToleranceError, PreconditionError
from fellerlab.sde_sim import PoissonCubicModel, Sigma, SimConfig, exact_cubic_flow, simulate_batch

MODEL = PoissonCubicModel(1.0, 1.0, Sigma("sinusoidal", 1.0, 0.25), 0.75, 1.25, 0.25)


def cubic_root_oracle(a, b, lam, L):
    # independent: companion-matrix roots of -b p^3 + (a - lam) p + c
    c = (a + L + L * L / 2) * math.sqrt(a / (2 * b))
    roots = np.roots([-b, 0.0, a - lam, c])
    real = roots[np.abs(roots.imag) < 1e-9].real
    return float(real[real > 0][0])


def test_lambda_threshold_examples():
    assert lambda_threshold(1, 0) == 1
    assert lambda_threshold(1, 0.25) == 1.28125
    assert lambda_threshold(1, 0.5) == 1.625


def test_z_squared_bound_examples():
    assert z_squared_bound(1.3, 1.3, 2, 1, 0.25, 5.0) == 0
    assert z_squared_bound(2.0, 1.0, 2, 1, 0.25, 0.0) == 1
    assert z_squared_bound(2.0, 1.0, 2, 1, 0.25, 2.0) == pytest.approx(math.exp(-2.875), rel=1e-14)
    assert z_squared_bound(2.0, 1.0, 2, 1, 0.25, 2.0) == pytest.approx(0.05642, abs=1e-5)


def test_vacuous_bound_warns():
    with pytest.warns(VacuousBoundWarning):
        z_squared_bound(2.0, 1.0, 1.2, 1, 0.25, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        z_squared_bound(2.0, 1.0, 2.0, 1, 0.25, 1.0)


def test_stable_equilibrium_p():
    p = stable_equilibrium_p(1, 1, 2, 0.25)
    assert p == pytest.approx(cubic_root_oracle(1, 1, 2, 0.25), abs=1e-12)
    assert p == pytest.approx(0.6416, abs=2e-4)
    assert equilibrium_residual(p, 1, 1, 2, 0.25) < 1e-10
    ps = [stable_equilibrium_p(1, 1, lam, 0.25) for lam in (2, 3, 4)]
    assert ps[0] > ps[1] > ps[2]
    with pytest.raises(PreconditionError):
        stable_equilibrium_p(1, 1, 1.0, 0.25)


@settings(max_examples=50)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.01, 5), st.floats(0, 1))
def test_p_residual_and_oracle(a, b, gap, L):
    lam = a + gap
    p = stable_equilibrium_p(a, b, lam, L)
    assert equilibrium_residual(p, a, b, lam, L) < 1e-10
    assert p == pytest.approx(cubic_root_oracle(a, b, lam, L), rel=1e-9)


def test_ztilde_bound_term_by_term():
    a, b, lam, L, M = 1.0, 1.0, 2.0, 0.25, 1.25
    k = 2 * a - 2 * lam + 2 * L + L * L
    assert k == -1.4375
    q = min(cubic_root_oracle(a, b, lam, L), 1.0)
    first = 2 * lam * 0.5 * (1 - math.exp(k / 2)) / (2 * lam - 2 * a - 2 * L - L * L)
    second = 2 * M * 1.0 * math.exp(-b * q * q)
    assert second == pytest.approx(1.655, abs=2e-3)
    assert ztilde_bound(1.5, 1.0, lam, a, b, L, M, 1.0) == pytest.approx(first + second, rel=1e-12)


def test_ztilde_bound_limits_and_regime():
    assert ztilde_bound(1.2, 1.2, 2, 1, 1, 0.25, 1.25, 0.0) == 0
    assert ztilde_bound(1.2, 1.2, 2, 1, 1, 0.25, 1.25, 1e3) < 1e-100
    with pytest.raises(DomainError, match="sqrt"):
        ztilde_bound(0.5, 1.2, 2, 1, 1, 0.25, 1.25, 1.0)
    with pytest.raises(DomainError, match="sqrt"):
        ztilde_bound(1.5, 0.9, 2, 1, 1, 0.25, 1.25, 1.0)
    with pytest.raises(DomainError):
        ztilde_bound(1.5, 1.0, 1.2, 1, 1, 0.25, 1.25, 1.0)


def test_defect_upper_bound_examples():
    assert defect_upper_bound(0, 0.3, 0.2) == 0
    assert defect_upper_bound(2, 0, 0) == 0
    assert defect_upper_bound(2, 0.1, 0.05) == pytest.approx(0.3)
    with pytest.raises(DomainError):
        defect_upper_bound(-1, 0, 0)


def test_admissibility_is_enforced():
    with pytest.raises(PreconditionError, match="L_sigma"):
        CouplingParams(1.28125).check_admissible(MODEL)
    CouplingParams(1.3).check_admissible(MODEL)
    with pytest.raises(DomainError):
        CouplingParams(0.0)


# ---- coupled simulation --------------------------------------------------

GRID = (0.5, 1.0, 2.0, 4.0)


def cfg(n, seed=0, grid=GRID, tol=1e-9):
    return SimConfig(T=grid[-1], n_paths=n, master_seed=seed, record_times=grid, ode_tolerance=tol)


def test_equal_starts_give_zero_z():
    batch = simulate_coupled_batch(MODEL, 1.3, 1.3, CouplingParams(2.0), cfg(300, 1))
    assert np.max(np.abs(batch.Z)) < 1e-6


def test_shared_clock_and_exact_marginals():
    c = cfg(200, 9)
    batch = simulate_coupled_batch(MODEL, 1.5, 0.8, CouplingParams(2.0), c)
    px = simulate_batch(MODEL, 1.5, c)
    py = simulate_batch(MODEL, 0.8, c)
    assert np.array_equal(batch.X, px.values)
    assert np.array_equal(batch.Y, py.values)
    for a, b in zip(batch.jump_times, px.jump_times):
        assert np.array_equal(a, b[b <= GRID[-1]])


def test_zero_jump_path_is_exact_flow():
    c = cfg(400, 2)
    batch = simulate_coupled_batch(MODEL, 2.0, 1.0, CouplingParams(2.0), c)
    quiet = np.array([jt.size == 0 for jt in batch.jump_times])
    assert quiet.any()
    want = exact_cubic_flow(2.0, np.array(GRID), 1.0, 1.0)
    assert np.allclose(batch.X[quiet], want, rtol=0, atol=1e-15)


def test_larger_gain_shrinks_z():
    c = cfg(500, 4, grid=(1.0,))
    means = [np.mean(np.abs(simulate_coupled_batch(MODEL, 2.0, 1.0, CouplingParams(lam), c).Z))
             for lam in (2.0, 4.0, 8.0)]
    assert means[0] > means[1] > means[2]


def test_single_path_matches_batch():
    c = cfg(20, 6)
    batch = simulate_coupled_batch(MODEL, 1.4, 1.1, CouplingParams(3.0), c)
    one = simulate_feedback_coupling(MODEL, 1.4, 1.1, CouplingParams(3.0), c, 13)
    assert np.allclose(one.Xt[0], batch.Xt[13], rtol=0, atol=1e-12)


def test_ode_tolerance_failure_reports_step():
    with pytest.raises(ODEToleranceError) as info:
        simulate_coupled_batch(MODEL, 3.0, 1.0, CouplingParams(2.0), cfg(5, tol=1e-15),
                               h_min=0.2)
    assert {"path_index", "time", "step", "error"} <= set(info.value.report)


def test_diagnostics_csv_and_inequalities():
    diag = coupling_diagnostics(MODEL, 1.5, 1.0, CouplingParams(2.0), cfg(2000, 3))
    assert diag.ineq1_holds().all()
    assert diag.ineq2_holds().all()
    assert diag.jensen_holds().all()
    lines = diag.to_csv().splitlines()
    assert lines[0].startswith("# {")
    assert lines[1] == "t,e_z2,se_z2,bound_z2,e_ztilde,se_ztilde,bound_ztilde"
    assert len(lines) == 2 + len(GRID)
    assert diag.constants["p_residual"] < 1e-10


def test_diagnostics_outside_regime_has_no_ztilde_bound():
    diag = coupling_diagnostics(MODEL, 0.3, 1.0, CouplingParams(2.0), cfg(200, 3))
    assert np.all(np.isnan(diag.bound_ztilde))
    assert diag.ineq1_holds().all()


@settings(max_examples=8, deadline=None, derandomize=True)
@given(st.floats(-2, 3), st.floats(-2, 3), st.floats(1.5, 6), st.integers(0, 1000))
def test_ineq1_property(x, y, lam, seed):
    diag = coupling_diagnostics(MODEL, x, y, CouplingParams(lam), cfg(400, seed, grid=(0.5, 2.0)))
    assert diag.ineq1_holds().all()
    assert diag.jensen_holds().all()
