import numpy as np
import pytest

from metastable.ansatz import AnsatzFrame
from metastable.dynamics import (AmplitudeSeries, CoverageError, RecurrenceError, amplitude_direct,
                                 amplitude_stone, ansatz_state, discretize, fit_slope, hybrid_times,
                                 lower_bound_model, scaling_study, sup_error, sz_nagy)
from metastable.feshbach import f0_function, f1_function, resonance_position
from metastable.model import ModelError, build_friedrichs, poly_bump, zero_fiber


@pytest.fixture(scope="module")
def fgr_stone(fgr):
    model, pert = fgr
    F = f0_function(model, pert, 0.1)
    res = resonance_position(F)
    return model, pert, F, res, amplitude_stone(F, res=res)


def test_normalization_and_mass(fgr_stone):
    *_, s = fgr_stone
    assert abs(s.values[0] - 1.0) < 1e-6
    assert s.evaluator.mass == pytest.approx(1.0, abs=1e-6)
    assert not s.degraded and s.certificate < 1e-6


def test_stone_matches_direct(fgr_stone):
    model, pert, F, res, _ = fgr_stone
    disc = discretize(model, 1024)
    t = np.linspace(0.0, disc.t_allowed, 200)
    s = amplitude_stone(F, times=t, res=res)
    d = amplitude_direct(model, pert, 0.1, model.psi0, t, N=1024)
    assert np.max(np.abs(s.values - d.values)) < 1e-6


def test_stone_matches_direct_corrected_state(vanishing):
    model, pert = vanishing
    eps = 0.1
    F = f1_function(model, pert, eps)
    disc = discretize(model, 1024)
    t = np.linspace(0.0, disc.t_allowed, 100)
    s = amplitude_stone(F, times=t)
    state = ansatz_state(model, pert, eps, 1)
    d = amplitude_direct(model, pert, eps, state, t, N=1024)
    assert np.max(np.abs(s.values - d.values)) < 1e-6


def test_decoupled_eigenvalue():
    model, pert = build_friedrichs(1.0, zero_fiber(1), inner_factors=[(1.0, poly_bump([1.0], 1.0))], b=1.0)
    eps = 0.1
    F = f0_function(model, pert, eps)
    t = np.linspace(0, 50, 11)
    s = amplitude_stone(F, times=t)
    assert np.max(np.abs(s.values - np.exp(-1j * eps * t))) < 1e-12
    assert np.max(np.abs(np.abs(s.values) - 1.0)) < 1e-12


def test_recurrence_guard(fgr):
    model, pert = fgr
    disc = discretize(model, 256)
    with pytest.raises(RecurrenceError) as info:
        amplitude_direct(model, pert, 0.1, model.psi0, [0.0, 2 * disc.t_allowed], N=256)
    assert info.value.n_req >= 512


def test_sup_error_exact_exponential():
    E = 0.01 - 0.002j
    t = hybrid_times(2.0, 0.002, 0.01)
    s = AmplitudeSeries(times=t, values=np.exp(-1j * t * E), reference=E)
    assert sup_error(s) == 0.0
    assert s.tail_bound < 1e-3


def test_sup_error_coverage():
    E = -0.01j
    t = np.linspace(0.0, 10.0, 300)
    with pytest.raises(CoverageError):
        sup_error(AmplitudeSeries(times=t, values=np.exp(-1j * t * E), reference=E))
    t = np.linspace(1.0, 1000.0, 300)
    with pytest.raises(CoverageError):
        sup_error(AmplitudeSeries(times=t, values=np.exp(-1j * t * E), reference=E))


def test_sup_error_refinement_finds_peak(fgr_stone):
    *_, res, s = fgr_stone
    coarse = sup_error(s, refine=False)
    fine = sup_error(s)
    assert fine >= coarse
    t = np.array([s.argmax_t])
    assert abs(abs(s.evaluator(t)[0] - np.exp(-1j * t[0] * res.E)) - fine) < 1e-15


def test_hybrid_times_layout():
    t = hybrid_times(2.0, 1e-3, 1e-2)
    assert t[0] == 0.0 and np.all(np.diff(t) > 0)
    assert t[-1] == pytest.approx(max(8.0, np.log(100 / 1e-2)) / 1e-3)
    assert np.max(np.diff(t[t <= 200 / 2.0])) <= 0.25 / 2.0 + 1e-12


def test_fit_slope():
    eps = np.array([0.1, 0.05, 0.02])
    slope, resid = fit_slope(eps, 3.0 * eps ** 4)
    assert slope == pytest.approx(4.0, abs=1e-12) and resid < 1e-12


def test_scaling_study_deterministic_and_valid(fgr):
    model, pert = fgr
    a = scaling_study(model, pert, [0.1, 0.07])
    b = scaling_study(model, pert, [0.1, 0.07], threads=2)
    assert [(r.eps, r.sup_error, r.E) for r in a.rows] == [(r.eps, r.sup_error, r.E) for r in b.rows]
    assert a.fgr > 0 and len(a.fgr_ratio) == 2
    with pytest.raises(ValueError):
        scaling_study(model, pert, [0.07, 0.1])
    with pytest.raises(ModelError):
        scaling_study(model, pert, [0.1], ansatze=(1,))


def test_scaling_eps_threshold(vanishing):
    model, pert = vanishing
    big = AnsatzFrame(model, pert).eps_max * 1.01
    with pytest.raises(ModelError):
        scaling_study(model, pert, [big])


def test_two_channel_mass_includes_bound_state(two_channel):
    model, pert = two_channel
    F = f0_function(model, pert, 0.1)
    s = amplitude_stone(F, times=[0.0])
    masses = s.evaluator.point_masses
    assert any(x < F.support[0] for x, _ in masses)
    assert abs(s.values[0] - 1.0) < 1e-6


def test_sz_nagy_unitary():
    rng = np.random.default_rng(1)
    v = rng.normal(size=4)
    v /= np.linalg.norm(v)
    P0 = np.diag([1.0, 0, 0, 0])
    w = np.eye(4)[0] + 0.1 * v
    w /= np.linalg.norm(w)
    P = np.outer(w, w)
    U = sz_nagy(P, P0)
    assert np.max(np.abs(U.T @ U - np.eye(4))) < 1e-13
    assert np.max(np.abs(U @ P0 @ U.T - P)) < 1e-13


def test_lower_bound_model():
    for eps in (1e-2, 5e-3):
        r = lower_bound_model(eps)
        assert r.holds
        assert r.expansion_residual < 2 * r.psi1_norm ** 2 * eps ** 2
