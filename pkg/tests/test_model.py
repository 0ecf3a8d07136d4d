import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metastable.cauchy import holder_seminorm
from metastable.model import (FormFactor, InconsistentModelError, ModelDomainError, StateVector,
                              ThresholdError, TwoChannelSpec, build_friedrichs, build_two_channel,
                              check_assumption_gamma0, fgr_constant, gamma_eval, gamma0_fiber,
                              load_model, model_from_config, poly_bump, zero_fiber)


def fourier_oracle(f, k, L=30.0, n=200001):
    """(2π)^{-1/2} ∫ e^{-ikx} f(x) dx by a fine trapezoid rule."""
    x = np.linspace(-L, L, n)
    return np.array([np.trapezoid(np.exp(-1j * kk * x) * f(x), x) for kk in np.atleast_1d(k)]) / np.sqrt(2 * np.pi)


def test_vanishing_coupling_gives_zero_fgr():
    model, pert = build_friedrichs(1.0, poly_bump([0.0, 1.0], 1.0), vanishing_fgr=True)
    assert fgr_constant(model, pert) == 0.0
    assert check_assumption_gamma0(model, pert)


def test_fgr_constant_of_bump():
    model, pert = build_friedrichs(1.0, poly_bump([0.3], 1.0))
    assert fgr_constant(model, pert) == pytest.approx(np.pi * 0.09, rel=1e-14)
    assert not check_assumption_gamma0(model, pert)


def test_decoupled_channel_is_eigenvalue():
    model, pert = build_friedrichs(1.0, zero_fiber(1), b=1.0)
    assert pert.b == pytest.approx(1.0)
    assert fgr_constant(model, pert) == 0.0


def test_inconsistent_vanishing_flag():
    with pytest.raises(InconsistentModelError):
        build_friedrichs(1.0, poly_bump([0.3], 1.0), vanishing_fgr=True)


def test_support_must_cover_window():
    with pytest.raises(ModelDomainError):
        build_friedrichs(1.0, poly_bump([0.3], 1.0), support=(-0.5, 1.0))


def test_gamma_eval(vanishing):
    model, pert = vanishing
    assert np.all(gamma_eval(model, 0.3, model.psi0) == 0)
    lam = np.linspace(-0.9, 0.9, 7)
    expected = lam * (1 - lam ** 2) ** 2
    assert np.max(np.abs(gamma_eval(model, lam, pert.w_psi0)[:, 0] - expected)) < 1e-15
    with pytest.raises(ModelDomainError):
        gamma_eval(model, 1.0, pert.w_psi0)


def test_parseval_window_norm(vanishing):
    model, pert = vanishing
    # ∫_{-1}^{1} λ²(1-λ²)⁴ dλ = 256/3465
    assert model.window_norm2(pert.w_psi0) == pytest.approx(256 / 3465, abs=1e-12)
    assert model.norm(pert.w_psi0) ** 2 == pytest.approx(256 / 3465 + 0.2 ** 2, abs=1e-12)


def test_factorization_consistency(vanishing, fgr):
    for model, pert in (vanishing, fgr):
        v = StateVector(0.4 - 0.1j, poly_bump([1.0, -0.5, 2.0], 1.0, q=1))
        a = pert.apply(v)
        b = pert.apply_factored(v)
        diff = a - b
        assert model.norm(diff) < 1e-14
        assert pert.rank == len(pert.D)
        assert set(np.abs(pert.D)) == {1.0}
        assert pert.norm_bound() >= model.norm(a) / max(model.norm(v), 1e-300)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2))
def test_self_adjointness(cf, cg, c1, c2):
    model, pert = build_friedrichs(1.0, poly_bump([0.3, 1.0], 1.0), inner_factors=[(-1.0, poly_bump([0.5], 1.0, q=1))],
                                   b=0.2)
    f = StateVector(c1, poly_bump(cf, 1.0, q=1))
    g = StateVector(c2, poly_bump(cg, 1.0, q=1))
    lhs = model.inner(f, pert.apply(g))
    rhs = np.conj(model.inner(g, pert.apply(f)))
    assert abs(lhs - rhs) < 1e-12 * (1 + abs(lhs))


def test_fixture_files_load(fixtures_dir):
    for name in ("friedrichs_vanishing", "friedrichs_fgr", "two_channel_gauss"):
        model, pert = load_model(fixtures_dir / f"{name}.json")
        assert model.m == pert.gens[1].f.m


def test_table_coupling(tmp_path):
    lam = np.linspace(-1, 1, 201)
    w = lam * (1 - lam ** 2) ** 2
    np.savetxt(tmp_path / "w.csv", np.column_stack([lam, w, 0 * w]), delimiter=",",
               header="node,re_1,im_1")
    cfg = {"type": "friedrichs", "a": 1.0, "coupling": {"family": "table", "path": "w.csv"}, "b": 0.2}
    model, pert = model_from_config(cfg, tmp_path)
    assert abs(gamma_eval(model, 0.37, pert.w_psi0)[0] - 0.37 * (1 - 0.37 ** 2) ** 2) < 1e-6
    assert fgr_constant(model, pert) < 1e-20


# two-channel front end ---------------------------------------------------

def test_two_channel_decoupled():
    spec = TwoChannelSpec(E0=1.0, w12=FormFactor.gaussian(amp=0.0))
    model, pert = build_two_channel(spec)
    assert fgr_constant(model, pert) == 0.0


def test_two_channel_threshold_error():
    with pytest.raises(ThresholdError):
        build_two_channel(TwoChannelSpec(E0=1.0, w12=FormFactor.gaussian(), a=1.0))


def test_two_channel_coupling_against_fourier_oracle(two_channel):
    model, pert = two_channel
    spec = pert.two_channel
    w0 = gamma_eval(model, 0.0, pert.w_psi0)
    k = np.sqrt(spec.E0)
    hat = fourier_oracle(spec.w12.f, [k, -k])
    expected = 2 ** -0.5 * spec.E0 ** -0.25 * hat
    assert np.max(np.abs(w0 - expected)) < 1e-10
    assert fgr_constant(model, pert) == pytest.approx(np.pi * np.sum(np.abs(expected) ** 2), rel=1e-9)


def test_two_channel_jacobian(two_channel):
    """‖Q(J_a)g‖² in energy space equals the momentum-space norm of the filtered g."""
    model, pert = two_channel
    spec = pert.two_channel
    g = pert.w_psi0
    energy = model.window_norm2(g)
    # momenta with k² - E0 in (-a, a), both signs
    k_lo, k_hi = np.sqrt(spec.E0 - spec.a), np.sqrt(spec.E0 + spec.a)
    t, w = np.polynomial.legendre.leggauss(64)
    k = 0.5 * (k_hi + k_lo) + 0.5 * (k_hi - k_lo) * t
    dens = np.abs(fourier_oracle(spec.w12.f, k)) ** 2 + np.abs(fourier_oracle(spec.w12.f, -k)) ** 2
    momentum = 0.5 * (k_hi - k_lo) * np.sum(w * dens)
    assert energy == pytest.approx(momentum, abs=1e-8)


def test_two_channel_fiber_is_holder(two_channel):
    model, pert = two_channel
    semis = []
    for n in (201, 401, 801):
        x = np.linspace(-model.a, model.a, n)
        semis.append(holder_seminorm(x, pert.w_psi0.f(x), 0.5))
    assert np.all(np.isfinite(semis)) and max(semis) / min(semis) < 1.05


def test_numeric_form_factor_matches_gaussian():
    g = FormFactor.gaussian(1.0, 1.0)
    num = FormFactor.numeric(g.f)
    k = np.linspace(-3, 3, 13)
    assert np.max(np.abs(num.hat(k) - g.hat(k))) < 1e-10
    f1 = gamma0_fiber(g, 1.0)(np.array([0.1]))
    f2 = gamma0_fiber(num, 1.0)(np.array([0.1]))
    assert np.max(np.abs(f1 - f2)) < 1e-10


def test_two_channel_config_roundtrip(tmp_path, fixtures_dir):
    cfg = json.loads((fixtures_dir / "two_channel_gauss.json").read_text())
    cfg["vanishing_fgr"] = True
    with pytest.raises(InconsistentModelError):
        model_from_config(cfg)
