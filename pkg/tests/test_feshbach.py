import numpy as np
import pytest

from metastable.ansatz import Ansatz, AnsatzFrame
from metastable.dynamics import discretize, grid_resolvent
from metastable.feshbach import (NoRootError, UniquenessError, f0, f0_function, f1, f1_function,
                                 lorentzian_diagnostics, resonance_position, slfg_function)
from metastable.model import build_friedrichs, fgr_constant, poly_bump, zero_fiber
from metastable.resolvent import BoundaryFunction, UnsupportedError, WindowError


class StubF:
    """Minimal boundary evaluator for exercising the root finder."""

    def __init__(self, fn, a=1.0, eps=0.1, ansatz=0):
        self.fn, self.eps, self.ansatz = fn, eps, ansatz
        self.model = type("M", (), {"a": a})()

    def boundary(self, x, sign=1):
        return self.fn(np.atleast_1d(x))

    def derivative(self, x, h=1e-6):
        return (self.fn(x + h) - self.fn(x - h)) / (2 * h)


@pytest.fixture(scope="module")
def disc_4096(request):
    cache = {}

    def get(model):
        if id(model) not in cache:
            cache[id(model)] = discretize(model, 4096)
        return cache[id(model)]

    return get


def test_eps_zero_is_minus_z(vanishing):
    model, pert = vanishing
    for point in (0.1 + 0.2j, (0.05, 1)):
        z = point[0] if isinstance(point, tuple) else point
        assert f0(model, pert, 0.0, point) == pytest.approx(-z, abs=1e-15)
        assert f1(model, pert, 0.0, point) == pytest.approx(-z, abs=1e-15)


def test_decoupled_closed_form():
    model, pert = build_friedrichs(1.0, zero_fiber(1), inner_factors=[(1.0, poly_bump([1.0], 1.0))], b=0.7)
    eps = 0.1
    F = f0_function(model, pert, eps)
    x = np.linspace(-0.4, 0.4, 9)
    assert np.max(np.abs(F.boundary(x) - (eps * 0.7 - x))) < 1e-15
    res = resonance_position(F)
    assert res.x == pytest.approx(0.07, abs=1e-15) and res.width == 0.0


@pytest.mark.parametrize("name", ["vanishing", "fgr", "two_channel"])
def test_factored_form_matches_resummation(name, request):
    model, pert = request.getfixturevalue(name)
    F = f0_function(model, pert, 0.1)
    for point in (0.1 + 0.05j, (0.07, 1), (-0.1, -1)):
        assert abs(f0(model, pert, 0.1, point) - F(point)) < 1e-12


@pytest.mark.parametrize("name", ["vanishing", "fgr"])
def test_slfg_identity_grid(name, request, disc_4096):
    model, pert = request.getfixturevalue(name)
    z = 0.1 + 0.05j
    ref = grid_resolvent(disc_4096(model), pert, 0.1, z)
    assert abs(1.0 / f0(model, pert, 0.1, z) - ref) < 1e-5


def test_f1_identity_grid(vanishing, disc_4096):
    model, pert = vanishing
    eps, z = 0.1, 0.1 + 0.05j
    psi1 = Ansatz(model, pert, eps).psi1()
    ref = grid_resolvent(disc_4096(model), pert, eps, z, state=psi1)
    assert abs(1.0 / f1(model, pert, eps, z) - ref) < 1e-5


@pytest.mark.parametrize("ansatz", [0, 1])
def test_conjugate_symmetry_and_sign(vanishing, ansatz):
    model, pert = vanishing
    F = slfg_function(model, pert, 0.05, ansatz)
    x = np.linspace(-0.49, 0.49, 41)
    up, dn = F.boundary(x, 1), F.boundary(x, -1)
    assert np.max(np.abs(dn - np.conj(up))) == 0.0
    assert np.all(up.imag <= 0)
    assert all(F(complex(xx, 1e-2)).imag < 0 for xx in x[::8])


def test_f1_needs_vanishing_fgr(fgr):
    with pytest.raises(UnsupportedError):
        f1_function(*fgr, 0.1)


def test_width_collapses_like_eps4(vanishing):
    model, pert = vanishing
    r = [resonance_position(f0_function(model, pert, e)).width / e ** 4 for e in (0.1, 0.05, 0.025)]
    assert max(r) / min(r) < 1.05


def test_fgr_width_law(fgr):
    model, pert = fgr
    G = fgr_constant(model, pert)
    c = [abs(resonance_position(f0_function(model, pert, e)).E.imag + e * e * G) / e ** 3 for e in (0.1, 0.05, 0.025)]
    assert max(c) / min(c) < 2.0


def test_resonance_invariants(vanishing):
    model, pert = vanishing
    eps = 0.05
    for k in (0, 1):
        F = slfg_function(model, pert, eps, k)
        res = resonance_position(F)
        assert res.E.imag <= 0
        assert res.residual <= 1e-12
        assert -1.5 < res.slope < -0.5
        # |x| ≲ |a(ε)| + γ(ε) with a(ε) = εb
        assert abs(res.x) <= 2 * (abs(eps * pert.b) + eps ** 2)


def test_f1_self_energy_prefactor(vanishing):
    model, pert = vanishing
    r = [abs(f1_function(model, pert, e).self_energy_boundary(0.05)[0]) / e ** 4 for e in (0.1, 0.01)]
    assert max(r) / min(r) < 1.1


@pytest.mark.parametrize("ansatz", [0, 1])
def test_boundary_smoothness(vanishing, ansatz):
    model, pert = vanishing
    F = slfg_function(model, pert, 0.05, ansatz)
    semis = []
    for n in (101, 201):
        bf = BoundaryFunction.sample(F.boundary, (-0.45, 0.45), n=n)
        assert bf.derivative_consistent()
        semis.append(bf.holder_of_derivative())
    assert np.isfinite(semis).all() and semis[1] < 1.5 * semis[0]


def test_no_root_and_uniqueness():
    with pytest.raises(NoRootError):
        resonance_position(StubF(lambda x: 1.0 + 0 * x))
    with pytest.raises(UniquenessError) as info:
        resonance_position(StubF(lambda x: 0.01 - x * x + 0j))
    assert len(info.value.brackets) == 2


def test_stub_newton_converges():
    res = resonance_position(StubF(lambda x: 0.013 - x - 0.001j * (1 + x * x)))
    assert res.x == pytest.approx(0.013, abs=1e-15)
    assert res.width == pytest.approx(0.001 * (1 + 0.013 ** 2), rel=1e-14)


def test_lorentzian_exact_is_zero():
    x0, G = 0.01, 1e-3
    F = StubF(lambda x: -(x - x0) - 1j * G + 0 * x)
    F.model.a = 1.0
    res = resonance_position(F)
    rep = lorentzian_diagnostics(F.boundary, res, C=1.0, window_half=0.01)
    assert rep["sup_pointwise"] == 0.0 and rep["sup_integral"] == 0.0


def test_lorentzian_window_error(vanishing):
    model, pert = vanishing
    F = f1_function(model, pert, 0.05)
    res = resonance_position(F)
    with pytest.raises(WindowError):
        lorentzian_diagnostics(F, res, C=4.0)
    with pytest.raises(ValueError):
        lorentzian_diagnostics(F, res, eta=1e-2, C=0.01)


@pytest.mark.parametrize("ansatz,C", [(0, 1.0), (1, 0.02)])
def test_lorentzian_bounded_over_decade(vanishing, ansatz, C):
    model, pert = vanishing
    vals = []
    for e in (0.1, 0.05, 0.025):
        F = slfg_function(model, pert, e, ansatz)
        vals.append(lorentzian_diagnostics(F, resonance_position(F), C=C)["sup_integral_over_gamma"])
    assert max(vals) / min(vals) < 2.0


def test_lorentzian_window_symmetry():
    """A parity-symmetric evaluator gives a window symmetric about its root."""
    G = 1e-3
    F = StubF(lambda x: -x - 1j * G * (1 + x * x))
    res = resonance_position(F)
    rep = lorentzian_diagnostics(F.boundary, res, window_half=0.05)
    lo, hi = rep["window"]
    assert lo == pytest.approx(-hi, abs=1e-15)


def test_eta_path_close_to_boundary(vanishing):
    model, pert = vanishing
    F = f0_function(model, pert, 0.1)
    x = 0.2
    etas = 1e-3 * 2.0 ** -np.arange(4)
    vals = np.array([F(complex(x, e)) for e in etas])
    ext = np.polyfit(etas, vals.real, 3)[-1] + 1j * np.polyfit(etas, vals.imag, 3)[-1]
    assert abs(ext - F((x, 1))) < 1e-9


def test_stone_density_nonnegative(two_channel):
    model, pert = two_channel
    F = f0_function(model, pert, 0.1)
    lo, cut = F.support
    x = np.linspace(lo + 1e-6, cut - 1e-6, 400)
    assert np.all(F.stone_density(x) >= 0)


def test_two_channel_bound_state(two_channel):
    model, pert = two_channel
    F = f0_function(model, pert, 0.1)
    states = F.bound_states()
    assert len(states) == 1
    x, w = states[0]
    assert x < F.support[0] and 0 < w < 1e-2
    assert abs(F.real_outside(x)) < 1e-12
