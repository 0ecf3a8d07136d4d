import numpy as np
import pytest
from scipy.integrate import quad

from metastable.ansatz import (Ansatz, AnsatzFrame, EpsilonTooLarge, d_eps, d_limit, eps_threshold,
                               expansion_residuals, p_eps, psi1, t1, t_eps, u_eps, w_tilde)
from metastable.model import StateVector, build_friedrichs, poly_bump, zero_fiber


@pytest.fixture(scope="module")
def asym():
    """Vanishing-FGR model whose coupling is not odd, so ⟨w, S w⟩ ≠ 0."""
    return build_friedrichs(1.0, poly_bump([0.0, 1.0, 0.5], 1.0), b=0.2, vanishing_fgr=True)


@pytest.fixture(scope="module")
def chain(vanishing):
    model, pert = vanishing
    fr = AnsatzFrame(model, pert)
    return model, pert, fr, t1(model, pert, fr)


def test_t1_structure(chain):
    model, pert, fr, T1 = chain
    assert abs(model.inner(model.psi0, T1.apply(model.psi0))) < 1e-15
    assert T1.is_hermitian()
    sv = np.linalg.svd(T1.mat, compute_uv=False)
    assert T1.norm() == pytest.approx(sv[0], rel=1e-14)
    assert T1.norm() == pytest.approx(fr.phi_norm, rel=1e-14)
    assert T1.frame_gram_error() < 1e-12 and T1.column_error() < 1e-12


def test_t1_phi_norm_value(chain):
    _, _, fr, _ = chain
    # φ = (1 - λ²)² on (-1, 1): ‖φ‖² = 256/315
    assert fr.phi_norm ** 2 == pytest.approx(256 / 315, rel=1e-13)


def test_p_at_zero_is_p0(chain):
    *_, fr, T1 = chain
    assert (p_eps(T1, 0.0) - fr.p0).norm() < 1e-15


@pytest.mark.parametrize("frac", [0.1, 0.5, 0.999])
def test_exact_algebra(chain, frac):
    *_, T1 = chain
    eps = frac * eps_threshold(T1)
    T = t_eps(T1, eps)
    assert (T @ T - T - eps ** 2 * (T1 @ T1)).norm() < 1e-15
    P = p_eps(T1, eps)
    assert (P @ P - P).norm() < 1e-12
    assert (P - P.adjoint()).norm() < 1e-12
    assert np.trace(P.mat).real == pytest.approx(1.0, abs=1e-12)


def test_p_close_to_t(chain):
    *_, T1 = chain
    eps = 0.05
    P, T = p_eps(T1, eps), t_eps(T1, eps)
    assert (P - T).norm() <= 4 * eps ** 2 * T1.norm() ** 2


def test_p_against_matrix_oracle(chain):
    *_, T1 = chain
    eps = 0.2
    T = t_eps(T1, eps).mat
    # spectral projection of the Hermitian 2×2 T onto its eigenvalue near 1
    ev, vec = np.linalg.eigh(T)
    v = vec[:, np.argmax(ev)]
    assert np.max(np.abs(p_eps(T1, eps).mat - np.outer(v, v.conj()))) < 1e-13


def test_eps_too_large(chain):
    *_, T1 = chain
    with pytest.raises(EpsilonTooLarge):
        p_eps(T1, 0.6 / T1.norm())


def test_unitary_certificates(chain):
    *_, fr, T1 = chain
    for eps in (0.01, 0.05, 0.9 * eps_threshold(T1)):
        P = p_eps(T1, eps)
        U = u_eps(P, fr.p0)
        one = U.identity()
        assert (U.adjoint() @ U - one).norm() < 1e-12
        assert (U @ U.adjoint() - one).norm() < 1e-12
        assert (U @ fr.p0 @ U.adjoint() - P).norm() < 1e-12


def test_unitary_at_zero_is_identity(chain):
    *_, fr, T1 = chain
    U = u_eps(p_eps(T1, 0.0), fr.p0)
    assert (U - U.identity()).norm() < 1e-15


def test_unitary_expansion(chain):
    *_, fr, T1 = chain
    ratios = []
    for eps in (1e-2, 1e-3):
        U = u_eps(p_eps(T1, eps), fr.p0)
        lin = U.identity() + eps * (T1 @ (2.0 * fr.p0 - 1.0))
        ratios.append((U - lin).norm() / eps ** 2)
    assert max(ratios) / min(ratios) < 1.1


def test_commutation_identities(chain):
    *_, fr, T1 = chain
    P = p_eps(T1, 0.05)
    D = P - fr.p0
    D2 = D @ D
    assert (D2 @ P - P @ D2).norm() < 1e-12
    assert (D2 @ fr.p0 - fr.p0 @ D2).norm() < 1e-12


def test_expansion_richardson(chain):
    *_, T1 = chain
    eps = np.array([1e-2, 5e-3, 2.5e-3])
    res = [expansion_residuals(T1, e) for e in eps]
    for key in ("delta", "h_delta"):
        r = np.array([x[key] for x in res])
        order = np.log2(r[:-1] / r[1:])
        assert np.all(order > 2.8), (key, order)


def test_psi1(chain):
    model, pert, fr, _ = chain
    eps = 0.05
    A = Ansatz(model, pert, eps, fr)
    p1 = A.psi1()
    assert model.norm(p1) == pytest.approx(1.0, abs=1e-13)
    assert model.inner(p1, A.P.apply(p1)).real == pytest.approx(1.0, abs=1e-12)
    resid = model.norm(p1 - model.psi0 + eps * fr.phi)
    assert resid < 2 * eps ** 2 * fr.phi_norm ** 2


def test_psi1_first_order_slope(chain):
    model, pert, fr, _ = chain
    coef = [model.inner(fr.phi_hat, Ansatz(model, pert, e, fr).psi1()).real for e in (1e-3, 1e-2)]
    slope = (coef[1] - coef[0]) / (1e-2 - 1e-3)
    assert slope == pytest.approx(-fr.phi_norm, rel=1e-3)


def test_psi1_at_zero(chain):
    model, pert, fr, T1 = chain
    U = u_eps(p_eps(T1, 0.0), fr.p0)
    assert model.norm(psi1(U, model) - model.psi0) < 1e-15


def _limit_element(model, pert, u, v):
    """⟨u, (W - P₀WQ₀ - Q₀WP₀) v⟩."""
    p0u = model.psi0 if u.c == 0 else u
    w = model.inner(u, pert.apply(v))
    w -= np.conj(u.c) * model.inner(model.psi0, pert.apply(v.continuum))
    w -= v.c * model.inner(u.continuum, pert.w_psi0)
    return w


def test_w_tilde_limit(asym):
    model, pert = asym
    fr = AnsatzFrame(model, pert)
    tests = [model.psi0, fr.phi_hat, StateVector(0.3, poly_bump([1.0, 2.0], 1.0, q=1))]
    diffs = []
    for eps in (1e-3, 1e-4):
        Wt = w_tilde(model, pert, Ansatz(model, pert, eps, fr).U, eps, fr)
        assert Wt.hermitian_error() < 1e-12
        diffs.append(max(abs(Wt.matrix_element(u, v) - _limit_element(model, pert, u, v))
                         for u in tests for v in tests))
    assert diffs[1] < 2e-3
    assert diffs[0] / diffs[1] == pytest.approx(10.0, rel=0.1)


def test_w_tilde_first_order_coefficient(asym):
    model, pert = asym
    fr = AnsatzFrame(model, pert)
    vals = []
    for eps in (1e-3, 1e-4):
        Wt = w_tilde(model, pert, Ansatz(model, pert, eps, fr).U, eps, fr)
        vals.append(Wt.expect_psi0().real)
    c1 = (vals[0] - vals[1]) / (1e-3 - 1e-4)
    w = pert.coupling
    f = lambda t: abs(w(np.array([t]))[0, 0]) ** 2 / t  # noqa: E731
    s = quad(f, -1, 0, epsabs=1e-14)[0] + quad(f, 0, 1, epsabs=1e-14)[0]
    assert s == pytest.approx(256 / 3465, rel=1e-10)
    assert c1 == pytest.approx(-s, rel=1e-2)
    assert vals[1] == pytest.approx(pert.b, abs=1e-3)


def test_w_tilde_uniformly_bounded(vanishing):
    model, pert = vanishing
    fr = AnsatzFrame(model, pert)
    norms = [w_tilde(model, pert, Ansatz(model, pert, e, fr).U, e, fr).norm() for e in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert max(norms) / min(norms) < 1.1


def test_d_eps_scaling_and_limit(vanishing):
    model, pert = vanishing
    fr = AnsatzFrame(model, pert)
    d0 = d_limit(model, pert, fr)
    norms, errs = [], []
    for eps in (1e-2, 1e-3):
        d = d_eps(w_tilde(model, pert, Ansatz(model, pert, eps, fr).U, eps, fr), eps)
        norms.append(eps * model.norm(d))
        errs.append(model.norm(d - d0))
    assert norms[0] / norms[1] == pytest.approx(10.0, rel=0.05)
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.1)


def test_d_limit_hand_assembled(vanishing):
    model, pert = vanishing
    fr = AnsatzFrame(model, pert)
    d0 = d_limit(model, pert, fr)
    lam = np.linspace(-0.9, 0.9, 13)
    phi = (1 - lam ** 2) ** 2
    # Wφ = Ψ₀⟨w, φ⟩ has no continuum part, so d₀ = bφ
    assert np.max(np.abs(d0.f(lam)[:, 0] - pert.b * phi)) < 1e-14


def test_d_eps_against_dense_grid(vanishing):
    """d_ε = ε⁻¹Q₀W̃_εΨ₀ with W̃_ε = (U*H_εU - H)/ε built from dense grid matrices."""
    from metastable.dynamics import discretize, sz_nagy
    from metastable.resolvent import s_apply

    model, pert = vanishing
    disc = discretize(model, 300)
    phi = disc.embed(s_apply(model, pert.w_psi0))
    psi0 = disc.embed(model.psi0)
    eps = 1e-2
    one = np.eye(len(psi0))
    P0 = np.outer(psi0, psi0)
    T = P0 - eps * (np.outer(phi, psi0) + np.outer(psi0, phi))
    ev, vec = np.linalg.eigh(one + 4 * (T @ T - T))
    P = T + (T - 0.5 * one) @ ((vec / np.sqrt(ev)) @ vec.T - one)
    U = sz_nagy(P, P0)
    Wt = (U.T @ disc.hamiltonian(pert, eps) @ U - np.diag(disc.diag)) / eps
    d_grid = (Wt @ psi0)[1:] / eps
    fr = AnsatzFrame(model, pert)
    d = d_eps(w_tilde(model, pert, Ansatz(model, pert, eps, fr).U, eps, fr), eps)
    d_ours = disc.embed(d)[1:]
    assert np.linalg.norm(d_ours - d_grid) < 1e-10


def test_d_eps_vanishes_when_decoupled():
    model, pert = build_friedrichs(1.0, zero_fiber(1), inner_factors=[(1.0, poly_bump([1.0], 1.0))])
    fr = AnsatzFrame(model, pert)
    assert fr.eps_max == np.inf
    A = Ansatz(model, pert, 0.1, fr)
    d = d_eps(w_tilde(model, pert, A.U, 0.1, fr), 0.1)
    assert model.norm(d) == 0.0
