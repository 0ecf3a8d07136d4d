"""Scalar Feshbach (SLFG) functions F⁰, F¹, resonance positions, Lorentzian diagnostics.

Both functions have the form

    F(z) = ε c₀ - z - ε² ⟨u, (Q₀(H + εV)Q₀ - z)⁻¹ u⟩,

with V = Σ |f_p⟩ M_pq ⟨f_q| finite rank on ran Q₀ and u = Σ f_p α_p.
The inner resolvent is resummed exactly over the finite set (Woodbury):

    ⟨u, R̃ u⟩ = α†Kα - ε α†K(1 + εMK)⁻¹MKα,   K_pq(z) = ⟨f_p, (λ - z)⁻¹ f_q⟩.

F⁰ is additionally available in the factored form with G(z) and D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .ansatz import Ansatz, AnsatzFrame, d_eps, w_tilde
from .model import FactoredPerturbation, ModelError, SpectralModel
from .resolvent import ContinuumKernel, UnsupportedError, WindowError, kernel_for

COND_MAX = 1e10


class ConditioningError(ModelError):
    def __init__(self, cond):
        super().__init__(f"resummation matrix is numerically singular (condition number {cond:.3e})")
        self.cond = cond


class NoRootError(ModelError):
    pass


class UniquenessError(ModelError):
    def __init__(self, brackets):
        super().__init__(f"R(x) changes sign {len(brackets)} times on the window: {brackets}")
        self.brackets = brackets


class SLFGFunction:
    """Vectorized evaluator of F(x ± i0) and F(z) for one model, ansatz and ε."""

    def __init__(self, model: SpectralModel, kernel: ContinuumKernel, c0: complex, M, alpha,
                 eps: float, ansatz: int):
        self.model = model
        self.kernel = kernel
        self.c0 = complex(c0)
        self.M = np.asarray(M, dtype=complex)
        self.alpha = np.asarray(alpha, dtype=complex)
        self.eps = float(eps)
        self.ansatz = int(ansatz)

    @property
    def support(self) -> tuple[float, float]:
        return self.kernel.lo, self.kernel.cut

    def _from_K(self, K: np.ndarray, z) -> np.ndarray:
        if K.ndim == 2:
            K = K[None]
        eps, a, n = self.eps, self.alpha, K.shape[-1]
        Ka = K @ a
        self_energy = Ka @ np.conj(a)
        if eps != 0.0 and n:
            mat = np.eye(n) + eps * (self.M @ K)
            cond = np.linalg.cond(mat)
            if np.any(cond > COND_MAX):
                raise ConditioningError(float(np.max(cond)))
            sol = np.linalg.solve(mat, (Ka @ self.M.T)[..., None])[..., 0]
            self_energy = self_energy - eps * (np.einsum("...pq,...q->...p", K, sol) @ np.conj(a))
        return eps * self.c0 - z - eps ** 2 * self_energy

    def boundary(self, x, sign: int = +1) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        K = self.kernel.boundary(x, sign)
        return self._from_K(K, x)

    def self_energy_boundary(self, x, sign: int = +1) -> np.ndarray:
        """F(x) - (ε c₀ - x): the self-energy term (with its ε prefactor)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.boundary(x, sign) - (self.eps * self.c0 - x)

    def offaxis(self, z: complex) -> complex:
        z = complex(z)
        K = self.kernel.offaxis(z)
        return complex(self._from_K(K, z)[0])

    def __call__(self, point):
        if isinstance(point, tuple):
            x, sign = point
            return complex(self.boundary(np.array([x]), sign)[0])
        return self.offaxis(point)

    def real_outside(self, x: float) -> float:
        """F(x) for real x outside the spectral support, where F is real."""
        K = self.kernel.real_outside(float(x))
        return float(self._from_K(K, x)[0].real)

    def bound_states(self) -> list[tuple[float, float]]:
        """Eigenvalues of the reduced problem outside the continuum, with their spectral weights.

        F is strictly decreasing on each gap and tends to ∓∞ far away, so a
        root exists iff F has the right sign next to the edge; it is then
        bracketed by doubling the distance to the edge.
        """
        smap = self.model.smap
        lo, up = float(smap.lam(0.0)), smap.upper
        span = self.kernel.cut - lo
        out = []
        gaps = [(-1, lo)] + ([(+1, up)] if np.isfinite(up) else [])
        for side, edge in gaps:
            g = lambda d: self.real_outside(edge + side * d)  # noqa: E731
            d_lo = 1e-14 * span
            g_lo = g(d_lo)
            if side * g_lo <= 0:  # below the band F(lo-) must be negative, above it positive
                continue
            d_hi = 1e-12 * span
            while side * g(d_hi) > 0:
                d_lo, d_hi = d_hi, d_hi * 16
                if d_hi > 1e6 * span:
                    raise ModelError("bound-state search did not bracket a root")
            d0 = brentq(g, d_lo, d_hi, xtol=1e-300, rtol=1e-13, maxiter=200)
            xb = edge + side * d0
            h = 1e-4 * d0
            dF = (self.real_outside(xb + h) - self.real_outside(xb - h)) / (2 * h)
            out.append((float(xb), float(-1.0 / dF)))
        return out

    def derivative(self, x, h: float = 1e-6) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return (self.boundary(x + h) - self.boundary(x - h)) / (2 * h)

    def stone_density(self, x) -> np.ndarray:
        """(1/π) Im(1/F(x + i0)) ≥ 0."""
        return np.imag(1.0 / self.boundary(x)) / np.pi


# ----------------------------------------------------------------------------
# builders


def _check_eps(eps):
    if eps < 0:
        raise ValueError("eps must be nonnegative")


def _active(model: SpectralModel, vectors) -> np.ndarray:
    """Indices of vectors with a nonzero continuum part (the others drop out of Q₀VQ₀)."""
    _, lam, _ = model.nodes()
    return np.array([i for i, v in enumerate(vectors) if np.any(v.f(lam) != 0)], dtype=int)


def _reduced(model, vectors, coef):
    coef = np.asarray(coef, dtype=complex)
    c = np.array([v.c for v in vectors], dtype=complex)
    keep = _active(model, vectors)
    alpha = (coef @ c)[keep]
    return [vectors[i].f for i in keep], coef[np.ix_(keep, keep)], alpha


def f0_function(model: SpectralModel, pert: FactoredPerturbation, eps: float) -> SLFGFunction:
    """F⁰ via the generic resummation over the generating set of W."""
    _check_eps(eps)
    fibers, M, alpha = _reduced(model, pert.gens, pert.coef)
    ker = kernel_for(pert, model, fibers, "gens")
    return SLFGFunction(model, ker, pert.b, M, alpha, eps, ansatz=0)


def f0(model: SpectralModel, pert: FactoredPerturbation, eps: float, point) -> complex:
    """F⁰ = εb - z - ε² ξ†D{G - εG[D + εG]⁻¹G}Dξ with G = g_matrix, ξ = AΨ₀."""
    _check_eps(eps)
    ker = kernel_for(pert, model, [a.f for a in pert.factors], "factors")
    if isinstance(point, tuple):
        x, sign = point
        G = ker.boundary(np.array([x]), sign)[0]
        z = x
    else:
        z = complex(point)
        G = ker.offaxis(z)
    D = np.diag(pert.D).astype(complex)
    xi = pert.xi
    inner = G
    if eps != 0.0 and len(D):
        mat = D + eps * G
        cond = np.linalg.cond(mat)
        if cond > COND_MAX:
            raise ConditioningError(cond)
        inner = G - eps * G @ np.linalg.solve(mat, G)
    val = np.conj(xi) @ D @ inner @ D @ xi
    return complex(eps * pert.b - z - eps ** 2 * val)


class F1Data:
    """Everything F¹ needs at one ε: the ansatz chain, W̃_ε, d_ε."""

    def __init__(self, model: SpectralModel, pert: FactoredPerturbation, eps: float,
                 frame: AnsatzFrame | None = None):
        if not getattr(pert, "vanishing_fgr", False):
            from .model import check_assumption_gamma0
            if not check_assumption_gamma0(model, pert):
                raise UnsupportedError("F1 needs a vanishing Fermi Golden Rule constant")
        self.ansatz = Ansatz(model, pert, eps, frame)
        self.Wt = w_tilde(model, pert, self.ansatz.U, eps, self.ansatz.frame)
        self.d = d_eps(self.Wt, eps) if eps > 0 else model.zero()


def f1_function(model: SpectralModel, pert: FactoredPerturbation, eps: float,
                frame: AnsatzFrame | None = None) -> SLFGFunction:
    """F¹ = ε⟨Ψ₀,W̃Ψ₀⟩ - z - ε⁴⟨d_ε, (Q₀(H + εW̃)Q₀ - z)⁻¹ d_ε⟩."""
    _check_eps(eps)
    if eps == 0.0:
        ker = ContinuumKernel(model, [])
        return SLFGFunction(model, ker, 0.0, np.zeros((0, 0)), np.zeros(0), 0.0, ansatz=1)
    data = F1Data(model, pert, eps, frame)
    Wt = data.Wt
    # Q₀W̃Ψ₀ = ε d_ε, so ε²⟨Q₀W̃Ψ₀, R̃ Q₀W̃Ψ₀⟩ = ε⁴⟨d_ε, R̃ d_ε⟩
    fibers, M, alpha = _reduced(model, Wt.vectors, Wt.coef)
    ker = ContinuumKernel(model, fibers)
    out = SLFGFunction(model, ker, Wt.expect_psi0(), M, alpha, eps, ansatz=1)
    out.data = data
    return out


def f1(model: SpectralModel, pert: FactoredPerturbation, eps: float, point) -> complex:
    return f1_function(model, pert, eps)(point)


def slfg_function(model, pert, eps, ansatz: int, frame=None) -> SLFGFunction:
    if ansatz == 0:
        return f0_function(model, pert, eps)
    if ansatz == 1:
        return f1_function(model, pert, eps, frame)
    raise ValueError("ansatz must be 0 or 1")


# ----------------------------------------------------------------------------
# resonances


@dataclass
class Resonance:
    x: float
    width: float
    E: complex
    ansatz: int
    eps: float
    slope: float
    residual: float
    diagnostics: dict = field(default_factory=dict)


def resonance_position(F: SLFGFunction, eps: float | None = None, ansatz: int | None = None,
                       n_scan: int = 64, max_iter: int = 100) -> Resonance:
    """Root of R(x) = Re F(x + i0) on J_(a/2) by bisection-safeguarded Newton."""
    eps = F.eps if eps is None else eps
    ansatz = F.ansatz if ansatz is None else ansatz
    half = F.model.a / 2
    lo_w, hi_w = -half * (1 - 1e-9), half * (1 - 1e-9)
    xs = np.linspace(lo_w, hi_w, n_scan)
    R = F.boundary(xs).real
    slopes = np.diff(R) / np.diff(xs)
    sgn = np.sign(R)
    flips = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    exact = np.nonzero(R == 0)[0]
    brackets = [(float(xs[i]), float(xs[i + 1])) for i in flips]
    brackets += [(float(xs[i]), float(xs[i])) for i in exact]
    if not brackets:
        raise NoRootError(f"Re F has no sign change on J_(a/2) at eps={eps}")
    if len(brackets) > 1:
        raise UniquenessError(brackets)
    lo, hi = brackets[0]
    if lo == hi:
        x = lo
    else:
        f_lo = F.boundary(np.array([lo])).real[0]
        x = 0.5 * (lo + hi)
        h = 1e-7 * F.model.a
        for _ in range(max_iter):
            r = F.boundary(np.array([x])).real[0]
            if r == 0.0:
                break
            if np.sign(r) == np.sign(f_lo):
                lo, f_lo = x, r
            else:
                hi = x
            d = float(F.derivative(np.array([x]), h).real[0])
            step = -r / d if d != 0 else np.inf
            x_new = x + step
            if not (lo < x_new < hi):
                x_new = 0.5 * (lo + hi)
            if abs(x_new - x) <= 2.0 * np.spacing(abs(x) + 1e-300) or hi - lo <= 4.0 * np.spacing(abs(x)):
                x = x_new
                break
            x = x_new
        # polish: pick the neighbouring float with the smallest |R|
        cand = np.array([x, np.nextafter(x, -np.inf), np.nextafter(x, np.inf)])
        rc = np.abs(F.boundary(cand).real)
        x = float(cand[np.argmin(rc)])
    val = F.boundary(np.array([x]))[0]
    I = float(val.imag)
    if I > 0:
        raise ModelError(f"Im F(x+i0) = {I:.3e} > 0 at the root (sign structure violated)")
    res = Resonance(x=float(x), width=-I, E=complex(x, I), ansatz=ansatz, eps=eps,
                    slope=float(np.median(slopes)), residual=float(abs(val.real)))
    return res


def gamma_scale(eps: float, ansatz: int) -> float:
    """γ(ε): ε² for the unperturbed ansatz, ε⁴ for the corrected one."""
    return eps ** 2 if ansatz == 0 else eps ** 4


def lorentzian_diagnostics(F, res: Resonance, eta: float = 0.0, C: float = 1.0, n: int = 801,
                           window_half: float | None = None, n_t: int = 64) -> dict:
    """Compare 1/F with 1/L, L(x) = -(x - x(ε)) - iΓ, on J_{ε,η} = x(ε) ± CΓ/γ.

    Reports the pointwise sup of |1/F - 1/L| over the window, and the
    oscillatory sup_t |∫_J e^{-ixt}(1/F - 1/L) dx| (the quantity bounded by
    a multiple of γ(ε)), each also divided by γ(ε).  ``F`` may be an
    SLFGFunction or any callable on arrays of x returning F(x + iη).
    """
    if eta > 1e-3:
        raise ValueError("eta must be <= 1e-3")
    gamma = gamma_scale(res.eps, res.ansatz)
    Gam = res.width
    half = C * Gam / gamma if window_half is None else window_half
    b = F.model.a / 2 if hasattr(F, "model") else np.inf
    lo, hi = res.x - half, res.x + half
    if lo <= -b / 2 or hi >= b / 2:
        raise WindowError(f"Lorentzian window [{lo:.3g}, {hi:.3g}] leaves (-b/2, b/2) with b = a/2")

    if isinstance(F, SLFGFunction):
        if eta == 0.0:
            evalF = F.boundary
        else:
            evalF = lambda xx: np.array([F.offaxis(complex(v, eta)) for v in xx])  # noqa: E731
    else:
        evalF = F
    # graded nodes resolve the Lorentzian peak
    from ._quad import graded_breaks, panel_nodes
    br = graded_breaks(lo, hi, res.x, max(Gam, 1e-300) / 4, (hi - lo) / 16)
    xq, wq = panel_nodes(br, 16)
    xq, wq = xq.ravel(), wq.ravel()
    diff = 1.0 / evalF(xq) - 1.0 / (-(xq - res.x) - 1j * Gam)
    sup_point = float(np.max(np.abs(diff)))
    ts = np.concatenate([[0.0], np.geomspace(1e-2 / max(half, 1e-300), 10.0 / max(Gam, 1e-300), n_t - 1)])
    integrals = np.array([np.sum(wq * np.exp(-1j * t * xq) * diff) for t in ts])
    sup_int = float(np.max(np.abs(integrals)))
    return {
        "window": (lo, hi), "gamma": gamma, "Gamma": Gam,
        "sup_pointwise": sup_point, "sup_pointwise_over_gamma": sup_point / gamma,
        "sup_integral": sup_int, "sup_integral_over_gamma": sup_int / gamma,
    }
