"""Reduced resolvent S(z) = Q₀(H - z)⁻¹Q₀, the matrix G(z) and their boundary values.

Everything is evaluated in sandwiched form: for a short list of fibers
f_1..f_n the engine returns the matrix

    K_pq(z) = ∫ ⟨f_p(λ), f_q(λ)⟩ / (λ - z) dλ,

off the axis by graded Gauss-Legendre quadrature and on the axis (z = x ± i0)
by singularity subtraction

    K(x ± i0) = ∫ (ρ(λ) - ρ(x)) / (λ - x) dλ + ρ(x) ln((L - x)/(x - lo)) ± iπ ρ(x),

with the subtraction taken over [lo, L] (L = upper band edge, or a finite cut
for unbounded spectra beyond which the remaining integral is regular).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._quad import GL_ORDER, adaptive_integrate, gauss_legendre, graded_breaks
from .cauchy import ModulusOfContinuity, holder_seminorm
from .model import (DomainViolation, FactoredPerturbation, Fiber, ModelError, SpectralModel,
                    StateVector, fgr_constant)


class WindowError(ModelError):
    pass


class UnsupportedError(ModelError):
    pass


# ----------------------------------------------------------------------------
# the sandwich engine


def _cut_index(model: SpectralModel) -> int:
    """Index of the break that ends the subtraction range."""
    b = model.breaks
    if model.smap.kind == "linear":
        return len(b) - 1
    return int(np.argmin(np.abs(b - 0.9)))


class ContinuumKernel:
    """Cauchy transforms of the pairwise fiber densities of a list of fibers."""

    def __init__(self, model: SpectralModel, fibers):
        self.model = model
        self.fibers = list(fibers)
        self.n = len(self.fibers)
        s, lam, wt = model.nodes()
        k = _cut_index(model)
        s_cut = model.breaks[k]
        self.lo = float(model.smap.lam(0.0))
        self.cut = float(model.smap.lam(s_cut)) if k < len(model.breaks) - 1 else float(model.smap.hi)
        inside = s < s_cut
        self._lam_in, self._wt_in = lam[inside], wt[inside]
        self._lam_out, self._wt_out = lam[~inside], wt[~inside]
        self._rho_in = self._density_at(self._lam_in)
        self._rho_out = self._density_at(self._lam_out)

    def _density_at(self, lam) -> np.ndarray:
        if len(lam) == 0 or self.n == 0:
            return np.zeros((len(lam), self.n, self.n), dtype=complex)
        F = np.stack([f(lam) for f in self.fibers], axis=1)
        return np.einsum("npm,nqm->npq", np.conj(F), F)

    def density(self, x) -> np.ndarray:
        """ρ_pq(x) = ⟨f_p(x), f_q(x)⟩, shape (len(x), n, n)."""
        return self._density_at(np.atleast_1d(np.asarray(x, dtype=float)))

    def boundary(self, x, sign: int = +1, chunk: int = 512) -> np.ndarray:
        """K(x ± i0) for an array of real x inside (lo, cut); shape (len(x), n, n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x <= self.lo) or np.any(x >= self.cut):
            raise WindowError("boundary values need lo < x < cut")
        if self.n == 0:
            return np.zeros((len(x), 0, 0), dtype=complex)
        out = np.empty((len(x), self.n, self.n), dtype=complex)
        rho_in = self._rho_in.reshape(len(self._lam_in), self.n * self.n)
        rho_out = self._rho_out.reshape(len(self._lam_out), self.n * self.n)
        span = self.cut - self.lo
        for i0 in range(0, len(x), chunk):
            xs = x[i0:i0 + chunk]
            rx = self.density(xs).reshape(len(xs), -1)
            d = self._lam_in[None, :] - xs[:, None]
            close = np.abs(d) < 1e-9 * span
            kern = np.where(close, 0.0, self._wt_in[None, :] / np.where(close, 1.0, d))
            pv = kern @ rho_in - rx * np.sum(kern, axis=1)[:, None]
            pv += rx * np.log((self.cut - xs) / (xs - self.lo))[:, None]
            if len(self._lam_out):
                pv += (self._wt_out[None, :] / (self._lam_out[None, :] - xs[:, None])) @ rho_out
            if np.any(close):
                rows, cols = np.nonzero(close)
                h = 1e-6 * span
                der = (self.density(xs[rows] + h) - self.density(xs[rows] - h)).reshape(len(rows), -1) / (2 * h)
                np.add.at(pv, rows, self._wt_in[cols][:, None] * der)
            out[i0:i0 + chunk] = (pv + sign * 1j * np.pi * rx).reshape(len(xs), self.n, self.n)
        return out

    def offaxis(self, z: complex, rtol: float = 1e-12) -> np.ndarray:
        """K(z) for Im z ≠ 0 (or real z off the spectrum) by adaptive quadrature in the map variable."""
        z = complex(z)
        if z.imag == 0.0:
            smap = self.model.smap
            if smap.lam(0.0) <= z.real <= smap.upper:
                raise WindowError("off-axis evaluation needs Im z != 0 inside the spectrum")
            return self.real_outside(z.real).astype(complex)
        if self.n == 0:
            return np.zeros((0, 0), dtype=complex)
        smap = self.model.smap
        sx = float(np.clip(smap.inv(np.clip(z.real, self.lo, smap.upper)), 0.0, 1.0))
        dl = float(smap.dlam(np.clip(sx, 1e-12, 1 - 1e-12)))
        finest = max(abs(z.imag) / max(dl, 1e-300), 1e-15)
        init = np.union1d(self.model.breaks, graded_breaks(0.0, 1.0, sx, finest, 1.0 / 32))
        lam_of, dlam_of = smap.lam, smap.dlam

        def f(s):
            lam = lam_of(s)
            wts = dlam_of(s)
            ok = np.isfinite(lam) & np.isfinite(wts)
            rho = np.zeros((len(s), self.n, self.n), dtype=complex)
            if np.any(ok):
                rho[ok] = self._density_at(lam[ok]) * (wts[ok] / (lam[ok] - z))[:, None, None]
            return rho

        val, _, _ = adaptive_integrate(f, 0.0, 1.0, rtol=rtol, atol=1e-16, initial=init)
        return np.asarray(val).reshape(self.n, self.n)

    def real_outside(self, x: float, rtol: float = 1e-12) -> np.ndarray:
        """K(x) for real x outside the spectral support (a real symmetric matrix)."""
        smap = self.model.smap
        lo, up = float(smap.lam(0.0)), smap.upper
        if lo <= x <= up:
            raise WindowError("real evaluation needs x outside the spectral support")
        if self.n == 0:
            return np.zeros((0, 0))
        if x < lo:
            s_end, s_near = 0.0, float(smap.inv(min(lo + (lo - x), up)))
        else:
            s_end, s_near = 1.0, 1.0 - float(smap.inv(max(up - (x - up), lo)))
        init = np.union1d(self.model.breaks, graded_breaks(0.0, 1.0, s_end, max(s_near / 4, 1e-15), 1.0 / 32))
        lam_of, dlam_of = smap.lam, smap.dlam

        def f(s):
            lam = lam_of(s)
            wts = dlam_of(s)
            ok = np.isfinite(lam) & np.isfinite(wts)
            rho = np.zeros((len(s), self.n, self.n), dtype=complex)
            if np.any(ok):
                rho[ok] = self._density_at(lam[ok]) * (wts[ok] / (lam[ok] - x))[:, None, None]
            return rho

        val, _, _ = adaptive_integrate(f, 0.0, 1.0, rtol=rtol, atol=1e-300, initial=init)
        return np.asarray(val).reshape(self.n, self.n)

    def outer(self, z: complex, panels: int = 16) -> np.ndarray:
        """Contribution of σ ∖ J_a to K(z) (the analytic part S_>)."""
        smap, a = self.model.smap, self.model.a
        pieces = []
        s_lo, s_hi = float(smap.inv(-a)), float(smap.inv(a))
        if s_lo > 1e-15:
            pieces.append((0.0, s_lo))
        if s_hi < 1.0 - 1e-15 and smap.upper > a:
            pieces.append((s_hi, 1.0))
        total = np.zeros((self.n, self.n), dtype=complex)
        s, w = gauss_legendre(GL_ORDER)
        for p0, p1 in pieces:
            b = np.linspace(p0, p1, panels + 1)
            if smap.kind == "threshold" and p1 == 1.0:
                b = np.concatenate([b[:-2], 1.0 - (1.0 - b[-2]) * 0.5 ** np.arange(0, 12), [1.0]])
                b = np.unique(b)
            mid = 0.5 * (b[1:] + b[:-1])
            half = 0.5 * (b[1:] - b[:-1])
            sn = (mid[:, None] + half[:, None] * s).ravel()
            wn = (half[:, None] * w).ravel() * smap.dlam(sn)
            lam = smap.lam(sn)
            total += np.einsum("n,npq->pq", wn / (lam - z), self._density_at(lam))
        return total


def kernel_for(obj, model: SpectralModel, fibers, key: str) -> ContinuumKernel:
    """Per-object cache of kernels (objects are immutable after build)."""
    cache = obj.__dict__.setdefault("_kernel_cache", {})
    if key not in cache:
        cache[key] = ContinuumKernel(model, fibers)
    return cache[key]


def _point(point):
    """Normalize a point: complex z (off-axis) or (x, sign) boundary tuple."""
    if isinstance(point, tuple):
        x, sign = point
        if sign not in (1, -1):
            raise ValueError("boundary sign must be +1 or -1")
        return float(x), int(sign)
    return complex(point), None


def evaluate(kernel: ContinuumKernel, point) -> np.ndarray:
    z, sign = _point(point)
    if sign is None:
        return kernel.offaxis(z)
    return kernel.boundary(np.array([z]), sign)[0]


# ----------------------------------------------------------------------------
# public operations


def _check_window(model: SpectralModel, point):
    z, sign = _point(point)
    if sign is not None and abs(z) >= model.a / 2:
        raise WindowError(f"boundary point x={z} outside J_(a/2) = (-{model.a / 2}, {model.a / 2})")


def g_matrix(model: SpectralModel, pert: FactoredPerturbation, point) -> np.ndarray:
    """G(z)_jk = ⟨Q₀a_j, (H - z)⁻¹ Q₀a_k⟩."""
    _check_window(model, point)
    ker = kernel_for(pert, model, [a.f for a in pert.factors], "factors")
    return evaluate(ker, point)


def s_apply(model: SpectralModel, v: StateVector) -> StateVector:
    """S v: the continuum part divided by λ (the Ψ₀ component is dropped).

    Raises DomainViolation when the fiber of v does not vanish at λ = 0 and no
    factorization f = λ·h is declared.
    """
    return StateVector(0.0, v.f.over_lambda())


def s_z_apply(model: SpectralModel, v: StateVector, point):
    """S(z)v for Im z ≠ 0, or the boundary object for (x, ±)."""
    z, sign = _point(point)
    if sign is None:
        f = v.f
        return StateVector(0.0, Fiber(lambda lam: f(lam) / (lam - z)[:, None], f.m,
                                      label=f"{f.label}/(λ-z)"))
    return BoundaryResolvent(model, v, z, sign)


@dataclass
class BoundaryResolvent:
    """S(x ± i0)v, usable only inside inner products ⟨u, S(x ± i0) v⟩."""

    model: SpectralModel
    v: StateVector
    x: float
    sign: int

    def inner_from(self, u: StateVector) -> complex:
        ker = ContinuumKernel(self.model, [u.f, self.v.f])
        return complex(ker.boundary(np.array([self.x]), self.sign)[0, 0, 1])


def sandwich(model: SpectralModel, u: StateVector, v: StateVector, point) -> complex:
    """⟨u, S(z) v⟩ over the continuum parts."""
    ker = ContinuumKernel(model, [u.f, v.f])
    return complex(evaluate(ker, point)[0, 1])


def s_norm2_offaxis(model: SpectralModel, v: StateVector, z: complex) -> float:
    """‖S_<(z) v‖² = ∫ |λ - z|⁻² ‖Γ(λ)v‖² dλ, computed by the same quadrature."""
    w = s_z_apply(model, v, z)
    return model.continuum_inner(w, w).real


def phi_vector(model: SpectralModel, pert: FactoredPerturbation) -> StateVector:
    """φ = S W Ψ₀ (requires vanishing FGR)."""
    return s_apply(model, pert.w_psi0)


def four_families(model: SpectralModel, pert: FactoredPerturbation, point) -> dict:
    """⟨φ,S(z)φ⟩, ⟨a_j,S(z)φ⟩, ⟨φ,S(z)a_k⟩ and G(z) over the factor set."""
    if fgr_constant(model, pert) > 1e-20:
        raise UnsupportedError("four families need a vanishing Fermi Golden Rule constant")
    phi = phi_vector(model, pert)
    fibers = [phi.f] + [a.f for a in pert.factors]
    ker = kernel_for(pert, model, fibers, "families")
    K = evaluate(ker, point)
    return {"phi_phi": K[0, 0], "a_phi": K[1:, 0], "phi_a": K[0, 1:], "G": K[1:, 1:]}


def herglotz_min(model: SpectralModel, vectors, x, eta: float) -> float:
    """min over the sample points and vectors of Im⟨u, S(x + iη)u⟩."""
    ker = ContinuumKernel(model, [v.f for v in vectors])
    vals = [np.diag(ker.offaxis(complex(xx, eta))).imag.min() for xx in np.atleast_1d(x)]
    return float(min(vals))


def outer_contour_integral(model: SpectralModel, u: StateVector, v: StateVector, n: int = 256) -> complex:
    """∮ ⟨u, S_>(z) v⟩ dz over |z| = a/2 (vanishes when S_> is analytic inside)."""
    ker = ContinuumKernel(model, [u.f, v.f])
    th = 2 * np.pi * np.arange(n) / n
    z = 0.5 * model.a * np.exp(1j * th)
    vals = np.array([ker.outer(zz)[0, 1] for zz in z])
    return complex(np.sum(vals * 1j * z) * 2 * np.pi / n)


def bdd_refinement(model: SpectralModel, pert: FactoredPerturbation, levels=(256, 512, 1024)) -> np.ndarray:
    """∫_{J_a} ‖w(λ)‖²/λ² dλ on midpoint grids of increasing size.

    Converges when w(0) = 0; grows without bound otherwise.
    """
    w = pert.coupling
    out = []
    a = model.a
    for n in levels:
        h = 2 * a / n
        lam = -a + h * (np.arange(n) + 0.5)
        out.append(float(np.sum(np.sum(np.abs(w(lam)) ** 2, axis=1) / lam ** 2) * h))
    return np.array(out)


# ----------------------------------------------------------------------------
# boundary-function samples


@dataclass
class BoundaryFunction:
    """Samples of a boundary value and its first derivative on a window."""

    window: tuple
    x: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    modulus: ModulusOfContinuity
    conjugation: bool = True

    @classmethod
    def sample(cls, fn, window, n: int = 201, h: float = 1e-5, theta: float = 0.5):
        """``fn`` maps an array of x to boundary values at x + i0."""
        lo, hi = window
        x = np.linspace(lo, hi, n)
        vals = np.asarray(fn(x))
        der = (np.asarray(fn(x + h)) - np.asarray(fn(x - h))) / (2 * h)
        return cls((lo, hi), x, vals, der, ModulusOfContinuity.holder(theta))

    def derivative_consistent(self, tol: float = 1e-5) -> bool:
        fd = np.gradient(self.values, self.x, axis=0, edge_order=2)
        scale = max(1.0, float(np.max(np.abs(self.values))))
        inner = slice(2, -2)
        h = self.x[1] - self.x[0]
        # second-order differences carry an O(h²) error; compare on that scale
        bound = tol * scale + h * h * float(np.max(np.abs(np.gradient(np.gradient(self.derivs, self.x, axis=0), self.x, axis=0))))
        return bool(np.max(np.abs(fd[inner] - self.derivs[inner])) <= bound)

    def holder_of_derivative(self) -> float:
        return holder_seminorm(self.x, self.derivs, self.modulus.theta)


__all__ = [
    "BoundaryFunction", "BoundaryResolvent", "ContinuumKernel", "DomainViolation", "UnsupportedError",
    "WindowError", "bdd_refinement", "four_families", "g_matrix", "herglotz_min", "outer_contour_integral",
    "phi_vector", "s_apply", "s_norm2_offaxis", "s_z_apply", "sandwich",
]
