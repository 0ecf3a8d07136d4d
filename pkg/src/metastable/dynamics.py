"""Survival amplitudes, decay-law error metrics and ε-scaling studies.

Two independent routes to A(ε,t) = ⟨Ψ, e^{-itH_ε}Ψ⟩:

* Stone route: A(t) = ∫ e^{-ixt} ρ(x) dx with ρ = (1/π) Im(1/F(x + i0)).
  The density is expanded in Legendre polynomials on graded panels and
  the moments ∫ e^{-iωs} P_k(s) ds = 2(-i)^k j_k(ω) are exact, so the
  error is bounded by the L1 interpolation error uniformly in t.
* Direct route: the continuum is discretized by the midpoint rule in the
  spectral map variable and the resulting Hermitian matrix is diagonalized.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import spherical_jn

from ._quad import gauss_legendre, graded_breaks
from .ansatz import Ansatz, AnsatzFrame
from .feshbach import Resonance, SLFGFunction, f0_function, f1_function, resonance_position
from .model import (FactoredPerturbation, ModelError, SpectralModel, StateVector,
                    check_assumption_gamma0, fgr_constant)

STONE_TOL = 1e-12          # absolute L1 target for the density interpolant
DEGRADED_TOL = 1e-6        # certificate above this marks the series as degraded
MAX_STONE_PANELS = 4096


class RecurrenceError(ModelError):
    def __init__(self, t_req, t_allowed, n_req):
        super().__init__(f"t = {t_req:.4g} exceeds the recurrence safety window {t_allowed:.4g}; "
                         f"need N >= {n_req}")
        self.t_req, self.t_allowed, self.n_req = t_req, t_allowed, n_req


class CoverageError(ModelError):
    pass


@dataclass
class AmplitudeSeries:
    times: np.ndarray
    values: np.ndarray
    reference: complex
    sup_error: float = float("nan")
    argmax_t: float = float("nan")
    tail_bound: float = float("nan")
    certificate: float = 0.0
    degraded: bool = False
    method: str = ""
    evaluator: object = field(default=None, repr=False, compare=False)

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.values - np.exp(-1j * self.times * self.reference))

    @property
    def width(self) -> float:
        return -float(np.imag(self.reference))


# ----------------------------------------------------------------------------
# Stone route


def _legendre_projector(n: int) -> np.ndarray:
    """Matrix mapping GL-n samples to Legendre coefficients of the interpolant."""
    s, w = gauss_legendre(n)
    P = np.polynomial.legendre.legvander(s, n - 1)  # (n nodes, n degrees)
    return (P * w[:, None]).T * ((2 * np.arange(n) + 1) / 2)[:, None]


class StoneExpansion:
    """Piecewise Legendre expansion of the Stone density of an SLFG function."""

    def __init__(self, F: SLFGFunction, res: Resonance | None = None, tol: float = STONE_TOL,
                 n: int = 32, max_panels: int = MAX_STONE_PANELS):
        self.F = F
        self.n = n
        lo, hi = F.support
        self.lo, self.hi = lo, hi
        span = hi - lo
        self._proj = _legendre_projector(n)
        self.point_masses: list[tuple[float, float]] = []
        if res is None:
            res = resonance_position(F)
        self.res = res
        x0, gam = res.x, res.width
        if gam == 0.0:
            # eigenvalue: Im F vanishes at the root, so 1/F carries a point mass
            # fourth-order stencil: a wide step keeps the roundoff near 1e-13
            h = min(1e-3 * span, 0.25 * (x0 - lo), 0.25 * (hi - x0))
            f = F.boundary(x0 + h * np.array([-2.0, -1.0, 1.0, 2.0])).real
            d = float((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h))
            self.point_masses.append((x0, -1.0 / d))
            finest = 1e-3 * span
        else:
            finest = gam / 4
        self.point_masses.extend(F.bound_states())
        breaks = graded_breaks(lo, hi, x0, finest, span / 64)
        if F.model.smap.kind == "threshold":
            breaks = np.union1d(breaks, graded_breaks(lo, hi, lo, 1e-10 * span, span / 64))
        self.breaks, self.coef, self.est = self._refine(np.asarray(breaks), tol, max_panels)
        self.certificate = float(np.sum(self.est))
        self.converged = self.certificate <= max(tol, 1e-300) * 10

    def density(self, x) -> np.ndarray:
        return self.F.stone_density(x)

    def _expand(self, breaks):
        return self._expand_pairs(np.stack([breaks[:-1], breaks[1:]], axis=1))

    def _refine(self, breaks, tol, max_panels):
        coef, est, floor = self._expand(breaks)
        parent = np.full(len(est), np.inf)
        span = self.hi - self.lo
        for _ in range(60):
            widths = np.diff(breaks)
            # children that did not improve on their parent are limited by the density
            # evaluation itself (roundoff or the boundary engine), not by the expansion
            bad = ((est > np.maximum(tol * widths / span, floor)) & (est < 0.5 * parent)
                   & (widths > 1e-12 * span))
            if not np.any(bad) or len(breaks) - 1 + np.count_nonzero(bad) > max_panels:
                break
            mids = 0.5 * (breaks[:-1] + breaks[1:])[bad]
            keep = ~bad
            split_l = np.concatenate([breaks[:-1][bad], mids])
            split_r = np.concatenate([mids, breaks[1:][bad]])
            c_s, e_s, f_s = self._expand_pairs(np.stack([split_l, split_r], axis=1))
            par_s = np.concatenate([est[bad], est[bad]])
            order = np.argsort(np.concatenate([breaks[:-1][keep], split_l]), kind="stable")
            coef = np.concatenate([coef[keep], c_s])[order]
            est = np.concatenate([est[keep], e_s])[order]
            floor = np.concatenate([floor[keep], f_s])[order]
            parent = np.concatenate([parent[keep], par_s])[order]
            breaks = np.sort(np.concatenate([breaks, mids]))
        return breaks, coef, est

    def _expand_pairs(self, pairs):
        """Legendre coefficients, truncation estimate and roundoff floor per panel."""
        s, _ = gauss_legendre(self.n)
        mid = 0.5 * (pairs[:, 0] + pairs[:, 1])
        half = 0.5 * (pairs[:, 1] - pairs[:, 0])
        x = (mid[:, None] + half[:, None] * s).ravel()
        Fx = self.F.boundary(x)
        rho = (np.imag(1.0 / Fx) / np.pi).reshape(len(mid), self.n)
        coef = rho @ self._proj.T
        est = 2.0 * half * (np.abs(coef[:, -1]) + np.abs(coef[:, -2]))
        # absolute rounding in F is set by the size of its terms; it is amplified by 1/|F|²
        lin = self.F.eps * self.F.c0 - x
        scale = np.abs(lin) + np.abs(x) + np.abs(Fx - lin) + abs(self.F.eps * self.F.c0)
        noise = (16 * np.finfo(float).eps * scale / (np.pi * np.abs(Fx) ** 2)).reshape(len(mid), self.n)
        floor = 2.0 * half * np.max(noise, axis=1)
        return coef, est, floor

    @property
    def mass(self) -> float:
        half = 0.5 * np.diff(self.breaks)
        cont = float(np.sum(2.0 * half * self.coef[:, 0]))
        return cont + sum(w for _, w in self.point_masses)

    def __call__(self, times, chunk: int = 2**21) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        mid = 0.5 * (self.breaks[1:] + self.breaks[:-1])
        half = 0.5 * np.diff(self.breaks)
        k = np.arange(self.n)
        ck = self.coef * (2.0 * (-1j) ** k)[None, :]
        out = np.empty(len(t), dtype=complex)
        step = max(1, chunk // (len(mid) * self.n))
        for i0 in range(0, len(t), step):
            ts = t[i0:i0 + step]
            om = half[None, :] * ts[:, None]
            jk = spherical_jn(k[None, None, :], om[:, :, None])
            panel = np.einsum("tpk,pk->tp", jk, ck) * half[None, :]
            out[i0:i0 + step] = np.sum(panel * np.exp(-1j * np.outer(ts, mid)), axis=1)
        for x, w in self.point_masses:
            out += w * np.exp(-1j * t * x)
        return out


def amplitude_stone(F: SLFGFunction, eps: float | None = None, times=None, res: Resonance | None = None,
                    tol: float = STONE_TOL) -> AmplitudeSeries:
    """A(ε,t) = ∫ e^{-ixt}(1/π) Im(1/F(x + i0)) dx on the full spectral support."""
    if eps is not None and abs(eps - F.eps) > 0:
        raise ValueError("eps does not match the SLFG function")
    exp_ = StoneExpansion(F, res, tol)
    if times is None:
        times = hybrid_times(exp_.hi - exp_.lo, exp_.res.width, _gamma(F))
    times = np.asarray(times, dtype=float)
    vals = exp_(times)
    cert = exp_.certificate
    series = AmplitudeSeries(times=times, values=vals, reference=exp_.res.E, certificate=cert,
                             degraded=bool(cert > DEGRADED_TOL), method="stone", evaluator=exp_)
    return series


def _gamma(F: SLFGFunction) -> float:
    return F.eps ** 2 if F.ansatz == 0 else F.eps ** 4


# ----------------------------------------------------------------------------
# direct route


class DiscreteModel:
    """Midpoint discretization of the continuum in the map variable s."""

    def __init__(self, model: SpectralModel, N: int):
        self.model, self.N = model, int(N)
        s = (np.arange(self.N) + 0.5) / self.N
        self.lam = model.smap.lam(s)
        self.h = model.smap.dlam(s) / self.N
        m = model.m
        self.diag = np.concatenate([[0.0], np.repeat(self.lam, m)])
        inside = np.abs(self.lam) < model.a
        lam_in = self.lam[inside]
        self.spacing = float(np.max(np.diff(lam_in))) if len(lam_in) > 1 else float(model.a)

    @property
    def t_allowed(self) -> float:
        return 0.1 * 2 * np.pi / self.spacing

    def embed(self, v: StateVector) -> np.ndarray:
        f = v.f(self.lam) * np.sqrt(self.h)[:, None]
        return np.concatenate([[complex(v.c)], f.ravel()])

    def hamiltonian(self, pert: FactoredPerturbation, eps: float) -> np.ndarray:
        V = np.stack([self.embed(g) for g in pert.gens], axis=1)
        H = eps * (V @ pert.coef @ V.conj().T)
        H[np.diag_indices_from(H)] += self.diag
        H = 0.5 * (H + H.conj().T)
        if np.max(np.abs(H.imag)) == 0.0:
            H = H.real
        return H


def discretize(model: SpectralModel, N: int) -> DiscreteModel:
    return DiscreteModel(model, N)


def grid_resolvent(disc: DiscreteModel, pert: FactoredPerturbation, eps: float, z: complex,
                   state: StateVector | None = None) -> complex:
    """⟨Ψ, (H_ε - z)⁻¹ Ψ⟩ on the grid."""
    psi = disc.embed(state if state is not None else disc.model.psi0)
    H = disc.hamiltonian(pert, eps).astype(complex)
    H[np.diag_indices_from(H)] -= z
    return complex(np.vdot(psi, np.linalg.solve(H, psi)))


def amplitude_direct(model: SpectralModel, pert: FactoredPerturbation, eps: float, state: StateVector,
                     times, N: int = 1024, reference: complex | None = None) -> AmplitudeSeries:
    """A(t) = Σ_n |⟨state, φ_n⟩|² e^{-itE_n} from the full eigendecomposition."""
    times = np.asarray(times, dtype=float)
    disc = discretize(model, N)
    t_req = float(np.max(times)) if len(times) else 0.0
    if t_req > disc.t_allowed:
        raise RecurrenceError(t_req, disc.t_allowed, int(math.ceil(N * t_req / disc.t_allowed)))
    H = disc.hamiltonian(pert, eps)
    E, V = scipy.linalg.eigh(H)
    psi = disc.embed(state)
    p = np.abs(V.conj().T @ psi) ** 2
    vals = np.exp(-1j * np.outer(times, E)) @ p
    ref = complex(reference) if reference is not None else complex(np.nan)
    return AmplitudeSeries(times=times, values=vals, reference=ref, method="direct")


def ansatz_state(model: SpectralModel, pert: FactoredPerturbation, eps: float, ansatz: int,
                 frame: AnsatzFrame | None = None) -> StateVector:
    if ansatz == 0:
        return model.psi0
    return Ansatz(model, pert, eps, frame).psi1()


# ----------------------------------------------------------------------------
# error metrics


def hybrid_times(width: float, Gamma: float, gamma: float, n_lin: int = 64, n_log: int = 256,
                 mid_factor: float = 200.0) -> np.ndarray:
    """Linear grid on [0, 10/width], uniform oscillation grid to mid_factor/width, log grid to t_max.

    t_max = max(8, ln(100/γ))/Γ so that the exponential reference is below γ/100 there.
    """
    t_lin = 10.0 / width
    lin = np.linspace(0.0, t_lin, n_lin)
    if Gamma > 0:
        t_max = max(8.0, math.log(100.0 / gamma)) / Gamma
    else:
        t_max = 1e3 * t_lin
    t_mid = min(mid_factor / width, t_max)
    mid = np.arange(t_lin, t_mid, 0.25 / width)
    log = np.geomspace(t_lin, t_max, n_log)
    return np.unique(np.concatenate([lin, mid, log]))


def sup_error(series: AmplitudeSeries, E: complex | None = None, refine: bool = True,
              n_peaks: int = 6, require_coverage: bool = True) -> float:
    """max_t |A(t) - e^{-itE}| over the sampled grid, refined around the largest maxima.

    Also stores ``argmax_t`` and the tail bound |A(t_max)| + e^{-t_max Γ} on
    the series.  The tail bound covers t beyond the grid and is reported
    separately.
    """
    E = series.reference if E is None else complex(E)
    t = series.times
    if len(t) == 0 or t[0] != 0.0:
        raise CoverageError("time grid must start at t = 0")
    Gam = -E.imag
    if require_coverage:
        if Gam > 0 and t[-1] < 8.0 / Gam * (1 - 1e-12):
            raise CoverageError(f"time grid ends at {t[-1]:.4g} < 8/Γ = {8.0 / Gam:.4g}")
        if len(t) < 200:
            raise CoverageError("need at least 200 time points")
    err = np.abs(series.values - np.exp(-1j * t * E))
    best = int(np.argmax(err))
    sup, arg = float(err[best]), float(t[best])
    ev = series.evaluator if refine else None
    if ev is not None and len(t) > 2:
        inner = np.nonzero((err[1:-1] >= err[:-2]) & (err[1:-1] >= err[2:]))[0] + 1
        peaks = inner[np.argsort(err[inner])[::-1][:n_peaks]]
        for i in peaks:
            lo, hi = t[i - 1], t[i + 1]
            for _ in range(3):
                tt = np.linspace(lo, hi, 33)
                ee = np.abs(ev(tt) - np.exp(-1j * tt * E))
                j = int(np.argmax(ee))
                if ee[j] > sup:
                    sup, arg = float(ee[j]), float(tt[j])
                lo, hi = tt[max(j - 1, 0)], tt[min(j + 1, 32)]
    series.sup_error = sup
    series.argmax_t = arg
    series.tail_bound = float(abs(series.values[-1]) + math.exp(-t[-1] * max(Gam, 0.0)))
    return sup


# ----------------------------------------------------------------------------
# scaling study


@dataclass
class ScalingRow:
    eps: float
    ansatz: int
    x: float
    E: complex
    sup_error: float
    argmax_t: float
    tail_bound: float
    certificate: float
    mass: float
    degraded: bool
    a0: complex = complex("nan")


@dataclass
class ScalingReport:
    eps: list
    rows: list
    slopes: dict
    residuals: dict
    fgr: float
    fgr_ratio: list = field(default_factory=list)

    def sup_errors(self, ansatz: int) -> np.ndarray:
        return np.array([r.sup_error for r in self.rows if r.ansatz == ansatz])

    def normalized(self, ansatz: int) -> np.ndarray:
        p = 2 if ansatz == 0 else 4
        e = np.array([r.eps for r in self.rows if r.ansatz == ansatz])
        return self.sup_errors(ansatz) / e ** p

    def variation(self, ansatz: int) -> float:
        v = self.normalized(ansatz)
        return float(np.max(v) / np.min(v)) if len(v) else float("nan")


def fit_slope(eps, values) -> tuple[float, float]:
    """Least-squares slope of log(values) vs log(eps) and the RMS residual."""
    x, y = np.log(np.asarray(eps)), np.log(np.asarray(values))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def _one_eps(model, pert, eps, ansatze, frame):
    rows = []
    for k in ansatze:
        try:
            F = f0_function(model, pert, eps) if k == 0 else f1_function(model, pert, eps, frame)
            res = resonance_position(F)
            s = amplitude_stone(F, res=res)
            sup_error(s)
            mass = s.evaluator.mass
        except ModelError as exc:
            raise ModelError(f"scaling study failed at eps={eps} (ansatz {k}): {exc}") from exc
        rows.append(ScalingRow(eps=eps, ansatz=k, x=res.x, E=res.E, sup_error=s.sup_error,
                               argmax_t=s.argmax_t, tail_bound=s.tail_bound,
                               certificate=s.certificate, mass=mass, degraded=s.degraded,
                               a0=complex(s.values[0])))
    return rows


def scaling_study(model: SpectralModel, pert: FactoredPerturbation, eps_list, ansatze=None,
                  threads: int = 1) -> ScalingReport:
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    vanishing = check_assumption_gamma0(model, pert)
    if ansatze is None:
        ansatze = (0, 1) if vanishing else (0,)
    if 1 in ansatze and not vanishing:
        raise ModelError("ansatz 1 needs a vanishing Fermi Golden Rule constant")
    frame = AnsatzFrame(model, pert) if 1 in ansatze else None
    if frame is not None:
        bad = [e for e in eps_list if e >= frame.eps_max]
        if bad:
            raise ModelError(f"eps {bad} not below the ansatz threshold {frame.eps_max:.4g}")
    work = lambda e: _one_eps(model, pert, e, ansatze, frame)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_eps = list(pool.map(work, eps_list))
    else:
        per_eps = [work(e) for e in eps_list]
    rows = [r for block in per_eps for r in block]
    slopes, residuals = {}, {}
    for k in ansatze:
        sel = [r for r in rows if r.ansatz == k]
        if len(sel) >= 2:
            slopes[k], residuals[k] = fit_slope([r.eps for r in sel], [r.sup_error for r in sel])
    G = fgr_constant(model, pert)
    ratio = []
    if G > 0:
        ratio = [abs(r.E.imag + r.eps ** 2 * G) / r.eps ** 3 for r in rows if r.ansatz == 0]
    return ScalingReport(eps=eps_list, rows=rows, slopes=slopes, residuals=residuals, fgr=G,
                         fgr_ratio=ratio)


# ----------------------------------------------------------------------------
# finite-dimensional surviving-eigenvalue model


@dataclass
class LowerBoundResult:
    eps: float
    E: float
    psi1_norm: float
    sup_error: float
    bound: float
    argmax_t: float
    expansion_residual: float

    @property
    def holds(self) -> bool:
        return self.sup_error >= self.bound


def sz_nagy(P: np.ndarray, P0: np.ndarray) -> np.ndarray:
    """U = (1 - (P - P₀)²)^{-1/2}(P P₀ + (1 - P)(1 - P₀))."""
    n = len(P)
    one = np.eye(n)
    D = P - P0
    evals, evecs = np.linalg.eigh(one - D @ D)
    if np.min(evals) <= 0:
        raise ModelError("projections too far apart for the Sz.-Nagy unitary")
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.conj().T
    return inv_sqrt @ (P @ P0 + (one - P) @ (one - P0))


def lower_bound_model(eps: float, levels=(1.0, -0.7), coupling=(0.6, 0.8),
                      t_max: float = 400.0, dt: float = 0.01) -> LowerBoundResult:
    """H_ε = diag(0, λ₁, λ₂) + εW on ℂ³ with W coupling Ψ₀ to the other levels.

    Ψ_ε is the Sz.-Nagy image of Ψ₀ and Ψ₁ = -SWΨ₀; the survival error of the
    unperturbed state is compared with 0.5‖Ψ₁‖²ε².
    """
    lam = np.array([0.0, *levels])
    n = len(lam)
    W = np.zeros((n, n))
    W[0, 1:] = coupling
    W[1:, 0] = coupling
    H = np.diag(lam) + eps * W
    E_all, V = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(V[0]) ** 2))
    E = float(E_all[k])
    P = np.outer(V[:, k], V[:, k].conj())
    P0 = np.zeros((n, n))
    P0[0, 0] = 1.0
    U = sz_nagy(P, P0)
    psi0 = np.eye(n)[0]
    psi_eps = U @ psi0
    S = np.diag([0.0] + [1.0 / l for l in levels])
    psi1 = -S @ W @ psi0
    resid = float(np.linalg.norm(psi_eps - psi0 - eps * psi1))
    p = np.abs(V.conj().T @ psi0) ** 2
    t = np.arange(0.0, t_max, dt)
    err = np.abs(np.exp(-1j * np.outer(t, E_all)) @ p - np.exp(-1j * t * E))
    i = int(np.argmax(err))
    nrm = float(np.linalg.norm(psi1))
    return LowerBoundResult(eps=eps, E=E, psi1_norm=nrm, sup_error=float(err[i]),
                            bound=0.5 * nrm ** 2 * eps ** 2, argmax_t=float(t[i]),
                            expansion_residual=resid)
