"""Cauchy transforms of compactly supported Hölder densities.

A density Φ on ``[lo, hi]`` is held as a piecewise Chebyshev interpolant
(first-kind nodes, barycentric evaluation).  Boundary values

    Ψ(x ± i0) = PV ∫ Φ(τ)/(τ - x) dτ ± iπ Φ(x)

are computed by singularity subtraction so that the quadrature only ever
sees the bounded divided difference (Φ(τ) - Φ(x))/(τ - x).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct
from scipy.interpolate import FloaterHormannInterpolator

from ._quad import GL_ORDER, MAX_PANELS, adaptive_integrate, gauss_legendre, graded_breaks


class CauchyError(ValueError):
    """Base class for domain errors raised by this module."""


class DomainError(CauchyError):
    pass


class CapabilityError(CauchyError):
    pass


class DegenerateSampleWarning(UserWarning):
    pass


# Hölder-transfer constant: bound on
#   seminorm_θ(n-th derivative of the boundary value on (-a/2, a/2)) / |||Φ|||_{n,θ}.
# Calibrated once on smooth bumps, oscillatory and |τ-c|^{1/2} densities with
# θ in {1/4, 1/2, 3/4} (largest observed ratio 4.48, see tests/test_cauchy.py) and frozen.
HOLDER_TRANSFER_C = 6.0

PV_RTOL = 1e-11
OFFAXIS_RTOL = 1e-11


# --------------------------------------------------------------------------
# moduli of continuity


@dataclass(frozen=True)
class ModulusOfContinuity:
    """ω with ω(0) = 0, either Hölder ``x**theta`` or a tabulated Dini modulus."""

    kind: str
    theta: float | None = None
    table_x: np.ndarray | None = field(default=None, repr=False)
    table_w: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "holder":
            if self.theta is None or not 0.0 < self.theta < 1.0:
                raise ValueError("Hölder exponent must lie in (0, 1)")
        elif self.kind == "dini":
            x = np.asarray(self.table_x, dtype=float)
            w = np.asarray(self.table_w, dtype=float)
            if x.ndim != 1 or x.shape != w.shape or len(x) < 3:
                raise ValueError("dini modulus needs matching 1-D tables with >= 3 entries")
            if np.any(np.diff(x) <= 0) or x[0] <= 0:
                raise ValueError("dini table abscissae must be positive and increasing")
            if np.any(np.diff(w) < 0) or np.any(w < 0):
                raise ValueError("dini modulus must be nonnegative and increasing")
            object.__setattr__(self, "table_x", x)
            object.__setattr__(self, "table_w", w)
            if not np.isfinite(self.dini_integral()):
                raise ValueError("tabulated modulus fails the Dini check")
        else:
            raise ValueError(f"unknown modulus kind {self.kind!r}")

    @classmethod
    def holder(cls, theta: float) -> "ModulusOfContinuity":
        return cls("holder", theta=float(theta))

    @classmethod
    def dini(cls, x, w) -> "ModulusOfContinuity":
        return cls("dini", table_x=x, table_w=w)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "holder":
            return np.abs(x) ** self.theta
        # linear to zero below the first table point
        x0, w0 = self.table_x[0], self.table_w[0]
        inner = np.interp(np.abs(x), self.table_x, self.table_w)
        return np.where(np.abs(x) < x0, w0 * np.abs(x) / x0, inner)

    def dini_integral(self) -> float:
        """Estimate ∫_0^1 ω(x)/x dx.

        The tabulated range is integrated in log x.  Below the smallest table
        point (the documented lower cutoff) the integral over the k-th decade
        is about ω(10^-k) ln 10, so the tail is extrapolated by fitting
        ω(10^-k) ≈ c k^-q on the lowest tabulated decades.  Returns ``inf``
        when q <= 1 (the decade sum diverges, as for ω = 1/log(1/x)) or the
        tail dominates the tabulated part.
        """
        if self.kind == "holder":
            return 1.0 / self.theta
        x = self.table_x
        top = min(1.0, x[-1])
        u = np.linspace(np.log(x[0]), np.log(top), 4001)
        body = np.trapezoid(self(np.exp(u)), u)
        n_dec = int(np.floor(np.log10(top / x[0])))
        if n_dec < 3:
            return body
        k = np.arange(max(1, n_dec - 3), n_dec + 1, dtype=float)
        wk = self(top * 10.0 ** -k)
        if wk[-1] <= 0:
            return body
        if np.any(wk <= 0):
            return float("inf")
        q = -np.polyfit(np.log(k), np.log(wk), 1)[0]
        if q <= 1.0:
            return float("inf")
        # Σ_{j > K} ω_K (K/j)^q ln 10 <= ω_K K ln 10 / (q - 1)
        tail = wk[-1] * k[-1] * np.log(10.0) / (q - 1.0)
        if tail > max(body, 1e-300):
            return float("inf")
        return body + tail


# --------------------------------------------------------------------------
# Chebyshev panel interpolation


def _cheb_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n)
    t = np.cos(np.pi * (j + 0.5) / n)[::-1]
    bw = ((-1.0) ** j * np.sin(np.pi * (j + 0.5) / n))[::-1]
    return t, bw


def _barycentric(t_nodes, bw, vals, t):
    """Evaluate per-point barycentric interpolants.

    ``vals`` has shape (len(t), n) (each point carries its own panel values).
    """
    diff = t[:, None] - t_nodes[None, :]
    exact = diff == 0.0
    diff = np.where(exact, 1.0, diff)
    c = bw[None, :] / diff
    out = np.sum(c * vals, axis=1) / np.sum(c, axis=1)
    hit = exact.any(axis=1)
    if np.any(hit):
        out[hit] = vals[hit][exact[hit]]
    return out


class HolderDensity:
    """Complex density on ``[lo, hi]`` stored on Chebyshev panels.

    ``nodes``/``values`` are the panel nodes in increasing order and the
    samples there; evaluation reproduces them exactly.  Outside the support
    the density is zero.
    """

    def __init__(self, lo: float, hi: float, breaks, values, order: int = 0,
                 modulus: ModulusOfContinuity | None = None, interior: bool | None = None):
        self.lo, self.hi = float(lo), float(hi)
        if not self.lo < self.hi:
            raise DomainError("empty support")
        self.breaks = np.asarray(breaks, dtype=float)
        vals = np.asarray(values, dtype=complex)
        n_panels = len(self.breaks) - 1
        if vals.ndim != 2 or vals.shape[0] != n_panels:
            raise ValueError("values must have shape (n_panels, n_cheb)")
        self._vals = vals
        self.n_cheb = vals.shape[1]
        self._t, self._bw = _cheb_nodes(self.n_cheb)
        if int(order) < 0:
            raise ValueError("derivative order must be >= 0")
        self.order = int(order)
        self.modulus = modulus or ModulusOfContinuity.holder(0.5)
        scale = max(np.max(np.abs(vals)), 1e-300)
        ends = abs(self(self.lo)) + abs(self(self.hi))
        vanishing = ends <= 1e-10 * scale
        if interior and not vanishing:
            raise DomainError("interior-supported density must vanish at the support endpoints")
        self.interior = bool(vanishing) if interior is None else bool(interior)

    # construction -------------------------------------------------------

    @classmethod
    def from_function(cls, f, lo: float, hi: float, panels: int = 16, n: int = 32, **kw):
        breaks = np.linspace(lo, hi, int(panels) + 1)
        t, _ = _cheb_nodes(n)
        mid = 0.5 * (breaks[1:] + breaks[:-1])
        half = 0.5 * (breaks[1:] - breaks[:-1])
        x = mid[:, None] + half[:, None] * t
        vals = np.asarray(f(x.ravel()), dtype=complex).reshape(x.shape)
        return cls(lo, hi, breaks, vals, **kw)

    @classmethod
    def from_samples(cls, nodes, values, panels: int | None = None, n: int = 32, **kw):
        """Resample arbitrary increasing samples onto Chebyshev panels.

        The samples are first interpolated with a Floater-Hormann rational
        interpolant (exact at the given nodes, degree parameter 6).
        """
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=complex)
        if len(nodes) < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("need at least two strictly increasing nodes")
        d = min(6, len(nodes) - 1)
        re = FloaterHormannInterpolator(nodes, values.real, d=d)
        im = FloaterHormannInterpolator(nodes, values.imag, d=d)
        if panels is None:
            panels = max(4, len(nodes) // 16)
        out = cls.from_function(lambda x: re(x) + 1j * im(x), nodes[0], nodes[-1],
                                panels=panels, n=n, **kw)
        out.source_nodes = nodes
        return out

    @classmethod
    def from_csv(cls, path, **kw):
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if data.shape[1] < 3:
            raise ValueError("density CSV needs columns node, re, im")
        return cls.from_samples(data[:, 0], data[:, 1] + 1j * data[:, 2], **kw)

    # evaluation ---------------------------------------------------------

    @property
    def nodes(self) -> np.ndarray:
        mid = 0.5 * (self.breaks[1:] + self.breaks[:-1])
        half = 0.5 * (self.breaks[1:] - self.breaks[:-1])
        return (mid[:, None] + half[:, None] * self._t).ravel()

    @property
    def values(self) -> np.ndarray:
        return self._vals.ravel()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.zeros(flat.shape, dtype=complex)
        inside = (flat >= self.lo) & (flat <= self.hi)
        if np.any(inside):
            xi = flat[inside]
            idx = np.clip(np.searchsorted(self.breaks, xi, side="right") - 1, 0, len(self.breaks) - 2)
            a, b = self.breaks[idx], self.breaks[idx + 1]
            t = (2.0 * xi - a - b) / (b - a)
            out[inside] = _barycentric(self._t, self._bw, self._vals[idx], t)
        return out.reshape(x.shape) if x.ndim else out[0]

    def scale(self) -> float:
        return float(np.max(np.abs(self._vals)))

    def derivative(self, k: int = 1) -> "HolderDensity":
        """Density of Φ^{(k)} (panelwise differentiation of the interpolant)."""
        if k > self.order:
            raise CapabilityError(f"derivative order {k} exceeds declared order {self.order}")
        if k == 0:
            return self
        n = self.n_cheb
        # DCT-II of values at first-kind nodes gives Chebyshev coefficients
        vals = self._vals[:, ::-1]
        coef = dct(vals, type=2, axis=1) / n
        coef[:, 0] *= 0.5
        half = 0.5 * (self.breaks[1:] - self.breaks[:-1])
        for _ in range(k):
            coef = np.polynomial.chebyshev.chebder(coef, axis=1) / half[:, None]
        new = np.stack([np.polynomial.chebyshev.chebval(self._t, c) for c in coef])
        return HolderDensity(self.lo, self.hi, self.breaks, new, order=self.order - k,
                             modulus=self.modulus, interior=False)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __rmul__(self, alpha):
        return HolderDensity(self.lo, self.hi, self.breaks, complex(alpha) * self._vals,
                             order=self.order, modulus=self.modulus)

    def _combine(self, other, alpha, beta):
        if not (other.lo == self.lo and other.hi == self.hi
                and np.array_equal(other.breaks, self.breaks) and other.n_cheb == self.n_cheb):
            raise ValueError("densities must share their panel layout")
        return HolderDensity(self.lo, self.hi, self.breaks, alpha * self._vals + beta * other._vals,
                             order=min(self.order, other.order), modulus=self.modulus)


# --------------------------------------------------------------------------
# core quadrature kernels (shared with the resolvent layer)


def subtracted_pv(psi, s_x, psi_x, lo: float, hi: float, breaks, n: int = GL_ORDER, dpsi=None):
    """PV ∫_lo^hi ψ(s)/(s - s_x) ds for a vector of points ``s_x``.

    ψ is sampled on the fixed composite Gauss-Legendre grid defined by
    ``breaks``; ``psi`` maps an array of abscissae to an array with leading
    axis matching (trailing axes are carried along).  ``psi_x`` holds ψ at
    the evaluation points.  Nodes closer than ``1e-9 * (hi - lo)`` to an
    evaluation point use the derivative ``dpsi`` (or a centered difference
    of ``psi``) in place of the divided difference.
    """
    s_x = np.atleast_1d(np.asarray(s_x, dtype=float))
    b = np.asarray(breaks, dtype=float)
    s, w = gauss_legendre(n)
    mid = 0.5 * (b[1:] + b[:-1])
    half = 0.5 * (b[1:] - b[:-1])
    nodes = (mid[:, None] + half[:, None] * s).ravel()
    wts = (half[:, None] * w).ravel()
    vals = np.asarray(psi(nodes))
    tail = vals.shape[1:]
    vals = vals.reshape(len(nodes), -1)
    px = np.asarray(psi_x).reshape(len(s_x), -1)

    d = s_x[:, None] - nodes[None, :]
    close = np.abs(d) < 1e-9 * (hi - lo)
    d_safe = np.where(close, 1.0, d)
    # ∫ (ψ(s) - ψ(x))/(s - x) ds = Σ_i w_i (ψ_i - ψ_x)/(s_i - x)
    kern = -wts[None, :] / d_safe
    kern = np.where(close, 0.0, kern)
    total = kern @ vals - px * np.sum(kern, axis=1)[:, None]
    if np.any(close):
        rows, cols = np.nonzero(close)
        if dpsi is not None:
            der = np.asarray(dpsi(s_x[rows])).reshape(len(rows), -1)
        else:
            h = 1e-5 * (hi - lo)
            der = (np.asarray(psi(s_x[rows] + h)).reshape(len(rows), -1)
                   - np.asarray(psi(s_x[rows] - h)).reshape(len(rows), -1)) / (2 * h)
        np.add.at(total, rows, wts[cols][:, None] * der)
    log_term = np.log((hi - s_x) / (s_x - lo))
    total = total + px * log_term[:, None]
    return total.reshape((len(s_x),) + tail)


# --------------------------------------------------------------------------
# public operations


def _check_density_point(phi: HolderDensity, x: float):
    if not phi.lo < x < phi.hi:
        raise DomainError(f"x={x} is not strictly inside the support [{phi.lo}, {phi.hi}]")


def cauchy_offaxis(phi: HolderDensity, z: complex, rtol: float = OFFAXIS_RTOL) -> complex:
    """∫ Φ(τ)/(τ - z) dτ for z off the support."""
    z = complex(z)
    if z.imag == 0.0 and phi.lo <= z.real <= phi.hi:
        raise DomainError("z lies on the support; use cauchy_boundary")
    x = min(max(z.real, phi.lo), phi.hi)
    dist = abs(z - x)
    init = np.union1d(phi.breaks, graded_breaks(phi.lo, phi.hi, x, max(dist, 1e-14),
                                                 (phi.hi - phi.lo) / 16))

    def f(t):
        return phi(t) / (t - z)

    val, _, ok = adaptive_integrate(f, phi.lo, phi.hi, rtol=rtol, atol=1e-15 * max(phi.scale(), 1e-300),
                                    initial=init)
    if not ok:
        warnings.warn("off-axis Cauchy transform hit the panel cap", RuntimeWarning)
    return complex(val)


def _pv_refined(phi: HolderDensity, xs: np.ndarray, max_elems: int = 2**23) -> np.ndarray:
    # GL-32 on the density's own panels integrates the divided difference of a
    # degree-31 piecewise polynomial exactly; refinement is kept as a check.
    # Only points that have not converged are carried to the next level, in
    # chunks that bound the (points x nodes) kernel matrix.
    px = phi(xs)
    out = np.empty(len(xs), dtype=complex)
    breaks = phi.breaks

    def pv(idx, b):
        res = np.empty(len(idx), dtype=complex)
        step = max(1, max_elems // (GL_ORDER * (len(b) - 1)))
        for i0 in range(0, len(idx), step):
            sel = idx[i0:i0 + step]
            res[i0:i0 + step] = subtracted_pv(phi, xs[sel], px[sel], phi.lo, phi.hi, b)
        return res

    active = np.arange(len(xs))
    prev = pv(active, breaks)
    while len(active) and 2 * (len(breaks) - 1) <= MAX_PANELS:
        breaks = np.sort(np.concatenate([breaks, 0.5 * (breaks[1:] + breaks[:-1])]))
        cur = pv(active, breaks)
        done = np.abs(cur - prev) <= PV_RTOL * np.maximum(np.abs(cur), phi.scale())
        out[active[done]] = cur[done]
        active, prev = active[~done], cur[~done]
    if len(active):
        warnings.warn("principal-value quadrature hit the panel cap", RuntimeWarning)
        out[active] = prev
    return out


def cauchy_boundary(phi: HolderDensity, x, sign: int = +1):
    """Boundary value PV ∫ Φ(τ)/(τ - x) dτ ± iπ Φ(x); ``x`` scalar or array."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= phi.lo) or np.any(xs >= phi.hi):
        raise DomainError("boundary values need x strictly inside the support")
    pv = _pv_refined(phi, xs)
    # conjugate symmetry for real Φ is exact: the same PV is reused for both signs
    out = pv + sign * 1j * np.pi * phi(xs)
    return out if np.ndim(x) else complex(out[0])


def cauchy_boundary_deriv(phi: HolderDensity, x, k: int, sign: int = +1):
    """k-th derivative of the boundary value, as the boundary value of Φ^{(k)}."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > phi.order:
        raise CapabilityError(f"k={k} exceeds the density's derivative order {phi.order}")
    if k == 0:
        return cauchy_boundary(phi, x, sign)
    for j in range(k):
        dj = phi.derivative(j)
        scale = max(dj.scale(), 1e-300)
        if abs(dj(phi.lo)) > 1e-8 * scale or abs(dj(phi.hi)) > 1e-8 * scale:
            raise DomainError("derivative transfer needs Φ and its first k-1 derivatives "
                              "to vanish at the support endpoints")
    return cauchy_boundary(phi.derivative(k), x, sign)


def holder_seminorm(x, f, theta: float) -> float:
    """max over distinct sample pairs of |f(x) - f(y)| / |x - y|**theta."""
    x = np.asarray(x, dtype=float).ravel()
    f = np.asarray(f).reshape(len(x), -1)
    if len(x) < 2:
        warnings.warn("Hölder seminorm of fewer than two samples is 0", DegenerateSampleWarning)
        return 0.0
    best = 0.0
    chunk = max(1, 2_000_000 // len(x))
    for i in range(0, len(x), chunk):
        dx = np.abs(x[i:i + chunk, None] - x[None, :])
        df = np.linalg.norm(f[i:i + chunk, None, :] - f[None, :, :], axis=2)
        mask = dx > 0
        if np.any(mask):
            best = max(best, float(np.max(df[mask] / dx[mask] ** theta)))
    return best


def holder_norm(phi: HolderDensity, theta: float, n: int | None = None, samples: int = 801) -> float:
    """|||Φ|||_{n,θ}: max of sup-norms of Φ..Φ^{(n)} and the θ-seminorm of Φ^{(n)}."""
    n = phi.order if n is None else n
    x = np.linspace(phi.lo, phi.hi, samples)
    parts = []
    for k in range(n + 1):
        dk = phi.derivative(k)
        vals = dk(x)
        parts.append(float(np.max(np.abs(vals))))
        if k == n:
            parts.append(holder_seminorm(x, vals, theta))
    return max(parts)


def holder_transfer_ratio(phi: HolderDensity, theta: float, a: float | None = None,
                          samples: int = 401, sign: int = +1) -> float:
    """Sampled θ-seminorm of d^n/dx^n of the boundary value over (-a/2, a/2), over |||Φ|||_{n,θ}.

    ``a`` defaults to the half-width of the support.  The Hölder transfer
    bound states that this ratio is at most a universal constant.
    """
    a = 0.5 * (phi.hi - phi.lo) if a is None else a
    c = 0.5 * (phi.hi + phi.lo)
    x = c + np.linspace(-a / 2, a / 2, samples)
    bv = cauchy_boundary_deriv(phi, x, phi.order, sign)
    return holder_seminorm(x, bv, theta) / holder_norm(phi, theta)


def check_holder_transfer(phi: HolderDensity, theta: float, **kw) -> bool:
    return holder_transfer_ratio(phi, theta, **kw) <= HOLDER_TRANSFER_C


# --------------------------------------------------------------------------
# smooth cutoff


def _transition(u):
    # e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)}), extended by 0 below 0 and 1 above 1
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        p = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        q = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return p / (p + q)


@dataclass(frozen=True)
class SmoothCutoff:
    """χ = 1 on |λ| <= 3a/4, χ = 0 on |λ| >= 7a/8, C^∞ in between."""

    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("cutoff half-width must be positive")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        u = (np.abs(lam) - 0.75 * self.a) / (0.125 * self.a)
        return 1.0 - _transition(u)


def smooth_cutoff(a: float) -> SmoothCutoff:
    return SmoothCutoff(float(a))


def split_with_cutoff(phi: HolderDensity, a: float) -> tuple[HolderDensity, HolderDensity]:
    """Split Φ = χΦ + (1-χ)Φ with the cutoff χ of half-width ``a``."""
    chi = smooth_cutoff(a)
    panels = len(phi.breaks) - 1
    near = HolderDensity.from_function(lambda t: chi(t) * phi(t), phi.lo, phi.hi, panels=panels,
                                       n=phi.n_cheb, order=phi.order, modulus=phi.modulus)
    far = HolderDensity.from_function(lambda t: (1.0 - chi(t)) * phi(t), phi.lo, phi.hi,
                                      panels=panels, n=phi.n_cheb, order=phi.order,
                                      modulus=phi.modulus)
    return near, far
