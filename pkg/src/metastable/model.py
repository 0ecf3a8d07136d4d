"""Unperturbed embedded-eigenvalue systems in spectral representation.

The Hilbert space is ℂΨ₀ ⊕ L²(σ, ℂ^m): the eigenvector Ψ₀ (eigenvalue 0)
plus fiber-valued functions on the continuous spectrum σ, on which H acts
as multiplication by λ.  Perturbations are finite rank,

    W = Σ_pq |g_p⟩ M_pq ⟨g_q| = A* D A,

over a short list of generating vectors g_p with a Hermitian coefficient
matrix M; the factored form A*DA is derived from M by eigendecomposition.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._quad import GL_ORDER, gauss_legendre
from .cauchy import holder_seminorm

# ----------------------------------------------------------------------------
# errors


class ModelError(ValueError):
    pass


class InconsistentModelError(ModelError):
    pass


class ModelDomainError(ModelError):
    pass


class SmoothnessError(ModelError):
    pass


class ThresholdError(ModelError):
    pass


class DomainViolation(ModelDomainError):
    """A vector is outside the domain of S (its fiber does not vanish at 0)."""


# ----------------------------------------------------------------------------
# spectral parametrization


@dataclass(frozen=True)
class SpectralMap:
    """Map s ∈ [0, 1] onto the continuous spectrum.

    ``linear``:    λ = lo + (hi - lo) s on a bounded band.
    ``threshold``: λ = lo + κ u², u = s/(1 - s), for [lo, ∞) with a
    square-root threshold at ``lo``; densities with a k^{-1} threshold
    singularity become smooth in s.
    """

    kind: str
    lo: float
    hi: float = np.inf
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind == "linear":
            if not (np.isfinite(self.hi) and self.lo < self.hi):
                raise ModelError("linear spectral map needs a bounded band")
        elif self.kind == "threshold":
            if not self.kappa > 0:
                raise ModelError("threshold map needs kappa > 0")
        else:
            raise ModelError(f"unknown spectral map {self.kind!r}")

    def lam(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "linear":
            return self.lo + (self.hi - self.lo) * s
        with np.errstate(divide="ignore"):
            u = s / (1.0 - s)
        return self.lo + self.kappa * u * u

    def dlam(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "linear":
            return np.full_like(s, self.hi - self.lo)
        with np.errstate(divide="ignore"):
            return 2.0 * self.kappa * s / (1.0 - s) ** 3

    def inv(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "linear":
            return (lam - self.lo) / (self.hi - self.lo)
        u = np.sqrt(np.maximum(lam - self.lo, 0.0) / self.kappa)
        return u / (1.0 + u)

    def q(self, s, s_x):
        """(s - s_x)/(λ(s) - λ(s_x)) without cancellation; broadcasts."""
        s = np.asarray(s, dtype=float)
        s_x = np.asarray(s_x, dtype=float)
        if self.kind == "linear":
            return np.full(np.broadcast(s, s_x).shape, 1.0 / (self.hi - self.lo))
        u = s / (1.0 - s)
        ux = s_x / (1.0 - s_x)
        return (1.0 - s) * (1.0 - s_x) / (self.kappa * (u + ux))

    @property
    def upper(self) -> float:
        return self.hi if self.kind == "linear" else np.inf


# ----------------------------------------------------------------------------
# fiber-valued functions on the spectrum


class Fiber:
    """Vectorized map λ ↦ ℂ^m (returns shape (N, m)).

    ``factor`` optionally declares f(λ) = λ·factor(λ), which makes the
    removable singularity of f/λ at 0 exact.
    """

    def __init__(self, fn, m: int, factor: "Fiber | None" = None, label: str = ""):
        self._fn = fn
        self.m = int(m)
        self.factor = factor
        self.label = label

    def __call__(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.asarray(self._fn(lam), dtype=complex)
        return out.reshape(len(lam), self.m)

    def scaled(self, alpha) -> "Fiber":
        return lincomb([(alpha, self)])

    def times_lambda(self) -> "Fiber":
        return Fiber(lambda lam: lam[:, None] * self(lam), self.m, factor=self,
                     label=f"λ·{self.label}")

    def over_lambda(self, tol: float = 1e-10, delta: float = 1e-3) -> "Fiber":
        """λ ↦ f(λ)/λ; raises DomainViolation when f(0) ≠ 0."""
        if self.factor is not None:
            return self.factor
        scale = max(1.0, float(np.max(np.abs(self(np.linspace(-delta, delta, 5))))))
        f0 = self(np.array([0.0]))[0]
        if np.linalg.norm(f0) > tol * scale:
            raise DomainViolation(f"fiber does not vanish at λ=0 (|f(0)|={np.linalg.norm(f0):.3e})")
        # near 0: interpolate f(μ)/μ from nodes away from the cancellation zone
        mu = delta * np.array([-2.0, -1.5, -1.0, 1.0, 1.5, 2.0])
        base = self

        def fn(lam):
            lam = np.asarray(lam, dtype=float)
            out = np.empty((len(lam), base.m), dtype=complex)
            far = np.abs(lam) >= delta
            if np.any(far):
                out[far] = base(lam[far]) / lam[far, None]
            near = ~far
            if np.any(near):
                samples = base(mu) / mu[:, None]
                ln = lam[near]
                basis = np.ones((len(ln), len(mu)))
                for j in range(len(mu)):
                    for k in range(len(mu)):
                        if k != j:
                            basis[:, j] *= (ln - mu[k]) / (mu[j] - mu[k])
                out[near] = basis @ samples
            return out

        return Fiber(fn, self.m, label=f"{self.label}/λ")


def lincomb(terms) -> Fiber:
    """Σ c_i f_i as a flattened Fiber (nested combinations are expanded)."""
    flat: list[tuple[complex, Fiber]] = []
    for c, f in terms:
        if c == 0:
            continue
        inner = getattr(f, "_terms", None)
        if inner is not None:
            flat.extend((c * ci, fi) for ci, fi in inner)
        else:
            flat.append((complex(c), f))
    if not terms:
        raise ModelError("empty linear combination")
    m = terms[0][1].m
    if not flat:
        return zero_fiber(m)

    def fn(lam):
        out = np.zeros((len(lam), m), dtype=complex)
        for c, f in flat:
            out += c * f(lam)
        return out

    factor = None
    if all(f.factor is not None for _, f in flat):
        factor = lincomb([(c, f.factor) for c, f in flat])
    out = Fiber(fn, m, factor=factor, label="comb")
    out._terms = flat
    return out


def zero_fiber(m: int) -> Fiber:
    z = Fiber(lambda lam: np.zeros((len(lam), m), dtype=complex), m, label="0")
    z.factor = z
    z._terms = []
    return z


# ----------------------------------------------------------------------------
# vectors and models


@dataclass
class StateVector:
    """c·Ψ₀ ⊕ f with f a fiber function on the continuous spectrum."""

    c: complex
    f: Fiber

    def __add__(self, other):
        return StateVector(self.c + other.c, lincomb([(1.0, self.f), (1.0, other.f)]))

    def __sub__(self, other):
        return StateVector(self.c - other.c, lincomb([(1.0, self.f), (-1.0, other.f)]))

    def __rmul__(self, alpha):
        return StateVector(alpha * self.c, lincomb([(alpha, self.f)]))

    @property
    def continuum(self) -> "StateVector":
        return StateVector(0.0, self.f)


def combine(coeffs, vectors) -> StateVector:
    c = sum(complex(a) * v.c for a, v in zip(coeffs, vectors))
    return StateVector(c, lincomb([(complex(a), v.f) for a, v in zip(coeffs, vectors)]))


class SpectralModel:
    """H = 0·|Ψ₀⟩⟨Ψ₀| ⊕ (multiplication by λ) on L²(σ, ℂ^m).

    ``a`` is the half-width of the inner window J_a = (-a, a); ``panels``
    fixes the composite Gauss-Legendre grid in the map variable s used for
    every continuum integral.
    """

    def __init__(self, a: float, m: int, smap: SpectralMap, panels: int = 32, n: int = GL_ORDER,
                 label: str = ""):
        if not a > 0:
            raise ModelError("window half-width a must be positive")
        if not (smap.lam(0.0) < -a and smap.upper > a) and not (
                smap.kind == "linear" and smap.lo <= -a and smap.hi >= a):
            raise ModelError("the inner window J_a must lie inside the continuous spectrum")
        self.a = float(a)
        self.m = int(m)
        self.smap = smap
        self.panels = int(panels)
        self.n = int(n)
        self.label = label
        self.breaks = self._default_breaks()
        self._nodes_cache = None

    def _default_breaks(self) -> np.ndarray:
        if self.smap.kind == "linear":
            return np.linspace(0.0, 1.0, self.panels + 1)
        # the last panels are squeezed toward s=1 where λ runs off to infinity
        b = np.linspace(0.0, 1.0, self.panels + 1)
        tail = 1.0 - (1.0 - b[-2]) * 0.5 ** np.arange(1, 7)
        return np.concatenate([b[:-1], tail, [1.0]])

    @property
    def psi0(self) -> StateVector:
        return StateVector(1.0, zero_fiber(self.m))

    def zero(self) -> StateVector:
        return StateVector(0.0, zero_fiber(self.m))

    def nodes(self):
        """(s, λ, weight·λ'(s)) on the fixed continuum grid."""
        if self._nodes_cache is None:
            s, w = gauss_legendre(self.n)
            b = self.breaks
            mid = 0.5 * (b[1:] + b[:-1])
            half = 0.5 * (b[1:] - b[:-1])
            sn = (mid[:, None] + half[:, None] * s).ravel()
            wn = (half[:, None] * w).ravel()
            self._nodes_cache = (sn, self.smap.lam(sn), wn * self.smap.dlam(sn))
        return self._nodes_cache

    def sample(self, vectors, lam=None) -> np.ndarray:
        """Fiber values of a list of vectors, shape (N, len(vectors), m)."""
        if lam is None:
            lam = self.nodes()[1]
        return np.stack([v.f(lam) for v in vectors], axis=1)

    def continuum_inner(self, u: StateVector, v: StateVector, weight=None) -> complex:
        _, lam, wt = self.nodes()
        prod = np.sum(np.conj(u.f(lam)) * v.f(lam), axis=1)
        if weight is not None:
            prod = prod * weight(lam)
        return complex(np.sum(wt * prod))

    def inner(self, u: StateVector, v: StateVector) -> complex:
        return complex(np.conj(u.c) * v.c) + self.continuum_inner(u, v)

    def norm(self, v: StateVector) -> float:
        return float(np.sqrt(max(self.inner(v, v).real, 0.0)))

    def gram(self, vectors) -> np.ndarray:
        _, lam, wt = self.nodes()
        F = self.sample(vectors, lam)
        g = np.einsum("n,npm,nqm->pq", wt, np.conj(F), F)
        c = np.array([v.c for v in vectors], dtype=complex)
        return g + np.outer(np.conj(c), c)

    def window_norm2(self, v: StateVector, lo: float | None = None, hi: float | None = None) -> float:
        """‖Q(J)v‖² for J = (lo, hi) (default J_a), by quadrature in λ."""
        lo = -self.a if lo is None else lo
        hi = self.a if hi is None else hi
        s, w = gauss_legendre(self.n)
        b = np.linspace(lo, hi, 4 * self.panels + 1)
        mid = 0.5 * (b[1:] + b[:-1])
        half = 0.5 * (b[1:] - b[:-1])
        lam = (mid[:, None] + half[:, None] * s).ravel()
        wt = (half[:, None] * w).ravel()
        return float(np.sum(wt * np.sum(np.abs(v.f(lam)) ** 2, axis=1)))

    def apply_h(self, v: StateVector) -> StateVector:
        """Hv (Ψ₀ has eigenvalue 0)."""
        return StateVector(0.0, v.f.times_lambda())

    def in_window(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.abs(lam) < self.a


# ----------------------------------------------------------------------------
# finite-rank perturbations


class FactoredPerturbation:
    """W = Σ |g_p⟩ M_pq ⟨g_q| with the derived factorization W = A* D A."""

    def __init__(self, model: SpectralModel, gens, coef, label: str = ""):
        coef = np.asarray(coef, dtype=complex)
        if coef.shape != (len(gens), len(gens)):
            raise ModelError("coefficient matrix does not match the generating set")
        if np.max(np.abs(coef - coef.conj().T)) > 1e-14 * max(1.0, np.max(np.abs(coef))):
            raise ModelError("coefficient matrix must be Hermitian")
        self.model = model
        self.gens = list(gens)
        self.coef = 0.5 * (coef + coef.conj().T)
        self.label = label
        evals, evecs = np.linalg.eigh(self.coef)
        keep = np.abs(evals) > 1e-14 * max(1.0, np.max(np.abs(evals)))
        self.D = np.sign(evals[keep])
        root = np.sqrt(np.abs(evals[keep]))
        self.factor_coeffs = evecs[:, keep] * root[None, :]
        self.factors = [combine(self.factor_coeffs[:, j], self.gens) for j in range(int(keep.sum()))]
        self.rank = len(self.factors)
        self.b = self.expect(model.psi0).real

    def coefficients(self, v: StateVector) -> np.ndarray:
        """⟨g_q, v⟩ for every generating vector."""
        return np.array([self.model.inner(g, v) for g in self.gens])

    def apply(self, v: StateVector) -> StateVector:
        return combine(self.coef @ self.coefficients(v), self.gens)

    def apply_factored(self, v: StateVector) -> StateVector:
        av = np.array([self.model.inner(a, v) for a in self.factors])
        return combine(self.D * av, self.factors)

    def expect(self, v: StateVector) -> complex:
        c = self.coefficients(v)
        return complex(np.conj(c) @ self.coef @ c)

    def norm_bound(self) -> float:
        return float(sum(self.model.norm(a) ** 2 for a in self.factors))

    @property
    def w_psi0(self) -> StateVector:
        return self.apply(self.model.psi0)

    @property
    def coupling(self) -> Fiber:
        """w(λ) = Γ(λ) W Ψ₀."""
        return self.w_psi0.f

    @property
    def xi(self) -> np.ndarray:
        """A Ψ₀, i.e. ⟨a_j, Ψ₀⟩."""
        return np.conj(np.array([a.c for a in self.factors], dtype=complex))


# ----------------------------------------------------------------------------
# coupling families


def _poly(coeffs, lam):
    out = np.zeros_like(lam, dtype=complex)
    for c in reversed(coeffs):
        out = out * lam + c
    return out


def poly_bump(coeffs, a: float, q: int = 2, m: int = 1, directions=None) -> Fiber:
    """(Σ c_k λ^k)(a² - λ²)^q on |λ| < a, zero outside; fiber direction vector optional."""
    coeffs = [complex(c) for c in coeffs]
    vec = np.ones(m, dtype=complex) / np.sqrt(m) if directions is None else np.asarray(directions, complex)

    def fn(lam):
        env = np.where(np.abs(lam) < a, np.clip(a * a - lam * lam, 0.0, None) ** q, 0.0)
        return (_poly(coeffs, lam) * env)[:, None] * vec[None, :]

    factor = None
    if not any(coeffs):
        factor = zero_fiber(m)
    elif coeffs[0] == 0:
        factor = poly_bump(coeffs[1:], a, q, m, directions)
    return Fiber(fn, m, factor=factor, label="poly_bump")


def gauss_bump(coeffs, sigma: float, m: int = 1, directions=None) -> Fiber:
    """(Σ c_k λ^k) exp(-(λ/σ)²)."""
    coeffs = [complex(c) for c in coeffs]
    vec = np.ones(m, dtype=complex) / np.sqrt(m) if directions is None else np.asarray(directions, complex)

    def fn(lam):
        return (_poly(coeffs, lam) * np.exp(-(lam / sigma) ** 2))[:, None] * vec[None, :]

    factor = None
    if not any(coeffs):
        factor = zero_fiber(m)
    elif coeffs[0] == 0:
        factor = gauss_bump(coeffs[1:], sigma, m, directions)
    return Fiber(fn, m, factor=factor, label="gauss_bump")


def table_fiber(path, m: int) -> Fiber:
    """Tabulated coupling: CSV rows node, re_1, im_1, ..., re_m, im_m (zero outside the table)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                continue  # header line
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != 1 + 2 * m:
        raise ModelError(f"table coupling needs 1 + 2*{m} columns")
    nodes = data[:, 0]
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    from scipy.interpolate import CubicSpline
    spl = CubicSpline(nodes, vals, axis=0)

    def fn(lam):
        out = np.zeros((len(lam), m), dtype=complex)
        inside = (lam >= nodes[0]) & (lam <= nodes[-1])
        out[inside] = spl(lam[inside])
        return out

    return Fiber(fn, m, label="table")


def coupling_from_config(cfg: dict, a: float, m: int, base: Path | None = None) -> Fiber:
    fam = cfg.get("family")
    if fam == "poly_bump":
        return poly_bump(cfg.get("coeffs", [1.0]), a, int(cfg.get("q", 2)), m, cfg.get("direction"))
    if fam == "gauss_bump":
        return gauss_bump(cfg.get("coeffs", [1.0]), float(cfg["sigma"]), m, cfg.get("direction"))
    if fam == "table":
        p = Path(cfg["path"])
        if base is not None and not p.is_absolute():
            p = base / p
        return table_fiber(p, m)
    raise ModelError(f"unknown coupling family {fam!r}")


# ----------------------------------------------------------------------------
# builders


def build_friedrichs(a: float, coupling: Fiber, inner_factors=(), b: float = 0.0,
                     vanishing_fgr: bool = False, support=None, panels: int = 32,
                     label: str = "friedrichs"):
    """Friedrichs model: W = b|Ψ₀⟩⟨Ψ₀| + |w⟩⟨Ψ₀| + |Ψ₀⟩⟨w| + Σ s_k |g_k⟩⟨g_k|.

    ``inner_factors`` is a list of (sign or real weight, Fiber) pairs.
    ``support`` is the band [lo, hi] ⊇ J_a (default [-a, a]).
    """
    lo, hi = (-a, a) if support is None else (float(support[0]), float(support[1]))
    if lo > -a or hi < a:
        raise ModelDomainError("the coupling must be sampled over the full declared support")
    smap = SpectralMap("linear", lo, hi)
    model = SpectralModel(a, coupling.m, smap, panels=panels, label=label)
    w0 = np.linalg.norm(coupling(np.array([0.0]))[0])
    if vanishing_fgr and w0 > 1e-12:
        raise InconsistentModelError(f"vanishing_fgr declared but |w(0)| = {w0:.3e}")
    probe = np.linspace(lo, hi, 7)
    if not np.all(np.isfinite(coupling(probe))):
        raise ModelDomainError("coupling is not defined over the full declared support")
    gens = [model.psi0, StateVector(0.0, coupling)]
    weights = []
    for s_k, g in inner_factors:
        gens.append(StateVector(0.0, g))
        weights.append(float(s_k))
    r = len(gens)
    coef = np.zeros((r, r), dtype=complex)
    coef[0, 0] = b
    coef[0, 1] = coef[1, 0] = 1.0
    for k, s_k in enumerate(weights):
        coef[2 + k, 2 + k] = s_k
    pert = FactoredPerturbation(model, gens, coef, label=label)
    pert.vanishing_fgr = bool(vanishing_fgr)
    return model, pert


@dataclass
class FormFactor:
    """Position-space form factor on ℝ with its unitary Fourier transform.

    ``hat(k) = (2π)^{-1/2} ∫ e^{-ikx} f(x) dx``.
    """

    f: object
    hat: object
    label: str = ""

    @classmethod
    def gaussian(cls, amp: float = 1.0, width: float = 1.0, center: float = 0.0) -> "FormFactor":
        def f(x):
            return amp * np.exp(-((np.asarray(x) - center) / width) ** 2)

        def hat(k):
            k = np.asarray(k, dtype=float)
            return amp * width / np.sqrt(2.0) * np.exp(-(k * width) ** 2 / 4.0 - 1j * k * center)

        return cls(f, hat, f"gaussian({amp},{width},{center})")

    @classmethod
    def numeric(cls, f, x_max: float = 40.0, n: int = 20001) -> "FormFactor":
        """Fourier transform by direct trapezoid quadrature on [-x_max, x_max]."""
        x = np.linspace(-x_max, x_max, n)
        fx = np.asarray(f(x), dtype=complex)
        dx = x[1] - x[0]

        def hat(k):
            k = np.atleast_1d(np.asarray(k, dtype=float))
            out = np.empty(len(k), dtype=complex)
            for i0 in range(0, len(k), 256):
                kk = k[i0:i0 + 256]
                out[i0:i0 + 256] = np.exp(-1j * kk[:, None] * x[None, :]) @ fx * dx
            return out / np.sqrt(2.0 * np.pi)

        return cls(f, hat, "numeric")


@dataclass
class TwoChannelSpec:
    """Two-channel operator with V = 0 in dimension d = 1 (energies shifted so E₀ ↦ 0)."""

    E0: float
    w12: FormFactor
    b: float = 0.0
    w11: list = field(default_factory=list)  # (real coefficient, FormFactor)
    a: float = 0.5
    d: int = 1
    V: float = 0.0


def gamma0_fiber(ff: FormFactor, E0: float) -> Fiber:
    """λ ↦ Γ₀(λ + E₀) f = 2^{-1/2} k^{-1/2} (f̂(k), f̂(-k)), k = √(λ + E₀)."""

    def fn(lam):
        k = np.sqrt(np.maximum(lam + E0, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            pref = np.where(k > 0, 2.0 ** -0.5 / np.sqrt(k), 0.0)
        return np.stack([pref * ff.hat(k), pref * ff.hat(-k)], axis=1)

    return Fiber(fn, 2, label=f"Γ₀[{ff.label}]")


def _check_two_channel_smoothness(model: SpectralModel, fiber: Fiber, what: str):
    s, lam, wt = model.nodes()
    dens = np.sum(np.abs(fiber(lam)) ** 2, axis=1) * wt
    total = float(np.sum(dens))
    if not np.all(np.isfinite(dens)):
        raise SmoothnessError(f"{what}: energy-space image is not finite")
    tail = float(np.sum(dens[s > 0.99]))
    if total > 0 and tail > 1e-12 * total:
        raise SmoothnessError(f"{what}: form factor decays too slowly (tail fraction {tail / total:.2e})")
    # second divided differences on J_a must be Hölder with a refinement-stable seminorm
    a = model.a
    semis = []
    for n in (201, 401):
        x = np.linspace(-a, a, n)
        h = x[1] - x[0]
        v = fiber(x)
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2
        semis.append(holder_seminorm(x[1:-1], d2, 0.5))
    if not np.isfinite(semis[1]) or semis[1] > 2.0 * semis[0] + 1e-12:
        raise SmoothnessError(f"{what}: second divided differences are not Hölder on J_a")


def build_two_channel(spec: TwoChannelSpec, panels: int = 48, label: str = "two_channel"):
    if spec.d != 1:
        raise ModelError("only d = 1 is supported")
    if spec.V != 0.0:
        raise ModelError("only V = 0 is supported")
    if not spec.E0 > 0:
        raise ModelError("E0 must be positive")
    if spec.a >= spec.E0:
        raise ThresholdError(f"window half-width a={spec.a} reaches the threshold at -E0={-spec.E0}")
    smap = SpectralMap("threshold", -spec.E0, kappa=spec.E0)
    model = SpectralModel(spec.a, 2, smap, panels=panels, label=label)
    w = gamma0_fiber(spec.w12, spec.E0)
    _check_two_channel_smoothness(model, w, "W12")
    gens = [model.psi0, StateVector(0.0, w)]
    weights = []
    for coef, ff in spec.w11:
        g = gamma0_fiber(ff, spec.E0)
        _check_two_channel_smoothness(model, g, "W11 factor")
        gens.append(StateVector(0.0, g))
        weights.append(float(coef))
    r = len(gens)
    M = np.zeros((r, r), dtype=complex)
    M[0, 0] = spec.b
    M[0, 1] = M[1, 0] = 1.0
    for k, c in enumerate(weights):
        M[2 + k, 2 + k] = c
    pert = FactoredPerturbation(model, gens, M, label=label)
    pert.vanishing_fgr = False
    pert.two_channel = spec
    return model, pert


# ----------------------------------------------------------------------------
# trace operator and FGR


def gamma_eval(model: SpectralModel, lam, v: StateVector) -> np.ndarray:
    """Γ(λ)v: the fiber of v's continuum part at λ ∈ J_a."""
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(np.abs(lam_arr) >= model.a):
        raise ModelDomainError("Γ(λ) is evaluated inside J_a only")
    out = v.f(lam_arr)
    return out if np.ndim(lam) else out[0]


def fgr_constant(model: SpectralModel, pert: FactoredPerturbation) -> float:
    w0 = gamma_eval(model, 0.0, pert.w_psi0)
    return float(np.pi * np.sum(np.abs(w0) ** 2))


def check_assumption_gamma0(model: SpectralModel, pert: FactoredPerturbation, tol: float = 1e-12) -> bool:
    return bool(np.linalg.norm(gamma_eval(model, 0.0, pert.w_psi0)) <= tol)


# ----------------------------------------------------------------------------
# model files


def _factor_from_config(cfg: dict) -> FormFactor:
    fam = cfg.get("family", "gaussian")
    if fam == "gaussian":
        return FormFactor.gaussian(float(cfg.get("amp", 1.0)), float(cfg.get("width", 1.0)),
                                   float(cfg.get("center", 0.0)))
    raise ModelError(f"unknown form factor family {fam!r}")


def model_from_config(cfg: dict, base: Path | None = None):
    """Build (model, perturbation) from a parsed model-file dictionary."""
    kind = cfg.get("type")
    if kind == "friedrichs":
        a = float(cfg["a"])
        m = int(cfg.get("fiber_dim", 1))
        coupling = coupling_from_config(cfg["coupling"], a, m, base)
        inner = [(float(f.get("sign", 1.0)), coupling_from_config(f, a, m, base))
                 for f in cfg.get("inner_factors", [])]
        return build_friedrichs(a, coupling, inner, float(cfg.get("b", 0.0)),
                                bool(cfg.get("vanishing_fgr", False)), cfg.get("support"),
                                int(cfg.get("panels", 32)), label=cfg.get("name", "friedrichs"))
    if kind == "two_channel":
        spec = TwoChannelSpec(
            E0=float(cfg["E0"]), w12=_factor_from_config(cfg["w12"]), b=float(cfg.get("b", 0.0)),
            w11=[(float(f["coef"]), _factor_from_config(f)) for f in cfg.get("w11", [])],
            a=float(cfg["a"]), d=int(cfg.get("d", 1)), V=float(cfg.get("V", 0.0)))
        model, pert = build_two_channel(spec, int(cfg.get("panels", 48)),
                                        label=cfg.get("name", "two_channel"))
        if cfg.get("vanishing_fgr") and not check_assumption_gamma0(model, pert):
            raise InconsistentModelError("vanishing_fgr declared but the coupling does not vanish at 0")
        pert.vanishing_fgr = bool(cfg.get("vanishing_fgr", False))
        return model, pert
    raise ModelError(f"unknown model type {kind!r}")


def load_model(path):
    path = Path(path)
    with open(path) as fh:
        cfg = json.load(fh)
    return model_from_config(cfg, path.parent)
