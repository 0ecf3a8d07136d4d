"""First-order corrected metastable state.

T₁ = -|φ⟩⟨Ψ₀| - |Ψ₀⟩⟨φ| with φ = SWΨ₀, T_ε = P₀ + εT₁, the projection
P_ε obtained from T_ε by the algebraic formula, the Sz.-Nagy unitary U_ε
with P_ε = U_ε P₀ U_ε*, the ansatz Ψ¹_ε = U_εΨ₀ and the transformed
perturbation W̃_ε = (U_ε* H_ε U_ε - H)/ε.

All of these act nontrivially only on span{Ψ₀, φ} (plus, for W̃_ε, a few
more generating vectors), so they are held as finite-rank operators with
an identity offset and manipulated by exact small-matrix algebra.
"""

from __future__ import annotations

import numpy as np

from .model import FactoredPerturbation, ModelError, SpectralModel, StateVector, combine
from .resolvent import phi_vector


class EpsilonTooLarge(ModelError):
    def __init__(self, eps, eps_max):
        super().__init__(f"eps={eps} violates eps^2 |T1|^2 < 1/4 (admissible eps < {eps_max:.6g})")
        self.eps = eps
        self.eps_max = eps_max


class GapError(ModelError):
    pass


class StructuralError(ModelError):
    pass


def _hfunc(mat: np.ndarray, f) -> np.ndarray:
    """f(mat) for a Hermitian matrix via eigendecomposition."""
    mat = 0.5 * (mat + mat.conj().T)
    ev, vec = np.linalg.eigh(mat)
    return (vec * f(ev)[None, :]) @ vec.conj().T


class SmallSubspaceOperator:
    """offset·1 + Σ_pq |v_p⟩ C_pq ⟨v_q|, stored in an orthonormal frame of span{v_p}.

    The frame e = v·Φ is obtained from the Gram matrix of the raw vectors
    (directions with Gram eigenvalue below 1e-13 of the largest are dropped).
    ``mat`` is the k×k matrix ⟨e_i, O e_j⟩, so O = offset·1 + e (mat - offset) e*.
    """

    def __init__(self, model: SpectralModel, vectors, coef=None, offset: complex = 0.0,
                 mat=None, frame=None):
        self.model = model
        self.vectors = list(vectors)
        self.offset = complex(offset)
        if frame is None:
            gram = model.gram(self.vectors)
            ev, U = np.linalg.eigh(0.5 * (gram + gram.conj().T))
            keep = ev > 1e-13 * max(ev.max(), 1e-300)
            frame = U[:, keep] / np.sqrt(ev[keep])[None, :]
            self.gram = gram
        else:
            self.gram = model.gram(self.vectors)
        self.frame = frame
        self.k = frame.shape[1]
        if mat is None:
            coef = np.asarray(coef, dtype=complex)
            G = self.gram
            mat = frame.conj().T @ G @ coef @ G @ frame + self.offset * np.eye(self.k)
        self.mat = np.asarray(mat, dtype=complex)

    # construction helpers ------------------------------------------------

    def _like(self, mat, offset) -> "SmallSubspaceOperator":
        return SmallSubspaceOperator(self.model, self.vectors, offset=offset, mat=mat, frame=self.frame)

    def identity(self) -> "SmallSubspaceOperator":
        return self._like(np.eye(self.k, dtype=complex), 1.0)

    def basis(self) -> list[StateVector]:
        return [combine(self.frame[:, i], self.vectors) for i in range(self.k)]

    # algebra -------------------------------------------------------------

    def _check(self, other):
        if other.frame is not self.frame:
            raise StructuralError("operators live on different frames")

    def __add__(self, other):
        if np.isscalar(other):
            return self._like(self.mat + other * np.eye(self.k), self.offset + other)
        self._check(other)
        return self._like(self.mat + other.mat, self.offset + other.offset)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-other)
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __mul__(self, alpha):
        return self._like(alpha * self.mat, alpha * self.offset)

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return self._like(self.mat @ other.mat, self.offset * other.offset)

    def adjoint(self):
        return self._like(self.mat.conj().T, np.conj(self.offset))

    def hfunc(self, f):
        """f(O) for Hermitian O (f applied to the offset on the complement)."""
        return self._like(_hfunc(self.mat, f), complex(f(np.array([self.offset.real]))[0]))

    def norm(self) -> float:
        """Operator norm (the complement contributes |offset| when it is nontrivial)."""
        n = np.linalg.norm(self.mat, 2)
        return float(max(n, abs(self.offset)))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.mat - self.mat.conj().T)) <= tol and abs(self.offset.imag) <= tol)

    # action ----------------------------------------------------------------

    def frame_coords(self, v: StateVector) -> np.ndarray:
        ip = np.array([self.model.inner(g, v) for g in self.vectors])
        return self.frame.conj().T @ ip

    def apply(self, v: StateVector) -> StateVector:
        c = self.frame_coords(v)
        out = (self.mat - self.offset * np.eye(self.k)) @ c
        delta = combine(self.frame @ out, self.vectors)
        return delta + self.offset * v if self.offset != 0 else delta

    def frame_gram_error(self) -> float:
        e = self.basis()
        return float(np.max(np.abs(self.model.gram(e) - np.eye(self.k))))

    def column_error(self) -> float:
        """max_j ‖O e_j - Σ_i e_i mat_ij‖ measured through frame coordinates."""
        err = 0.0
        for j, e in enumerate(self.basis()):
            c = self.frame_coords(self.apply(e))
            err = max(err, float(np.max(np.abs(c - self.mat[:, j]))))
        return err


# ----------------------------------------------------------------------------
# the ansatz chain


class AnsatzFrame:
    """φ = SWΨ₀, its norm, and the orthonormal frame {Ψ₀, φ̂}."""

    def __init__(self, model: SpectralModel, pert: FactoredPerturbation):
        self.model = model
        self.pert = pert
        self.phi = phi_vector(model, pert)
        self.phi_norm = model.norm(self.phi)
        if self.phi_norm == 0.0:
            self.phi_hat = model.zero()
            vectors = [model.psi0]
        else:
            self.phi_hat = (1.0 / self.phi_norm) * self.phi
            vectors = [model.psi0, self.phi_hat]
        # the two vectors are orthonormal by construction, so the frame is the identity
        k = len(vectors)
        self.p0 = SmallSubspaceOperator(model, vectors, offset=0.0, frame=np.eye(k, dtype=complex),
                                        mat=np.diag([1.0] + [0.0] * (k - 1)).astype(complex))

    @property
    def eps_max(self) -> float:
        return np.inf if self.phi_norm == 0 else 0.9 / (2.0 * self.phi_norm)


def t1(model: SpectralModel, pert: FactoredPerturbation, frame: AnsatzFrame | None = None) -> SmallSubspaceOperator:
    """T₁ = -SWP₀ - P₀WS on the frame {Ψ₀, φ̂}."""
    fr = frame or AnsatzFrame(model, pert)
    p0 = fr.p0
    if p0.k == 1:
        out = p0 * 0.0
    else:
        n = fr.phi_norm
        out = p0._like(np.array([[0.0, -n], [-n, 0.0]], dtype=complex), 0.0)
    out.ansatz_frame = fr
    return out


def t_eps(T1: SmallSubspaceOperator, eps: float) -> SmallSubspaceOperator:
    return T1.ansatz_frame.p0 + eps * T1


def eps_threshold(T1: SmallSubspaceOperator) -> float:
    """Admissible ε with 0.9 safety factor: 0.9/(2‖T₁‖)."""
    n = T1.norm()
    return np.inf if n == 0 else 0.9 / (2.0 * n)


def p_eps(T1: SmallSubspaceOperator, eps: float) -> SmallSubspaceOperator:
    """P_ε = T + (T - 1/2)[(1 + 4(T² - T))^{-1/2} - 1]."""
    if eps ** 2 * T1.norm() ** 2 >= 0.25:
        raise EpsilonTooLarge(eps, 0.5 / max(T1.norm(), 1e-300))
    T = t_eps(T1, eps)
    delta = T @ T - T
    inv_sqrt = (4.0 * delta + 1.0).hfunc(lambda e: 1.0 / np.sqrt(e)) - 1.0
    return T + (T - 0.5) @ inv_sqrt


def u_eps(P: SmallSubspaceOperator, P0: SmallSubspaceOperator) -> SmallSubspaceOperator:
    """Sz.-Nagy unitary U = (1 - (P - P₀)²)^{-1/2}(P P₀ + (1 - P)(1 - P₀))."""
    d = P - P0
    if d.norm() >= 1.0:
        raise GapError(f"|P_eps - P_0| = {d.norm():.3g} >= 1")
    root = (1.0 - d @ d).hfunc(lambda e: 1.0 / np.sqrt(e))
    one = P.identity()
    return root @ (P @ P0 + (one - P) @ (one - P0))


class Ansatz:
    """The full chain at fixed ε."""

    def __init__(self, model: SpectralModel, pert: FactoredPerturbation, eps: float,
                 frame: AnsatzFrame | None = None):
        self.model, self.pert, self.eps = model, pert, float(eps)
        self.frame = frame or AnsatzFrame(model, pert)
        self.T1 = t1(model, pert, self.frame)
        self.P0 = self.frame.p0
        self.P = p_eps(self.T1, eps)
        self.U = u_eps(self.P, self.P0)

    @property
    def T(self):
        return t_eps(self.T1, self.eps)

    def psi1(self) -> StateVector:
        return psi1(self.U, self.model)


def psi1(U: SmallSubspaceOperator, model: SpectralModel) -> StateVector:
    """Ψ¹_ε = U_ε Ψ₀."""
    return U.apply(model.psi0)


# ----------------------------------------------------------------------------
# transformed perturbation


class FiniteRankOperator:
    """Σ_pq |v_p⟩ C_pq ⟨v_q| over an explicit (possibly redundant) vector list."""

    def __init__(self, model: SpectralModel, vectors, coef):
        self.model = model
        self.vectors = list(vectors)
        self.coef = np.asarray(coef, dtype=complex)

    def psi0_coeffs(self) -> np.ndarray:
        return np.array([v.c for v in self.vectors], dtype=complex)

    def expect_psi0(self) -> complex:
        c = self.psi0_coeffs()
        return complex(np.conj(c) @ self.coef @ c)

    def apply(self, v: StateVector) -> StateVector:
        ip = np.array([self.model.inner(g, v) for g in self.vectors])
        return combine(self.coef @ ip, self.vectors)

    def matrix_element(self, u: StateVector, v: StateVector) -> complex:
        a = np.array([self.model.inner(g, u) for g in self.vectors])
        b = np.array([self.model.inner(g, v) for g in self.vectors])
        return complex(np.conj(a) @ self.coef @ b)

    def hermitian_error(self) -> float:
        return float(np.max(np.abs(self.coef - self.coef.conj().T)))

    def small(self) -> SmallSubspaceOperator:
        return SmallSubspaceOperator(self.model, self.vectors, coef=self.coef)

    def norm(self) -> float:
        return self.small().norm()


def w_tilde(model: SpectralModel, pert: FactoredPerturbation, U: SmallSubspaceOperator, eps: float,
            frame: AnsatzFrame | None = None) -> FiniteRankOperator:
    """W̃_ε = (B*H + HB + B*HB)/ε + (1 + B*) W (1 + B), B = U_ε - 1.

    Generating set: [Ψ₀, φ̂, Hφ̂] followed by the generating vectors of W.
    Only HΨ₀ = 0 and Hφ̂ are needed, so the set is closed.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    fr = frame or getattr(U, "ansatz_frame", None) or AnsatzFrame(model, pert)
    if fr.p0.k < 2:
        return FiniteRankOperator(model, list(pert.gens), pert.coef)
    base = [model.psi0, fr.phi_hat]
    # U in terms of the raw vectors [Ψ₀, φ̂]: e = v·Φ, so B = v Φ (mat - 1) Φ* v*
    beta = U.frame @ (U.mat - np.eye(U.k)) @ U.frame.conj().T
    h = model.apply_h(fr.phi_hat)
    vectors = base + [h] + list(pert.gens)
    n = len(vectors)
    G = model.gram(vectors)
    CB = np.zeros((n, n), dtype=complex)
    CB[:2, :2] = beta
    Hm = np.zeros((n, n), dtype=complex)
    Hm[2, 1] = 1.0  # H φ̂ = h, H Ψ₀ = 0
    CW = np.zeros((n, n), dtype=complex)
    CW[3:, 3:] = pert.coef
    HB = Hm @ CB
    kinetic = HB + HB.conj().T + CB.conj().T @ G @ HB
    potential = CW + CB.conj().T @ G @ CW + CW @ G @ CB + CB.conj().T @ G @ CW @ G @ CB
    coef = kinetic / eps + potential
    out = FiniteRankOperator(model, vectors, coef)
    if out.hermitian_error() > 1e-12 * max(1.0, np.max(np.abs(coef))):
        raise StructuralError("transformed perturbation lost self-adjointness")
    out.coef = 0.5 * (coef + coef.conj().T)
    return out


def d_eps(Wt: FiniteRankOperator, eps: float) -> StateVector:
    """d_ε with D_ε = ε⁻¹P₀W̃_εQ₀ = |Ψ₀⟩⟨d_ε|, i.e. d_ε = ε⁻¹ Q₀ W̃_ε Ψ₀."""
    alpha = Wt.coef @ Wt.psi0_coeffs()
    v = combine(alpha / eps, Wt.vectors)
    return v.continuum


def d_limit(model: SpectralModel, pert: FactoredPerturbation, frame: AnsatzFrame | None = None) -> StateVector:
    """Limit of d_ε: D₀ = -P₀WSWQ₀ + P₀WP₀WS, i.e. d₀ = bφ - Q₀Wφ.

    This is the P₀·Q₀ block of the first-order term of W̃_ε; a dense grid
    computation of (U*H_εU - H)/ε confirms the sign of the b-term.
    """
    fr = frame or AnsatzFrame(model, pert)
    wphi = pert.apply(fr.phi).continuum
    return pert.b * fr.phi - wphi


def expansion_residuals(T1: SmallSubspaceOperator, eps: float) -> dict:
    """Residual norms of the ε-expansions of Δ_ε = P_ε - P₀ and HΔ_ε.

    ``delta``: ‖Δ_ε - εT₁ - ε²(1 - 2P₀)T₁²‖ (expected O(ε³)).
    ``h_delta``: ‖HΔ_ε + εQ₀WP₀ - ε²Q₀WP₀WS‖ (expected O(ε³)); on the frame
    all three terms have range along w = Q₀WΨ₀, so the residual is the norm
    of the coefficient row times ‖w‖.
    """
    fr = T1.ansatz_frame
    P0 = fr.p0
    P = p_eps(T1, eps)
    D = P - P0
    one = P.identity()
    res = D - eps * T1 - eps ** 2 * ((one - 2.0 * P0) @ T1 @ T1)
    out = {"delta": res.norm()}
    if P0.k == 2:
        # the frame columns are (Ψ₀, φ̂) exactly: P0 was built from those two vectors
        Dm = P0.frame @ (D.mat) @ P0.frame.conj().T
        n = fr.phi_norm
        row = np.array([Dm[1, 0] / n + eps, Dm[1, 1] / n - eps ** 2 * n])
        wnorm = fr.model.norm(fr.pert.w_psi0.continuum)
        out["h_delta"] = float(np.linalg.norm(row) * wnorm)
    else:
        out["h_delta"] = 0.0
    return out
