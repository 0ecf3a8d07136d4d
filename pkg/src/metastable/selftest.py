"""Fast property suite behind ``metastable selftest``.

Every check compares an error against a tolerance scaled by a common
multiplier; a check passes when error < multiplier * tolerance.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .ansatz import Ansatz
from .cauchy import (HOLDER_TRANSFER_C, HolderDensity, cauchy_boundary, holder_transfer_ratio)
from .dynamics import amplitude_direct, amplitude_stone, discretize, grid_resolvent
from .feshbach import f0_function, resonance_position
from .model import load_model


def _check(name, err, tol, mult, results):
    ok = bool(err < tol * mult)
    results.append((name, ok, f"error {err:.3e} (tolerance {tol * mult:.3e})"))


def run_selftest(fixtures: Path, mult: float = 1.0) -> list:
    fixtures = Path(fixtures)
    out = []
    vanishing = fixtures / "friedrichs_vanishing.json"
    fgr = fixtures / "friedrichs_fgr.json"
    for p in (vanishing, fgr):
        if not p.is_file():
            raise FileNotFoundError(2, "missing fixture", str(p))

    # Plemelj jump and conjugate symmetry
    f = lambda t: (1 - t * t) ** 2 * np.cos(2 * t)  # noqa: E731
    phi = HolderDensity.from_function(f, -1.0, 1.0, order=1)
    x = np.linspace(-0.9, 0.9, 64)
    bp, bm = cauchy_boundary(phi, x, +1), cauchy_boundary(phi, x, -1)
    # independent principal value: QUADPACK's Cauchy-weight rule
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        pv = np.array([quad(f, -1.0, 1.0, weight="cauchy", wvar=xx, epsabs=1e-14, epsrel=1e-14)[0] for xx in x])
    _check("plemelj_jump", float(np.max(np.abs(bp - (pv + 1j * np.pi * f(x))))), 1e-9, mult, out)
    _check("conjugate_symmetry", float(np.max(np.abs(bm - np.conj(bp)))), 1e-15, mult, out)
    r = holder_transfer_ratio(phi, 0.5, samples=101)
    out.append(("holder_transfer", bool(r <= HOLDER_TRANSFER_C * mult),
                f"ratio {r:.3f} (constant {HOLDER_TRANSFER_C * mult:.3f})"))

    # algebra certificates
    model, pert = load_model(vanishing)
    eps = 0.05
    A = Ansatz(model, pert, eps)
    T, T1 = A.T, A.T1
    _check("deltave", (T @ T - T - eps ** 2 * (T1 @ T1)).norm(), 1e-14, mult, out)
    _check("projection", max((A.P @ A.P - A.P).norm(), (A.P - A.P.adjoint()).norm()), 1e-12, mult, out)
    U = A.U
    one = U.identity()
    _check("unitary", max((U.adjoint() @ U - one).norm(), (U @ A.P0 - A.P @ U).norm()), 1e-12, mult, out)

    # SLFG identity against the grid oracle
    F = f0_function(model, pert, eps)
    disc = discretize(model, 512)
    z = 0.1 + 0.05j
    _check("slfg_identity", abs(1.0 / F(z) - grid_resolvent(disc, pert, eps, z)), 1e-5, mult, out)

    # Stone route against the direct route, and normalization
    model2, pert2 = load_model(fgr)
    F2 = f0_function(model2, pert2, 0.1)
    res = resonance_position(F2)
    d2 = discretize(model2, 512)
    t = np.linspace(0.0, d2.t_allowed, 64)
    s = amplitude_stone(F2, times=t, res=res)
    d = amplitude_direct(model2, pert2, 0.1, model2.psi0, t, N=512)
    _check("oracle_equivalence", float(np.max(np.abs(s.values - d.values))), 1e-4, mult, out)
    _check("normalization", abs(s.values[0] - 1.0), 1e-6, mult, out)
    return out

