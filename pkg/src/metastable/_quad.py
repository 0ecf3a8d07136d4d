"""Composite Gauss-Legendre machinery shared by the transform and dynamics layers."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

GL_ORDER = 32
MAX_PANELS = 2**14


@lru_cache(maxsize=None)
def gauss_legendre(n: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def panel_nodes(breaks, n: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on every panel ``[breaks[i], breaks[i+1]]``.

    Returns arrays of shape ``(n_panels, n)``.
    """
    breaks = np.asarray(breaks, dtype=float)
    s, w = gauss_legendre(n)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    return mid[:, None] + half[:, None] * s, half[:, None] * w


def graded_breaks(lo: float, hi: float, center: float, finest: float, coarsest: float) -> np.ndarray:
    """Breakpoints on ``[lo, hi]`` refined geometrically (ratio 2) toward ``center``.

    Panels touching ``center`` have length ``finest``; panel length doubles
    outward until it reaches ``coarsest``, after which panels are uniform.
    ``center`` is always a breakpoint when it lies inside ``(lo, hi)``.
    """
    if not lo < hi:
        raise ValueError("empty interval")
    finest = max(float(finest), 1e-300)
    coarsest = max(float(coarsest), finest)
    center = min(max(center, lo), hi)

    def one_side(length: float) -> list[float]:
        # offsets from center, increasing, ending exactly at length
        if length <= 0.0:
            return []
        out = []
        pos, step = 0.0, finest
        while pos + step < length:
            pos += step
            out.append(pos)
            if step < coarsest:
                step = min(2.0 * step, coarsest)
        if out and length - out[-1] < 0.25 * min(step, coarsest):
            out.pop()
        out.append(length)
        return out

    right = [center + d for d in one_side(hi - center)]
    left = [center - d for d in one_side(center - lo)]
    tiny = 1e-13 * (hi - lo)
    inner = [p for p in left + right + [center] if lo + tiny < p < hi - tiny]
    return np.asarray(sorted(set([lo, hi] + inner)))


def uniform_breaks(lo: float, hi: float, n_panels: int) -> np.ndarray:
    return np.linspace(lo, hi, int(n_panels) + 1)


def adaptive_integrate(f, lo: float, hi: float, rtol: float = 1e-11, atol: float = 0.0,
                       n: int = GL_ORDER, max_panels: int = MAX_PANELS, initial=None):
    """Adaptive composite Gauss-Legendre quadrature of a vectorized integrand.

    ``f`` maps a 1-D array of abscissae to an array whose leading axis matches
    the abscissae (trailing axes are integrated componentwise).  A panel is
    accepted when its single-panel estimate agrees with the sum over its two
    halves to ``max(atol, rtol * |running total|)`` scaled by the panel's
    share of the interval.  Returns ``(value, n_panels, converged)``.
    """
    s, w = gauss_legendre(n)
    if initial is None:
        active = [np.array([lo, hi], dtype=float)]
    else:
        b = np.asarray(initial, dtype=float)
        active = [np.array([b[i], b[i + 1]]) for i in range(len(b) - 1)]
    width = hi - lo

    def estimate(panels: np.ndarray):
        a, b = panels[:, 0], panels[:, 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        x = (mid[:, None] + half[:, None] * s).ravel()
        vals = np.asarray(f(x))
        vals = vals.reshape((len(panels), n) + vals.shape[1:])
        wt = (half[:, None] * w).reshape((len(panels), n) + (1,) * (vals.ndim - 2))
        return np.sum(vals * wt, axis=1)

    panels = np.array(active)
    coarse = estimate(panels)
    total_done = 0.0
    n_done = 0
    converged = True
    while len(panels):
        mids = 0.5 * (panels[:, 0] + panels[:, 1])
        left = np.stack([panels[:, 0], mids], axis=1)
        right = np.stack([mids, panels[:, 1]], axis=1)
        fine_l = estimate(left)
        fine_r = estimate(right)
        fine = fine_l + fine_r
        err = np.abs(fine - coarse)
        if err.ndim > 1:
            err = err.reshape(len(panels), -1).max(axis=1)
        scale = np.abs(total_done + np.sum(fine, axis=0))
        scale = float(np.max(scale)) if np.ndim(scale) else float(scale)
        frac = (panels[:, 1] - panels[:, 0]) / width
        ok = err <= np.maximum(atol, rtol * max(scale, 1e-300)) * np.maximum(frac, 1e-3)
        # Tiny panels cannot be refined meaningfully.
        ok |= (panels[:, 1] - panels[:, 0]) < 1e-14 * max(1.0, abs(lo), abs(hi))
        total_done = total_done + np.sum(fine[ok], axis=0)
        n_done += 2 * int(np.count_nonzero(ok))
        bad = ~ok
        if not np.any(bad):
            break
        if n_done + 4 * int(np.count_nonzero(bad)) > max_panels:
            total_done = total_done + np.sum(fine[bad], axis=0)
            n_done += 2 * int(np.count_nonzero(bad))
            converged = False
            break
        panels = np.concatenate([left[bad], right[bad]])
        coarse = np.concatenate([fine_l[bad], fine_r[bad]])
    return total_done, n_done, converged
