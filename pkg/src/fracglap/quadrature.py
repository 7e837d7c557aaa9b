"""Adaptive 1-D quadrature: dyadic Gauss-Legendre panels for integrals
from zero, and log-domain integration of power-law-decaying radial
integrands with analytic extrapolation past a cutoff."""

from __future__ import annotations

import functools
import math

import numpy as np


@functools.lru_cache(maxsize=32)
def _gl_rule(npts: int):
    x, w = np.polynomial.legendre.leggauss(npts)
    return x, w


def _gl_panels(fn, lo, hi, npts):
    """Gauss-Legendre on each panel [lo_k, hi_k]; lo/hi arrays of equal shape."""
    x, w = _gl_rule(npts)
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    # nodes shape (*panels, npts)
    nodes = mid[..., None] + half[..., None] * x
    vals = fn(nodes)
    return half * (vals @ w)


def integrate_zero_to(fn, t, tol=1e-10, panels=48, chunk=2048):
    """Integrate ``fn`` from 0 to ``t`` (scalar or array, entries >= 0).

    [0, t] is split into dyadic panels accumulated from the outside in,
    so an integrable power-type corner of ``fn`` at zero is isolated in
    panels of negligible relative weight.  Each panel is evaluated with
    nested Gauss-Legendre rules, halving the effective spacing until the
    observed discrepancy is below ``tol`` relative to the running total.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tv = np.atleast_1d(t).ravel().astype(float)
    if np.any(tv < 0):
        raise ValueError("upper integration limit must be >= 0")
    out = np.zeros_like(tv)
    pos = np.flatnonzero(tv > 0)
    for start in range(0, pos.size, chunk):
        sel = pos[start:start + chunk]
        out[sel] = _integrate_chunk(fn, tv[sel], tol, panels)
    if scalar:
        return float(out[0])
    return out.reshape(t.shape)


def _integrate_chunk(fn, tv, tol, panels):
    # panel edges t*2^-k, k = 0..panels-1; last panel closes down to 0
    k = np.arange(panels, dtype=float)
    hi = tv[:, None] * np.exp2(-k)
    lo = np.empty_like(hi)
    lo[:, :-1] = hi[:, 1:]
    lo[:, -1] = 0.0
    for npts in (16, 32, 64, 128):
        coarse = _gl_panels(fn, lo, hi, npts)
        fine = _gl_panels(fn, lo, hi, 2 * npts)
        total = fine.sum(axis=1)
        err = np.abs(fine - coarse).sum(axis=1)
        if np.all(err <= tol * np.maximum(np.abs(total), 1e-300)):
            return total
    raise RuntimeError(
        "dyadic Gauss-Legendre quadrature did not reach the requested "
        f"tolerance {tol:g} at order 256"
    )


def integrate_radial(fn, r0, tol=1e-10, cutoff_factor=1e6, max_levels=16):
    """Integral of ``fn`` over [r0, inf) for integrands that settle into
    a power law at large radius.

    Returns ``(value, diverged)``.  ``fn`` must accept an array of radii
    and may return either a vector (one integrand) or a matrix of rows
    sharing the radii (a family of integrands); ``value``/``diverged``
    then follow that shape.

    [r0, cutoff_factor*r0] is integrated by composite Simpson in log
    space with interval halving until the relative change drops below
    ``tol``.  Past the cutoff the local log-log slope m of fn is
    measured and the remainder closed analytically as
    fn(Rc)*Rc/(-1-m); a slope >= -1 marks divergence.
    """
    if r0 <= 0:
        raise ValueError("radial integrals start at a positive radius")
    a = math.log(r0)
    b = math.log(r0 * cutoff_factor)

    def h(u):
        rho = np.exp(u)
        return fn(rho) * rho  # substitution rho = e^u

    n = 64
    prev = _simpson(h, a, b, n)
    for _ in range(max_levels):
        n *= 2
        cur = _simpson(h, a, b, n)
        if np.all(np.abs(cur - prev) <= tol * np.maximum(np.abs(cur), 1e-300)):
            prev = cur
            break
        prev = cur
    body = prev

    rc = r0 * cutoff_factor
    step = 1.05
    f_lo = np.asarray(fn(np.array([rc / step])))[..., 0]
    f_hi = np.asarray(fn(np.array([rc * step])))[..., 0]
    f_c = np.asarray(fn(np.array([rc])))[..., 0]
    # slope of |fn|; the sign at the cutoff closes a signed integrand too
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = (np.log(np.abs(f_hi)) - np.log(np.abs(f_lo))) \
            / (2.0 * math.log(step))
    dead = f_c == 0.0
    slope = np.where(dead, -np.inf, slope)
    diverged = slope >= -1.0 - 1e-9
    denom = np.where(dead | diverged, 1.0, -1.0 - slope)
    remainder = np.where(dead | diverged, 0.0, f_c * rc / denom)
    value = np.where(diverged, np.inf, body + remainder)
    if value.ndim == 0:
        return float(value), bool(diverged)
    return value, diverged


def _simpson(h, a, b, n):
    u = np.linspace(a, b, n + 1)
    vals = np.asarray(h(u), dtype=float)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (b - a) / (3.0 * n) * (vals @ w)


def bisect_increasing(fn, y, lo=0.0, hi=None, hi_cap=None, rel_tol=1e-12,
                      max_iter=200):
    """Solve fn(t) = y for an increasing vectorized ``fn``, entrywise.

    Brackets by doubling ``hi`` (capped at ``hi_cap``) until fn(hi) >= y,
    then bisects until the bracket width is below ``rel_tol`` relative
    to the root.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    yv = np.atleast_1d(y).astype(float)
    if np.any(yv < 0):
        raise ValueError("targets must be >= 0")
    lo_v = np.full_like(yv, lo)
    hi_v = np.full_like(yv, 1.0 if hi is None else hi)
    for _ in range(200):
        need = fn(hi_v) < yv
        if not np.any(need):
            break
        grown = 2.0 * hi_v if hi_cap is None else np.minimum(2.0 * hi_v, hi_cap)
        if np.all(grown[need] == hi_v[need]):
            raise RuntimeError(
                "bracketing failed: target not reached at the cap "
                f"hi={hi_v.max():.3e} (bracket state lo={lo_v.min():.3e})"
            )
        hi_v = np.where(need, grown, hi_v)
    else:
        raise RuntimeError(
            "bracketing failed: target not reached below "
            f"hi={hi_v.max():.3e} (bracket state lo={lo_v.min():.3e})"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo_v + hi_v)
        high = fn(mid) >= yv
        hi_v = np.where(high, mid, hi_v)
        lo_v = np.where(high, lo_v, mid)
        if np.all(hi_v - lo_v <= rel_tol * np.maximum(hi_v, 1e-300)):
            break
    root = 0.5 * (lo_v + hi_v)
    root[yv == 0.0] = 0.0
    if scalar:
        return float(root[0])
    return root.reshape(y.shape)
