"""Dirichlet solver: minimize the pairwise convex interaction energy

    E(v) = sum over node pairs meeting the domain of
           G(|v(x)-v(y)| / |x-y|^s) K(x, y) h^(2n)
         + analytic radial term for interactions past the truncation
           radius, under the exterior model,

over functions that agree with the prescribed datum off the domain.
Pairs are counted with the symmetric convention (each unordered pair
with a relevant end twice), the diagonal is excluded, and pairs closer
than one spacing do not occur on a lattice, so no principal-value
handling is needed: G(0) = 0 kills the diagonal singularity.

Strict convexity of the energy (g strictly increasing) makes the
minimizer unique; descent with Armijo backtracking therefore converges
to the same function from any admissible start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .funcspace import GridFunction, sphere_measure
from .quadrature import integrate_radial

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60


class InadmissibleError(ValueError):
    """The candidate does not match the prescribed exterior data."""


@dataclass
class SolveReport:
    minimizer: GridFunction
    final_energy: float
    residual_norm: float
    iterations: int
    line_search_failures: int
    converged: bool
    details: dict = field(default_factory=dict)
    energy_history: list = field(default_factory=list)

    def summary(self):
        return {
            "final_energy": self.final_energy,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "line_search_failures": self.line_search_failures,
            "converged": self.converged,
            "details": self.details,
        }


class NonlocalProblem:
    """Discrete Dirichlet instance: lattice, domain mask, growth profile,
    kernel, order s, exterior datum (halo values + far-field model) and
    the truncation radius beyond which interactions are folded into the
    radial tail term.
    """

    def __init__(self, lattice, omega_mask, nf, kernel, s, exterior_datum,
                 truncation_radius=None):
        if not 0.0 < s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        omega_mask = np.asarray(omega_mask, dtype=bool).ravel()
        if omega_mask.size != lattice.n_nodes:
            raise ValueError("domain mask does not match the lattice")
        if not omega_mask.any():
            raise ValueError("domain mask selects no nodes")
        if exterior_datum.lattice != lattice:
            raise ValueError("exterior datum must live on the problem lattice")
        if exterior_datum.exterior is None:
            raise ValueError("exterior datum needs a far-field model")

        self.lattice = lattice
        self.omega_mask = omega_mask
        self.halo_mask = ~omega_mask
        self.nf = nf
        self.kernel = kernel
        self.s = float(s)
        self.exterior_datum = exterior_datum

        coords = lattice.coords
        om = coords[omega_mask]
        lo = np.asarray(lattice.lo)
        hi = np.asarray(lattice.hi)
        if np.any(om <= lo + 1e-12) or np.any(om >= hi - 1e-12):
            raise ValueError("domain nodes must lie strictly inside the box")
        margin = float(min((om - lo).min(), (hi - om).min()))
        diam = self._omega_diameter(om)
        if truncation_radius is None:
            truncation_radius = min(8.0 * max(diam, lattice.h), margin)
        if truncation_radius > margin + 1e-12:
            raise ValueError(
                "every domain node needs lattice neighbours up to the "
                f"truncation radius; available margin is {margin:g}"
            )
        if truncation_radius < lattice.h:
            raise ValueError("truncation radius below the lattice spacing")
        self.truncation_radius = float(truncation_radius)

        kernel.validate_on(coords)
        self._check_far_energy()

    @staticmethod
    def _omega_diameter(om):
        lo = om.min(axis=0)
        hi = om.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    # -- cached pair structure ------------------------------------------

    @cached_property
    def _pairs(self):
        """(ia, ja, dist, weight): unordered pairs with at least one end
        in the domain, within the truncation radius; weight carries the
        symmetric double counting 2 K h^(2n)."""
        lat = self.lattice
        coords = lat.coords
        omega_idx = np.flatnonzero(self.omega_mask)
        ia_list, ja_list, d_list = [], [], []
        chunk = max(1, int(2**22 / max(1, lat.n_nodes)))
        for start in range(0, omega_idx.size, chunk):
            rows = omega_idx[start:start + chunk]
            d = np.linalg.norm(coords[rows, None, :] - coords[None, :, :], axis=2)
            keep = (d > 0) & (d <= self.truncation_radius + 1e-12)
            # dedupe domain-domain pairs: keep (i, j) with j > i
            keep &= self.halo_mask[None, :] | (np.arange(lat.n_nodes)[None, :]
                                               > rows[:, None])
            r, c = np.nonzero(keep)
            ia_list.append(rows[r])
            ja_list.append(c)
            d_list.append(d[keep])
        ia = np.concatenate(ia_list)
        ja = np.concatenate(ja_list)
        dist = np.concatenate(d_list)
        kvals = self.kernel.pair_values(coords[ia], coords[ja], dist)
        weight = 2.0 * kvals * lat.h ** (2 * lat.dim)
        return ia, ja, dist, weight

    @cached_property
    def _inv_ds(self):
        return self._pairs[2] ** (-self.s)

    @cached_property
    def _far_coef(self):
        lat = self.lattice
        return 2.0 * lat.h ** lat.dim * self.kernel.far_coefficient \
            * sphere_measure(lat.dim)

    @cached_property
    def _precond(self):
        ia, ja, dist, w = self._pairs
        contrib = w * dist ** (-2.0 * self.s)
        diag = np.zeros(self.lattice.n_nodes)
        np.add.at(diag, ia, contrib)
        both = self.omega_mask[ja]
        np.add.at(diag, ja[both], contrib[both])
        r = self.truncation_radius
        diag[self.omega_mask] += self._far_coef * r ** (-2 * self.s) / (2 * self.s)
        return diag[self.omega_mask]

    @cached_property
    def _gradient_scale(self):
        """Dimensionless stopping scale: the largest per-node sum of
        K d^(-s) g(osc(f)/d^s) h^(2n) over interacting pairs."""
        osc = self.data_oscillation()
        if osc == 0.0:
            return 0.0
        ia, ja, dist, w = self._pairs
        contrib = w * dist ** (-self.s) * self.nf.g(osc * dist ** (-self.s))
        acc = np.zeros(self.lattice.n_nodes)
        np.add.at(acc, ia, contrib)
        both = self.omega_mask[ja]
        np.add.at(acc, ja[both], contrib[both])
        return float(acc[self.omega_mask].max())

    def data_oscillation(self):
        vals = [self.exterior_datum.values[self.halo_mask]]
        model = self.exterior_datum.exterior
        if model.kind != "zero":
            r = self.truncation_radius
            vals.append(model.signed_profile(np.array([r, 10.0 * r])))
        else:
            vals.append(np.zeros(1))
        allv = np.concatenate(vals)
        return float(allv.max() - allv.min())

    # -- far (beyond truncation radius) terms ---------------------------

    def _far_profile(self):
        return self.exterior_datum.exterior

    def _far_closed_form(self):
        return (self.nf.growth.family == "power"
                and self._far_profile().kind in ("zero", "constant"))

    def _check_far_energy(self):
        try:
            val = self._far_energy(np.array([1.0]))
        except OverflowError as exc:
            raise ValueError(
                "exterior model overflows the interaction tail") from exc
        if not np.all(np.isfinite(val)):
            raise ValueError(
                "interaction energy beyond the truncation radius diverges "
                "for this exterior model"
            )

    def _far_energy(self, w):
        """Per-domain-node tail energy for node values ``w``."""
        model = self._far_profile()
        r, s = self.truncation_radius, self.s
        if self._far_closed_form():
            p = self.nf.p
            lvl = model.value if model.kind == "constant" else 0.0
            core = np.abs(w - lvl) ** p / p * r ** (-s * p) / (s * p)
            return self._far_coef * core

        def fn(rho):
            prof = model.signed_profile(rho)
            return self.nf.G(np.abs(w[:, None] - prof[None, :])
                             / rho[None, :] ** s) / rho[None, :]

        val, diverged = integrate_radial(fn, r, tol=1e-10)
        if np.any(diverged):
            return np.full_like(w, np.inf)
        return self._far_coef * val

    def _far_gradient(self, w):
        model = self._far_profile()
        r, s = self.truncation_radius, self.s
        if self._far_closed_form():
            p = self.nf.p
            lvl = model.value if model.kind == "constant" else 0.0
            dw = w - lvl
            core = np.abs(dw) ** (p - 1.0) * np.sign(dw) * r ** (-s * p) / (s * p)
            return self._far_coef * core

        def fn(rho):
            dw = w[:, None] - model.signed_profile(rho)[None, :]
            rs = rho[None, :] ** s
            return self.nf.g(np.abs(dw) / rs) * np.sign(dw) / rs \
                / rho[None, :]

        val, _ = integrate_radial(fn, r, tol=1e-10)
        return self._far_coef * val

    # -- admissibility ---------------------------------------------------

    def require_admissible(self, v):
        if v.lattice != self.lattice:
            raise InadmissibleError("candidate lives on a different lattice")
        fvals = self.exterior_datum.values
        scale = max(1.0, float(np.abs(fvals).max()))
        if np.max(np.abs(v.values[self.halo_mask] - fvals[self.halo_mask]),
                  initial=0.0) > 1e-12 * scale:
            raise InadmissibleError("candidate does not match the halo datum")
        if v.exterior != self.exterior_datum.exterior:
            raise InadmissibleError("candidate carries a different exterior model")

    def datum_extension(self, omega_values=0.0):
        """Admissible function equal to the datum off the domain."""
        vals = self.exterior_datum.values.copy()
        vals[self.omega_mask] = omega_values
        return GridFunction(self.lattice, vals, self.exterior_datum.exterior)


# -- energy / gradient / residual ----------------------------------------

def energy(prob, v):
    """Interaction energy of an admissible candidate."""
    prob.require_admissible(v)
    return _energy_values(prob, v.values)


def _energy_values(prob, vals):
    ia, ja, dist, w = prob._pairs
    t = np.abs(vals[ia] - vals[ja]) * prob._inv_ds
    pair_part = float(np.dot(prob.nf.G(t), w))
    far = float(np.sum(prob._far_energy(vals[prob.omega_mask])))
    return pair_part + far


def gradient(prob, v):
    """First variation at admissible ``v``; nonzero only on the domain."""
    prob.require_admissible(v)
    full = np.zeros(prob.lattice.n_nodes)
    full[prob.omega_mask] = _gradient_omega(prob, v.values)
    return GridFunction(prob.lattice, full, v.exterior)


def _gradient_omega(prob, vals):
    ia, ja, dist, w = prob._pairs
    dv = vals[ia] - vals[ja]
    t = np.abs(dv) * prob._inv_ds
    # g(0) = 0 makes the integrand differentiable at coincident values
    gval = prob.nf.g(t) * np.sign(dv) * prob._inv_ds * w
    acc = np.zeros(prob.lattice.n_nodes)
    np.add.at(acc, ia, gval)
    both = prob.omega_mask[ja]
    np.add.at(acc, ja[both], -gval[both])
    out = acc[prob.omega_mask]
    out += prob._far_gradient(vals[prob.omega_mask])
    return out


def weak_residual(prob, v):
    """Largest pairing against the canonical indicator test functions;
    for that basis the pairing at a node coincides with the gradient
    component there, which is what makes the minimizer/weak-solution
    equivalence checkable."""
    prob.require_admissible(v)
    vals = v.values
    ia, ja, dist, w = prob._pairs
    dv = vals[ia] - vals[ja]
    t = np.abs(dv) * prob._inv_ds
    core = prob.nf.g(t) * np.sign(dv) * prob._inv_ds * w
    pairing = np.zeros(prob.lattice.n_nodes)
    # eta = indicator of node i: (eta(x)-eta(y)) is +1 at x=i, -1 at y=i
    for idx, sign in ((ia, 1.0), (ja, -1.0)):
        sel = prob.omega_mask[idx]
        np.add.at(pairing, idx[sel], sign * core[sel])
    res = pairing[prob.omega_mask] + prob._far_gradient(vals[prob.omega_mask])
    return float(np.abs(res).max())


def convexity_probe(prob, v1, v2, thetas=None):
    """Energy along the segment between two admissible candidates
    against the chord; the defect must be nonnegative, strictly positive
    off the endpoints when the candidates differ on the domain."""
    prob.require_admissible(v1)
    prob.require_admissible(v2)
    if thetas is None:
        thetas = np.linspace(0.1, 0.9, 9)
    thetas = np.asarray(thetas, dtype=float)
    e1 = _energy_values(prob, v1.values)
    e2 = _energy_values(prob, v2.values)
    rows = []
    differ = float(np.abs((v1.values - v2.values)[prob.omega_mask]).max()) > 0
    for th in thetas:
        mix = th * v1.values + (1.0 - th) * v2.values
        lhs = _energy_values(prob, mix)
        rhs = th * e1 + (1.0 - th) * e2
        rows.append({"theta": float(th), "lhs": lhs, "rhs": rhs,
                     "defect": rhs - lhs})
    tol = 1e-12 * max(1.0, abs(e1), abs(e2))
    convex_ok = all(r["defect"] >= -tol for r in rows)
    strict_ok = (not differ) or all(r["defect"] > 0.0 for r in rows)
    return {"samples": rows, "convex_ok": convex_ok, "strict_ok": strict_ok,
            "endpoints": (e1, e2), "candidates_differ": differ}


# -- quadratic assembly (closed-form oracle route for p = q = 2) ----------

def assemble_quadratic(prob):
    """Assemble E(v) = 0.5 v'Av - b'v + c over the domain unknowns.

    Exact for the quadratic power profile (p = q = 2) with a zero or
    constant exterior model; used by the direct-solve oracle stage.
    """
    nf = prob.nf
    if not (nf.growth.family == "power" and nf.p == 2.0 and nf.q == 2.0):
        raise ValueError("quadratic assembly needs the power profile with p = 2")
    model = prob._far_profile()
    if model.kind not in ("zero", "constant"):
        raise ValueError("quadratic assembly needs a zero or constant model")
    return _assemble_surrogate(prob)


def _assemble_surrogate(prob):
    """Quadratic-growth surrogate system on the same pair structure."""
    omega_idx = np.flatnonzero(prob.omega_mask)
    pos = -np.ones(prob.lattice.n_nodes, dtype=int)
    pos[omega_idx] = np.arange(omega_idx.size)
    ia, ja, dist, w = prob._pairs
    cw = w * dist ** (-2.0 * prob.s)
    no = omega_idx.size
    A = np.zeros((no, no))
    b = np.zeros(no)
    const = 0.0
    fvals = prob.exterior_datum.values
    pa, pb = pos[ia], pos[ja]
    both = (pa >= 0) & (pb >= 0)
    np.add.at(A, (pa[both], pa[both]), cw[both])
    np.add.at(A, (pb[both], pb[both]), cw[both])
    np.add.at(A, (pa[both], pb[both]), -cw[both])
    np.add.at(A, (pb[both], pa[both]), -cw[both])
    halo = ~both
    np.add.at(A, (pa[halo], pa[halo]), cw[halo])
    np.add.at(b, pa[halo], cw[halo] * fvals[ja[halo]])
    const += float(np.sum(0.5 * cw[halo] * fvals[ja[halo]] ** 2))
    # far tail of the quadratic profile, radial closed form
    model = prob._far_profile()
    lvl = model.value if model.kind == "constant" else 0.0
    r, s = prob.truncation_radius, prob.s
    cfar = prob._far_coef * r ** (-2.0 * s) / (2.0 * s)
    A[np.diag_indices(no)] += cfar
    b += cfar * lvl
    const += 0.5 * cfar * lvl ** 2 * no
    return A, b, const, omega_idx


# -- minimization ----------------------------------------------------------

def solve(prob, tol=1e-8, max_iter=5000, initial="zero"):
    """Minimize the energy over admissible candidates.

    Preconditioned descent with Barzilai-Borwein trial steps and Armijo
    backtracking (c1 = 1e-4, factor 0.5); the preconditioner is the
    diagonal sum of K d^(-2s) h^(2n) over interacting pairs.  Stops when
    the gradient sup-norm drops below tol * (1 + scale) with the
    g(osc(f))-based scale, making the tolerance dimensionless.
    """
    omega = prob.omega_mask
    vals = prob.exterior_datum.values.copy()

    osc = prob.data_oscillation()
    if osc == 0.0:
        # constant data: the constant extension is the exact minimizer
        level = float(vals[prob.halo_mask][0]) if prob.halo_mask.any() \
            else prob._far_profile().value
        vals[omega] = level
        u = GridFunction(prob.lattice, vals, prob.exterior_datum.exterior)
        res = float(np.abs(_gradient_omega(prob, vals)).max())
        return SolveReport(u, _energy_values(prob, vals), res, 0, 0, True,
                           details={"stop_scale": 0.0, "initial": initial})

    if initial in ("zero", "zero-extension"):
        vals[omega] = 0.0
    elif initial in ("harmonic", "halo-harmonic-guess"):
        A, b, _, _ = _assemble_surrogate(prob)
        vals[omega] = np.linalg.solve(A, b)
    else:
        raise ValueError("initial must be 'zero' or 'harmonic'")

    threshold = tol * (1.0 + prob._gradient_scale)
    if omega.sum() == 1:
        return _solve_scalar(prob, vals, threshold, max_iter, initial)

    P = prob._precond
    v_om = vals[omega].copy()
    g_now = _gradient_omega(prob, vals)
    e_now = _energy_values(prob, vals)
    history = [e_now]
    alpha = 1.0
    failures = 0
    iterations = 0
    v_prev = None
    g_prev = None
    converged = float(np.abs(g_now).max()) <= threshold

    while not converged and iterations < max_iter:
        d = g_now / P
        slope = float(np.dot(g_now, d))
        if v_prev is not None:
            sv = v_om - v_prev
            yv = g_now - g_prev
            denom = float(np.dot(sv, yv))
            if denom > 0:
                alpha = float(np.dot(sv * P, sv)) / denom
                alpha = min(max(alpha, 1e-12), 1e12)
            else:
                alpha = 1.0
        t = 1.0
        accepted = False
        # sufficient decrease up to the rounding noise of the energy sum,
        # without which descent stalls once decrements sink below 1 ulp
        noise = 8.0 * np.finfo(float).eps * (1.0 + abs(e_now))
        for _ in range(MAX_BACKTRACKS):
            trial = v_om - t * alpha * d
            vals[omega] = trial
            e_trial = _energy_values(prob, vals)
            if e_trial <= e_now - ARMIJO_C1 * t * alpha * slope + noise:
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            failures += 1
            vals[omega] = v_om
            break
        v_prev, g_prev = v_om, g_now
        v_om = trial
        e_now = e_trial
        history.append(e_now)
        g_now = _gradient_omega(prob, vals)
        iterations += 1
        converged = float(np.abs(g_now).max()) <= threshold

    vals[omega] = v_om
    u = GridFunction(prob.lattice, vals, prob.exterior_datum.exterior)
    res = float(np.abs(g_now).max())
    return SolveReport(u, e_now, res, iterations, failures,
                       bool(res <= threshold),
                       details={"stop_scale": prob._gradient_scale,
                                "threshold": threshold, "initial": initial},
                       energy_history=history)


def _solve_scalar(prob, vals, threshold, max_iter, initial):
    """Single-unknown domain: the energy is a scalar strictly convex
    function; bisect on its derivative."""
    omega = prob.omega_mask

    def dphi(x):
        vals[omega] = x
        return _gradient_omega(prob, vals)[0]

    span = prob.data_oscillation() + 1.0
    lo, hi = -span, span
    for _ in range(200):
        if dphi(lo) < 0:
            break
        lo -= span
        span *= 2
    for _ in range(200):
        if dphi(hi) > 0:
            break
        hi += span
        span *= 2
    iterations = 0
    for _ in range(min(max_iter, 200)):
        mid = 0.5 * (lo + hi)
        if dphi(mid) > 0:
            hi = mid
        else:
            lo = mid
        iterations += 1
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    vals[omega] = 0.5 * (lo + hi)
    res = abs(dphi(0.5 * (lo + hi)))
    u = GridFunction(prob.lattice, vals, prob.exterior_datum.exterior)
    return SolveReport(u, _energy_values(prob, vals), float(res), iterations,
                       0, bool(res <= threshold),
                       details={"threshold": threshold, "initial": initial,
                                "mode": "scalar_bisection"})
