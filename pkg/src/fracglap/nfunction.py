"""Growth-profile machinery: the pair (G, g) with G' = g that sets the
nonlinearity of the nonlocal operator, together with inverses, the
Legendre conjugate, and checks of the structural inequalities every
admissible profile must satisfy.

The profile is characterized by lower/upper growth indices (p, q) with

    1 < p <= t*g(t)/G(t) <= q < infty   for all t > 0,

which is the only structural assumption; doubling constants and all
scaling inequalities used downstream follow from it.  Supported
families:

* ``power``      -- g(t) = t**(p-1); closed forms throughout, p == q.
* ``power_log``  -- g(t) = t**(p-1)*log(1+t); indices (p, p+1); G is
                    evaluated by adaptive dyadic quadrature behind a
                    certified piecewise-Chebyshev accelerator.
* ``table``      -- strictly increasing samples of g, monotone
                    piecewise-linear interpolation; G integrates the
                    interpolant exactly; indices estimated from the data
                    unless declared.

All evaluation methods accept scalars or numpy arrays and are pure;
instances are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import bisect_increasing, integrate_zero_to
from .reports import EstimateReport, ratio_array

REPRESENTABLE_MAX = 1e30

_FAMILIES = ("power", "power_log", "table")


def _as_float_array(t):
    t = np.asarray(t, dtype=float)
    return t, t.ndim == 0


def _check_domain(t, what="argument"):
    if np.any(t < 0):
        raise ValueError(f"{what} must be >= 0")
    if np.any(t > REPRESENTABLE_MAX):
        raise OverflowError(
            f"{what} exceeds the representable range [0, {REPRESENTABLE_MAX:g}]"
        )


@dataclass(frozen=True)
class GrowthFunction:
    """A growth density g: strictly increasing, continuous, g(0) = 0.

    ``family`` selects the evaluation rule; ``exponent`` is the power p
    for the closed-form families; ``table`` holds (t_i, g_i) samples,
    strictly increasing in both coordinates, for user-supplied data.
    A tabulated g is implicitly anchored at (0, 0).
    """

    family: str
    exponent: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown growth family {self.family!r}")
        if self.family in ("power", "power_log"):
            if self.exponent is None or not self.exponent > 1.0:
                raise ValueError("power-type families need an exponent > 1")
        else:
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != 2 or tab.shape[0] < 2:
                raise ValueError("table must be an (m, 2) array with m >= 2")
            if np.any(np.diff(tab[:, 0]) <= 0) or np.any(np.diff(tab[:, 1]) <= 0):
                raise ValueError("table samples must be strictly increasing "
                                 "in both coordinates")
            if tab[0, 0] < 0 or tab[0, 1] < 0:
                raise ValueError("table samples must be nonnegative")
            if tab[0, 0] > 0:
                tab = np.vstack([[0.0, 0.0], tab])
            elif tab[0, 1] != 0.0:
                raise ValueError("g(0) must be 0")
            object.__setattr__(self, "table", tab)

    @property
    def t_max(self):
        """Upper end of the domain (table end, or the representable cap)."""
        if self.family == "table":
            return float(self.table[-1, 0])
        return REPRESENTABLE_MAX

    def __call__(self, t):
        t, scalar = _as_float_array(t)
        _check_domain(t)
        if self.family == "power":
            val = t ** (self.exponent - 1.0)
        elif self.family == "power_log":
            val = t ** (self.exponent - 1.0) * np.log1p(t)
        else:
            if np.any(t > self.t_max * (1 + 1e-12)):
                raise ValueError("argument outside the tabulated range")
            val = np.interp(t, self.table[:, 0], self.table[:, 1])
        return float(val) if scalar else val

    def inverse(self, y):
        """Preimage g^{-1}(y); monotone interpolation for tables."""
        y, scalar = _as_float_array(y)
        _check_domain(y, "target")
        if self.family == "power":
            val = y ** (1.0 / (self.exponent - 1.0))
        elif self.family == "power_log":
            val = bisect_increasing(self.__call__, y, hi_cap=REPRESENTABLE_MAX)
            val = np.asarray(val, dtype=float)
        else:
            if np.any(y > self.table[-1, 1] * (1 + 1e-12)):
                raise ValueError("target outside the tabulated range of g")
            val = np.interp(y, self.table[:, 1], self.table[:, 0])
        return float(val) if scalar else val


class _ChebLogG:
    """Piecewise-Chebyshev fit of log G(e^x), certified at construction
    against the direct quadrature it accelerates."""

    def __init__(self, exact, lo, hi, intervals, degree, target):
        self.lo = lo
        self.hi = hi
        self.edges = np.linspace(math.log(lo), math.log(hi), intervals + 1)
        k = np.arange(degree + 1)
        ref = np.cos(math.pi * (k + 0.5) / (degree + 1))  # Chebyshev points
        a = self.edges[:-1][:, None]
        b = self.edges[1:][:, None]
        nodes = 0.5 * (a + b) + 0.5 * (b - a) * ref  # (intervals, degree+1)
        phi = np.log(exact(np.exp(nodes.ravel()))).reshape(nodes.shape)
        self.coef = np.empty((intervals, degree + 1))
        for i in range(intervals):
            self.coef[i] = np.polynomial.chebyshev.chebfit(ref, phi[i], degree)
        # certify on off-node points
        probe = np.linspace(-0.97, 0.97, 9)
        xs = (0.5 * (a + b) + 0.5 * (b - a) * probe).ravel()
        approx = self(np.exp(xs))
        truth = exact(np.exp(xs))
        err = np.max(np.abs(approx - truth) / truth)
        if err > target:
            raise _CertificationError(err)

    def __call__(self, t):
        x = np.log(t)
        idx = np.clip(np.searchsorted(self.edges, x) - 1, 0, len(self.coef) - 1)
        out = np.empty_like(x)
        for i in np.unique(idx):
            sel = idx == i
            a, b = self.edges[i], self.edges[i + 1]
            xi = (2.0 * x[sel] - (a + b)) / (b - a)
            out[sel] = np.polynomial.chebyshev.chebval(xi, self.coef[i])
        return np.exp(out)


class _CertificationError(Exception):
    pass


class NFunction:
    """The convex profile G(t) = int_0^t g, with growth indices (p, q),
    doubling constant ``kappa`` (G(2t) <= kappa*G(t)) and reverse
    doubling constant ``ell`` (G(t) <= G(ell*t)/(2*ell)).

    Construction validates the structural inequalities on a sampled
    grid and derives any undeclared constants: kappa = 2**q and
    ell = 2**(1/(p-1)) always satisfy their defining inequalities under
    the index sandwich.
    """

    def __init__(self, growth, p=None, q=None, quadrature_tol=1e-10,
                 kappa=None, ell=None):
        self.growth = growth
        self.quadrature_tol = float(quadrature_tol)
        self._accel = None

        if growth.family == "power":
            p0 = q0 = float(growth.exponent)
        elif growth.family == "power_log":
            p0 = float(growth.exponent)
            q0 = p0 + 1.0
        else:
            p0, q0 = self._estimate_indices()

        tol = 1e-6 * max(1.0, q0)
        if p is None:
            p = p0
        elif p > p0 + tol:
            raise ValueError(
                f"declared lower index p={p:g} exceeds the observed "
                f"infimum {p0:g} of t*g(t)/G(t)"
            )
        if q is None:
            q = q0
        elif q < q0 - tol:
            raise ValueError(
                f"declared upper index q={q:g} is below the observed "
                f"supremum {q0:g} of t*g(t)/G(t)"
            )
        if not (1.0 < p <= q):
            raise ValueError("indices must satisfy 1 < p <= q")
        self.p = float(p)
        self.q = float(q)
        # estimated table indices are grid suprema; give the derived
        # doubling constants headroom for off-grid interpolant peaks
        pad = 1.001 if growth.family == "table" else 1.0
        self.kappa = float(kappa) if kappa is not None \
            else 2.0 ** self.q * pad
        self.ell = float(ell) if ell is not None \
            else 2.0 ** (1.0 / (self.p - 1.0)) * pad

        if growth.family == "power_log":
            self._build_accelerator()
        self._validate()

    # -- evaluation ----------------------------------------------------

    def g(self, t):
        """Growth density g(t)."""
        return self.growth(t)

    def G(self, t):
        """Antiderivative G(t) = int_0^t g(s) ds.

        Closed form for the power family, exact integration of the
        interpolant for tables, adaptive quadrature (relative accuracy
        ``quadrature_tol``) for everything else.
        """
        t, scalar = _as_float_array(t)
        _check_domain(t)
        fam = self.growth.family
        if fam == "power":
            pw = self.growth.exponent
            val = t ** pw / pw
        elif fam == "table":
            val = self._table_G(t)
        else:
            val = self._quad_G(np.atleast_1d(t)).reshape(t.shape)
        return float(val) if scalar else val

    def inv_G(self, y):
        """t with G(t) = y, by doubling bracket + bisection (relative
        width 1e-12); inv_G(0) = 0."""
        return bisect_increasing(self.G, y, hi_cap=REPRESENTABLE_MAX)

    def inv_g(self, y):
        """Preimage under g, same contract as inv_G."""
        y, scalar = _as_float_array(y)
        _check_domain(y, "target")
        if self.growth.family == "table":
            val = self.growth.inverse(y)
        else:
            val = bisect_increasing(self.g, y, hi_cap=REPRESENTABLE_MAX)
        val = np.asarray(val, dtype=float)
        return float(val) if scalar else val

    def conjugate(self, t):
        """Legendre conjugate G*(t) = sup_{s>=0} (s*t - G(s)).

        The objective is concave with derivative t - g(s), so the sup is
        attained at s = g^{-1}(t).
        """
        t, scalar = _as_float_array(t)
        _check_domain(t)
        s = np.asarray(self.inv_g(t), dtype=float)
        val = s * t - self.G(s)
        val = np.maximum(val, 0.0)
        return float(val) if scalar else val

    def conjugate_function(self):
        return ConjugateFunction(self)

    @property
    def p_conj(self):
        return self.p / (self.p - 1.0)

    @property
    def q_conj(self):
        return self.q / (self.q - 1.0)

    # -- internals -----------------------------------------------------

    def _quad_exact(self, t):
        return integrate_zero_to(self.growth, t, tol=self.quadrature_tol / 2)

    def _quad_G(self, t):
        out = np.zeros_like(t)
        pos = t > 0
        if self._accel is not None:
            fast = pos & (t >= self._accel.lo) & (t <= self._accel.hi)
            if fast.any():
                out[fast] = self._accel(t[fast])
            rest = pos & ~fast
        else:
            rest = pos
        if rest.any():
            out[rest] = self._quad_exact(t[rest])
        return out

    def _build_accelerator(self):
        target = min(self.quadrature_tol, 1e-11) / 2
        for intervals, degree in ((64, 24), (160, 32)):
            try:
                self._accel = _ChebLogG(self._quad_exact, 1e-14, 1e14,
                                        intervals, degree, target)
                return
            except _CertificationError:
                continue
        self._accel = None  # fall back to direct quadrature on every call

    def _table_G(self, t):
        tab = self.growth.table
        if np.any(t > tab[-1, 0] * (1 + 1e-12)):
            raise ValueError("argument outside the tabulated range")
        tk, gk = tab[:, 0], tab[:, 1]
        Gk = np.concatenate([[0.0], np.cumsum(0.5 * (gk[1:] + gk[:-1]) * np.diff(tk))])
        idx = np.clip(np.searchsorted(tk, t, side="right") - 1, 0, len(tk) - 2)
        dt = t - tk[idx]
        slope = (gk[idx + 1] - gk[idx]) / (tk[idx + 1] - tk[idx])
        return Gk[idx] + gk[idx] * dt + 0.5 * slope * dt * dt

    def _estimate_indices(self):
        # log-spaced sweep of t g(t)/G(t); the segment anchored at the
        # origin is linear, where the ratio is exactly 2, so 2 always
        # belongs to the index band of a tabulated profile
        r = self._table_ratio_samples()
        p0 = min(2.0, float(r.min()))
        q0 = max(2.0, float(r.max()))
        if p0 <= 1.0 + 1e-9:
            raise ValueError("tabulated g has lower growth index <= 1")
        return p0, q0

    def _table_ratio_samples(self):
        grid = self._sample_grid()
        return grid * self.growth(grid) / self._table_G(grid)

    def _sample_grid(self):
        if self.growth.family == "table":
            tab = self.growth.table
            t1 = tab[1, 0]
            tmax = tab[-1, 0]
            return np.geomspace(t1, tmax, 600)
        return np.geomspace(1e-6, 1e6, 61)

    def _validate(self):
        t = self._sample_grid()
        gv = self.g(t)
        if self.g(0.0) != 0.0:
            raise ValueError("g(0) must be 0")
        if np.any(np.diff(gv) <= 0):
            raise ValueError("g must be strictly increasing")
        Gv = self.G(t)
        r = t * gv / Gv
        slack = 1e-6 * self.q
        if r.min() < self.p - slack or r.max() > self.q + slack:
            raise ValueError(
                "growth sandwich violated on the sampled grid: "
                f"t*g/G in [{r.min():.6g}, {r.max():.6g}] vs [{self.p:g}, {self.q:g}]"
            )
        # midpoint convexity on neighbouring grid points
        mid = self.G(0.5 * (t[:-1] + t[1:]))
        if np.any(mid > 0.5 * (Gv[:-1] + Gv[1:]) * (1 + 1e-9)):
            raise ValueError("G failed the midpoint convexity check")
        # doubling constants on the sampled grid
        cap = self.growth.t_max
        td = t[2.0 * t <= cap]
        if np.any(self.G(2.0 * td) > self.kappa * self.G(td) * (1 + 1e-7)):
            raise ValueError("doubling constant kappa does not hold")
        tn = t[self.ell * t <= cap]
        if np.any(self.G(tn) > self.G(self.ell * tn) / (2 * self.ell) * (1 + 1e-7)):
            raise ValueError("reverse doubling constant ell does not hold")

    def __repr__(self):
        fam = self.growth.family
        return f"NFunction({fam}, p={self.p:g}, q={self.q:g})"


@dataclass(frozen=True)
class ConjugateFunction:
    """The conjugate profile G* with its own growth indices, the Holder
    conjugates of the base pair."""

    base: NFunction

    @property
    def p_conj(self):
        return self.base.p_conj

    @property
    def q_conj(self):
        return self.base.q_conj

    def __call__(self, t):
        return self.base.conjugate(t)


# -- factory helpers ----------------------------------------------------

def make_power(p, **kw):
    """g(t) = t**(p-1), G(t) = t**p / p."""
    return NFunction(GrowthFunction("power", exponent=float(p)), **kw)


def make_power_log(p, **kw):
    """g(t) = t**(p-1) * log(1+t), indices (p, p+1)."""
    return NFunction(GrowthFunction("power_log", exponent=float(p)), **kw)


def make_table(points, p=None, q=None, **kw):
    """Tabulated g from (t_i, g_i) samples."""
    return NFunction(GrowthFunction("table", table=np.asarray(points, float)),
                     p=p, q=q, **kw)


def from_config(cfg):
    """Build from the JSON fragment used in problem configs."""
    fam = cfg["family"]
    if fam == "power":
        return make_power(cfg["p"])
    if fam == "power_log":
        return make_power_log(cfg["p"])
    if fam == "table":
        return make_table(cfg["points"], p=cfg.get("p"), q=cfg.get("q"))
    raise ValueError(f"unknown growth family {fam!r}")


# -- structural inequality checks ---------------------------------------

def check_growth_sandwich(nf, sample_grid, tol=1e-8):
    """Range of t*g(t)/G(t) over the grid against [p, q]."""
    t = np.asarray(sample_grid, dtype=float)
    if t.size == 0 or np.any(t <= 0):
        raise ValueError("sample grid must be nonempty with positive entries")
    r = t * nf.g(t) / nf.G(t)
    i_max = int(np.argmax(r))
    i_min = int(np.argmin(r))
    constant = max(r[i_max] / nf.q, nf.p / r[i_min])
    bad = (r > nf.q * (1 + tol)) | (r < nf.p / (1 + tol))
    return EstimateReport(
        name="growth_sandwich",
        lhs=float(r[i_max]),
        rhs_terms={"q": nf.q},
        empirical_constant=float(constant),
        tolerance=1.0 + tol,
        passed=bool(constant <= 1.0 + tol),
        witnesses={"t_at_max": float(t[i_max]), "t_at_min": float(t[i_min])},
        details={"ratio_min": float(r[i_min]), "ratio_max": float(r[i_max]),
                 "violations": int(bad.sum()),
                 "failure_points": t[bad][:16].tolist()},
    )


def check_young(nf, pairs, eps=0.5, tol=1e-8):
    """Product inequality t*s <= G(t) + G*(s), its eps-weighted form
    t*s <= eps^(1-q) G(t) + eps G*(s), the conjugate identity
    G*(g(t)) = t g(t) - G(t), and the bound G*(g(t)) <= (q-1) G(t)."""
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    t, s = pairs[:, 0], pairs[:, 1]
    Gt = nf.G(t)
    Gs_conj = nf.conjugate(s)
    prod = t * s

    def worst(lhs, rhs):
        c = ratio_array(lhs, rhs)
        i = int(np.argmax(c)) if c.size else 0
        return float(c.max(initial=0.0)), i

    c0, i0 = worst(prod, Gt + Gs_conj)
    ce, ie = worst(prod, eps ** (1.0 - nf.q) * Gt + eps * Gs_conj)

    gt = nf.g(t)
    lhs_id = nf.conjugate(gt)
    rhs_id = t * gt - Gt
    relerr = np.abs(lhs_id - rhs_id) / np.maximum(1.0, np.abs(rhs_id))
    cb, ib = worst(lhs_id, (nf.q - 1.0) * Gt)

    constant = max(c0, ce, cb, 1.0 + float(relerr.max(initial=0.0)))
    i_w = i0 if c0 >= max(ce, cb) else (ie if ce >= cb else ib)
    return EstimateReport(
        name="young",
        lhs=float(prod[i0]) if prod.size else 0.0,
        rhs_terms={"G(t)": float(Gt[i0]) if Gt.size else 0.0,
                   "G*(s)": float(Gs_conj[i0]) if Gs_conj.size else 0.0},
        empirical_constant=float(constant),
        tolerance=1.0 + tol,
        passed=bool(constant <= 1.0 + tol),
        witnesses={"t": float(t[i_w]), "s": float(s[i_w]), "eps": eps},
        details={"product": c0, "product_eps": ce,
                 "conjugate_identity_relerr": float(relerr.max(initial=0.0)),
                 "conjugate_bound": cb},
    )


def check_scaling(nf, samples, tol=1e-8):
    """Two-sided scaling sandwiches for G and G* at factors a != 1:

        a^q G(t) <= G(at) <= a^p G(t)        (0 < a < 1)
        a^p G(t) <= G(at) <= a^q G(t)        (a > 1)

    and the conjugate version with the Holder-conjugate exponents.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    a, t = samples[:, 0], samples[:, 1]
    if np.any(a <= 0):
        raise ValueError("scaling factors must be positive")
    worst = 0.0
    witness = {}
    for label, F, lo_ex, hi_ex in (
        ("G", nf.G, nf.q, nf.p),
        ("G*", nf.conjugate, nf.p_conj, nf.q_conj),
    ):
        Ft = F(t)
        Fat = F(a * t)
        low = np.where(a < 1.0, a ** lo_ex, a ** hi_ex) * Ft
        high = np.where(a < 1.0, a ** hi_ex, a ** lo_ex) * Ft
        for lhs, rhs in ((Fat, high), (low, Fat)):
            c = ratio_array(lhs, rhs)
            if c.size and c.max() > worst:
                i = int(np.argmax(c))
                worst = float(c.max())
                witness = {"which": label, "a": float(a[i]), "t": float(t[i])}
    return EstimateReport(
        name="scaling_sandwich",
        lhs=worst,
        rhs_terms={"unit": 1.0},
        empirical_constant=worst,
        tolerance=1.0 + tol,
        passed=bool(worst <= 1.0 + tol),
        witnesses=witness,
    )


def check_doubling(nf, grid, tol=1e-8):
    """Doubling G(2t) <= kappa G(t) and reverse doubling
    G(t) <= G(ell t)/(2 ell) at the stored constants."""
    t = np.asarray(grid, dtype=float)
    t = t[(t > 0) & (2.0 * t <= nf.growth.t_max) & (nf.ell * t <= nf.growth.t_max)]
    Gt = nf.G(t)
    c_dbl = float(np.max(nf.G(2.0 * t) / (nf.kappa * Gt), initial=0.0))
    c_rev = float(np.max(Gt * 2.0 * nf.ell / nf.G(nf.ell * t), initial=0.0))
    worst = max(c_dbl, c_rev)
    return EstimateReport(
        name="doubling",
        lhs=worst,
        rhs_terms={"unit": 1.0},
        empirical_constant=worst,
        tolerance=1.0 + tol,
        passed=bool(worst <= 1.0 + tol),
        details={"doubling": c_dbl, "reverse_doubling": c_rev,
                 "kappa": nf.kappa, "ell": nf.ell},
    )
