"""Deviation bounds for quadratic forms ||B xi||^2 of sub-Gaussian vectors,
plus the large-deviation radius rules.

Includes a self-contained chi-square survival/CDF/quantile implementation
(regularized incomplete gamma via series and continued fraction); scipy is
deliberately not imported so the tail machinery has no dependencies beyond
numpy, and tests validate it against tabulated values and scipy as an
independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .infogeom import as_sym

_EPS = 1e-16
_MAX_ITER = 600


class CapabilityError(RuntimeError):
    """A gated capability was requested without its enabling parameter."""


# ---------------------------------------------------------------------------
# chi-square via the regularized incomplete gamma function
# ---------------------------------------------------------------------------


def _gamma_p_series(a: float, x: float) -> float:
    # series for P(a, x), reliable for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz continued fraction for Q(a, x), reliable for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("need a > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_p_series(a, x), 1.0)
    return max(1.0 - _gamma_q_contfrac(a, x), 0.0)


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("need a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return max(1.0 - _gamma_p_series(a, x), 0.0)
    return min(_gamma_q_contfrac(a, x), 1.0)


def chi2_sf(z: float, df: float) -> float:
    """P(chi2_df >= z)."""
    if z <= 0.0:
        return 1.0
    return gamma_q(df / 2.0, z / 2.0)


def chi2_cdf(z: float, df: float) -> float:
    if z <= 0.0:
        return 0.0
    return gamma_p(df / 2.0, z / 2.0)


def chi2_quantile(q: float, df: float) -> float:
    """Inverse CDF by bisection on the monotone chi2_cdf."""
    if not (0.0 <= q < 1.0):
        raise ValueError("quantile level must lie in [0, 1)")
    if q == 0.0:
        return 0.0
    lo, hi = 0.0, df + 10.0 * math.sqrt(2.0 * df) + 10.0
    while chi2_cdf(hi, df) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * (1.0 + hi):
            break
    return 0.5 * (lo + hi)


def gauss_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# quadratic-form deviation quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QFBoundReport:
    """Critical quantities of the quadratic-form deviation bound for one B."""

    p_bar: float
    v: float
    lambda_star: float
    omega_c: float
    mu_c: float
    y_c2: float
    x_c: float
    g: float

    def to_json(self) -> str:
        fields = ("p_bar", "v", "lambda_star", "omega_c", "mu_c", "y_c2", "x_c", "g")
        return json.dumps({k: getattr(self, k) for k in fields})


def qf_features(B):
    """(p_bar, v, lambda_star) = (tr B^2, sqrt(2 tr B^4), ||B^2||_inf)."""
    lam = np.linalg.eigvalsh(as_sym(B))
    lam2 = lam * lam
    p_bar = float(np.sum(lam2))
    v = float(math.sqrt(2.0 * np.sum(lam2 * lam2)))
    lambda_star = float(np.max(lam2)) if lam2.size else 0.0
    return p_bar, v, lambda_star


def omega_c(g: float, p_bar: float) -> float:
    """Unique positive root of w(1+w)/sqrt(1+w^2) = g / sqrt(p_bar).

    The left side is strictly increasing in w >= 0, so bisection gives the
    root with residual |lhs - rhs| <= 1e-12 (1 + rhs).
    """
    if not (math.isfinite(g) and math.isfinite(p_bar)) or g <= 0 or p_bar <= 0:
        raise ValueError("need finite g > 0 and p_bar > 0")
    rhs = g / math.sqrt(p_bar)

    def lhs(w):
        return w * (1.0 + w) / math.sqrt(1.0 + w * w)

    lo = 0.0
    hi = 1.0 + rhs
    while lhs(hi) < rhs:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if lhs(mid) < rhs:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    if abs(lhs(root) - rhs) > 1e-12 * (1.0 + rhs):
        raise ArithmeticError("omega_c bisection failed to reach residual target")
    return root


def critical_quantities(B, g: float) -> QFBoundReport:
    """Full critical-quantity report (omega_c, mu_c, y_c^2, x_c) for B.

    Requires lambda_star <= 1; mu_c = min(omega_c^2/(1+omega_c^2), 2/3)
    so mu_c * lambda_star < 1 and the log-determinant is defined.
    """
    lam = np.linalg.eigvalsh(as_sym(B))
    lam2 = lam * lam
    p_bar = float(np.sum(lam2))
    v = float(math.sqrt(2.0 * np.sum(lam2 * lam2)))
    lambda_star = float(np.max(lam2)) if lam2.size else 0.0
    if lambda_star > 1.0 + 1e-12:
        raise ValueError(
            f"lambda_star = {lambda_star:g} > 1: replace everywhere B with B/lambda_star"
        )
    if v * v > 2.0 * lambda_star * p_bar + 1e-9 * (1.0 + p_bar):
        raise AssertionError("v^2 exceeds its 2*lambda_star*p_bar bound")
    wc = omega_c(g, p_bar)
    mu_c = min(wc * wc / (1.0 + wc * wc), 2.0 / 3.0)
    y_c2 = (1.0 + wc * wc) * p_bar
    log_det = float(np.sum(np.log1p(-mu_c * lam2)))
    x_c = 0.5 * (mu_c * y_c2 + log_det)
    return QFBoundReport(p_bar, v, lambda_star, wc, mu_c, y_c2, x_c, g)


def _check_g_hypothesis(g: float, p_bar: float) -> None:
    if g * g < 2.0 * p_bar:
        raise ValueError(f"theorem hypothesis g^2 >= 2 p_bar fails: g={g:g}, p_bar={p_bar:g}")


def qf_quantile(x: float, B, g: float, tail_slope: float | None = None) -> float:
    """Deviation quantile z(x, B) of the quadratic form ||B xi||^2.

    z = p_bar + 2 v sqrt(x) for x <= v/18, p_bar + 6x for v/18 < x <= x_c.
    The x > x_c branch needs the undefined-in-source slope constant and is
    gated behind ``tail_slope``.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    p_bar, v, _ = qf_features(B)
    if p_bar == 0.0:
        # zero matrix: the form is identically 0, any positive level works
        return 0.0 if x == 0.0 else 6.0 * x
    _check_g_hypothesis(g, p_bar)
    if x <= v / 18.0:
        return p_bar + 2.0 * v * math.sqrt(x)
    rep = critical_quantities(B, g)
    if x <= rep.x_c:
        return p_bar + 6.0 * x
    if tail_slope is None:
        raise CapabilityError(
            f"x={x:g} exceeds x_c={rep.x_c:g}; the x > x_c branch requires an "
            "explicit tail_slope (its slope constant is not defined)"
        )
    y_c = math.sqrt(rep.y_c2)
    return abs(y_c + 2.0 * (x - rep.x_c) / tail_slope) ** 2


@dataclass(frozen=True)
class TailRow:
    x: float
    z: float
    bound: float
    empirical: float
    se: float
    passed: bool


def qf_tail_validate(B, x_grid, n_mc: int, seed: int, g: float | None = None):
    """Monte Carlo check of P(||B xi||^2 >= z(x,B)) <= 2 e^{-x} + 8.4 e^{-x_c}.

    xi is standard Gaussian (which satisfies the moment condition for any g).
    PASS per x iff empirical <= bound + 3 * binomial SE.
    """
    B = as_sym(B)
    p_bar, _, _ = qf_features(B)
    if g is None:
        g = max(10.0, math.sqrt(2.0 * p_bar) + 1.0)
    x_c = critical_quantities(B, g).x_c if p_bar > 0 else math.inf
    rng = np.random.default_rng(seed)
    d = B.shape[0]
    counts = {float(x): 0 for x in np.asarray(x_grid, dtype=np.float64)}
    zs = {x: qf_quantile(x, B, g) for x in counts}
    chunk = 100_000
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        xi = rng.standard_normal((m, d))
        q = np.sum((xi @ B) ** 2, axis=1)
        for x in counts:
            counts[x] += int(np.sum(q >= zs[x]))
        done += m
    rows = []
    for x in counts:
        emp = counts[x] / n_mc
        se = math.sqrt(max(emp * (1.0 - emp), 1.0 / n_mc) / n_mc)
        bound = 2.0 * math.exp(-x) + (8.4 * math.exp(-x_c) if math.isfinite(x_c) else 0.0)
        rows.append(TailRow(x, zs[x], bound, emp, se, emp <= bound + 3.0 * se))
    return rows


# ---------------------------------------------------------------------------
# large-deviation radius rules
# ---------------------------------------------------------------------------


def r0_rule(nu0: float, b: float, x: float, p_star: int) -> float:
    """Concentration radius r0 = 6 nu0 sqrt(x + 2.4 p*) / b."""
    return 6.0 * nu0 * math.sqrt(x + 2.4 * p_star) / b


def large_dev_check(r: float, g: float, b: float, nu0: float, x: float, p_star: int):
    """The two displayed large-deviation conditions with Q = 2.4 p*.

    cond1: 1 + sqrt(x + Q) <= 3 nu0^2 g / b
    cond2: 6 nu0 sqrt(x + Q) <= r b
    """
    s = math.sqrt(x + 2.4 * p_star)
    slack = 1.0 + 1e-12  # r from r0_rule satisfies cond2 with equality
    cond1 = (1.0 + s) <= 3.0 * nu0 * nu0 * g / b * slack
    cond2 = 6.0 * nu0 * s <= r * b * slack
    return cond1, cond2
