"""Hot numeric kernels with a numba @njit path and a pure-numpy fallback.

The backend is selected once at import time:

* ``PROFILIK_NO_NUMBA=1`` (or ``true``/``yes``) forces the pure-numpy path;
* otherwise numba is used when importable, numpy when not.

Both paths implement identical arithmetic; tests assert agreement to
1e-12 and ``benchmarks/bench_kernels.py`` times them against each other.

Kernels
-------
* distance to a lattice-sliced ball (the adversarial bump's support) and
  its partial derivatives,
* quintic smoothstep bump value/derivative,
* the lattice scan of the critical-dimension solver (golden-section
  maximization of the in-slice objective per lattice value),
* logistic log-likelihood + gradient.
"""

from __future__ import annotations

import math
import os

import numpy as np

_GOLDEN_INV = (math.sqrt(5.0) - 1.0) / 2.0

_flag = os.environ.get("PROFILIK_NO_NUMBA", "").strip().lower()
_NUMBA_DISABLED = _flag in {"1", "true", "yes"}

if not _NUMBA_DISABLED:
    try:
        from numba import njit as _njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and not _NUMBA_DISABLED


def _maybe_jit(fn):
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# lattice-sliced ball geometry
#
# The bump support is S = union over lattice values v = k*spacing,
# |v| <= radius, of the discs {u: u_1 = v, ||u_2:|| <= sqrt(radius^2-v^2)}.
# Distance from (u1, rrest) to the disc at v:
#     sqrt( (u1-v)^2 + max(0, rrest - sqrt(radius^2-v^2))^2 ).
# Scanning the two nearest lattice values (plus clamping to |v| <= radius)
# is exact wherever the true distance is below the bump margin, because the
# margin (1/n) is far smaller than half the lattice spacing; farther out the
# scan only overestimates the distance, where the bump is zero anyway.
# ---------------------------------------------------------------------------


def _dist_to_slices(u1, rrest, spacing, radius):
    kmax = int(math.floor(radius / spacing))
    k0 = int(round(u1 / spacing))
    best = math.inf
    bdx = 0.0
    bdr = 0.0
    for k in (k0 - 1, k0, k0 + 1):
        if k < -kmax:
            k = -kmax
        elif k > kmax:
            k = kmax
        v = k * spacing
        rho = math.sqrt(max(radius * radius - v * v, 0.0))
        dx = u1 - v
        dr = rrest - rho
        if dr < 0.0:
            dr = 0.0
        d = math.sqrt(dx * dx + dr * dr)
        if d < best:
            best = d
            bdx = dx
            bdr = dr
    return best, bdx, bdr


_dist_to_slices = _maybe_jit(_dist_to_slices)


def _smoothstep(t):
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_deriv(t):
    if t <= 0.0 or t >= 1.0:
        return 0.0
    u = t * (1.0 - t)
    return 30.0 * u * u


_smoothstep = _maybe_jit(_smoothstep)
_smoothstep_deriv = _maybe_jit(_smoothstep_deriv)


def _bump_and_partials(u1, rrest, spacing, radius, margin):
    """Bump value f and its partials wrt (u1, rrest).

    f = smoothstep(1 - d/margin) of the distance d to the lattice-sliced
    ball; f = 1 on the set, 0 at distance >= margin.  At d = 0 the
    smoothstep's flat end (s'(1) = 0) makes the partials vanish, so the
    non-differentiability of d there is harmless.
    """
    d, dx, dr = _dist_to_slices(u1, rrest, spacing, radius)
    t = 1.0 - d / margin
    f = _smoothstep(t)
    if d <= 0.0 or t <= 0.0 or t >= 1.0:
        return f, 0.0, 0.0
    c = -_smoothstep_deriv(t) / (margin * d)
    return f, c * dx, c * dr


_bump_and_partials = _maybe_jit(_bump_and_partials)


def bump_value(u1: float, rrest: float, spacing: float, radius: float, margin: float) -> float:
    f, _, _ = _bump_and_partials(u1, rrest, spacing, radius, margin)
    return f


def bump_and_partials(u1, rrest, spacing, radius, margin):
    return _bump_and_partials(u1, rrest, spacing, radius, margin)


def bump_distance(u1: float, rrest: float, spacing: float, radius: float) -> float:
    d, _, _ = _dist_to_slices(u1, rrest, spacing, radius)
    return d


def _bump_batch_loop(u1s, rrests, spacing, radius, margin, out):
    for i in range(u1s.shape[0]):
        f, _, _ = _bump_and_partials(u1s[i], rrests[i], spacing, radius, margin)
        out[i] = f
    return out


_bump_batch_loop = _maybe_jit(_bump_batch_loop)


def _bump_batch_numpy(u1s, rrests, spacing, radius, margin, out):
    kmax = np.floor(radius / spacing)
    k0 = np.round(u1s / spacing)
    best = np.full(u1s.shape, np.inf)
    for off in (-1.0, 0.0, 1.0):
        k = np.clip(k0 + off, -kmax, kmax)
        v = k * spacing
        rho = np.sqrt(np.maximum(radius * radius - v * v, 0.0))
        dx = u1s - v
        dr = np.maximum(rrests - rho, 0.0)
        np.minimum(best, np.hypot(dx, dr), out=best)
    t = np.clip(1.0 - best / margin, 0.0, 1.0)
    out[:] = t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    return out


def bump_batch(u1s, rrests, spacing, radius, margin):
    """Bump value at many (u1, rrest) pairs; numba loop or vectorized numpy."""
    u1s = np.ascontiguousarray(u1s, dtype=np.float64)
    rrests = np.ascontiguousarray(rrests, dtype=np.float64)
    out = np.empty_like(u1s)
    if USE_NUMBA:
        return _bump_batch_loop(u1s, rrests, spacing, radius, margin, out)
    return _bump_batch_numpy(u1s, rrests, spacing, radius, margin, out)


# ---------------------------------------------------------------------------
# lattice scan for the critical-dimension solver
#
# In the slice u = (v, s*e) with e the unit radial direction of the data's
# tail block, the bump is exactly 1 for s <= sqrt(radius^2 - v^2), so the
# (1/n-scaled) objective is closed form:
#     h(v, s) = v*x1 + s*xr - (v^2+s^2)/2 + (v^2+s^2)^{3/2}.
# h is unimodal in s on [0, smax] at desk scales (radius << 1/3), so
# golden-section is exact up to its tolerance.
# ---------------------------------------------------------------------------


def _scan_objective(v, s, x1, xr):
    q = v * v + s * s
    return v * x1 + s * xr - 0.5 * q + q * math.sqrt(q)


_scan_objective = _maybe_jit(_scan_objective)


def _lattice_scan_loop(x1, xr, spacing, radius, tol):
    kmax = int(math.floor(radius / spacing))
    best_val = -math.inf
    best_v = 0.0
    best_s = 0.0
    for k in range(-kmax, kmax + 1):
        v = k * spacing
        smax = math.sqrt(max(radius * radius - v * v, 0.0))
        a = 0.0
        b = smax
        while b - a > tol:
            h = _GOLDEN_INV * (b - a)
            c = b - h
            d = a + h
            if _scan_objective(v, c, x1, xr) < _scan_objective(v, d, x1, xr):
                a = c
            else:
                b = d
        s = 0.5 * (a + b)
        val = _scan_objective(v, s, x1, xr)
        v0 = _scan_objective(v, 0.0, x1, xr)
        if v0 > val:
            val = v0
            s = 0.0
        v1 = _scan_objective(v, smax, x1, xr)
        if v1 > val:
            val = v1
            s = smax
        if val > best_val:
            best_val = val
            best_v = v
            best_s = s
    return best_v, best_s, best_val


_lattice_scan_loop = _maybe_jit(_lattice_scan_loop)


def _lattice_scan_numpy(x1, xr, spacing, radius, tol):
    kmax = int(math.floor(radius / spacing))
    v = np.arange(-kmax, kmax + 1, dtype=np.float64) * spacing
    smax = np.sqrt(np.maximum(radius * radius - v * v, 0.0))

    def h(s):
        q = v * v + s * s
        return v * x1 + s * xr - 0.5 * q + q * np.sqrt(q)

    a = np.zeros_like(v)
    b = smax.copy()
    width = float(np.max(b)) if b.size else 0.0
    n_iter = 0
    if width > tol:
        n_iter = int(math.ceil(math.log(tol / width) / math.log(_GOLDEN_INV))) + 1
    for _ in range(n_iter):
        step = _GOLDEN_INV * (b - a)
        c = b - step
        d = a + step
        take = h(c) < h(d)
        a = np.where(take, c, a)
        b = np.where(take, b, d)
    s = 0.5 * (a + b)
    vals = h(s)
    for s_edge in (np.zeros_like(v), smax):
        v_edge = h(s_edge)
        better = v_edge > vals
        vals = np.where(better, v_edge, vals)
        s = np.where(better, s_edge, s)
    i = int(np.argmax(vals))
    return float(v[i]), float(s[i]), float(vals[i])


def lattice_scan(x1: float, xr: float, spacing: float, radius: float, tol: float = 1e-12):
    """Best lattice-structured candidate (v*, s*, h(v*,s*)) for the bump model.

    Scans every lattice value |v| <= radius and maximizes the in-slice
    objective over s in [0, sqrt(radius^2 - v^2)] by golden-section to
    ``tol``.  The returned value is on the 1/n scale (multiply by n for
    the log-likelihood).
    """
    if USE_NUMBA:
        return _lattice_scan_loop(x1, xr, spacing, radius, tol)
    return _lattice_scan_numpy(x1, xr, spacing, radius, tol)


# ---------------------------------------------------------------------------
# logistic log-likelihood
# ---------------------------------------------------------------------------


def _logistic_loglik_grad_loop(X, y, ups, grad):
    n, d = X.shape
    ll = 0.0
    for j in range(d):
        grad[j] = 0.0
    for i in range(n):
        z = 0.0
        for j in range(d):
            z += X[i, j] * ups[j]
        if z > 0.0:
            ll += y[i] * z - (z + math.log1p(math.exp(-z)))
        else:
            ll += y[i] * z - math.log1p(math.exp(z))
        p = 1.0 / (1.0 + math.exp(-z))
        r = y[i] - p
        for j in range(d):
            grad[j] += r * X[i, j]
    return ll


_logistic_loglik_grad_loop = _maybe_jit(_logistic_loglik_grad_loop)


def logistic_loglik_grad(X, y, ups):
    """Log-likelihood and gradient of the logistic model at ``ups``.

    ll = sum_i y_i z_i - log(1 + exp(z_i)),  z = X @ ups
    grad = X.T @ (y - sigmoid(z))
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    ups = np.ascontiguousarray(ups, dtype=np.float64)
    if USE_NUMBA:
        grad = np.empty(X.shape[1])
        ll = _logistic_loglik_grad_loop(X, y, ups, grad)
        return float(ll), grad
    z = X @ ups
    # stable log(1+exp(z)) = max(z,0) + log1p(exp(-|z|))
    ll = float(y @ z - np.sum(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))))
    p = 1.0 / (1.0 + np.exp(-z))
    grad = X.T @ (y - p)
    return ll, grad
