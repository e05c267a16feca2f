"""Full, constrained and profile maximum-likelihood computation.

The workhorse is a quasi-Newton (BFGS) ascent with Armijo backtracking.
After the first accepted step the inverse-Hessian estimate is rescaled
by s'y/y'y, which makes exactly quadratic models converge to machine
precision in about two iterations instead of stopping at the gradient
tolerance; the quadratic-exactness guarantees downstream rely on this.

The adversarial bump model gets a dedicated solver: plain ascent cannot
find its lattice-structured global maximum, so the solver enumerates
lattice slices, maximizes the closed-form in-slice objective by
golden-section, compares with the unperturbed candidate X, and polishes
the winner with a short local ascent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .infogeom import efficient_score, schur_target, sym_inv_sqrt, sym_sqrt
from .model import CritDimModel, ParamVector, QuasiLikelihoodModel


@dataclass(frozen=True)
class OptimizerSettings:
    grad_tol: float = 1e-8           # relative to 1 + ||grad at truth||
    max_iters: int = 500
    restarts: int = 1
    backtrack_shrink: float = 0.5
    sufficient_increase: float = 1e-4
    restart_seed: int = 0
    polish_iters: int = 50           # critdim post-scan ascent budget
    gs_tol: float = 1e-12            # critdim golden-section tolerance

    def __post_init__(self):
        if self.grad_tol <= 0 or self.max_iters <= 0 or self.restarts < 1:
            raise ValueError("tolerances and budgets must be strictly positive")
        if not (0.0 < self.backtrack_shrink < 1.0):
            raise ValueError("backtrack_shrink must lie in (0, 1)")
        if not (0.0 < self.sufficient_increase < 1.0):
            raise ValueError("sufficient_increase must lie in (0, 1)")


@dataclass(frozen=True)
class MleResult:
    upsilon: ParamVector
    loglik: float
    grad_norm: float
    converged: bool
    n_iters: int


@dataclass(frozen=True)
class ProfileFit:
    upsilon_hat: ParamVector
    upsilon_hat_constrained: ParamVector
    theta_hat: np.ndarray
    wilks_T: float
    xi_breve: np.ndarray
    fisher_residual: float
    converged_full: bool
    converged_constrained: bool
    loglik_full: float
    loglik_constrained: float


def _bfgs_max(fg, x0, tol_abs, settings: OptimizerSettings, max_iters=None):
    """Maximize f via BFGS on -f; returns (x, f, grad, converged, iters).

    The line search accepts on Armijo sufficient increase, with a
    terminal-phase fallback: once per-step gains sink below the floating
    resolution of f, a step is also accepted when it does not lose more
    than float noise and shrinks the gradient norm.  Without the fallback
    the ascent stalls at ||grad|| ~ sqrt(curvature * eps * |f|), which can
    sit above the requested tolerance for well-scaled likelihoods.
    """
    shrink = settings.backtrack_shrink
    c1 = settings.sufficient_increase
    iters_cap = settings.max_iters if max_iters is None else max_iters
    x = np.array(x0, dtype=np.float64)
    fx, g = fg(x)
    gnorm = float(np.linalg.norm(g))
    H = np.eye(x.shape[0])
    scaled = False
    converged = gnorm <= tol_abs
    it = 0
    while not converged and it < iters_cap:
        it += 1
        d = H @ g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= 0.0:
            H = np.eye(x.shape[0])
            scaled = False
            d = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                break
        # covers the evaluation noise of likelihood sums up to ~1e6 terms;
        # harmless because the fallback also demands a 10% gradient drop
        f_slack = 1e-10 * (1.0 + abs(fx))
        t = 1.0
        accepted = False
        while t > 1e-20:
            x_new = x + t * d
            f_new, g_new = fg(x_new)
            if np.isfinite(f_new) and f_new >= fx + c1 * t * slope:
                accepted = True
                break
            if (np.isfinite(f_new) and f_new >= fx - f_slack
                    and float(np.linalg.norm(g_new)) <= 0.9 * gnorm):
                accepted = True
                break
            t *= shrink
        if not accepted:
            break
        s = x_new - x
        y = g - g_new  # gradient of -f increases along s for concave f
        sy = float(s @ y)
        if sy > 1e-14 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            if not scaled:
                H = (sy / float(y @ y)) * np.eye(x.shape[0])
                scaled = True
            Hy = H @ y
            rho = 1.0 / sy
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) \
                + rho * rho * (sy + float(y @ Hy)) * np.outer(s, s)
        x, fx, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        converged = gnorm <= tol_abs
    return x, fx, g, converged, it


def _grad_scale(grad_at_truth) -> float:
    return 1.0 + float(np.linalg.norm(grad_at_truth))


def full_mle(model: QuasiLikelihoodModel, settings: OptimizerSettings = OptimizerSettings()) -> MleResult:
    """Maximize the full log-likelihood; critdim models go to the lattice solver."""
    if isinstance(model, CritDimModel):
        return critdim_solver(model, settings)
    truth = model.truth()
    tol_abs = settings.grad_tol * _grad_scale(model.grad(truth.values))
    fg = model.loglik_grad
    starts = [truth.values.copy()]
    if settings.restarts > 1:
        scales = np.diag(sym_inv_sqrt(model.info_pair().D2, name="information D2"))
        rng = np.random.default_rng(settings.restart_seed)
        for _ in range(settings.restarts - 1):
            starts.append(truth.values + scales * rng.standard_normal(model.p_star))

    best = None
    for x0 in starts:
        x, fx, g, conv, it = _bfgs_max(fg, x0, tol_abs, settings)
        dist = float(np.linalg.norm(x - x0))
        cand = (fx, -dist, x, g, conv, it)
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
    fx, _, x, g, conv, it = best
    return MleResult(ParamVector(x, model.p), fx, float(np.linalg.norm(g)), conv, it)


def constrained_mle(model: QuasiLikelihoodModel, theta,
                    settings: OptimizerSettings = OptimizerSettings()) -> MleResult:
    """Maximize over the nuisance with the target coordinates pinned to theta."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != model.p:
        raise ValueError(f"theta must have length {model.p}")
    truth = model.truth()
    if model.p_star == model.p:
        u = theta.copy()
        return MleResult(ParamVector(u, model.p), model.loglik(u), 0.0, True, 0)

    g_truth = model.grad(truth.values)[model.p :]
    tol_abs = settings.grad_tol * _grad_scale(g_truth)
    u_work = np.empty(model.p_star)
    u_work[: model.p] = theta

    def fg(eta):
        u_work[model.p :] = eta
        ll, g = model.loglik_grad(u_work)
        return ll, g[model.p :]

    eta, fx, g, conv, it = _bfgs_max(fg, truth.eta.copy(), tol_abs, settings)
    u = np.concatenate([theta, eta])
    return MleResult(ParamVector(u, model.p), fx, float(np.linalg.norm(g)), conv, it)


def profile_loglik(model: QuasiLikelihoodModel, theta,
                   settings: OptimizerSettings = OptimizerSettings()) -> float:
    """Partial maximum of the log-likelihood at fixed target value."""
    return constrained_mle(model, theta, settings).loglik


def profile_fit(model: QuasiLikelihoodModel,
                settings: OptimizerSettings = OptimizerSettings()) -> ProfileFit:
    """Full + constrained solves, Wilks statistic, efficient score, residuals.

    wilks_T = L(ups_hat) - profile L(theta*);
    fisher_residual = || breve-D0 (theta_hat - theta*) - breve-xi ||.
    """
    truth = model.truth()
    info = model.info_pair()
    grad_at_truth = model.grad(truth.values)

    full = full_mle(model, settings)
    cons = constrained_mle(model, truth.theta, settings)
    theta_hat = full.upsilon.theta.copy()
    wilks_T = full.loglik - cons.loglik

    _, xi = efficient_score(info, grad_at_truth)
    D_breve = sym_sqrt(schur_target(info))
    fisher_residual = float(np.linalg.norm(D_breve @ (theta_hat - truth.theta) - xi))

    return ProfileFit(
        upsilon_hat=full.upsilon,
        upsilon_hat_constrained=cons.upsilon,
        theta_hat=theta_hat,
        wilks_T=float(wilks_T),
        xi_breve=xi,
        fisher_residual=fisher_residual,
        converged_full=full.converged,
        converged_constrained=cons.converged,
        loglik_full=full.loglik,
        loglik_constrained=cons.loglik,
    )


def confset_contains(model: QuasiLikelihoodModel, theta, z: float,
                     settings: OptimizerSettings = OptimizerSettings()) -> bool:
    """Likelihood-based confidence set membership: profile excess at theta <= z."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    full = full_mle(model, settings)
    at_theta = constrained_mle(model, theta, settings)
    return (full.loglik - at_theta.loglik) <= z


def critdim_solver(model: CritDimModel,
                   settings: OptimizerSettings = OptimizerSettings()) -> MleResult:
    """Global solver for the bump model: lattice scan, then local polish.

    Candidate (a): for each lattice value v with |v| <= radius, the rest of
    the vector is aligned with the data's tail direction and the resulting
    one-dimensional objective is maximized by golden-section over
    s in [0, sqrt(radius^2 - v^2)] (the bump is exactly 1 there).
    Candidate (b): the unperturbed maximizer X.  The better candidate gets
    at most ``polish_iters`` ascent steps.
    """
    if not isinstance(model, CritDimModel):
        raise TypeError("critdim_solver requires a model built by make_critdim")
    cfg = model.cfg
    # golden-section relies on in-slice concavity, guaranteed for radius < 1/6
    if cfg.radius >= 1.0 / 6.0:
        raise ValueError(
            f"lattice scan needs radius < 1/6 for a unimodal slice objective; "
            f"got radius={cfg.radius:.4f} (reduce p_n/n)"
        )
    X = model.X
    x1 = float(X[0])
    rest = X[1:]
    xr = float(np.linalg.norm(rest))

    cand_b = X.copy()
    ll_b = model.loglik(cand_b)

    if model.bump_enabled:
        v, s, _ = kernels.lattice_scan(x1, xr, cfg.spacing, cfg.radius, settings.gs_tol)
        cand_a = np.zeros_like(X)
        cand_a[0] = v
        if xr > 0.0:
            cand_a[1:] = (s / xr) * rest
        ll_a = model.loglik(cand_a)
        if ll_a >= ll_b:
            winner, ll_w = cand_a, ll_a
        else:
            winner, ll_w = cand_b, ll_b
    else:
        winner, ll_w = cand_b, ll_b

    tol_abs = settings.grad_tol * _grad_scale(model.grad(model.truth().values))
    x, fx, g, conv, it = _bfgs_max(model.loglik_grad, winner, tol_abs, settings,
                                   max_iters=settings.polish_iters)
    if fx < ll_w:  # polish never accepts decreases; guard anyway
        x, fx, g = winner, ll_w, model.grad(winner)
    return MleResult(ParamVector(x, 1), float(fx), float(np.linalg.norm(g)), conv, it)
