"""Bracketing machinery: sandwich matrices, excess terms, spread, and
empirical estimation of the smoothness functions delta(r), omega(r).

The bracketing device replaces the log-likelihood ratio on a local set by
two explicit quadratic processes with curvature matrices
D_up^2 = D0^2 (1-delta) - rho V0^2 and D_dn^2 = D0^2 (1+delta) + rho V0^2
(and H analogues on the nuisance block).  Everything downstream --
diamond excess terms, the tau quantities, error magnitudes and the total
spread -- is closed-form arithmetic on those matrices and the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .infogeom import (
    BlockInfoPair,
    as_sym,
    min_eig,
    spectral_norm,
    sym_inv_sqrt,
    sym_solve,
    sym_sqrt,
)
from .model import ParamVector, QuasiLikelihoodModel


class ApplicabilityError(ValueError):
    """A theorem hypothesis fails (e.g. tau >= 1), the bound does not apply."""


@dataclass(frozen=True)
class BracketParams:
    """Constants of the local/global conditions feeding the certificates."""

    r0: float
    nu0: float = 1.0
    a: float = 1.0
    g: float = 1.0
    b: float = 0.5
    x: float = 1.0
    delta: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        for name in ("r0", "nu0", "a", "g", "b", "x"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.delta < 0 or self.rho < 0:
            raise ValueError("delta and rho must be nonnegative")


@dataclass(frozen=True)
class SmoothnessTable:
    """Grid of empirical smoothness bounds delta(r), omega(r).

    Radii must be strictly increasing and positive; omega is capped by the
    sub-Gaussianity premise omega(r) <= 1/2.  Lookup interpolates linearly
    and refuses to extrapolate.
    """

    radii: np.ndarray
    delta_of_r: np.ndarray
    omega_of_r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        d = np.asarray(self.delta_of_r, dtype=np.float64).reshape(-1)
        w = np.asarray(self.omega_of_r, dtype=np.float64).reshape(-1)
        if not (r.shape == d.shape == w.shape):
            raise ValueError("radii, delta_of_r, omega_of_r must share length")
        if r.size and (np.any(r <= 0) or np.any(np.diff(r) <= 0)):
            raise ValueError("radii must be positive and strictly increasing")
        if np.any(d < 0) or np.any(w < 0):
            raise ValueError("delta(r), omega(r) must be nonnegative")
        if np.any(w > 0.5):
            raise ValueError("omega(r) must not exceed 1/2")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "delta_of_r", d)
        object.__setattr__(self, "omega_of_r", w)

    def _interp(self, col, r):
        if self.radii.size == 0:
            raise ValueError("empty smoothness table")
        if not (self.radii[0] <= r <= self.radii[-1]):
            raise ValueError(
                f"r={r:g} outside table range [{self.radii[0]:g}, {self.radii[-1]:g}]; "
                "extrapolation is forbidden"
            )
        return float(np.interp(r, self.radii, col))

    def delta_at(self, r: float) -> float:
        return self._interp(self.delta_of_r, r)

    def omega_at(self, r: float) -> float:
        return self._interp(self.omega_of_r, r)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("r,delta_r,omega_r\n")
            for r, d, w in zip(self.radii, self.delta_of_r, self.omega_of_r):
                fh.write(f"{r!r},{d!r},{w!r}\n")

    @classmethod
    def from_csv(cls, path) -> "SmoothnessTable":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "r,delta_r,omega_r":
                raise ValueError(f"unexpected smoothness CSV header: {header!r}")
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(tok) for tok in line.split(",")])
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


@dataclass(frozen=True)
class BracketMatrices:
    d_up2: np.ndarray
    d_dn2: np.ndarray
    h_up2: np.ndarray
    h_dn2: np.ndarray
    d_up_psd: bool
    h_up_psd: bool


def bracket_matrices(info: BlockInfoPair, delta: float, rho: float) -> BracketMatrices:
    """Upper/lower bracketing curvature matrices and their PSD applicability flags.

    d_up2 = D0^2 (1-delta) - rho V0^2   (upper bracket, flatter curvature)
    d_dn2 = D0^2 (1+delta) + rho V0^2   (lower bracket)
    and the nuisance-block analogues.  A non-PSD upper matrix is reported
    through the flag, never raised: it just means the sandwich theorem
    does not apply at this (delta, rho).
    """
    d_up2 = as_sym(info.D2 * (1.0 - delta) - rho * info.V2)
    d_dn2 = as_sym(info.D2 * (1.0 + delta) + rho * info.V2)
    h_up2 = as_sym(info.H2 * (1.0 - delta) - rho * info.Q2)
    h_dn2 = as_sym(info.H2 * (1.0 + delta) + rho * info.Q2)
    tol = 1e-12
    d_ok = d_up2.size == 0 or min_eig(d_up2) >= -tol * max(spectral_norm(d_up2), 1.0)
    h_ok = h_up2.size == 0 or min_eig(h_up2) >= -tol * max(spectral_norm(h_up2), 1.0)
    return BracketMatrices(d_up2, d_dn2, h_up2, h_dn2, d_ok, h_ok)


def bracket_eval(upsilon, truth, grad_at_truth, D2_variant) -> float:
    """Quadratic bracket process (u - u*)' grad - ||D (u - u*)||^2 / 2."""
    u = np.asarray(upsilon, dtype=np.float64).reshape(-1)
    t = truth.values if isinstance(truth, ParamVector) else np.asarray(truth, dtype=np.float64).reshape(-1)
    g = np.asarray(grad_at_truth, dtype=np.float64).reshape(-1)
    D2 = as_sym(D2_variant)
    if not (u.shape == t.shape == g.shape and D2.shape[0] == u.shape[0]):
        raise ValueError("dimension mismatch in bracket_eval")
    w = u - t
    return float(w @ g - 0.5 * (w @ D2 @ w))


def _quad_inv(M2, vec, name) -> float:
    """v' M2^{-1} v for positive definite M2 (= squared M^{-1}-norm of v)."""
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return 0.0
    M2 = as_sym(M2)
    if min_eig(M2) <= 0.0:
        from .infogeom import NumericalRankError

        raise NumericalRankError(f"{name} must be positive definite")
    return float(v @ sym_solve(M2, v, name=name))


def sup_bracket(D2_variant, grad) -> float:
    """Unconstrained maximum of the bracket process: ||D^{-1} grad||^2 / 2."""
    return 0.5 * _quad_inv(D2_variant, grad, "bracket matrix")


def sup_bracket_constrained(H2_variant, grad_eta) -> float:
    """Maximum subject to the pinned target: ||H^{-1} grad_eta||^2 / 2."""
    return 0.5 * _quad_inv(H2_variant, grad_eta, "nuisance bracket matrix")


def tau_smooth(params: BracketParams, table: SmoothnessTable) -> float:
    """Smoothness-form tau: delta(r0) + 3 nu0 a^2 omega(r0)."""
    return table.delta_at(params.r0) + 3.0 * params.nu0 * params.a**2 * table.omega_at(params.r0)


@dataclass(frozen=True)
class TauMatrix:
    tau: float
    alpha_up: float
    alpha_dn: float
    finite: bool


def tau_matrix(delta: float, rho: float, a: float) -> TauMatrix:
    """Matrix-form tau = delta + rho/a^2 with the alpha bounds it implies.

    alpha_up <= tau/(1-tau) blows up as tau -> 1; that case is reported
    through ``finite=False`` with an infinite alpha_up.
    """
    tau = delta + rho / a**2
    if tau >= 1.0:
        return TauMatrix(tau, math.inf, tau / (1.0 + tau), False)
    return TauMatrix(tau, tau / (1.0 - tau), tau / (1.0 + tau), True)


@dataclass(frozen=True)
class ExcessTerms:
    diamond_up: float
    diamond_dn: float
    diamond_up_eta: float
    diamond_dn_eta: float


def excess_terms(info: BlockInfoPair, delta: float, rho: float, grad) -> ExcessTerms:
    """Half-differences of quadratic sup values between bracket and base matrices.

    2*diamond_up = ||D_up^{-1} grad||^2 - ||D0^{-1} grad||^2, etc.  Each term
    is checked against its alpha bound (alpha computed exactly from the
    matrices, alpha_up = ||D0 D_up^{-2} D0 - I||_inf); a violation raises
    AssertionError since it can only arise from a broken implementation.
    """
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    if g.shape[0] != info.p_star:
        raise ValueError(f"gradient must have length {info.p_star}")
    g_eta = g[info.p :]
    bm = bracket_matrices(info, delta, rho)

    q0 = _quad_inv(info.D2, g, "D0^2")
    q_up = _quad_inv(bm.d_up2, g, "D_up^2")
    q_dn = _quad_inv(bm.d_dn2, g, "D_dn^2")
    d_up = 0.5 * (q_up - q0)
    d_dn = 0.5 * (q0 - q_dn)

    if info.p1 > 0:
        q0_eta = _quad_inv(info.H2, g_eta, "H0^2")
        e_up = 0.5 * (_quad_inv(bm.h_up2, g_eta, "H_up^2") - q0_eta)
        e_dn = 0.5 * (q0_eta - _quad_inv(bm.h_dn2, g_eta, "H_dn^2"))
    else:
        q0_eta = e_up = e_dn = 0.0

    D0 = sym_sqrt(info.D2)
    eye = np.eye(info.p_star)
    alpha_up = spectral_norm(D0 @ sym_solve(bm.d_up2, D0, name="D_up^2") - eye)
    alpha_dn = spectral_norm(eye - D0 @ sym_solve(bm.d_dn2, D0, name="D_dn^2"))
    slack = 1e-8 * (1.0 + q0)
    assert 2.0 * d_up <= alpha_up * q0 + slack, "excess exceeds its alpha bound"
    assert 2.0 * d_dn <= alpha_dn * q0 + slack, "excess exceeds its alpha bound"
    if info.p1 > 0:
        H0 = sym_sqrt(info.H2)
        eye1 = np.eye(info.p1)
        a_up_eta = spectral_norm(H0 @ sym_solve(bm.h_up2, H0, name="H_up^2") - eye1)
        a_dn_eta = spectral_norm(eye1 - H0 @ sym_solve(bm.h_dn2, H0, name="H_dn^2"))
        slack_eta = 1e-8 * (1.0 + q0_eta)
        assert 2.0 * e_up <= a_up_eta * q0_eta + slack_eta, "eta excess exceeds its alpha bound"
        assert 2.0 * e_dn <= a_dn_eta * q0_eta + slack_eta, "eta excess exceeds its alpha bound"

    return ExcessTerms(d_up, d_dn, e_up, e_dn)


def err_bound(p_star: int, x: float, rho: float, g: float, nu0: float) -> float:
    """Bracketing error magnitude rho * z(Q, x) with Q = 2.4 p*.

    z(Q, x) = (1 + sqrt(x+Q))^2 when 1 + sqrt(x+Q) < g/nu0, otherwise
    {1 + (nu0/g)(x+Q) + g/(2 nu0)}^2.
    """
    if g <= 0 or nu0 <= 0:
        raise ValueError("g and nu0 must be strictly positive")
    Q = 2.4 * p_star
    t = 1.0 + math.sqrt(x + Q)
    if t < g / nu0:
        z = t * t
    else:
        z = (1.0 + (nu0 / g) * (x + Q) + g / (2.0 * nu0)) ** 2
    return rho * z


def err_bound_report(p_star: int, x: float, rho: float, g: float, nu0: float):
    """(value, z, equivalent C) where C back-solves z = C (p* + x); reporting only."""
    val = err_bound(p_star, x, rho, g, nu0)
    z = val / rho if rho > 0 else err_bound(p_star, x, 1.0, g, nu0)
    return val, z, z / (p_star + x)


def spread(info: BlockInfoPair, params: BracketParams, table: SmoothnessTable, grad) -> float:
    """Total semiparametric spread at the minimal Theorem-B.1 choices.

    With tau = tau_smooth, rho = 3 nu0 omega(r0) and delta = delta(r0):
    Delta = 2 err_up + 2 err_dn + (2 tau / (1 - tau^2)) *
            (||D0^{-1} grad||^2 + ||H0^{-1} grad_eta||^2).
    """
    tau = tau_smooth(params, table)
    if tau >= 1.0:
        raise ApplicabilityError(f"tau={tau:g} >= 1: the spread bound does not apply")
    rho = 3.0 * params.nu0 * table.omega_at(params.r0)
    err = err_bound(info.p_star, params.x, rho, params.g, params.nu0)
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    q_full = _quad_inv(info.D2, g, "D0^2")
    q_eta = _quad_inv(info.H2, g[info.p :], "H0^2") if info.p1 > 0 else 0.0
    return 4.0 * err + (2.0 * tau / (1.0 - tau * tau)) * (q_full + q_eta)


@dataclass(frozen=True)
class ConcentrationEvent:
    full_in: bool
    constrained_in: bool
    score_in: bool
    score_eta_in: bool

    @property
    def all_in(self) -> bool:
        return self.full_in and self.constrained_in and self.score_in and self.score_eta_in


def concentration_event(info: BlockInfoPair, r: float, fit, grad, truth: ParamVector,
                        delta: float = 0.0, rho: float = 0.0) -> ConcentrationEvent:
    """The four clauses of the concentration event at radius r.

    ||V0 (ups_hat - ups*)|| <= r,  ||V0 (ups_hat_constrained - ups*)|| <= r,
    ||V0 D_dn^{-2} grad|| <= r,    ||Q0 H_dn^{-2} grad_eta|| <= r,
    with the lower-bracket matrices at (delta, rho) (defaults 0, 0 -> D0, H0).
    """
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    V0 = sym_sqrt(info.V2)
    bm = bracket_matrices(info, delta, rho)
    w_full = fit.upsilon_hat.values - truth.values
    w_cons = fit.upsilon_hat_constrained.values - truth.values
    c1 = float(np.linalg.norm(V0 @ w_full)) <= r
    c2 = float(np.linalg.norm(V0 @ w_cons)) <= r
    c3 = float(np.linalg.norm(V0 @ sym_solve(bm.d_dn2, g, name="D_dn^2"))) <= r
    if info.p1 > 0:
        Q0 = sym_sqrt(info.Q2)
        c4 = float(np.linalg.norm(Q0 @ sym_solve(bm.h_dn2, g[info.p :], name="H_dn^2"))) <= r
    else:
        c4 = True
    return ConcentrationEvent(c1, c2, c3, c4)


# ---------------------------------------------------------------------------
# empirical smoothness estimation
# ---------------------------------------------------------------------------

_FD_STEP = 1e-5
_RESAMPLE_DEFAULT = 200

# integer namespaces for derived seed sequences (SeedSequence wants ints)
_NS_EGRAD, _NS_DELTA, _NS_OMEGA, _NS_OMEGA_DS = 101, 102, 103, 104


def _expected_grad(model: QuasiLikelihoodModel, upsilon, n_resample: int, seed_key) -> np.ndarray:
    """Gradient of E L at upsilon.

    Central finite differences of expected_loglik when the model provides
    it; otherwise the mean gradient over ``n_resample`` resampled datasets
    (the exact gradient of the resample-averaged log-likelihood).
    """
    u = np.asarray(upsilon, dtype=np.float64).reshape(-1)
    if model.has_expected_loglik:
        g = np.empty_like(u)
        for i in range(u.shape[0]):
            h = _FD_STEP * (1.0 + abs(u[i]))
            up = u.copy()
            up[i] += h
            dn = u.copy()
            dn[i] -= h
            g[i] = (model.expected_loglik(up) - model.expected_loglik(dn)) / (2.0 * h)
        return g
    acc = np.zeros_like(u)
    for k in range(n_resample):
        rng = np.random.default_rng((_NS_EGRAD, *seed_key, k))
        acc += model.resample(int(rng.integers(2**63))).grad(u)
    return acc / n_resample


def _sphere_point(truth, V0_inv, r, rng):
    d = truth.shape[0]
    gdir = rng.standard_normal(d)
    gdir /= np.linalg.norm(gdir)
    return truth + r * (V0_inv @ gdir)


def empirical_delta(model: QuasiLikelihoodModel, radii, n_dirs: int,
                    seed: int = 0, n_resample: int = _RESAMPLE_DEFAULT) -> np.ndarray:
    """Empirical (L0) bound per radius.

    delta_hat(r) = max over n_dirs points with ||V0 (u - u*)|| = r of
    ||grad E L(u) + D0^2 (u - u*)|| / ||D0 (u - u*)||.
    """
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if radii.size == 0:
        return np.empty(0)
    info = model.info_pair()
    truth = model.truth().values
    V0_inv = sym_inv_sqrt(info.V2, name="V0^2")
    D0 = sym_sqrt(info.D2)
    out = np.empty(radii.size)
    for i, r in enumerate(radii):
        worst = 0.0
        for j in range(n_dirs):
            rng = np.random.default_rng((_NS_DELTA, seed, i, j))
            u = _sphere_point(truth, V0_inv, r, rng)
            w = u - truth
            eg = _expected_grad(model, u, n_resample, (seed, i, j))
            ratio = float(np.linalg.norm(eg + info.D2 @ w) / np.linalg.norm(D0 @ w))
            worst = max(worst, ratio)
        out[i] = worst
    return out


def empirical_omega(model: QuasiLikelihoodModel, radii, n_dirs: int,
                    n_resample: int = 32, seed: int = 0, nu0: float = 1.0,
                    n_expected_resample: int = _RESAMPLE_DEFAULT) -> np.ndarray:
    """Empirical (ED1) scale per radius.

    omega_hat(r) = (1/nu0) max over sampled points and resampled datasets of
    ||V0^{-1} (grad zeta(u) - grad zeta(u*))|| with zeta = L - E L: the exact
    normalized-increment norm, a conservative surrogate for the sub-Gaussian
    constant (exact for linear scores).
    """
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if radii.size == 0:
        return np.empty(0)
    info = model.info_pair()
    truth = model.truth().values
    V0_inv = sym_inv_sqrt(info.V2, name="V0^2")
    eg_truth = _expected_grad(model, truth, n_expected_resample, (seed, 0, 0))
    datasets = []
    for k in range(n_resample):
        rng_k = np.random.default_rng((_NS_OMEGA_DS, seed, k))
        m_k = model.resample(int(rng_k.integers(2**63)))
        datasets.append((m_k, m_k.grad(truth) - eg_truth))
    out = np.empty(radii.size)
    for i, r in enumerate(radii):
        worst = 0.0
        for j in range(n_dirs):
            rng = np.random.default_rng((_NS_OMEGA, seed, i, j))
            u = _sphere_point(truth, V0_inv, r, rng)
            eg_u = _expected_grad(model, u, n_expected_resample, (seed, i + 1, j + 1))
            for m_k, zeta_truth in datasets:
                inc = (m_k.grad(u) - eg_u) - zeta_truth
                worst = max(worst, float(np.linalg.norm(V0_inv @ inc)))
        out[i] = worst / nu0
    return out
