"""Quasi-likelihood model contract and the three built-in models.

Built-ins:

* :class:`GaussianShiftModel` -- exact quadratic model, X ~ N(truth, I/n),
  used wherever an exact-law oracle is needed;
* :class:`LogisticModel` -- i.i.d. logistic regression with standard
  Gaussian design, population information computed by a seeded Monte
  Carlo quadrature over the design law;
* :class:`CritDimModel` -- the adversarial bump model whose profile MLE
  loses root-n consistency once p^3/n stops vanishing.

Models are immutable after construction; ``loglik``/``grad`` are pure.
``resample(seed)`` returns a fresh model of the same law, bit-identical
for equal seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .infogeom import BlockInfoPair, schur_target, spectral_norm, sym_inv_sqrt, sym_solve

QUADRATURE_SIZE = 200_000
QUADRATURE_SEED = 74_125_890  # fixed internal seed: information is deterministic


class CapabilityError(RuntimeError):
    """A model lacks an optional capability (e.g. expected_loglik)."""


class ConfigError(ValueError):
    """A model configuration violates a documented precondition."""


@dataclass(frozen=True)
class ParamVector:
    """Full parameter vector with its target/nuisance split index."""

    values: np.ndarray
    p: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", v)
        if not (1 <= self.p <= v.shape[0]):
            raise ValueError(f"split index p={self.p} out of range for length {v.shape[0]}")

    @property
    def p_star(self) -> int:
        return self.values.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return self.values[: self.p]

    @property
    def eta(self) -> np.ndarray:
        return self.values[self.p :]


class QuasiLikelihoodModel:
    """Behavior contract shared by all models.

    Concrete models define ``p_star``, ``p``, ``n``, ``loglik``, ``grad``,
    ``truth``, ``info_pair`` and ``resample``; ``expected_loglik`` is
    optional and guarded by ``has_expected_loglik``.
    """

    p_star: int
    p: int
    n: int

    def loglik(self, upsilon) -> float:
        raise NotImplementedError

    def grad(self, upsilon) -> np.ndarray:
        raise NotImplementedError

    def loglik_grad(self, upsilon):
        """Fused value+gradient; models override when one pass is cheaper."""
        return self.loglik(upsilon), self.grad(upsilon)

    def truth(self) -> ParamVector:
        raise NotImplementedError

    def info_pair(self) -> BlockInfoPair:
        raise NotImplementedError

    def resample(self, seed: int) -> "QuasiLikelihoodModel":
        raise NotImplementedError

    has_expected_loglik = False

    def expected_loglik(self, upsilon) -> float:
        raise CapabilityError(f"{type(self).__name__} provides no expected_loglik")

    def dataset_rows(self):
        """(header, rows) for the line-oriented CSV dataset serialization."""
        raise NotImplementedError

    def _check(self, upsilon) -> np.ndarray:
        u = np.asarray(upsilon, dtype=np.float64).reshape(-1)
        if u.shape[0] != self.p_star:
            raise ValueError(f"parameter must have length {self.p_star}")
        return u


def write_dataset_csv(model: QuasiLikelihoodModel, path) -> None:
    """Persist the model's dataset as one-row-per-observation CSV."""
    header, rows = model.dataset_rows()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


class GaussianShiftModel(QuasiLikelihoodModel):
    """Exact Gaussian shift: L(u) = n X'u - n||u||^2/2 with X ~ N(truth, I/n)."""

    has_expected_loglik = True

    def __init__(self, n: int, truth: ParamVector, seed: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = int(n)
        self._truth = truth
        self.p = truth.p
        self.p_star = truth.p_star
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.X = truth.values + rng.standard_normal(self.p_star) / math.sqrt(self.n)

    def loglik(self, upsilon) -> float:
        u = self._check(upsilon)
        return float(self.n * (self.X @ u - 0.5 * (u @ u)))

    def grad(self, upsilon) -> np.ndarray:
        u = self._check(upsilon)
        return self.n * (self.X - u)

    def expected_loglik(self, upsilon) -> float:
        u = self._check(upsilon)
        return float(self.n * (self._truth.values @ u - 0.5 * (u @ u)))

    def truth(self) -> ParamVector:
        return self._truth

    def info_pair(self) -> BlockInfoPair:
        eye = self.n * np.eye(self.p_star)
        return BlockInfoPair(eye, eye.copy(), self.p)

    def resample(self, seed: int) -> "GaussianShiftModel":
        return GaussianShiftModel(self.n, self._truth, seed)

    def dataset_rows(self):
        header = [f"x_{j + 1}" for j in range(self.p_star)]
        return header, [list(self.X)]


def make_gaussian_shift(n: int, truth: ParamVector, seed: int) -> GaussianShiftModel:
    return GaussianShiftModel(n, truth, seed)


# Quadrature design samples and population information matrices are shared
# across replications: they depend only on (p_star, design, truth), never on
# the realized data.
_QUAD_CACHE: dict = {}
_INFO_CACHE: dict = {}


def _quadrature_sample(p_star: int, design: str, size: int) -> np.ndarray:
    key = (p_star, design, size)
    if key not in _QUAD_CACHE:
        if design != "gauss":
            raise ValueError(f"unknown design spec {design!r} (supported: 'gauss')")
        rng = np.random.default_rng(QUADRATURE_SEED)
        _QUAD_CACHE[key] = rng.standard_normal((size, p_star))
    return _QUAD_CACHE[key]


def _population_fisher(truth: np.ndarray, design: str, size: int) -> np.ndarray:
    """Per-observation information E[w(x'truth) x x'] by fixed-seed quadrature."""
    key = (truth.tobytes(), design, size)
    if key not in _INFO_CACHE:
        Xq = _quadrature_sample(truth.shape[0], design, size)
        z = Xq @ truth
        s = 1.0 / (1.0 + np.exp(-z))
        w = s * (1.0 - s)
        F = (Xq * w[:, None]).T @ Xq / Xq.shape[0]
        _INFO_CACHE[key] = 0.5 * (F + F.T)
    return _INFO_CACHE[key]


class LogisticModel(QuasiLikelihoodModel):
    """i.i.d. logistic regression with a named covariate law.

    loglik(u) = sum_i [y_i x_i'u - log(1 + exp(x_i'u))].  The information
    pair is the population one, n*F with F = E[w(x'truth) x x'] estimated
    by a fixed-seed quadrature over the design law, so D0^2 = V0^2 is
    deterministic across replications (correct specification).
    """

    has_expected_loglik = True

    def __init__(self, n, p, p_star, truth, design_spec="gauss", seed=0,
                 quadrature_size=QUADRATURE_SIZE):
        if n < p_star:
            raise ValueError(f"need n >= p_star, got n={n}, p_star={p_star}")
        t = np.asarray(truth, dtype=np.float64).reshape(-1)
        if t.shape[0] != p_star:
            raise ValueError("truth must have length p_star")
        self.n = int(n)
        self.p = int(p)
        self.p_star = int(p_star)
        self.design = design_spec
        self.seed = int(seed)
        self.quadrature_size = int(quadrature_size)
        self._truth = ParamVector(t, self.p)
        rng = np.random.default_rng(seed)
        if design_spec != "gauss":
            raise ValueError(f"unknown design spec {design_spec!r} (supported: 'gauss')")
        self.X = rng.standard_normal((self.n, self.p_star))
        prob = 1.0 / (1.0 + np.exp(-(self.X @ t)))
        self.y = (rng.random(self.n) < prob).astype(np.float64)

    def loglik(self, upsilon) -> float:
        u = self._check(upsilon)
        ll, _ = kernels.logistic_loglik_grad(self.X, self.y, u)
        return ll

    def grad(self, upsilon) -> np.ndarray:
        u = self._check(upsilon)
        _, g = kernels.logistic_loglik_grad(self.X, self.y, u)
        return g

    def loglik_grad(self, upsilon):
        u = self._check(upsilon)
        return kernels.logistic_loglik_grad(self.X, self.y, u)

    def expected_loglik(self, upsilon) -> float:
        # expectation over (x, y) under the design law and the truth,
        # evaluated on the same fixed quadrature sample as the information
        u = self._check(upsilon)
        Xq = _quadrature_sample(self.p_star, self.design, self.quadrature_size)
        z = Xq @ u
        p_true = 1.0 / (1.0 + np.exp(-(Xq @ self._truth.values)))
        softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
        return float(self.n * np.mean(p_true * z - softplus))

    def truth(self) -> ParamVector:
        return self._truth

    def per_obs_fisher(self) -> np.ndarray:
        return _population_fisher(self._truth.values, self.design, self.quadrature_size)

    def info_pair(self) -> BlockInfoPair:
        F = self.n * self.per_obs_fisher()
        return BlockInfoPair(F, F.copy(), self.p)

    def resample(self, seed: int) -> "LogisticModel":
        return LogisticModel(self.n, self.p, self.p_star, self._truth.values,
                             self.design, seed, self.quadrature_size)

    def dataset_rows(self):
        header = ["y"] + [f"x_{j + 1}" for j in range(self.p_star)]
        rows = [[self.y[i]] + list(self.X[i]) for i in range(self.n)]
        return header, rows


def make_logistic_iid(n, p, p_star, truth, design_spec="gauss", seed=0,
                      quadrature_size=QUADRATURE_SIZE) -> LogisticModel:
    return LogisticModel(n, p, p_star, truth, design_spec, seed, quadrature_size)


@dataclass(frozen=True)
class CritDimConfig:
    """Configuration of the adversarial bump model.

    Derived geometry: beta_n = sqrt(p_n^3/n), lattice spacing
    spacing = 0.5*sqrt(beta_n/n), ball radius
    radius = sqrt(2 p_n/n) + 0.5*sqrt(beta_n/n).  ``delta`` is the
    vicinity width (default 1/n) and ``bump_margin`` the smoothstep
    width (default ``delta``; must not exceed ``delta`` so the bump
    vanishes outside the vicinity, and must stay below the lattice
    spacing so the two-nearest-slices distance is exact on the support).
    """

    n: int
    p_n: int
    seed: int
    delta: float | None = None
    bump_margin: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.p_n < 2:
            raise ConfigError("need n >= 1 and p_n >= 2")
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.n)
        if self.bump_margin is None:
            object.__setattr__(self, "bump_margin", self.delta)
        if not (0.0 < self.bump_margin <= self.delta):
            raise ConfigError("bump_margin must lie in (0, delta]")
        if self.bump_margin > self.spacing:
            raise ConfigError(
                f"bump_margin {self.bump_margin:.3e} exceeds the lattice spacing "
                f"{self.spacing:.3e}; the bump support would overlap adjacent slices"
            )

    @property
    def beta_n(self) -> float:
        return math.sqrt(self.p_n**3 / self.n)

    @property
    def spacing(self) -> float:
        return 0.5 * math.sqrt(self.beta_n / self.n)

    @property
    def radius(self) -> float:
        return math.sqrt(2.0 * self.p_n / self.n) + 0.5 * math.sqrt(self.beta_n / self.n)


# Theorem premise: (2^{1/3}-1)/2^{1/6} * sqrt(p_n/n) >= (1/2) (p_n/n)^{3/4}
_PREMISE_CONST = (2.0 ** (1.0 / 3.0) - 1.0) / 2.0 ** (1.0 / 6.0)


def critdim_premise_holds(n: int, p_n: int) -> bool:
    ratio = p_n / n
    return _PREMISE_CONST * math.sqrt(ratio) >= 0.5 * ratio**0.75


class CritDimModel(QuasiLikelihoodModel):
    """Bump-perturbed Gaussian model around the lattice-sliced ball.

    L(u) = n X'u - n||u||^2/2 + n f(u) ||u||^3 with f the quintic
    smoothstep of the normalized distance to the lattice-sliced ball
    (f = 1 on the set, 0 at distance >= bump_margin).  The truth is 0,
    the target is the first coordinate, and D0^2 = V0^2 = n I.
    """

    has_expected_loglik = True

    def __init__(self, cfg: CritDimConfig, bump_enabled: bool = True):
        if not critdim_premise_holds(cfg.n, cfg.p_n):
            ratio = cfg.p_n / cfg.n
            raise ConfigError(
                "critical-dimension premise violated: need "
                f"{_PREMISE_CONST:.6f}*sqrt(p_n/n) >= 0.5*(p_n/n)^(3/4); "
                f"got lhs={_PREMISE_CONST * math.sqrt(ratio):.6e}, "
                f"rhs={0.5 * ratio ** 0.75:.6e} for n={cfg.n}, p_n={cfg.p_n}"
            )
        self.cfg = cfg
        self.bump_enabled = bool(bump_enabled)
        self.n = cfg.n
        self.p = 1
        self.p_star = cfg.p_n
        self.seed = cfg.seed
        rng = np.random.default_rng(cfg.seed)
        self.X = rng.standard_normal(self.p_star) / math.sqrt(self.n)

    def _bump(self, u):
        if not self.bump_enabled:
            return 0.0, 0.0, 0.0
        rrest = float(np.linalg.norm(u[1:]))
        return kernels.bump_and_partials(
            float(u[0]), rrest, self.cfg.spacing, self.cfg.radius, self.cfg.bump_margin
        )

    def loglik(self, upsilon) -> float:
        u = self._check(upsilon)
        f, _, _ = self._bump(u)
        nrm = float(np.linalg.norm(u))
        return float(self.n * (self.X @ u - 0.5 * nrm * nrm + f * nrm**3))

    def grad(self, upsilon) -> np.ndarray:
        u = self._check(upsilon)
        return self._grad_from_bump(u, self._bump(u), float(np.linalg.norm(u)))

    def _grad_from_bump(self, u, bump, nrm) -> np.ndarray:
        f, df_du1, df_drest = bump
        g = self.n * (self.X - u)
        if nrm > 0.0 and self.bump_enabled:
            g += self.n * f * 3.0 * nrm * u
            if df_du1 != 0.0 or df_drest != 0.0:
                gf = np.zeros_like(u)
                gf[0] = df_du1
                rrest = float(np.linalg.norm(u[1:]))
                if rrest > 0.0 and df_drest != 0.0:
                    gf[1:] = df_drest * u[1:] / rrest
                g += self.n * nrm**3 * gf
        return g

    def loglik_grad(self, upsilon):
        u = self._check(upsilon)
        bump = self._bump(u)
        nrm = float(np.linalg.norm(u))
        f = bump[0]
        ll = float(self.n * (self.X @ u - 0.5 * nrm * nrm + f * nrm**3))
        return ll, self._grad_from_bump(u, bump, nrm)

    def expected_loglik(self, upsilon) -> float:
        u = self._check(upsilon)
        f, _, _ = self._bump(u)
        nrm = float(np.linalg.norm(u))
        return float(self.n * (-0.5 * nrm * nrm + f * nrm**3))

    def truth(self) -> ParamVector:
        return ParamVector(np.zeros(self.p_star), 1)

    def info_pair(self) -> BlockInfoPair:
        eye = self.n * np.eye(self.p_star)
        return BlockInfoPair(eye, eye.copy(), 1)

    def resample(self, seed: int) -> "CritDimModel":
        cfg = CritDimConfig(self.cfg.n, self.cfg.p_n, seed, self.cfg.delta,
                            self.cfg.bump_margin)
        return CritDimModel(cfg, self.bump_enabled)

    def dataset_rows(self):
        header = [f"x_{j + 1}" for j in range(self.p_star)]
        return header, [list(self.X)]


def make_critdim(cfg: CritDimConfig, bump_enabled: bool = True) -> CritDimModel:
    return CritDimModel(cfg, bump_enabled)


def fisher_blocks_iid(model: QuasiLikelihoodModel):
    """Per-observation information pair and its efficient-information block.

    Returns (F, F_breve) where F carries the per-observation matrices
    (info_pair of the model divided by n on both slots) and F_breve is
    the Schur complement of F's nuisance block.
    """
    if not hasattr(model, "n"):
        raise CapabilityError("per-observation information needs an i.i.d. model with n")
    info = model.info_pair()
    F = BlockInfoPair(info.D2 / model.n, info.V2 / model.n, info.p)
    return F, schur_target(F)


def check_iota(F: BlockInfoPair) -> float:
    """Spectral norm of Ftt^{-1/2} Fte Fee^{-1} Fte' Ftt^{-1/2} (condition iota)."""
    if F.p1 == 0:
        return 0.0
    Ftt_is = sym_inv_sqrt(F.Dtt2, name="target block F_theta_theta")
    M = F.A @ sym_solve(F.H2, F.A.T, name="nuisance block F_eta_eta")
    return spectral_norm(Ftt_is @ M @ Ftt_is)
