"""Seeded, parallel Monte Carlo studies of the profile-likelihood phenomena.

Replication discipline: every replication derives its own 64-bit seed as
``split_seed(master_seed, n_index, rep_index)`` (splitmix64 mixing), builds
its model and runs from scratch.  Execution order therefore cannot affect
any row, replications can run on a thread pool of any size, and adding
replications never changes earlier rows.

Reports persist as a pair: ``rows.csv`` (one row per replication, the
column order below) and ``summary.json`` (verdicts, quantiles, config
echo, library version, master seed).  Summaries are recomputable from the
persisted rows via the same ``summarize_rows`` used at run time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .brackets import (
    ApplicabilityError,
    BracketParams,
    SmoothnessTable,
    concentration_event,
    empirical_delta,
    empirical_omega,
    spread,
)
from .brackets import tau_smooth
from .deviation import chi2_cdf, chi2_quantile, gauss_cdf, r0_rule
from .estimator import OptimizerSettings, critdim_solver, profile_fit
from .infogeom import efficient_score, identifiability_report
from .model import (
    CritDimConfig,
    GaussianShiftModel,
    LogisticModel,
    ParamVector,
    critdim_premise_holds,
    make_critdim,
)

VERSION = "0.1.0"

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_TABLE_TAG = 0x5CAB1E  # rep-index namespace for per-n non-replication draws


def _splitmix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def split_seed(master_seed: int, n_index: int, rep_index: int) -> int:
    """Per-replication seed: two splitmix64 rounds over the indices."""
    z = (master_seed + _SPLITMIX_GAMMA * (n_index + 1)) & _MASK64
    z = _splitmix64(z)
    z = (z + _SPLITMIX_GAMMA * (rep_index + 1)) & _MASK64
    return _splitmix64(z)


def _truth_recipe(p_star: int, p: int, scale: float) -> ParamVector:
    vals = scale * np.array([(-1.0) ** j / math.sqrt(1.0 + j) for j in range(p_star)])
    return ParamVector(vals, p)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model_kind: str = "gauss"
    n_schedule: tuple = (2000,)
    p: int = 2
    p_star: int = 10
    replications: int = 2000
    master_seed: int = 0
    x: float | None = None          # confidence parameter; None -> log(n)
    alpha: float = 0.05
    thread_hint: int = 1
    truth_scale: float = 0.5
    ks_margin: float | None = None  # None -> 0.0045 exact-law, 0.0195 Monte Carlo
    trend_factor: float = 2.0
    nu0: float = 1.0
    b: float = 0.5
    g: float | None = None          # None -> 0.5 sqrt(n)
    regimes: tuple = ("to_zero", "const", "to_inf")
    beta_const: float = 1.0
    bump_enabled: bool = True
    radii: tuple | None = None      # None -> 4 points up to r0
    n_dirs: int = 16
    n_resample: int = 16

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        sched = tuple(int(n) for n in self.n_schedule)
        if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("n_schedule must be nonempty and strictly increasing")
        object.__setattr__(self, "n_schedule", sched)
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if self.radii is not None:
            object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))

    def x_at(self, n: int) -> float:
        return float(self.x) if self.x is not None else math.log(n)

    def g_at(self, n: int) -> float:
        return float(self.g) if self.g is not None else 0.5 * math.sqrt(n)


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    columns: tuple
    rows: tuple
    summary: dict
    config: dict
    master_seed: int


def _build_model(cfg: ExperimentConfig, n: int, seed: int):
    truth = _truth_recipe(cfg.p_star, cfg.p, cfg.truth_scale)
    if cfg.model_kind == "gauss":
        return GaussianShiftModel(n, truth, seed)
    if cfg.model_kind == "logistic":
        return LogisticModel(n, cfg.p, cfg.p_star, truth.values, "gauss", seed)
    raise ValueError(f"unknown model kind {cfg.model_kind!r}")


def _run_tasks(tasks, worker, thread_hint: int):
    """Run tasks (any order), return results sorted by task key."""
    if thread_hint > 1:
        with ThreadPoolExecutor(max_workers=thread_hint) as pool:
            out = list(pool.map(worker, tasks))
    else:
        out = [worker(t) for t in tasks]
    out.sort(key=lambda kv: kv[0])
    return [v for _, v in out]


def ks_distance(sample, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance against a reference CDF."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    m = x.size
    F = np.array([cdf(v) for v in x])
    i = np.arange(1, m + 1)
    return float(np.max(np.maximum(i / m - F, F - (i - 1) / m)))


def _ks_budget(cfg: ExperimentConfig, m: int) -> float:
    if m <= 0:
        return math.inf
    margin = cfg.ks_margin
    if margin is None:
        margin = 0.0045 if cfg.model_kind == "gauss" else 0.0195
    return 1.36 / math.sqrt(m) + margin


def _clean(x):
    """Summaries carry None instead of NaN/inf so JSON stays strict and
    recompute-equality comparisons are well defined."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


_QUANTILE_LEVELS = (0.5, 0.75, 0.9, 0.95, 0.99)


def _col(columns, rows, name):
    j = columns.index(name)
    return np.array([row[j] for row in rows], dtype=np.float64)


def _included(columns, rows):
    j = columns.index("converged")
    return [row for row in rows if row[j]]


# ---------------------------------------------------------------------------
# profile-fit experiments (wilks / fisher share rows)
# ---------------------------------------------------------------------------

PROFILE_COLUMNS = (
    "n", "rep", "seed", "wilks_T", "xi_sq", "fisher_residual",
    "conc_full", "conc_constrained", "conc_score", "conc_score_eta", "converged",
)


def _profile_row(cfg: ExperimentConfig, n_index: int, n: int, rep: int):
    seed = split_seed(cfg.master_seed, n_index, rep)
    model = _build_model(cfg, n, seed)
    settings = OptimizerSettings()
    fit = profile_fit(model, settings)
    info = model.info_pair()
    truth = model.truth()
    grad = model.grad(truth.values)
    r = r0_rule(cfg.nu0, cfg.b, cfg.x_at(n), cfg.p_star)
    ev = concentration_event(info, r, fit, grad, truth)
    xi_sq = float(fit.xi_breve @ fit.xi_breve)
    return (
        n, rep, seed, fit.wilks_T, xi_sq, fit.fisher_residual,
        ev.full_in, ev.constrained_in, ev.score_in, ev.score_eta_in,
        fit.converged_full and fit.converged_constrained,
    )


def _profile_rows(cfg: ExperimentConfig):
    tasks = [
        (n_index, n, rep)
        for n_index, n in enumerate(cfg.n_schedule)
        for rep in range(cfg.replications)
    ]

    def worker(task):
        n_index, n, rep = task
        return (n_index, rep), _profile_row(cfg, n_index, n, rep)

    return _run_tasks(tasks, worker, cfg.thread_hint)


def summarize_wilks(columns, rows, cfg: ExperimentConfig) -> dict:
    per_n = {}
    ok = True
    for n in cfg.n_schedule:
        sub = [r for r in rows if r[columns.index("n")] == n]
        inc = _included(columns, sub)
        excluded = len(sub) - len(inc)
        m = len(inc)
        t2 = 2.0 * _col(columns, inc, "wilks_T")
        xi_sq = _col(columns, inc, "xi_sq")
        ks = ks_distance(t2, lambda z: chi2_cdf(z, cfg.p)) if m else math.inf
        budget = _ks_budget(cfg, m)
        quantiles = {str(q): _clean(float(np.quantile(t2, q)) if m else math.nan)
                     for q in _QUANTILE_LEVELS}
        verdict_ks = ks <= budget
        verdict_excl = excluded <= 0.01 * len(sub)
        ok = ok and verdict_ks and verdict_excl
        per_n[str(n)] = {
            "m_included": m,
            "excluded": excluded,
            "ks_2T_chi2": _clean(ks),
            "ks_budget": _clean(budget),
            "max_quad_gap": _clean(float(np.max(np.abs(t2 - xi_sq))) if m else math.nan),
            "quantiles_2T": quantiles,
            "conc_frequency": _clean(float(np.mean([
                r[columns.index("conc_full")] and r[columns.index("conc_constrained")]
                and r[columns.index("conc_score")] and r[columns.index("conc_score_eta")]
                for r in inc])) if m else math.nan),
            "verdict_ks": verdict_ks,
            "verdict_exclusions": verdict_excl,
        }
    return {"per_n": per_n, "pass": ok}


def summarize_fisher(columns, rows, cfg: ExperimentConfig) -> dict:
    per_n = {}
    ratios = []
    ok = True
    for n in cfg.n_schedule:
        sub = [r for r in rows if r[columns.index("n")] == n]
        inc = _included(columns, sub)
        excluded = len(sub) - len(inc)
        res2 = _col(columns, inc, "fisher_residual") ** 2
        beta_n = (cfg.p_star + cfg.x_at(n)) ** 1.5 / math.sqrt(n)
        med = float(np.median(res2)) if len(inc) else math.nan
        ratio = med / beta_n
        ratios.append(ratio)
        verdict_excl = excluded <= 0.01 * len(sub)
        ok = ok and verdict_excl
        per_n[str(n)] = {
            "m_included": len(inc),
            "excluded": excluded,
            "median_residual_sq": _clean(med),
            "beta_n": beta_n,
            "ratio": _clean(ratio),
            "verdict_exclusions": verdict_excl,
        }
    trend_ok = all(
        ratios[i + 1] <= cfg.trend_factor * ratios[i] for i in range(len(ratios) - 1)
    )
    return {"per_n": per_n, "ratios": [_clean(r) for r in ratios],
            "verdict_trend": trend_ok, "trend_factor": cfg.trend_factor,
            "pass": ok and trend_ok}


def run_wilks(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="wilks")
    rows = _profile_rows(cfg)
    summary = summarize_wilks(PROFILE_COLUMNS, rows, cfg)
    return ExperimentReport("wilks", PROFILE_COLUMNS, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


def run_fisher(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="fisher")
    rows = _profile_rows(cfg)
    summary = summarize_fisher(PROFILE_COLUMNS, rows, cfg)
    return ExperimentReport("fisher", PROFILE_COLUMNS, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

COVERAGE_COLUMNS = ("n", "rep", "seed", "excess", "covered", "converged")


def run_coverage(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="coverage")
    z = 0.5 * chi2_quantile(1.0 - cfg.alpha, cfg.p)

    def worker(task):
        n_index, n, rep = task
        seed = split_seed(cfg.master_seed, n_index, rep)
        model = _build_model(cfg, n, seed)
        fit = profile_fit(model, OptimizerSettings())
        excess = fit.wilks_T  # profile excess at the truth
        return (n_index, rep), (
            n, rep, seed, excess, excess <= z,
            fit.converged_full and fit.converged_constrained,
        )

    tasks = [(i, n, rep) for i, n in enumerate(cfg.n_schedule)
             for rep in range(cfg.replications)]
    rows = _run_tasks(tasks, worker, cfg.thread_hint)
    summary = summarize_coverage(COVERAGE_COLUMNS, rows, cfg)
    return ExperimentReport("coverage", COVERAGE_COLUMNS, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


def summarize_coverage(columns, rows, cfg: ExperimentConfig) -> dict:
    z = 0.5 * chi2_quantile(1.0 - cfg.alpha, cfg.p)
    target = 1.0 - cfg.alpha
    per_n = {}
    ok = True
    for n in cfg.n_schedule:
        sub = [r for r in rows if r[columns.index("n")] == n]
        inc = _included(columns, sub)
        excluded = len(sub) - len(inc)
        m = len(inc)
        cov = float(np.mean(_col(columns, inc, "covered"))) if m else math.nan
        se = math.sqrt(target * (1.0 - target) / m) if m else math.inf
        tol = 0.02 + 3.0 * se
        verdict = abs(cov - target) <= tol
        verdict_excl = excluded <= 0.01 * len(sub)
        ok = ok and verdict and verdict_excl
        per_n[str(n)] = {
            "m_included": m,
            "excluded": excluded,
            "coverage": _clean(cov),
            "z": z,
            "target": target,
            "tolerance": _clean(tol),
            "verdict_coverage": verdict,
            "verdict_exclusions": verdict_excl,
        }
    return {"per_n": per_n, "pass": ok}


# ---------------------------------------------------------------------------
# normality of the efficient score (no optimization)
# ---------------------------------------------------------------------------


def _normality_columns(p: int):
    return ("n", "rep", "seed") + tuple(f"xi_{j + 1}" for j in range(p)) + ("xi_sq", "converged")


def run_normality(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="normality")
    columns = _normality_columns(cfg.p)

    def worker(task):
        n_index, n, rep = task
        seed = split_seed(cfg.master_seed, n_index, rep)
        model = _build_model(cfg, n, seed)
        truth = model.truth()
        _, xi = efficient_score(model.info_pair(), model.grad(truth.values))
        return (n_index, rep), (n, rep, seed, *xi.tolist(), float(xi @ xi), True)

    tasks = [(i, n, rep) for i, n in enumerate(cfg.n_schedule)
             for rep in range(cfg.replications)]
    rows = _run_tasks(tasks, worker, cfg.thread_hint)
    summary = summarize_normality(columns, rows, cfg)
    return ExperimentReport("normality", columns, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


def summarize_normality(columns, rows, cfg: ExperimentConfig) -> dict:
    per_n = {}
    ok = True
    for n in cfg.n_schedule:
        sub = [r for r in rows if r[columns.index("n")] == n]
        m = len(sub)
        ks_components = [
            ks_distance(_col(columns, sub, f"xi_{j + 1}"), gauss_cdf)
            for j in range(cfg.p)
        ]
        ks_sq = ks_distance(_col(columns, sub, "xi_sq"), lambda z: chi2_cdf(z, cfg.p))
        budget = _ks_budget(cfg, m)
        verdict = max(ks_components) <= budget and ks_sq <= budget
        ok = ok and verdict
        per_n[str(n)] = {
            "m_included": m,
            "ks_components": ks_components,
            "ks_component_max": max(ks_components),
            "ks_xi_sq_chi2": ks_sq,
            "ks_budget": budget,
            "verdict_ks": verdict,
        }
    return {"per_n": per_n, "pass": ok}


# ---------------------------------------------------------------------------
# critical dimension
# ---------------------------------------------------------------------------

CRITDIM_COLUMNS = ("regime", "n", "p_n", "rep", "seed", "dev", "converged")

_REGIME_INDEX = {"to_zero": 0, "const": 1, "to_inf": 2}


def critdim_pn(regime: str, n: int, beta_const: float) -> int:
    """Dimension recipe per regime: beta_n -> 0, ~ const, -> infinity."""
    if regime == "to_zero":
        return max(2, int(math.floor(n**0.25)))
    if regime == "const":
        return max(2, int(math.floor((beta_const**2 * n) ** (1.0 / 3.0))))
    if regime == "to_inf":
        return max(2, int(math.floor(n**0.45)))
    raise ValueError(f"unknown critdim regime {regime!r}")


def run_critdim(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="critdim")
    skipped = []
    tasks = []
    for regime in cfg.regimes:
        r_idx = _REGIME_INDEX[regime]
        for n_index, n in enumerate(cfg.n_schedule):
            p_n = critdim_pn(regime, n, cfg.beta_const)
            if not critdim_premise_holds(n, p_n):
                skipped.append({"regime": regime, "n": n, "p_n": p_n,
                                "note": "theorem premise violated"})
                continue
            for rep in range(cfg.replications):
                tasks.append((regime, r_idx, n_index, n, p_n, rep))

    def worker(task):
        regime, r_idx, n_index, n, p_n, rep = task
        seed = split_seed(cfg.master_seed, r_idx * 1000 + n_index, rep)
        model = make_critdim(CritDimConfig(n, p_n, seed), cfg.bump_enabled)
        res = critdim_solver(model, OptimizerSettings())
        dev = math.sqrt(n) * abs(float(res.upsilon.values[0]) - float(model.X[0]))
        return (r_idx, n_index, rep), (regime, n, p_n, rep, seed, dev, res.converged)

    rows = _run_tasks(tasks, worker, cfg.thread_hint)
    summary = summarize_critdim(CRITDIM_COLUMNS, rows, cfg, skipped)
    return ExperimentReport("critdim", CRITDIM_COLUMNS, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


def summarize_critdim(columns, rows, cfg: ExperimentConfig, skipped=()) -> dict:
    j_regime, j_n = columns.index("regime"), columns.index("n")
    per_regime = {}
    ok = True
    for regime in cfg.regimes:
        stats = []
        for n in cfg.n_schedule:
            sub = [r for r in rows if r[j_regime] == regime and r[j_n] == n]
            if not sub:
                continue
            inc = _included(columns, sub)
            dev = _col(columns, inc, "dev")
            p_n = int(sub[0][columns.index("p_n")])
            beta_n = math.sqrt(p_n**3 / n)
            thresh = math.sqrt(beta_n) / 6.0 - 1.0 / math.sqrt(n)
            stats.append({
                "n": n,
                "p_n": p_n,
                "beta_n": beta_n,
                "m_included": len(inc),
                "excluded": len(sub) - len(inc),
                "median_dev": _clean(float(np.median(dev)) if len(inc) else math.nan),
                "freq_ge_threshold": _clean(
                    float(np.mean(dev >= thresh)) if len(inc) else math.nan),
                "threshold": thresh,
            })
        verdict = True
        medians = [s["median_dev"] for s in stats]
        freqs = [s["freq_ge_threshold"] for s in stats]
        if stats and all(v is not None for v in medians + freqs):
            if not cfg.bump_enabled:
                verdict = all(v <= 1e-8 for v in medians)
            elif regime == "to_zero":
                verdict = medians[-1] <= 0.1
            elif regime == "const":
                verdict = freqs[-1] >= 0.05
            elif regime == "to_inf":
                last = medians[-3:]
                verdict = len(last) >= 3 and last[0] < last[1] < last[2]
        elif stats:
            verdict = False
        ok = ok and verdict
        per_regime[regime] = {"per_n": stats, "verdict": verdict}
    return {"per_regime": per_regime, "skipped": list(skipped), "pass": ok}


# ---------------------------------------------------------------------------
# condition scan
# ---------------------------------------------------------------------------

SCAN_COLUMNS = (
    "n", "rep", "seed", "wilks_T", "xi_sq", "sandwich_gap", "spread_rep",
    "within_spread", "conc_full", "conc_constrained", "conc_score",
    "conc_score_eta", "conc_all", "converged",
)


def _scan_tables(cfg: ExperimentConfig, n: int):
    """Empirical smoothness columns for one reference dataset at size n."""
    seed = split_seed(cfg.master_seed, cfg.n_schedule.index(n), _TABLE_TAG)
    model = _build_model(cfg, n, seed)
    x_n = cfg.x_at(n)
    r0 = r0_rule(cfg.nu0, cfg.b, x_n, cfg.p_star)
    radii = np.array(cfg.radii) if cfg.radii else np.linspace(r0 / 4.0, r0, 4)
    d_col = empirical_delta(model, radii, cfg.n_dirs, seed=cfg.master_seed,
                            n_resample=cfg.n_resample)
    w_col = empirical_omega(model, radii, cfg.n_dirs, n_resample=cfg.n_resample,
                            seed=cfg.master_seed, nu0=cfg.nu0)
    return radii, d_col, w_col, r0, model


def run_condition_scan(cfg: ExperimentConfig) -> ExperimentReport:
    cfg = replace(cfg, kind="scan")
    rows = []
    table_info = {}
    for n_index, n in enumerate(cfg.n_schedule):
        radii, d_col, w_col, r0, ref_model = _scan_tables(cfg, n)
        x_n = cfg.x_at(n)
        info = ref_model.info_pair()
        _, _, a_full, _ = identifiability_report(info)
        applicable = bool(np.all(w_col <= 0.5))
        table = None
        params = None
        tau_hat = None
        if applicable:
            table = SmoothnessTable(radii, d_col, w_col)
            params = BracketParams(r0=r0, nu0=cfg.nu0, a=a_full, g=cfg.g_at(n),
                                   b=cfg.b, x=x_n)
            tau_hat = tau_smooth(params, table)
            if tau_hat >= 1.0:
                applicable = False
        table_info[str(n)] = {
            "radii": radii.tolist(),
            "delta_hat": d_col.tolist(),
            "omega_hat": w_col.tolist(),
            "r0": r0,
            "a_full": a_full,
            "tau_hat": tau_hat,
            "spread_applicable": applicable,
        }

        def worker(task, n_index=n_index, n=n, table=table, params=params,
                   applicable=applicable, r0=r0):
            rep = task
            seed = split_seed(cfg.master_seed, n_index, rep)
            model = _build_model(cfg, n, seed)
            fit = profile_fit(model, OptimizerSettings())
            info = model.info_pair()
            truth = model.truth()
            grad = model.grad(truth.values)
            ev = concentration_event(info, r0, fit, grad, truth)
            xi_sq = float(fit.xi_breve @ fit.xi_breve)
            gap = abs(2.0 * fit.wilks_T - xi_sq)
            if applicable:
                try:
                    sp = spread(info, params, table, grad)
                except ApplicabilityError:
                    sp = math.nan
            else:
                sp = math.nan
            within = bool(gap <= 2.0 * sp) if not math.isnan(sp) else False
            return (n_index, rep), (
                n, rep, seed, fit.wilks_T, xi_sq, gap, sp, within,
                ev.full_in, ev.constrained_in, ev.score_in, ev.score_eta_in,
                ev.all_in, fit.converged_full and fit.converged_constrained,
            )

        rows.extend(_run_tasks(list(range(cfg.replications)), worker, cfg.thread_hint))
    summary = summarize_scan(SCAN_COLUMNS, rows, cfg, table_info)
    return ExperimentReport("scan", SCAN_COLUMNS, tuple(rows), summary,
                            config_to_flat(cfg), cfg.master_seed)


def summarize_scan(columns, rows, cfg: ExperimentConfig, table_info: dict) -> dict:
    per_n = {}
    ok = True
    for n in cfg.n_schedule:
        sub = [r for r in rows if r[columns.index("n")] == n]
        inc = _included(columns, sub)
        excluded = len(sub) - len(inc)
        m = len(inc)
        conc = _col(columns, inc, "conc_all")
        conc_freq = float(np.mean(conc)) if m else math.nan
        x_n = cfg.x_at(n)
        conc_floor = max(0.0, 1.0 - 3.0 * math.exp(-x_n))
        verdict_conc = conc_freq >= conc_floor
        verdict_excl = excluded <= 0.01 * len(sub)
        entry = dict(table_info.get(str(n), {}))
        holders = [r for r in inc if r[columns.index("conc_all")]]
        spreads = _col(columns, inc, "spread_rep")
        finite_spreads = spreads[np.isfinite(spreads)]
        entry.update({
            "m_included": m,
            "excluded": excluded,
            "conc_frequency": _clean(conc_freq),
            "conc_floor": conc_floor,
            "median_spread": _clean(
                float(np.median(finite_spreads)) if finite_spreads.size else math.nan),
            "sandwich_frequency": _clean(
                float(np.mean(_col(columns, holders, "within_spread")))
                if holders and entry.get("spread_applicable") else math.nan
            ),
            "verdict_concentration": verdict_conc,
            "verdict_exclusions": verdict_excl,
        })
        ok = ok and verdict_conc and verdict_excl
        per_n[str(n)] = entry
    return {"per_n": per_n, "pass": ok}


# ---------------------------------------------------------------------------
# report persistence
# ---------------------------------------------------------------------------


def _fmt_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def summary_json_text(report: ExperimentReport) -> str:
    import json

    payload = {
        "kind": report.kind,
        "version": VERSION,
        "master_seed": report.master_seed,
        "config": report.config,
        "columns": list(report.columns),
        "summary": report.summary,
    }
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report: ExperimentReport, out_dir, fmt: str = "both") -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    if fmt in ("csv", "both"):
        with open(os.path.join(out_dir, "rows.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(rows_csv_text(report.columns, report.rows))
    if fmt in ("json", "both"):
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(summary_json_text(report))


def read_rows_csv(path):
    """Parse rows.csv back into (columns, rows) with original cell types."""
    with open(path, "r", encoding="utf-8") as fh:
        columns = tuple(fh.readline().strip().split(","))
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = []
            for name, tok in zip(columns, line.split(",")):
                if name in ("regime",):
                    cells.append(tok)
                elif name in ("n", "p_n", "rep", "seed"):
                    cells.append(int(tok))
                elif name.startswith(("conc", "converged", "covered", "within")):
                    cells.append(tok == "1")
                else:
                    cells.append(float(tok))
            rows.append(tuple(cells))
    return columns, rows


SUMMARIZERS = {
    "wilks": summarize_wilks,
    "fisher": summarize_fisher,
    "coverage": summarize_coverage,
    "normality": summarize_normality,
}


def summarize_rows(kind: str, columns, rows, cfg: ExperimentConfig, extras=None) -> dict:
    """Recompute a report summary from persisted rows (identity with run time)."""
    if kind == "critdim":
        return summarize_critdim(columns, rows, cfg, extras or ())
    if kind == "scan":
        return summarize_scan(columns, rows, cfg, extras or {})
    return SUMMARIZERS[kind](columns, rows, cfg)


# ---------------------------------------------------------------------------
# flat-key schema shared with the CLI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemaKey:
    key: str
    kind: str  # int | float | str | bool | int_list | float_list | str_list | float_or_none
    attr: str
    help: str


_SCHEMA_BASE = (
    SchemaKey("model.kind", "str", "model_kind", "model family: gauss | logistic"),
    SchemaKey("model.p", "int", "p", "target dimension"),
    SchemaKey("model.p_star", "int", "p_star", "full parameter dimension"),
    SchemaKey("model.truth_scale", "float", "truth_scale",
              "scale of the fixed alternating truth recipe"),
    SchemaKey("schedule.n", "int_list", "n_schedule", "comma-separated sample sizes"),
    SchemaKey("replications", "int", "replications", "Monte Carlo replications per cell"),
    SchemaKey("x", "float_or_none", "x", "confidence parameter; empty = log(n)"),
    SchemaKey("alpha", "float", "alpha", "nominal level for coverage"),
    SchemaKey("ks_margin", "float_or_none", "ks_margin",
              "safety margin added to 1.36/sqrt(m); empty = per-model default"),
    SchemaKey("trend_factor", "float", "trend_factor",
              "allowed per-step growth of the fisher ratio"),
    SchemaKey("cond.nu0", "float", "nu0", "sub-Gaussian constant nu0"),
    SchemaKey("cond.b", "float", "b", "global lower-curvature constant b"),
    SchemaKey("cond.g", "float_or_none", "g", "moment range constant g; empty = sqrt(n)/2"),
    SchemaKey("critdim.regimes", "str_list", "regimes",
              "regimes to run: to_zero,const,to_inf"),
    SchemaKey("critdim.beta", "float", "beta_const", "target beta for the const regime"),
    SchemaKey("critdim.bump", "bool", "bump_enabled", "enable the adversarial bump"),
    SchemaKey("scan.radii", "float_list", "radii",
              "radii grid for the smoothness tables; empty = 4 points up to r0"),
    SchemaKey("scan.n_dirs", "int", "n_dirs", "directions per radius"),
    SchemaKey("scan.n_resample", "int", "n_resample", "resampled datasets per point"),
    SchemaKey("seed", "int", "master_seed", "master seed"),
    SchemaKey("threads", "int", "thread_hint", "worker threads (advisory; never changes rows)"),
)

COMMAND_KEYS = {
    "wilks": ("model.kind", "model.p", "model.p_star", "model.truth_scale",
              "schedule.n", "replications", "x", "ks_margin", "cond.nu0",
              "cond.b", "seed", "threads"),
    "fisher": ("model.kind", "model.p", "model.p_star", "model.truth_scale",
               "schedule.n", "replications", "x", "trend_factor", "cond.nu0",
               "cond.b", "seed", "threads"),
    "coverage": ("model.kind", "model.p", "model.p_star", "model.truth_scale",
                 "schedule.n", "replications", "alpha", "cond.nu0", "cond.b",
                 "seed", "threads"),
    "normality": ("model.kind", "model.p", "model.p_star", "model.truth_scale",
                  "schedule.n", "replications", "ks_margin", "seed", "threads"),
    "critdim": ("schedule.n", "replications", "critdim.regimes", "critdim.beta",
                "critdim.bump", "seed", "threads"),
    "scan": ("model.kind", "model.p", "model.p_star", "model.truth_scale",
             "schedule.n", "replications", "x", "cond.nu0", "cond.b", "cond.g",
             "scan.radii", "scan.n_dirs", "scan.n_resample", "seed", "threads"),
}

_COMMAND_DEFAULTS = {
    "wilks": {"model.kind": "gauss", "model.p": 2, "model.p_star": 10,
              "schedule.n": (2000,), "replications": 2000},
    "fisher": {"model.kind": "logistic", "model.p": 2, "model.p_star": 8,
               "schedule.n": (500, 2000, 8000), "replications": 500},
    "coverage": {"model.kind": "gauss", "model.p": 2, "model.p_star": 10,
                 "schedule.n": (2000,), "replications": 5000},
    "normality": {"model.kind": "gauss", "model.p": 2, "model.p_star": 10,
                  "schedule.n": (2000,), "replications": 2000},
    "critdim": {"schedule.n": (4000, 20000, 100000), "replications": 500},
    "scan": {"model.kind": "gauss", "model.p": 2, "model.p_star": 10,
             "schedule.n": (2000,), "replications": 200},
}

_BASE_DEFAULTS = {k.key: getattr(ExperimentConfig(kind="_defaults"), k.attr)
                  for k in _SCHEMA_BASE}


def schema_for(cmd: str):
    """(SchemaKey, default) pairs for a subcommand, in declaration order."""
    if cmd not in COMMAND_KEYS:
        raise ValueError(f"unknown experiment command {cmd!r}")
    keys = COMMAND_KEYS[cmd]
    by_key = {k.key: k for k in _SCHEMA_BASE}
    out = []
    for key in keys:
        default = _COMMAND_DEFAULTS[cmd].get(key, _BASE_DEFAULTS[key])
        out.append((by_key[key], default))
    return out


def config_from_flat(cmd: str, flat: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a fully resolved flat mapping."""
    kwargs = {"kind": cmd}
    for schema_key, default in schema_for(cmd):
        value = flat.get(schema_key.key, default)
        kwargs[schema_key.attr] = value
    return ExperimentConfig(**kwargs)


def config_to_flat(cfg: ExperimentConfig) -> dict:
    """Canonical flat mapping (the config echo persisted in summary.json)."""
    out = {}
    for schema_key, _default in schema_for(cfg.kind):
        v = getattr(cfg, schema_key.attr)
        if isinstance(v, tuple):
            v = list(v)
        out[schema_key.key] = v
    return out


RUNNERS = {
    "wilks": run_wilks,
    "fisher": run_fisher,
    "coverage": run_coverage,
    "normality": run_normality,
    "critdim": run_critdim,
    "scan": run_condition_scan,
}
