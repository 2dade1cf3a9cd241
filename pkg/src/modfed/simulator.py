"""Synthetic tasks and privacy sweeps comparing the three private estimators."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from .core import Dataset, ProtocolError, ProtocolParams, RngStream, StepRule, split, standardize
from .estimators import ols, r_squared, run_dpsgd, run_one_shot
from .privacy import DEFAULT_DELTA, AccountingError, PrivacyBudget, clip_features, zcdp_to_eps
from .server import run_protocol

log = logging.getLogger(__name__)

METHODS = ("modulated_iterative", "modulated_oneshot", "dpsgd")
DEFAULT_EPS_GRID = tuple(0.5 + 0.25 * i for i in range(39))


def generate_synthetic(K: int, d: int, beta_star_norm: float = 1.0, noise_sd: float = 0.5,
                       conditioning: float = 1.0, seed: int = 0):
    """Gaussian design with eigenvalues spread geometrically over [1/conditioning, 1].

    Returns ``(Dataset, beta_star)``.
    """
    if not K > d:
        raise ProtocolError("need K > d")
    if conditioning < 1 or noise_sd < 0 or beta_star_norm < 0:
        raise ProtocolError("need conditioning >= 1, noise_sd >= 0, beta_star_norm >= 0")
    g = RngStream(seed, ("synthetic", K, d)).generator()
    eig = np.geomspace(1.0, 1.0 / conditioning, d) if d > 1 else np.ones(1)
    Q = np.linalg.qr(g.standard_normal((d, d)))[0] if conditioning > 1 else np.eye(d)
    X = (g.standard_normal((K, d)) * np.sqrt(eig)) @ Q.T
    b = g.standard_normal(d)
    beta_star = beta_star_norm * b / np.linalg.norm(b)
    Y = X @ beta_star + noise_sd * g.standard_normal(K)
    return Dataset(X, Y), beta_star


def prepare_splits(data: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, clip_mode: str = "global"):
    """Split, standardize with training statistics, then bound row norms by 1."""
    train, val, test = split(data, fractions, seed)
    train = standardize(train)
    val, test = standardize(val, like=train), standardize(test, like=train)
    train_c = clip_features(train, clip_mode)
    ref = train_c if clip_mode == "global" else None
    return train_c, clip_features(val, clip_mode, ref), clip_features(test, clip_mode, ref)


@dataclass(frozen=True)
class SweepConfig:
    eps_grid: Tuple[float, ...] = DEFAULT_EPS_GRID
    delta: float = DEFAULT_DELTA
    rounds: int = 10
    methods: Tuple[str, ...] = METHODS
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    alpha: float = 0.5
    lam: float = 0.1
    omega: float = 1.0
    m: int = 1
    clip_radius: float = 100.0
    c_factors: Tuple[float, ...] = (0.5, 0.8, 1.0)
    ridge_gammas: Tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0)
    clip_Cs: Tuple[float, ...] = (0.5, 1.0, 2.0)
    lrs: Tuple[float, ...] = (0.5, 2.0, 8.0)
    jobs: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_grid)
        object.__setattr__(self, "eps_grid", eps)
        if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise ProtocolError("eps grid must be positive and strictly ascending")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ProtocolError(f"unknown method(s): {sorted(unknown)}")
        if self.methods and not eps:
            raise ProtocolError("eps grid is empty")
        for name in ("seeds", "c_factors", "ridge_gammas", "clip_Cs", "lrs"):
            if not getattr(self, name):
                raise ProtocolError(f"{name} must be non-empty")
        if self.jobs < 1:
            raise ProtocolError("jobs must be >= 1")
        self.protocol(1)  # validates alpha, lam, ...

    def protocol(self, c_factor: float) -> ProtocolParams:
        return ProtocolParams(self.alpha, self.lam, self.omega, self.m, self.clip_radius,
                              StepRule("adaptive", c_factor), self.rounds)

    def grid(self, method: str) -> List[Dict[str, float]]:
        if method == "modulated_iterative":
            return [{"c_factor": c} for c in self.c_factors]
        if method == "modulated_oneshot":
            return [{"ridge_gamma": g} for g in self.ridge_gammas]
        return [{"clip_C": c, "lr": lr} for c, lr in itertools.product(self.clip_Cs, self.lrs)]


@dataclass(frozen=True)
class Cell:
    method: str
    eps_index: int
    seed: int
    hp_index: int


@dataclass
class CellResult:
    cell: Cell
    epsilon: float
    hyperparams: Dict[str, float]
    r2_val: float
    r2_test: float
    ledger: dict
    wall_time: float


def run_cell(config: SweepConfig, cell: Cell, splits) -> CellResult:
    train, val, test = splits
    eps = config.eps_grid[cell.eps_index]
    hp = config.grid(cell.method)[cell.hp_index]
    # hyperparameter configs share a stream so they are compared on common noise
    stream = RngStream(cell.seed, ("sweep", cell.method, cell.eps_index))
    t0 = time.perf_counter()
    if cell.method == "modulated_iterative":
        params = config.protocol(hp["c_factor"])
        budget = PrivacyBudget.for_protocol(eps, params, delta=config.delta)
        run = run_protocol(train, params, budget, cell.seed, stream=stream, keep_records=False)
        beta, acct = run.beta, run.accountant
    elif cell.method == "modulated_oneshot":
        params = config.protocol(1.0)
        budget = PrivacyBudget.for_protocol(eps, params, rounds=1, delta=config.delta)
        res, acct = run_one_shot(train, params, budget, hp["ridge_gamma"], cell.seed, stream)
        beta = res.beta_hat
    else:
        budget = PrivacyBudget.for_dpsgd(eps, hp["clip_C"], config.rounds, config.delta)
        beta, acct = run_dpsgd(train, hp["clip_C"], hp["lr"], budget, cell.seed, stream)
    wall = time.perf_counter() - t0
    return CellResult(cell, eps, dict(hp), r_squared(beta, val), r_squared(beta, test),
                      acct.to_record(), wall)


def _run_many(args):
    config, cells, splits = args
    return [run_cell(config, c, splits) for c in cells]


@dataclass
class SweepResult:
    config: SweepConfig
    ols_r2: float
    rows: List[CellResult] = field(default_factory=list)  # selected config only
    selected: Dict[str, Dict[str, float]] = field(default_factory=dict)
    tuning: Dict[str, List[Tuple[Dict[str, float], float]]] = field(default_factory=dict)
    timings: Dict[Tuple, float] = field(default_factory=dict)

    def r2_table(self, method: str) -> np.ndarray:
        """Test R^2 of shape (len(eps_grid), len(seeds))."""
        eps_n, seeds = len(self.config.eps_grid), list(self.config.seeds)
        out = np.full((eps_n, len(seeds)), np.nan)
        for r in self.rows:
            if r.cell.method == method:
                out[r.cell.eps_index, seeds.index(r.cell.seed)] = r.r2_test
        return out

    def curve(self, method: str):
        """(eps, mean R^2, sample sd of R^2) per grid point."""
        t = self.r2_table(method)
        sd = t.std(axis=1, ddof=1) if t.shape[1] > 1 else np.zeros(t.shape[0])
        return np.asarray(self.config.eps_grid), t.mean(axis=1), sd

    def median_r2(self, method: str) -> np.ndarray:
        return np.median(self.r2_table(method), axis=1)

    def records(self) -> List[dict]:
        """Deterministic payloads; wall times are kept separately in ``timings``."""
        out = [{"record_type": "ols_reference", "payload": {"r2_test": self.ols_r2}}]
        for method in self.config.methods:
            out.append({"record_type": "tuning", "payload": {
                "method": method, "selected": self.selected[method],
                "grid": [{"hyperparams": hp, "mean_val_r2": v} for hp, v in self.tuning[method]]}})
        for r in self.rows:
            out.append({"record_type": "cell", "payload": {
                "method": r.cell.method, "epsilon": r.epsilon, "seed": r.cell.seed,
                "hyperparams": r.hyperparams, "r2_val": r.r2_val, "r2_test": r.r2_test,
                "ledger": r.ledger}})
        return out


def check_ledger(row: CellResult, delta: float, tol: float = 1e-9) -> None:
    eps = zcdp_to_eps(row.ledger["rho_total"], delta)
    if eps > row.epsilon + tol:
        raise AccountingError(f"{row.cell}: ledger epsilon {eps!r} exceeds declared {row.epsilon!r}")


def run_sweep(config: SweepConfig, splits) -> SweepResult:
    """Jointly tuned sweep: one hyperparameter setting per method for the whole eps grid.

    The setting maximizing mean validation R^2 over all (eps, seed) cells is
    kept and its test R^2 is reported. Any ledger overspend aborts the sweep.
    """
    train, val, test = splits
    result = SweepResult(config, r_squared(ols(train), test))
    cells = [Cell(m, e, s, h) for m in config.methods for h in range(len(config.grid(m)))
             for e in range(len(config.eps_grid)) for s in config.seeds]
    if not cells:
        return result
    if config.jobs == 1:
        outs = _run_many((config, cells, splits))
    else:
        batches = [cells[i::config.jobs * 4] for i in range(config.jobs * 4)]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outs = [r for part in pool.map(_run_many, [(config, b, splits) for b in batches if b])
                    for r in part]
    by_cell = {o.cell: o for o in outs}
    for o in by_cell.values():
        check_ledger(o, config.delta)
        result.timings[(o.cell.method, o.cell.eps_index, o.cell.seed, o.cell.hp_index)] = o.wall_time
    for method in config.methods:
        grid = config.grid(method)
        scores = []
        for h, hp in enumerate(grid):
            vals = [by_cell[Cell(method, e, s, h)].r2_val
                    for e in range(len(config.eps_grid)) for s in config.seeds]
            scores.append((hp, float(np.mean(vals))))
        # first index wins ties so the choice is deterministic
        best = int(np.argmax([v for _, v in scores]))
        result.tuning[method] = scores
        result.selected[method] = grid[best]
        result.rows += [by_cell[Cell(method, e, s, best)]
                        for e in range(len(config.eps_grid)) for s in config.seeds]
    return result


def eps_monotonicity(result: SweepResult, method: str) -> float:
    """Spearman correlation between eps and the median-over-seeds R^2."""
    med = result.median_r2(method)
    if len(med) < 2:
        return float("nan")
    return float(spearmanr(result.config.eps_grid, med)[0])


@dataclass(frozen=True)
class CrossoverSummary:
    oneshot_ranges: List[Tuple[float, float]]
    iterative_ranges: List[Tuple[float, float]]
    crossover: bool
    crossover_eps: Optional[float]
    message: str


def _runs(eps: Sequence[float], mask: np.ndarray) -> List[Tuple[float, float]]:
    out, start = [], None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        if start is not None and (not flag or i == len(mask) - 1):
            end = i if flag else i - 1
            out.append((float(eps[start]), float(eps[end])))
            start = None
    return out


def crossover_report(result: SweepResult) -> CrossoverSummary:
    """Where each modulated method wins in median test R^2, and whether they swap."""
    methods = result.config.methods
    if "modulated_oneshot" not in methods or "modulated_iterative" not in methods:
        raise ProtocolError("crossover needs both modulated methods")
    eps = result.config.eps_grid
    one, it = result.median_r2("modulated_oneshot"), result.median_r2("modulated_iterative")
    one_wins = one >= it
    ranges_one, ranges_it = _runs(eps, one_wins), _runs(eps, ~one_wins)
    if len(eps) < 2:
        return CrossoverSummary(ranges_one, ranges_it, False, None, "no crossover detectable")
    flips = np.nonzero(one_wins[1:] != one_wins[:-1])[0]
    if flips.size == 0:
        winner = "one-shot" if one_wins[0] else "iterative"
        return CrossoverSummary(ranges_one, ranges_it, False, None,
                                f"no crossover: {winner} leads over the whole grid")
    at = float(eps[flips[0] + 1])
    return CrossoverSummary(ranges_one, ranges_it, True, at,
                            f"first crossover at eps={at:g} ({flips.size} sign change(s))")
