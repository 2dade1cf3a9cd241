"""Run configuration schema, dataset CSV ingestion and result file writers."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import Dataset, ProtocolParams, StepRule
from .privacy import DEFAULT_DELTA
from .simulator import DEFAULT_EPS_GRID, METHODS, SweepConfig

SCHEMA_VERSION = 1
OUT_DIR_ENV = "MODFED_OUT_DIR"


class ConfigError(ValueError):
    """Invalid or unreadable configuration (exit code 2)."""


class DataError(ValueError):
    """Unreadable or malformed dataset (exit code 3)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class StepSection(_Strict):
    kind: Literal["fixed", "adaptive", "lipschitz"] = "adaptive"
    value: float = Field(0.8, gt=0)


class ProtocolSection(_Strict):
    alpha: float = Field(0.5, gt=0, lt=1)
    lam: float = Field(0.1, ge=0)
    omega: float = Field(1.0, gt=0)
    m: int = Field(1, ge=1)
    clip_radius: float = Field(100.0, gt=0)
    step: StepSection = StepSection()
    rounds: int = Field(10, ge=1)

    def build(self) -> ProtocolParams:
        return ProtocolParams(self.alpha, self.lam, self.omega, self.m, self.clip_radius,
                              StepRule(self.step.kind, self.step.value), self.rounds)


class PrivacySection(_Strict):
    epsilon: float = Field(5.0, gt=0)
    delta: float = Field(DEFAULT_DELTA, gt=0, lt=1)


class SyntheticSection(_Strict):
    K: int = Field(5000, ge=2)
    d: int = Field(5, ge=1)
    beta_star_norm: float = Field(1.0, ge=0)
    noise_sd: float = Field(0.3, ge=0)
    conditioning: float = Field(1.0, ge=1)


class DataSection(_Strict):
    path: Optional[str] = None
    target: Optional[str] = None
    synthetic: SyntheticSection = SyntheticSection()
    fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    clip_mode: Literal["global", "row"] = "global"


class SweepSection(_Strict):
    eps_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    methods: List[Literal[METHODS]] = Field(default_factory=lambda: list(METHODS))
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    c_factors: List[float] = Field(default_factory=lambda: [0.5, 0.8, 1.0])
    ridge_gammas: List[float] = Field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])
    clip_Cs: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    lrs: List[float] = Field(default_factory=lambda: [0.5, 2.0, 8.0])


class OneShotSection(_Strict):
    ridge_gamma: float = Field(0.01, ge=0)


class VarianceSection(_Strict):
    S_r_sq: float = Field(1.0, ge=0)
    beta_sigma_rx: float = 0.0
    tr_sigma_x: float = Field(1.0, ge=0)
    beta_norm_sq: float = Field(1.0, ge=0)


class BoundsSection(_Strict):
    K: int = Field(1000, ge=1)
    d: int = Field(5, ge=1)
    sigma_dp: Optional[float] = Field(None, gt=0)
    B: float = Field(10.0, gt=0)
    R: float = Field(1.0, gt=0)
    M: float = Field(1.0, gt=0)
    L_dp: float = Field(1.0, gt=0)
    beta0_dist_sq: float = Field(1.0, ge=0)
    beta_star: Optional[List[float]] = None
    sigma_y: float = Field(1.0, gt=0)
    theta: float = 0.0
    tradeoff_points: int = Field(11, ge=2)
    variance: VarianceSection = VarianceSection()

    @field_validator("beta_star")
    @classmethod
    def _finite(cls, v):
        if v is not None and not all(math.isfinite(b) for b in v):
            raise ValueError("beta_star entries must be finite")
        return v


class ValidateSection(_Strict):
    N: int = Field(20000, ge=2)
    names: Optional[List[str]] = None


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    data: DataSection = DataSection()
    protocol: ProtocolSection = ProtocolSection()
    privacy: PrivacySection = PrivacySection()
    sweep: SweepSection = SweepSection()
    oneshot: OneShotSection = OneShotSection()
    bounds: BoundsSection = BoundsSection()
    validation: ValidateSection = ValidateSection()

    def sweep_config(self, jobs: int = 1) -> SweepConfig:
        p, s = self.protocol, self.sweep
        return SweepConfig(tuple(s.eps_grid), self.privacy.delta, p.rounds, tuple(s.methods),
                           tuple(s.seeds), p.alpha, p.lam, p.omega, p.m, p.clip_radius,
                           tuple(s.c_factors), tuple(s.ridge_gammas), tuple(s.clip_Cs),
                           tuple(s.lrs), jobs)


def load_config(path: Optional[str]) -> RunConfig:
    """Parse a YAML config; no path gives all defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def load_csv(path, target_column: str) -> Dataset:
    """Read a numeric CSV; every column except ``target_column`` is a feature.

    Data rows are numbered from 1 (the header is not counted).
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"data file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{p}: missing header row")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{p}: target column {target_column!r} not in header {header}")
        rows = []
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{p}: row {n} has {len(row)} cells, expected {len(header)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{p}: row {n}, column {name!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{p}: row {n}, column {name!r}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{p}: no data rows")
    a = np.array(rows)
    t = header.index(target_column)
    feats = [i for i in range(len(header)) if i != t]
    if not feats:
        raise DataError(f"{p}: no feature columns besides the target")
    return Dataset(a[:, feats], a[:, t], feature_names=tuple(header[i] for i in feats))


def output_dir(flag: Optional[str]) -> Path:
    d = Path(flag or os.environ.get(OUT_DIR_ENV) or "modfed_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def record_line(record_type: str, payload) -> str:
    return json.dumps({"record_type": record_type, "payload": payload,
                       "schema_version": SCHEMA_VERSION}, sort_keys=True, default=_default)


def write_records(path: Path, records) -> None:
    """``records`` is an iterable of ``(record_type, payload)`` pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rtype, payload in records:
            fh.write(record_line(rtype, payload) + "\n")


def write_plot_csv(path: Path, method: str, eps, mean, sd) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "mean_r2", "sd_r2", "method"])
        for e, mu, s in zip(eps, mean, sd):
            w.writerow([repr(float(e)), repr(float(mu)), repr(float(s)), method])
