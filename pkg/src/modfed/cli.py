"""Command-line front end: ``modfed {simulate,sweep,bounds,validate,oneshot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from . import bounds as B
from .config import (ConfigError, DataError, RunConfig, load_config, load_csv, output_dir,
                     write_plot_csv, write_records)
from .core import Dataset, ProtocolError, ProtocolParams
from .estimators import ols, r_squared, run_one_shot
from .privacy import AccountingError, PrivacyBudget, tradeoff_curve
from .server import run_protocol
from .simulator import crossover_report, generate_synthetic, prepare_splits, run_sweep

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_ACCOUNTING = 0, 1, 2, 3, 4

log = logging.getLogger("modfed")


def _load_data(cfg: RunConfig, args) -> Dataset:
    path = args.data or cfg.data.path
    if path is None:
        s = cfg.data.synthetic
        return generate_synthetic(s.K, s.d, s.beta_star_norm, s.noise_sd, s.conditioning, cfg.seed)[0]
    target = args.target or cfg.data.target
    if target is None:
        raise ConfigError("--target is required with a CSV dataset")
    return load_csv(path, target)


def _splits(cfg: RunConfig, args):
    data = _load_data(cfg, args)
    try:
        return prepare_splits(data, cfg.data.fractions, cfg.seed, cfg.data.clip_mode)
    except ProtocolError as exc:
        raise DataError(str(exc)) from exc


def _header(cmd: str, cfg: RunConfig):
    return "run", {"subcommand": cmd, "seed": cfg.seed, "config": cfg.model_dump(mode="json")}


def cmd_simulate(cfg: RunConfig, args) -> int:
    train, val, test = _splits(cfg, args)
    params: ProtocolParams = cfg.protocol.build()
    budget = PrivacyBudget.for_protocol(cfg.privacy.epsilon, params, delta=cfg.privacy.delta)
    run = run_protocol(train, params, budget, cfg.seed)
    records = [_header("simulate", cfg)]
    records += [("round", r.summary()) for r in run.records]
    final = {"r2_test": r_squared(run.beta, test), "r2_val": r_squared(run.beta, val),
             "r2_test_averaged": r_squared(run.beta_avg, test), "ols_r2_test": r_squared(ols(train), test),
             "beta": run.beta, "sigma_dp": budget.sigma_dp, "declared_eps": budget.eps_total,
             "ledger": run.accountant.to_record()}
    records.append(("final", final))
    out = output_dir(args.out) / "simulate.jsonl"
    write_records(out, records)
    print(f"T={params.rounds} rounds, eps={budget.eps_total:g}: test R^2 {final['r2_test']:.4f} "
          f"(OLS {final['ols_r2_test']:.4f}); wrote {out}")
    return EXIT_OK


def cmd_oneshot(cfg: RunConfig, args) -> int:
    train, val, test = _splits(cfg, args)
    params = cfg.protocol.build()
    budget = PrivacyBudget.for_protocol(cfg.privacy.epsilon, params, rounds=1, delta=cfg.privacy.delta)
    res, acct = run_one_shot(train, params, budget, cfg.oneshot.ridge_gamma, cfg.seed)
    final = {"r2_test": r_squared(res.beta_hat, test), "r2_val": r_squared(res.beta_hat, val),
             "beta": res.beta_hat, "ridge_gamma": res.ridge_gamma, "used_lstsq": res.used_lstsq,
             "sigma_dp": budget.sigma_dp, "declared_eps": budget.eps_total, "ledger": acct.to_record()}
    out = output_dir(args.out) / "oneshot.jsonl"
    write_records(out, [_header("oneshot", cfg), ("final", final)])
    print(f"one-shot, eps={budget.eps_total:g}: test R^2 {final['r2_test']:.4f}; wrote {out}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    try:
        sc = cfg.sweep_config(args.jobs)
    except ProtocolError as exc:
        raise ConfigError(str(exc)) from exc
    splits = _splits(cfg, args)
    result = run_sweep(sc, splits)
    outdir = output_dir(args.out)
    records = [_header("sweep", cfg)]
    records += [(r["record_type"], r["payload"]) for r in result.records()]
    if "modulated_oneshot" in sc.methods and "modulated_iterative" in sc.methods:
        records.append(("crossover", asdict(crossover_report(result))))
    write_records(outdir / "sweep.jsonl", records)
    # wall times vary between runs, so they live outside the results file
    write_records(outdir / "sweep_timings.jsonl",
                  [("timing", {"method": k[0], "eps_index": k[1], "seed": k[2], "hp_index": k[3],
                               "seconds": v}) for k, v in sorted(result.timings.items())])
    for method in sc.methods:
        write_plot_csv(outdir / f"plot_{method}.csv", method, *result.curve(method))
    print(f"OLS test R^2 {result.ols_r2:.4f}")
    for method in sc.methods:
        eps, mean, _ = result.curve(method)
        print(f"{method:22s} selected {result.selected[method]}  "
              f"R^2 at eps={eps[0]:g}: {mean[0]:.4f}, eps={eps[-1]:g}: {mean[-1]:.4f}")
    print(f"wrote {outdir}")
    return EXIT_OK


def bounds_table(cfg: RunConfig) -> dict:
    b = cfg.bounds
    params = cfg.protocol.build()
    if b.sigma_dp is not None:
        sigma = b.sigma_dp
    else:
        sigma = PrivacyBudget.for_protocol(cfg.privacy.epsilon, params, delta=cfg.privacy.delta).sigma_dp
    beta_star = np.zeros(b.d) if b.beta_star is None else np.asarray(b.beta_star, float)
    if beta_star.size != b.d:
        raise ConfigError(f"bounds.beta_star has {beta_star.size} entries, expected d={b.d}")
    v = b.variance
    var = B.gradient_variance(B.VarianceInputs(v.S_r_sq, v.beta_sigma_rx, v.tr_sigma_x, b.K, b.d,
                                               params.alpha, params.lam, sigma, v.beta_norm_sq))
    sbar = B.uniform_variance_bound(B.BoundConstants(b.B, b.R, b.M), params, sigma, b.K, b.d)
    conv = B.convergence_bound(b.L_dp, b.beta0_dist_sq, params.rounds, sbar, b.K)
    e1 = np.eye(b.d)[0]
    crb_c = B.crb_conditional(np.zeros(b.d), b.theta, params, sigma, beta_star, b.sigma_y, e1)
    crb_p = B.crb_phase_averaged(params, sigma, beta_star, b.sigma_y)
    grid = np.linspace(0.0, 1.0, b.tradeoff_points)
    return {"sigma_dp": sigma, "gradient_variance": var, "uniform_variance_bound": sbar,
            "convergence_bound": conv, "crb_conditional": crb_c, "crb_phase_averaged": crb_p,
            "leakage_term": float(beta_star @ beta_star) / (b.d * b.sigma_y**2),
            "tradeoff_alpha": grid, "tradeoff_beta": tradeoff_curve(cfg.privacy.epsilon, cfg.privacy.delta, grid)}


def cmd_bounds(cfg: RunConfig, args) -> int:
    table = bounds_table(cfg)
    out = output_dir(args.out) / "bounds.jsonl"
    write_records(out, [_header("bounds", cfg), ("bounds", table)])
    for k, val in table.items():
        if not isinstance(val, np.ndarray):
            print(f"{k:24s} {val:.6g}")
    print("tradeoff f(a):", " ".join(f"{a:.2f}:{f:.4f}" for a, f in
                                     zip(table["tradeoff_alpha"], table["tradeoff_beta"])))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    names = args.name or cfg.validation.names
    try:
        res = B.run_validators(cfg.validation.N, cfg.seed, names)
    except ProtocolError as exc:
        raise ConfigError(str(exc)) from exc
    records = [_header("validate", cfg)]
    all_ok = True
    for name, checks in res.items():
        ok = all(c.passed for c in checks)
        all_ok &= ok
        records.append(("validator", {"name": name, "passed": ok,
                                      "checks": [c.to_record() for c in checks]}))
        print(f"{'PASS' if ok else 'FAIL'}  {name} ({len(checks)} checks)")
    out = output_dir(args.out) / "validate.jsonl"
    write_records(out, records)
    print(f"wrote {out}")
    return EXIT_OK if all_ok else EXIT_FAILED


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bounds": cmd_bounds,
            "validate": cmd_validate, "oneshot": cmd_oneshot}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modfed", description="Private federated linear regression "
                                "with cosine-modulated client features.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help=f"output directory (else $MODFED_OUT_DIR, else ./modfed_out)")
    p.add_argument("--data", help="CSV dataset with a header row")
    p.add_argument("--target", help="response column of the CSV dataset")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep")
    p.add_argument("--rounds", type=int, help="override protocol.rounds")
    p.add_argument("--epsilon", type=float, help="override privacy.epsilon")
    p.add_argument("--name", action="append", help="validator to run (repeatable)")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    upd = cfg.model_dump()
    if args.seed is not None:
        upd["seed"] = args.seed
    if args.rounds is not None:
        upd["protocol"]["rounds"] = args.rounds
    if args.epsilon is not None:
        upd["privacy"]["epsilon"] = args.epsilon
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    try:
        return RunConfig.model_validate(upd)
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AccountingError as exc:
        print(f"accounting violation: {exc}", file=sys.stderr)
        return EXIT_ACCOUNTING
    except ProtocolError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
