"""The default easy synthetic task and its sweep, cached for the whole session."""

from functools import lru_cache

from modfed.simulator import SweepConfig, generate_synthetic, prepare_splits, run_sweep

EASY = dict(K=5000, d=5, beta_star_norm=1.0, noise_sd=0.3, conditioning=1.0, seed=0)


@lru_cache(maxsize=None)
def easy_splits():
    data, beta_star = generate_synthetic(**EASY)
    return prepare_splits(data, seed=0)


@lru_cache(maxsize=None)
def easy_sweep():
    return run_sweep(SweepConfig(), easy_splits())
