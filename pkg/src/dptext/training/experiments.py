"""The fixed experiment set behind the directional acceptance checks.

Each entry is a (TrainConfig, ModelConfig) pair; runs go through
:func:`run_or_load` so the pytest suite, the CLI and the helper script all
share one on-disk cache.
"""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

from ..model import ModelConfig
from .ablation import RunRecord, run_or_load
from .trainer import TrainConfig

SEEDS = (0, 1, 2)
CACHE_ENV = "DPTEXT_RUN_CACHE"

QUERY_ARMS = {
    "baseline": ModelConfig(query_mode="box_baseline", efsa_mode="fsa"),
    "epqm": ModelConfig(query_mode="explicit_point", efsa_mode="fsa"),
    "epqm_efsa": ModelConfig(query_mode="explicit_point", efsa_mode="efsa"),
}

FULL = TrainConfig()
# a quarter of the scenes and of the iterations, so the number of epochs is unchanged
QUARTER = replace(FULL, train_scenes=FULL.train_scenes // 4, iterations=FULL.iterations // 4,
                  lr_decay_step=FULL.lr_decay_step // 4, eval_every=FULL.eval_every // 2)
INVERSE_HEAVY = replace(FULL, train_inverse_prob=0.4, rotation=False)


def default_cache() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[3] / ".cache" / "runs"


def convergence_runs(arm: str, seed: int, cache=None) -> RunRecord:
    """Full data, positional labels, no rotation (the convergence comparison)."""
    return run_or_load(replace(FULL, seed=seed), QUERY_ARMS[arm], cache or default_cache())


def data_efficiency_runs(arm: str, seed: int, cache=None) -> RunRecord:
    return run_or_load(replace(QUARTER, seed=seed), QUERY_ARMS[arm], cache or default_cache())


def label_form_runs(label_mode: str, seed: int, cache=None) -> RunRecord:
    return run_or_load(replace(INVERSE_HEAVY, seed=seed, label_mode=label_mode), QUERY_ARMS["epqm_efsa"],
                       cache or default_cache())


def all_runs():
    """Every (name, thunk) in the order the helper script trains them."""
    jobs = []
    for seed in SEEDS:
        for arm in ("epqm_efsa", "baseline", "epqm"):
            jobs.append((f"convergence/{arm}/seed{seed}", lambda a=arm, s=seed: convergence_runs(a, s)))
    for seed in SEEDS:
        for mode in ("positional", "original"):
            jobs.append((f"label/{mode}/seed{seed}", lambda m=mode, s=seed: label_form_runs(m, s)))
    for seed in SEEDS:
        for arm in ("baseline", "epqm"):
            jobs.append((f"quarter/{arm}/seed{seed}", lambda a=arm, s=seed: data_efficiency_runs(a, s)))
    return jobs
