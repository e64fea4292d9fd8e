"""Desk-scale versions of the three comparison experiments.

* toy-table1: baseline (one head) vs three heads evaluated at mu = 1 and mu = 1/2
* toy-table2: channel-scaled members boosted into gamma-member ensembles
* toy-table3: baseline vs three-head, two-member ensembles at matched parameters

Each profile runs over several training seeds on the same toy data and
reports mean and standard deviation of test error.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .boost import boost_train
from .config import RunConfig
from .errors import ConfigurationError
from .train import config_head_weights, evaluate, new_member, prepare, train_network, write_csv

PROFILES = ("toy-table1", "toy-table2", "toy-table3")
MIN_SEEDS = 5
RESULT_COLUMNS = ("profile", "arch", "setting", "params", "gamma", "seed", "member_error", "error")


def _single(cfg: RunConfig, prepared, progress):
    net = new_member(cfg, prepared.train.num_classes)
    hw = config_head_weights(cfg)
    train_network(net, hw, prepared, cfg, log=progress)
    return net, hw


def _table1(base: RunConfig, prepared, seed: int, progress) -> list:
    rows = []
    for arch in ("vgg-tiny", "res-tiny"):
        cfg = replace(base, arch=arch, seed=seed, m=1)
        net, hw = _single(cfg, prepared, progress)
        err = evaluate(net, hw, prepared.test).joint_error
        rows.append(dict(arch=arch, setting="baseline", params=net.num_parameters(), gamma=1,
                         member_error=err, error=err))
        cfg = replace(cfg, m=3)
        net, _ = _single(cfg, prepared, progress)
        # mu only enters the output combination, so one trained net serves both rows
        for mu, label in ((1.0, "mu=1"), (0.5, "mu=1/2")):
            hw = config_head_weights(replace(cfg, mu=mu))
            ev = evaluate(net, hw, prepared.test)
            rows.append(dict(arch=arch, setting=label, params=net.num_parameters(), gamma=1,
                             member_error=ev.head_errors[0], error=ev.joint_error))
    return rows


def _table2(base: RunConfig, prepared, seed: int, progress) -> list:
    rows = []
    for label, factor, gamma in (("1", 1.0, 1), ("sqrt(1/2)", math.sqrt(0.5), 2), ("1/2", 0.5, 4)):
        cfg = replace(base, arch="res-tiny", m=1, seed=seed, scale=repr(factor), gamma=gamma)
        state, _, _ = boost_train(prepared, cfg, progress=progress)
        for g in range(1, gamma + 1):
            rows.append(dict(arch="res-tiny", setting=f"scale={label}", params=state.rounds[0].params,
                             gamma=g, member_error=state.rounds[0].joint_test_error,
                             error=state.prefix_joint_test_errors[g - 1]))
    return rows


def _table3(base: RunConfig, prepared, seed: int, progress) -> list:
    rows = []
    for arch in ("vgg-tiny", "res-tiny"):
        cfg = replace(base, arch=arch, seed=seed, m=1, scale="1", gamma=1)
        net, hw = _single(cfg, prepared, progress)
        err = evaluate(net, hw, prepared.test).joint_error
        rows.append(dict(arch=arch, setting="original", params=net.num_parameters(), gamma=1,
                         member_error=err, error=err))
        cfg = replace(cfg, m=3, mu=0.5, gamma=2, scale="auto")
        state, _, _ = boost_train(prepared, cfg, progress=progress)
        rows.append(dict(arch=arch, setting="multi-participant", params=state.total_params, gamma=2,
                         member_error=state.rounds[0].joint_test_error,
                         error=state.final_joint_test_error))
    return rows


RUNNERS = {"toy-table1": _table1, "toy-table2": _table2, "toy-table3": _table3}


def summarize(rows: list) -> list:
    """Group per-seed rows by (arch, setting, gamma) into mean / std lines."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["arch"], r["setting"], r["gamma"]), []).append(r)
    out = []
    for (arch, setting, gamma), rs in groups.items():
        err = np.array([r["error"] for r in rs]) * 100
        member = np.array([r["member_error"] for r in rs]) * 100
        out.append(dict(arch=arch, setting=setting, gamma=gamma, params=rs[0]["params"],
                        member_mean=member.mean(), member_std=member.std(),
                        mean=err.mean(), std=err.std(), median=float(np.median(err)), n=len(rs)))
    return out


def format_table(profile: str, summary: list) -> str:
    lines = [
        f"{profile}: test error (%) mean +- std over seeds",
        f"{'arch':<10} {'setting':<18} {'gamma':>5} {'params':>8} {'single':>14} {'total':>14}",
    ]
    for s in summary:
        lines.append(
            f"{s['arch']:<10} {s['setting']:<18} {s['gamma']:>5} {s['params']:>8} "
            f"{s['member_mean']:>7.2f}+-{s['member_std']:<5.2f} {s['mean']:>7.2f}+-{s['std']:<5.2f}"
        )
    return "\n".join(lines)


def run_profile(profile, seeds=MIN_SEEDS, epochs=15, n_train=600, n_test=600, out=None,
                progress=None, base: RunConfig | None = None) -> list:
    if profile not in RUNNERS:
        raise ConfigurationError(f"profile must be one of {PROFILES}")
    if seeds < MIN_SEEDS:
        raise ConfigurationError(f"reproduce profiles need at least {MIN_SEEDS} seeds")
    base = base or RunConfig()
    base = replace(base, epochs=epochs, n_train=n_train, n_test=n_test)
    base.validate()
    prepared = prepare(base)
    rows = []
    for seed in range(seeds):
        for r in RUNNERS[profile](base, prepared, seed, progress):
            rows.append(dict(profile=profile, seed=seed, **r))
    summary = summarize(rows)
    text = format_table(profile, summary)
    print(text)
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"{profile}.csv", rows, RESULT_COLUMNS)
        (out / f"{profile}.txt").write_text(text + "\n")
    return summary
