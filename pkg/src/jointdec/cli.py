"""``jointdec {train|boost|eval|reproduce}`` command-line entry point.

Exit codes: 0 success, 2 configuration, 3 numeric failure, 4 I/O or format.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, storage
from . import joint as J
from .boost import RoundAborted, boost_train, load_members, member_scores
from .config import RunConfig, load_config
from .errors import ConfigurationError, ContractError, FormatError, NumericError
from .train import (
    METRICS_COLUMNS,
    config_head_weights,
    evaluate,
    new_member,
    prepare,
    train_network,
    write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TIMING_COLUMNS = ("epoch", "member", "wall_time")

log = logging.getLogger("jointdec")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    flag = p.add_argument
    flag("--dataset", choices=("toy", "cifar10"))
    flag("--data-dir")
    flag("--data-seed", type=int)
    flag("--n-train", type=int)
    flag("--n-test", type=int)
    flag("--arch")
    flag("--scale", help="channel scaling factor in (0, 1], or 'auto' = sqrt(1/gamma)")
    flag("--m", type=int, help="number of decision heads")
    flag("--head-order", choices=("deep-first", "shallow-first"))
    flag("--head-bn", choices=("true", "false"))
    flag("--head-act", choices=("true", "false"))
    flag("--alpha1", type=float)
    flag("--k", type=float)
    flag("--mu", type=float)
    flag("--epsilon", type=float)
    flag("--gamma", type=int)
    flag("--intent-mode", action="store_const", const="true")
    flag("--judge", choices=("joint", "head1"))
    flag("--l-max", type=float)
    flag("--l-min", type=float)
    flag("--t0", type=int)
    flag("--t-mult", type=int)
    flag("--momentum", type=float)
    flag("--weight-decay", type=float)
    flag("--batch-size", type=int)
    flag("--epochs", type=int)
    flag("--no-augment", dest="augment", action="store_const", const="false")
    flag("--seed", type=int)
    flag("--out")


def _run_config(args) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in RunConfig.field_names()}
    return load_config(args.config, overrides)


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _prepare_out(cfg)
    prepared = prepare(cfg)
    net = new_member(cfg, prepared.train.num_classes)
    hw = config_head_weights(cfg)
    result = train_network(net, hw, prepared, cfg, log=progress_log())
    storage.save_checkpoint(out / "checkpoint.jdec", net, hw, prepared.descriptor)
    write_csv(out / "metrics.csv", result.rows)
    write_csv(out / "timing.csv", result.timings, TIMING_COLUMNS)
    final = result.final_test
    summary = {
        "params": net.num_parameters(),
        "head_test_errors": final.head_errors,
        "final_joint_test_error": final.joint_error,
        "best_epoch": result.best_epoch,
        "best_joint_test_error": result.best_joint_test_error,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"params {summary['params']}")
    print("head test errors " + " ".join(f"{e:.4f}" for e in final.head_errors))
    print(f"joint test error {final.joint_error:.4f} (final epoch)")
    print(f"best joint test error {result.best_joint_test_error:.4f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_boost(args) -> int:
    cfg = _run_config(args)
    if args.scale is None and "scale" not in _file_keys(args.config):
        cfg.scale = "auto"
    out = _prepare_out(cfg)
    prepared = prepare(cfg)
    state, rows, timings = boost_train(prepared, cfg, out, progress=progress_log())
    write_csv(out / "metrics.csv", rows)
    write_csv(out / "timing.csv", timings, TIMING_COLUMNS)
    for i, r in enumerate(state.rounds):
        print(f"member {i}: params {r.params} acc {r.acc:.4f} lambda {r.lam:.6f} "
              f"joint test error {r.joint_test_error:.4f}")
    print(f"total params {state.total_params}")
    print(f"ensemble joint test error {state.final_joint_test_error:.4f}")
    return EXIT_OK


def _file_keys(path) -> set:
    if not path:
        return set()
    from .config import parse_config_text

    try:
        return set(parse_config_text(Path(path).read_text()))
    except OSError:
        return set()


def _eval_config(args, descriptor: dict) -> RunConfig:
    values = {
        "dataset": descriptor.get("dataset", "toy"),
        "data_dir": descriptor.get("data_dir", ""),
        "data_seed": descriptor.get("data_seed", 0),
        "n_train": descriptor.get("n_train", 600),
        "n_test": descriptor.get("n_test", 600),
    }
    for key in values:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return RunConfig.from_mapping(values)


def cmd_eval(args) -> int:
    if not args.checkpoint and not args.manifest:
        raise ConfigurationError("eval needs --checkpoint or --manifest")
    if args.checkpoint and args.manifest:
        raise ConfigurationError("use either --checkpoint or --manifest, not both")
    if args.manifest:
        state, headers = load_members(args.manifest, args.mu)
        members, lambdas = state.members, state.lambdas
    else:
        members, headers = [], []
        for path in args.checkpoint:
            net, hw, header = storage.load_checkpoint(path, args.mu)
            members.append((net, hw))
            headers.append(header)
        lambdas = [1.0] * len(members)
    if args.uniform:
        lambdas = [1.0] * len(members)
    elif args.lambdas:
        lambdas = [float(v) for v in args.lambdas.split(",")]
        if len(lambdas) != len(members):
            raise ConfigurationError(f"{len(lambdas)} lambdas for {len(members)} members")

    descriptor = headers[0].get("dataset", {})
    cfg = _eval_config(args, descriptor)
    prepared = prepare(cfg, descriptor.get("channel_mean"), descriptor.get("channel_std"))
    test = prepared.test

    report = {"members": [], "lambdas": lambdas}
    for i, (net, hw) in enumerate(members):
        ev = evaluate(net, hw, test)
        report["members"].append(
            {"head_errors": ev.head_errors, "joint_error": ev.joint_error, "mu": hw.mu}
        )
        heads = " ".join(f"{e:.4f}" for e in ev.head_errors)
        print(f"member {i}: head errors [{heads}] joint error (mu={hw.mu:g}) {ev.joint_error:.4f}")
    scores = member_scores(members, test.images)
    ensemble = float(np.mean(J.predict(J.joint_network_output(scores, lambdas)) != test.labels))
    report["joint_error"] = ensemble
    print(f"joint error {ensemble:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .reproduce import run_profile

    run_profile(
        args.profile,
        seeds=args.seeds,
        epochs=args.epochs,
        n_train=args.n_train,
        n_test=args.n_test,
        out=args.out,
        progress=progress_log(),
    )
    return EXIT_OK


def progress_log():
    return log.info if log.isEnabledFor(logging.INFO) else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointdec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"jointdec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one multi-head network")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("boost", help="train a boosted ensemble of multi-head networks")
    _add_run_flags(p)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("eval", help="evaluate checkpoints or a boost manifest")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--manifest")
    p.add_argument("--lambdas", help="comma-separated member weights")
    p.add_argument("--uniform", action="store_true", help="weight every member equally")
    p.add_argument("--mu", type=float, help="override the auxiliary-head factor")
    p.add_argument("--dataset", choices=("toy", "cifar10"))
    p.add_argument("--data-dir")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="desk-scale analogues of the comparison tables")
    p.add_argument("profile", choices=("toy-table1", "toy-table2", "toy-table3"))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-test", type=int, default=600)
    p.add_argument("--out", default="runs/reproduce")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"jointdec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RoundAborted, FloatingPointError) as exc:
        print(f"jointdec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"jointdec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
