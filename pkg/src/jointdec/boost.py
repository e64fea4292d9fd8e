"""Sequential training of an accuracy-weighted ensemble of multi-head networks.

Round p trains a fresh member on the current sample-weight table, scores its
joint prediction on the training set, turns that accuracy into a network
weight, and reweights the samples for round p + 1. The ensemble prediction is
the network-weighted sum of every member's multi-head joint output.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import joint as J
from . import storage
from .config import RunConfig
from .errors import FormatError, JointDecError
from .train import Prepared, config_head_weights, evaluate, new_member, train_network

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class RoundAborted(JointDecError):
    """A member's training accuracy did not clear the lower accuracy clamp."""


@dataclass
class BoostRound:
    checkpoint: str
    acc: float
    lam: float
    weight_table: str
    params: int
    joint_test_error: float


@dataclass
class BoostState:
    gamma: int
    epsilon: float
    intent_mode: bool = False
    judge: str = "joint"
    rounds: list = field(default_factory=list)
    weight_table: str = ""
    final_joint_test_error: float | None = None
    prefix_joint_test_errors: list = field(default_factory=list)
    members: list = field(default_factory=list, repr=False)
    final_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def lambdas(self) -> list:
        return [r.lam for r in self.rounds]

    @property
    def accs(self) -> list:
        return [r.acc for r in self.rounds]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rounds)

    def to_manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "intent_mode": self.intent_mode,
            "judge": self.judge,
            "rounds": [asdict(r) for r in self.rounds],
            "weight_table": self.weight_table,
            "final_joint_test_error": self.final_joint_test_error,
            "prefix_joint_test_errors": self.prefix_joint_test_errors,
            "total_params": self.total_params,
        }

    @classmethod
    def from_manifest(cls, d: dict) -> "BoostState":
        try:
            return cls(
                gamma=d["gamma"],
                epsilon=d["epsilon"],
                intent_mode=d.get("intent_mode", False),
                judge=d.get("judge", "joint"),
                rounds=[BoostRound(**r) for r in d["rounds"]],
                weight_table=d.get("weight_table", ""),
                final_joint_test_error=d.get("final_joint_test_error"),
                prefix_joint_test_errors=d.get("prefix_joint_test_errors", []),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed boost manifest ({exc})") from None


def write_manifest(path, state: BoostState) -> None:
    Path(path).write_text(json.dumps(state.to_manifest(), indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> BoostState:
    try:
        return BoostState.from_manifest(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from None


def member_scores(members, images: np.ndarray) -> list:
    """Each member's multi-head joint output on ``images``."""
    return [J.multilayer_output(net.predict_proba(images), hw) for net, hw in members]


def ensemble_error(scores: list, lambdas, labels: np.ndarray) -> float:
    joint = J.joint_network_output(scores, lambdas)
    return float(np.mean(J.predict(joint) != labels))


def judge_correct(net, hw, dataset, judge: str) -> np.ndarray:
    ev = evaluate(net, hw, dataset)
    if judge == "joint":
        return ev.correct
    head1 = net.predict_proba(dataset.images)[0]
    return J.predict(head1) == dataset.labels


def boost_train(prepared: Prepared, cfg: RunConfig, out_dir=None, progress=None):
    """Run ``cfg.gamma`` boosting rounds.

    Returns ``(state, metrics_rows, timing_rows)``. When ``out_dir`` is given,
    member checkpoints, weight tables and ``manifest.json`` are written there.
    """
    train, test = prepared.train, prepared.test
    hw = config_head_weights(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    state = BoostState(cfg.gamma, cfg.epsilon, cfg.intent_mode, cfg.judge)
    table = J.SampleWeightTable.uniform(len(train))
    rows, timings = [], []
    test_scores = []

    for member in range(cfg.gamma):
        net = new_member(cfg, train.num_classes, member)
        result = train_network(net, hw, prepared, cfg, member, table.weights, log=progress)
        rows.extend(result.rows)
        timings.extend(result.timings)

        correct = judge_correct(net, hw, train, cfg.judge)
        acc = float(correct.mean())
        if acc <= J.CLAMP_LO:
            raise RoundAborted(
                f"member {member} reached training accuracy {acc:.4f}, "
                f"not above the clamp floor {J.CLAMP_LO}; aborting round"
            )
        lam = J.network_weight(acc, cfg.epsilon)
        log.info("member %d: train acc %.4f, lambda %.6f", member, acc, lam)

        ckpt_name = f"member_{member}.jdec"
        table_name = f"weights_{member}.jdwt"
        if out is not None:
            storage.save_checkpoint(out / ckpt_name, net, hw, prepared.descriptor, {"member": member})
            storage.save_weight_table(out / table_name, table.weights)

        test_scores.append(J.multilayer_output(net.predict_proba(test.images), hw))
        state.members.append((net, hw))
        state.rounds.append(
            BoostRound(
                ckpt_name,
                acc,
                lam,
                table_name,
                net.num_parameters(),
                float(np.mean(J.predict(test_scores[-1]) != test.labels)),
            )
        )
        table = J.update_sample_weights(table, correct, lam, cfg.intent_mode)

    state.prefix_joint_test_errors = [
        ensemble_error(test_scores[: i + 1], state.lambdas[: i + 1], test.labels)
        for i in range(cfg.gamma)
    ]
    state.final_joint_test_error = state.prefix_joint_test_errors[-1]
    state.weight_table = "weights_final.jdwt"
    state.final_weights = table.weights
    if out is not None:
        storage.save_weight_table(out / state.weight_table, table.weights)
        write_manifest(out / "manifest.json", state)
    return state, rows, timings


def load_members(manifest_path, mu: float | None = None):
    """Load (state, [(net, head weights), ...]) from a manifest file."""
    manifest_path = Path(manifest_path)
    state = read_manifest(manifest_path)
    members, headers = [], []
    for r in state.rounds:
        net, hw, header = storage.load_checkpoint(manifest_path.parent / r.checkpoint, mu)
        members.append((net, hw))
        headers.append(header)
    state.members = members
    return state, headers
