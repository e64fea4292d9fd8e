"""Training and evaluation of a single multi-head network."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import joint as J
from . import tensor as T
from .config import STREAM_INIT, STREAM_SHUFFLE, RunConfig, augment_key, stream_rng
from .nn import HeadOptions, MultiHeadNetwork, build_multihead, make_arch, scale_channels
from .optim import NesterovSGD, SgdrSchedule, sgdr_lr

METRICS_COLUMNS = (
    "epoch",
    "member",
    "lr",
    "train_loss",
    "head_train_acc",
    "joint_train_acc",
    "test_error",
    "joint_test_error",
)


@dataclass
class Prepared:
    """Normalized train/test splits plus the statistics used to normalize them."""

    train: D.LabeledImageSet
    test: D.LabeledImageSet
    policy: D.AugmentPolicy
    descriptor: dict


def load_dataset(cfg: RunConfig) -> tuple[D.LabeledImageSet, D.LabeledImageSet]:
    if cfg.dataset == "toy":
        return D.make_toy_set(cfg.data_seed, cfg.n_train, cfg.n_test)
    return D.read_cifar10(cfg.data_dir)


def prepare(cfg: RunConfig, mean=None, std=None) -> Prepared:
    """Load the configured dataset and normalize with train-split statistics.

    Passing ``mean``/``std`` reuses stored statistics (e.g. from a checkpoint).
    """
    train, test = load_dataset(cfg)
    if mean is None or std is None:
        mean, std = D.channel_stats(train.images)
    make_policy = D.toy_policy if cfg.dataset == "toy" else D.cifar_policy
    policy = make_policy(mean, std)
    descriptor = {
        "dataset": cfg.dataset,
        "data_dir": cfg.data_dir,
        "data_seed": cfg.data_seed,
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "channel_mean": list(policy.channel_mean),
        "channel_std": list(policy.channel_std),
    }
    return Prepared(D.normalize(train, policy), D.normalize(test, policy), policy, descriptor)


def member_arch(cfg: RunConfig, num_classes: int):
    spec = make_arch(cfg.arch, num_classes, HeadOptions(cfg.head_bn, cfg.head_act))
    factor = cfg.scale_factor()
    return scale_channels(spec, factor) if factor != 1 else spec


def new_member(cfg: RunConfig, num_classes: int, member: int = 0) -> MultiHeadNetwork:
    return build_multihead(
        member_arch(cfg, num_classes), cfg.m, stream_rng(cfg.seed, member, STREAM_INIT), cfg.head_order
    )


def config_head_weights(cfg: RunConfig) -> J.HeadWeights:
    return J.head_weights(cfg.alpha1, cfg.k, cfg.m, cfg.mu)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    head_errors: list
    joint_error: float
    joint_scores: np.ndarray
    correct: np.ndarray


def evaluate(net: MultiHeadNetwork, hw: J.HeadWeights, dataset: D.LabeledImageSet) -> Evaluation:
    outs = net.predict_proba(dataset.images)
    scores = J.multilayer_output(outs, hw)
    correct = J.predict(scores) == dataset.labels
    head_errors = [float(np.mean(J.predict(o) != dataset.labels)) for o in outs]
    return Evaluation(head_errors, float(np.mean(~correct)), scores, correct)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    final_test: Evaluation | None = None
    best_epoch: int = 0
    best_joint_test_error: float = 1.0


def _fmt(x) -> str:
    return repr(float(x))


def train_network(
    net: MultiHeadNetwork,
    hw: J.HeadWeights,
    prepared: Prepared,
    cfg: RunConfig,
    member: int = 0,
    sample_weights: np.ndarray | None = None,
    log=None,
) -> TrainResult:
    """Train ``net`` for ``cfg.epochs`` epochs with SGDR + Nesterov momentum.

    Per-sample weights scale each sample's one-hot label; the loss is the
    alpha-weighted sum of per-head weighted cross entropies.
    """
    train, test = prepared.train, prepared.test
    n = len(train)
    weights = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    sched = SgdrSchedule(cfg.l_max, cfg.l_min, cfg.t0, cfg.t_mult)
    opt = NesterovSGD(net.parameters(), cfg.momentum, cfg.weight_decay)
    shuffle_rng = stream_rng(cfg.seed, member, STREAM_SHUFFLE)
    key = augment_key(cfg.seed, member)
    nb = D.num_batches(n, cfg.batch_size)
    num_classes = train.num_classes
    result = TrainResult()

    for epoch in range(cfg.epochs):
        t_start = time.perf_counter()
        lr_start = sgdr_lr(sched, float(epoch))
        loss_sum = 0.0
        head_hits = np.zeros(hw.m)
        joint_hits = 0
        for b, idx in enumerate(D.batches(n, cfg.batch_size, shuffle_rng)):
            lr = sgdr_lr(sched, epoch + b / nb)
            x = train.images[idx]
            if cfg.augment:
                x = D.augment_batch(x, prepared.policy, key, epoch, idx)
            labels = train.labels[idx]
            y = J.scaled_one_hot(labels, weights[idx], num_classes)
            with T.Tape() as tape:
                outs = net.forward_all_heads(x, training=True)
                loss = J.multilayer_loss([J.weighted_cross_entropy(o, y) for o in outs], hw)
            T.backward(tape, loss)
            opt.step(lr)

            loss_sum += loss.item() * len(idx)
            probs = [o.data for o in outs]
            head_hits += [np.sum(J.predict(p) == labels) for p in probs]
            joint_hits += int(np.sum(J.predict(J.multilayer_output(probs, hw)) == labels))

        ev = evaluate(net, hw, test)
        row = {
            "epoch": epoch + 1,
            "member": member,
            "lr": _fmt(lr_start),
            "train_loss": _fmt(loss_sum / n),
            "head_train_acc": ";".join(_fmt(h / n) for h in head_hits),
            "joint_train_acc": _fmt(joint_hits / n),
            "test_error": _fmt(ev.head_errors[0]),
            "joint_test_error": _fmt(ev.joint_error),
        }
        result.rows.append(row)
        result.timings.append(
            {"epoch": epoch + 1, "member": member, "wall_time": round(time.perf_counter() - t_start, 3)}
        )
        if ev.joint_error < result.best_joint_test_error or epoch == 0:
            result.best_joint_test_error = ev.joint_error
            result.best_epoch = epoch + 1
        result.final_test = ev
        if log is not None:
            log(
                f"member {member} epoch {epoch + 1}/{cfg.epochs} lr {lr_start:.4f} "
                f"loss {loss_sum / n:.4f} test err {ev.head_errors[0]:.4f} joint {ev.joint_error:.4f}"
            )
    return result


def rows_to_csv(rows, columns=METRICS_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, rows, columns=METRICS_COLUMNS) -> None:
    Path(path).write_text(rows_to_csv(rows, columns))
