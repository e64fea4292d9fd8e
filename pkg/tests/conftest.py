import numpy as np
import pytest

from jointdec import tensor as T


def numeric_grad(f, arr, index, h=1e-5):
    """Central difference of scalar f() w.r.t. arr[index] (arr modified in place)."""
    old = arr[index]
    arr[index] = old + h
    plus = f()
    arr[index] = old - h
    minus = f()
    arr[index] = old
    return (plus - minus) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_grads(build_loss, leaves, rng, probes=None, h=1e-5):
    """Max relative error between tape gradients and central differences.

    ``build_loss()`` must return a scalar Tensor computed from ``leaves``.
    """
    with T.Tape() as tape:
        loss = build_loss()
    T.backward(tape, loss)
    worst = 0.0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        idxs = range(flat.size) if probes is None else rng.integers(0, flat.size, size=probes)
        for i in idxs:
            fd = numeric_grad(lambda: build_loss().item(), flat, int(i), h)
            worst = max(worst, rel_err(fd, leaf.grad.reshape(-1)[int(i)]))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
