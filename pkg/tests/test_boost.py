import math

import numpy as np
import pytest

from jointdec import joint as J
from jointdec import storage
from jointdec.boost import boost_train, judge_correct, load_members, read_manifest
from jointdec.config import RunConfig
from jointdec.train import config_head_weights, evaluate, new_member, prepare, train_network


def small_cfg(**kw):
    base = dict(n_train=240, n_test=60, epochs=3, batch_size=32, m=2, seed=3)
    base.update(kw)
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def boosted(tmp_path_factory):
    cfg = small_cfg(gamma=3, scale="auto")
    out = tmp_path_factory.mktemp("boost")
    prepared = prepare(cfg)
    state, rows, _ = boost_train(prepared, cfg, out)
    return cfg, prepared, state, rows, out


def test_single_member_matches_plain_training():
    cfg = small_cfg(gamma=1)
    prepared = prepare(cfg)
    state, rows, _ = boost_train(prepared, cfg)
    net = new_member(cfg, 3)
    hw = config_head_weights(cfg)
    result = train_network(net, hw, prepared, cfg)
    assert rows == result.rows
    # with a positive network weight the one-member ensemble keeps the member's argmax
    assert state.lambdas[0] > 0
    assert state.final_joint_test_error == result.final_test.joint_error
    assert state.rounds[0].joint_test_error == result.final_test.joint_error


def test_rounds_and_rows(boosted):
    cfg, _, state, rows, out = boosted
    assert len(state.rounds) == 3
    assert [r["member"] for r in rows] == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    for name in ("manifest.json", "weights_final.jdwt", "member_2.jdec", "weights_0.jdwt"):
        assert (out / name).exists()


def test_lambdas_recomputed_from_acc(boosted):
    _, _, state, _, out = boosted
    manifest = read_manifest(out / "manifest.json")
    for r in manifest.rounds:
        assert abs(r.lam - math.log(J.clamp_accuracy(r.acc) / (1 - J.clamp_accuracy(r.acc))) / 10) < 1e-9


def test_weight_table_replay(boosted):
    # each member's table equals the previous table pushed through the reweighting rule,
    # judged by the previous member's joint prediction on the training set
    cfg, prepared, state, _, out = boosted
    table = J.SampleWeightTable.uniform(len(prepared.train))
    for i, r in enumerate(state.rounds):
        stored = storage.load_weight_table(out / r.weight_table)
        np.testing.assert_allclose(stored, table.weights, rtol=0, atol=1e-12)
        net, hw = state.members[i]
        correct = judge_correct(net, hw, prepared.train, "joint")
        assert correct.mean() == r.acc
        table = J.update_sample_weights(table, correct, r.lam)
    np.testing.assert_allclose(storage.load_weight_table(out / "weights_final.jdwt"), table.weights, atol=1e-12)


def test_second_table_splits_on_error_set(boosted):
    _, prepared, state, _, out = boosted
    w = storage.load_weight_table(out / state.rounds[1].weight_table)
    net, hw = state.members[0]
    wrong = ~evaluate(net, hw, prepared.train).correct
    assert wrong.any() and (~wrong).any()
    # two distinct values, partitioned exactly by the first member's errors
    assert len(set(w[wrong])) == 1 and len(set(w[~wrong])) == 1
    assert w[wrong][0] != w[~wrong][0]
    assert abs(w.mean() - 1) < 1e-9


def test_parameter_budget(boosted):
    cfg, _, state, _, _ = boosted
    single = new_member(RunConfig(**{**cfg.as_dict(), "scale": "1", "gamma": 1}), 3).num_parameters()
    assert abs(state.total_params - single) / single < 0.10


def test_manifest_replay(boosted):
    _, prepared, state, _, out = boosted
    loaded, _ = load_members(out / "manifest.json")
    from jointdec.boost import ensemble_error, member_scores

    err = ensemble_error(member_scores(loaded.members, prepared.test.images), loaded.lambdas, prepared.test.labels)
    assert err == state.final_joint_test_error


def test_deterministic(boosted):
    cfg, prepared, state, rows, _ = boosted
    again, rows2, _ = boost_train(prepared, cfg)
    assert again.lambdas == state.lambdas
    assert rows2 == rows
    assert again.final_weights.tobytes() == state.final_weights.tobytes()
