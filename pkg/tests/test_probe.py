import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sopai.net import init_network
from sopai.oracles import gd_ridge
from sopai.probe import (CSV_FIELDS, AccessLog, EvalRecord, TrackedBatch, evaluate, fit_probe, fit_ridge,
                         read_records_csv, ridge_objective, run_protocol, write_records_csv)
from sopai.saliency import METHODS
from sopai.tasks import generate, rotate_roles
from sopai.trainer import SgdSchedule, pretrain

RETRAIN = SgdSchedule(epochs=4, lr=5e-3, decay_epochs=(2,), batch_size=20)


@pytest.fixture(scope="module")
def setup():
    ts = generate(seed=2, n_tasks=3, C=4, d=10, per_class=10)
    net = init_network((10, 12, 6), {t.task_id: 4 for t in ts.tasks}, seed=1)
    net0, _ = pretrain(net, ts.train_batches(), SgdSchedule(epochs=20, lr=0.02, decay_epochs=(15,), batch_size=10))
    probes = {t.task_id: fit_probe(net0, t.train, t.task_id, 4) for t in ts.tasks}
    return ts, net0, probes


def protocol(setup, method, q_grid, **kw):
    ts, net0, probes = setup
    src, tr = rotate_roles(ts, 0)
    return run_protocol(net0, (src.task_id, src.train), [(t.task_id, t.train) for t in tr], method, q_grid, RETRAIN,
                        0, probes, **kw)


def test_ridge_identity_case_is_exact():
    Y = np.eye(5)[:, :3]
    assert np.array_equal(fit_ridge(np.eye(5), Y, 1.0), Y / 2)


@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 6)), elements=st.floats(-3, 3)),
       st.integers(1, 4), st.floats(0.1, 10), st.integers(0, 1000))
def test_ridge_normal_equations(Phi, C, alpha, seed):
    Y = np.eye(C)[np.random.default_rng(seed).integers(0, C, Phi.shape[0])]
    xi = fit_ridge(Phi, Y, alpha)
    resid = (Phi.T @ Phi + alpha * np.eye(Phi.shape[1])) @ xi - Phi.T @ Y
    assert np.max(np.abs(resid)) < 1e-8 * max(1.0, np.abs(Phi).max() ** 2 * Phi.shape[0])


def test_ridge_matches_gradient_descent():
    rng = np.random.default_rng(1)
    Phi, Y = rng.normal(size=(30, 5)), np.eye(3)[rng.integers(0, 3, 30)]
    xi = fit_ridge(Phi, Y, 2.0)
    gd = gd_ridge(Phi, Y, 2.0)
    assert np.max(np.abs(xi - gd)) < 1e-6
    assert ridge_objective(Phi, Y, xi, 2.0) <= ridge_objective(Phi, Y, gd, 2.0) + 1e-10


def test_ridge_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit_ridge(np.eye(2), np.eye(2), 0.0)
    with pytest.raises(ValueError):
        fit_ridge(np.array([[np.nan, 1.0]]), np.eye(1), 1.0)


def test_probes_are_frozen_and_accurate(setup):
    ts, net0, probes = setup
    p = probes[0]
    with pytest.raises(ValueError):
        p.xi[0, 0] = 1.0
    assert evaluate(net0, p, ts.tasks[0].train) > 0.8
    assert p.digest() == fit_probe(net0, ts.tasks[0].train, 0, 4).digest()


@pytest.mark.parametrize("method", METHODS)
def test_zero_sparsity_reproduces_unpruned(setup, method):
    recs = protocol(setup, method, [0.0])
    by = {(r.task_id, r.stage): r.accuracy for r in recs}
    for t in range(3):
        assert by[(t, "pruned")] == by[(t, "unpruned")]


def test_record_layout(setup):
    recs = protocol(setup, "magnitude", [0.36, 0.6642])
    assert len(recs) == 3 * (1 + 2 * 2)
    assert [r.stage for r in recs[:3]] == ["unpruned"] * 3
    assert {r.role for r in recs if r.task_id == 0} == {"source"}
    assert {r.role for r in recs if r.task_id != 0} == {"transfer"}
    assert all(0.0 <= r.accuracy <= 1.0 for r in recs)
    assert protocol(setup, "magnitude", []) == recs[:3]


def test_no_transfer_reads_outside_evaluation(setup):
    log = AccessLog()
    protocol(setup, "diag", [0.5], access_log=log)
    assert log.leakage() == 0
    phases = {ph for (t, ph) in log.counts if t == 0}
    assert {"scoring", "retraining", AccessLog.EVAL} <= phases


def test_leakage_counter_detects_reads():
    ts = generate(0, n_tasks=2, C=2, d=4, per_class=2)
    log = AccessLog()
    log.transfer_ids.add(1)
    tb = TrackedBatch(ts.tasks[1].train, 1, log)
    with log.during("scoring"):
        tb.inputs
        tb.subset([0])
    tb.labels
    assert log.leakage() == 2
    assert len(tb) == 4


def test_obs_update_start_respects_mask(setup):
    recs = protocol(setup, "block", [0.5], apply_obs_update=True)
    assert len(recs) == 9


def test_missing_probe(setup):
    ts, net0, probes = setup
    with pytest.raises(KeyError):
        run_protocol(net0, (0, ts.tasks[0].train), [(1, ts.tasks[1].train)], "magnitude", [0.5], RETRAIN, 0,
                     {0: probes[0]})


def test_protocol_is_deterministic(setup):
    assert protocol(setup, "snip", [0.5]) == protocol(setup, "snip", [0.5])


def test_records_csv_round_trip(tmp_path):
    recs = [EvalRecord("diag", 0.3600, 3, "transfer", "pruned", 0.5, 1),
            EvalRecord("block", 0.0, 0, "source", "unpruned", 1.0, None)]
    buf = io.StringIO()
    write_records_csv(buf, recs)
    assert buf.getvalue().splitlines()[0] == ",".join(CSV_FIELDS)
    assert buf.getvalue().splitlines()[1] == "diag,0.360000,3,transfer,pruned,0.500000,1"
    path = tmp_path / "r.csv"
    write_records_csv(path, recs)
    assert read_records_csv(path) == recs
