import csv
import statistics
from collections import defaultdict
from dataclasses import replace

import pytest

from sopai.probe import read_records_csv
from sopai.runner import (MalformedCsvError, RunConfig, config_from_text, config_to_text, derive_seed, run, summarize)
from sopai.trainer import SgdSchedule

TINY = RunConfig(n_tasks=3, n_classes=3, dim=8, per_class=8, hidden=(10, 6),
                 pretrain=SgdSchedule(epochs=8, lr=0.02, decay_epochs=(6,), batch_size=8),
                 retrain=SgdSchedule(epochs=3, decay_epochs=(2,), batch_size=8),
                 methods=("magnitude", "diag"), sparsities=(36.0, 66.42), seeds=(0, 1))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    return out, run(TINY, out_dir=str(out))


def test_config_defaults_and_validation():
    c = RunConfig()
    assert c.sparsities == (36.00, 47.52, 59.04, 66.42, 73.80, 78.52, 83.22)
    assert c.methods and c.seeds == (0,)
    for bad in (dict(sparsities=(50.0, 40.0)), dict(sparsities=(100.0,)), dict(sparsities=()),
                dict(methods=()), dict(methods=("nope",)), dict(seeds=())):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_config_text_round_trip():
    c = replace(TINY, rotations=(0, 2), apply_obs_update=True, out_dir="x")
    assert config_from_text(config_to_text(c)) == c
    assert config_from_text(config_to_text(RunConfig())) == RunConfig()


def test_partial_config_keeps_defaults():
    c = config_from_text("[experiment]\nmethods = block\n[retrain]\nepochs = 9\ndecay_epochs = 3, 6\n")
    assert c.methods == ("block",) and c.retrain.epochs == 9 and c.retrain.decay_epochs == (3, 6)
    assert c.retrain.lr == 5e-3 and c.pretrain == RunConfig().pretrain


def test_derived_seeds_are_distinct_and_stable():
    seeds = {derive_seed(0, r, m, q) for r in range(10) for m in range(6) for q in range(8)}
    assert len(seeds) == 480
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)


def test_row_count_and_outputs(tiny_run):
    out, res = tiny_run
    n = len(TINY.seeds) * TINY.n_tasks * len(TINY.methods) * (1 + 2 * len(TINY.sparsities)) * TINY.n_tasks
    assert len(res.records) == n
    for name in ("config.ini", "results.csv", "summary.csv", "summary.txt", "summary.svg",
                 "seed0/theta0.ckpt", "seed1/pretrain_loss.csv"):
        assert (out / name).exists(), name
    assert res.leakage == 0 and not res.incomplete
    assert "transfer_leakage_reads 0" in (out / "summary.txt").read_text()
    assert config_from_text((out / "config.ini").read_text()) == replace(TINY, out_dir=str(out))


def test_summary_matches_independent_aggregation(tiny_run):
    out, _ = tiny_run
    groups = defaultdict(list)
    with open(out / "results.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            groups[(row["method"], round(float(row["sparsity"]) * 100, 2), row["role"], row["stage"])].append(
                float(row["accuracy"]))
    rows = summarize(out / "results.csv")
    assert len(rows) == len(groups)
    for r in rows:
        vals = groups[(r["method"], round(r["sparsity"], 2), r["role"], r["stage"])]
        assert r["n"] == len(vals)
        assert r["mean"] == pytest.approx(statistics.fmean(vals), abs=1e-12)
        assert r["std"] == pytest.approx(statistics.pstdev(vals), abs=1e-12)


def test_summarize_trivial_cases(tmp_path):
    head = "method,sparsity,task_id,role,stage,accuracy,seed\n"
    p = tmp_path / "one.csv"
    p.write_text(head + "diag,0.36,1,transfer,pruned,0.7,0\n")
    (r,) = summarize(p)
    assert (r["mean"], r["std"], r["n"]) == (0.7, 0.0, 1)
    p.write_text(head + "diag,0.36,1,transfer,pruned,0.4,0\ndiag,0.36,2,transfer,pruned,0.6,0\n")
    assert summarize(p)[0]["mean"] == pytest.approx(0.5)


def test_summarize_source_and_transfer_kept_apart(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("method,sparsity,task_id,role,stage,accuracy,seed\n"
                 "diag,0.36,0,source,pruned,1.0,0\ndiag,0.36,1,transfer,pruned,0.0,0\n")
    assert {r["role"]: r["mean"] for r in summarize(p)} == {"source": 1.0, "transfer": 0.0}


def test_summarize_reports_bad_lines(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("method,sparsity,task_id,role,stage,accuracy,seed\n"
                 "diag,0.36,1,transfer,pruned,0.5,0\n"
                 "diag,0.36,1,transfer,pruned\n"
                 "diag,0.36,1,transfer,pruned,abc,0\n"
                 "diag,0.36,1,sideways,pruned,0.5,0\n")
    with pytest.raises(MalformedCsvError) as ei:
        summarize(p)
    assert [n for n, _ in ei.value.problems] == [3, 4, 5]
    p.write_text("a,b\n")
    with pytest.raises(MalformedCsvError):
        summarize(p)


def test_rerun_is_byte_identical(tmp_path):
    cfg = replace(TINY, seeds=(0,), methods=("block",))
    run(cfg, out_dir=str(tmp_path / "a"))
    run(cfg, out_dir=str(tmp_path / "b"))
    for name in ("results.csv", "summary.csv", "summary.svg", "seed0/theta0.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_zero_sparsity_rows_equal_unpruned(tmp_path):
    cfg = replace(TINY, seeds=(0,), sparsities=(0.0,), methods=("magnitude", "snip", "grasp"))
    recs = run(cfg, out_dir=str(tmp_path)).records
    base = {(r.method, r.task_id, r.seed): r.accuracy for r in recs if r.stage == "unpruned"}
    pruned = [r for r in recs if r.stage == "pruned"]
    assert pruned and all(r.accuracy == base[(r.method, r.task_id, r.seed)] for r in pruned)


def test_failed_cells_are_isolated(tmp_path):
    # exact_obs on a network above the cap fails; the other method still runs
    cfg = replace(TINY, seeds=(0,), methods=("exact_obs", "magnitude"), exact_max_params=10)
    res = run(cfg, out_dir=str(tmp_path))
    assert len(res.incomplete) == TINY.n_tasks * len(TINY.sparsities)
    assert {r.method for r in res.records} == {"exact_obs", "magnitude"}
    assert not any(r.method == "exact_obs" and r.stage != "unpruned" for r in res.records)
    assert "INCOMPLETE" in (tmp_path / "summary.txt").read_text()


def test_heldout_split_reported(tmp_path):
    cfg = replace(TINY, seeds=(0,), methods=("diag",), report_heldout=True, rotations=(1,))
    res = run(cfg, out_dir=str(tmp_path))
    assert len(res.heldout) == len(res.records)
    back = read_records_csv(tmp_path / "results_heldout.csv")
    assert len(back) == len(res.heldout)
    assert [(r.method, r.task_id, r.stage) for r in back] == [(r.method, r.task_id, r.stage) for r in res.records]
