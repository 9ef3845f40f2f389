import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sopai.probe import fit_ridge
from sopai.net import one_hot
from sopai.tasks import dump, generate, load, principal_cosines, required_dim, rotate_roles


@given(st.sampled_from([0.0, 0.25, 0.5, 0.9, 1.0]), st.integers(0, 1000))
def test_pairwise_principal_cosines_equal_rho(rho, seed):
    n, C = 3, 4
    ts = generate(seed, n_tasks=n, C=C, d=required_dim(n, C, rho), per_class=2, rho=rho)
    for a in range(n):
        U = ts.tasks[a].basis
        np.testing.assert_allclose(U.T @ U, np.eye(C), atol=1e-12)
        for b in range(a + 1, n):
            np.testing.assert_allclose(principal_cosines(U, ts.tasks[b].basis), rho, atol=1e-10)


def test_shapes_balance_and_determinism():
    ts = generate(3, n_tasks=4, C=5, d=20, per_class=6, eval_per_class=2)
    t = ts.tasks[2]
    assert t.train.inputs.shape == (30, 20) and t.eval.inputs.shape == (10, 20)
    assert np.bincount(t.train.labels).tolist() == [6] * 5
    again = generate(3, n_tasks=4, C=5, d=20, per_class=6, eval_per_class=2)
    assert np.array_equal(again.tasks[2].train.inputs, t.train.inputs)
    other = generate(4, n_tasks=4, C=5, d=20, per_class=6)
    assert not np.array_equal(other.tasks[2].train.inputs, t.train.inputs)


def test_prototypes_have_requested_norm():
    ts = generate(0, n_tasks=2, C=4, d=8, per_class=1, scale=2.5)
    np.testing.assert_allclose(np.linalg.norm(ts.tasks[0].prototypes, axis=1), 2.5)


def test_default_tasks_are_linearly_separable_enough():
    ts = generate(0)
    t = ts.tasks[0]
    xi = fit_ridge(t.train.inputs, one_hot(t.train.labels, 10), 1.0)
    acc = np.mean(np.argmax(t.eval.inputs @ xi, 1) == t.eval.labels)
    assert acc > 0.9


def test_dimension_and_rho_checks():
    assert required_dim(10, 10, 1.0) == 10
    assert required_dim(10, 10, 0.0) == 100
    assert required_dim(10, 10, 0.5) == 110
    with pytest.raises(ValueError, match="needs d >= 100"):
        generate(0, rho=0.0, d=64)
    with pytest.raises(ValueError):
        generate(0, rho=1.5)


def test_rotate_roles():
    ts = generate(0, n_tasks=4, C=3, d=6, per_class=1)
    src, tr = rotate_roles(ts, 2)
    assert src.task_id == 2 and [t.task_id for t in tr] == [0, 1, 3]
    with pytest.raises(IndexError):
        rotate_roles(ts, 4)


def test_dump_load_round_trip(tmp_path):
    ts = generate(5, n_tasks=2, C=3, d=5, per_class=2)
    dump(ts, tmp_path)
    back = load(tmp_path)
    assert (back.seed, back.rho, back.n_classes, back.dim) == (5, 1.0, 3, 5)
    for a, b in zip(ts.tasks, back.tasks):
        assert np.array_equal(a.train.inputs, b.train.inputs)
        assert np.array_equal(a.eval.labels, b.eval.labels)
