import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import toy
from sopai.errors import DimensionError
from sopai.masking import (SPARSITY_GRID, PruneMask, apply_mask, collapsed_layers, jaccard, mask_from_text,
                           mask_to_text, measured_sparsity, n_keep, ranking, topk_mask)
from sopai.saliency import ScoreVector

scores = arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e6, 1e6, allow_nan=False))
fractions = st.floats(0.0, 0.999)


def test_n_keep_rounds_before_ceiling():
    assert n_keep(10_000, 0.6642) == 3358
    assert n_keep(10, 0.0) == 10
    assert n_keep(10, 0.35) == 7
    assert n_keep(3, 0.99) == 1


def test_ties_go_to_lower_index():
    m = topk_mask(np.ones(6), 0.5)
    assert m.bits.tolist() == [True, True, True, False, False, False]
    assert ranking([1.0, 2.0, 2.0, 0.0]).tolist() == [1, 2, 0, 3]
    assert ranking([1.0, 2.0, 2.0, 0.0], keep_highest=False).tolist() == [3, 0, 1, 2]


def test_keep_lowest_scores_respected():
    sv = ScoreVector("grasp", [3.0, -1.0, 2.0, 0.0], keep_highest=False)
    assert topk_mask(sv, 0.5).keep_indices().tolist() == [1, 3]
    assert topk_mask(sv, 0.5, keep_highest=True).keep_indices().tolist() == [0, 2]


def test_invalid_sparsity():
    for q in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            topk_mask(np.ones(4), q)


@given(scores, fractions)
def test_mask_size_matches_request(v, q):
    m = topk_mask(v, q)
    assert m.n_kept == n_keep(v.size, q)
    assert abs(m.realized_sparsity - q) < 1.0 / v.size + 1e-12


@given(scores, fractions, fractions)
def test_nested_masks(v, q1, q2):
    lo, hi = sorted((q1, q2))
    a, b = topk_mask(v, lo), topk_mask(v, hi)
    assert not np.any(b.bits & ~a.bits)


@given(scores, fractions)
def test_kept_weights_dominate_pruned(v, q):
    m = topk_mask(v, q)
    if m.n_kept < v.size:
        assert v[m.bits].min() >= v[~m.bits].max()


@pytest.mark.parametrize("p", [1000, 12_288, 16_384])
def test_grid_fidelity(p):
    v = np.random.default_rng(p).normal(size=p)
    for s in SPARSITY_GRID:
        assert abs(topk_mask(v, s / 100).realized_sparsity - s / 100) < 1.0 / p


def test_apply_mask_zeroes_and_warns_on_collapse(caplog):
    net, _ = toy((3, 4, 2))
    bits = np.ones(net.n_params, bool)
    bits[net.layer_slices()[1]] = False
    mask = PruneMask(bits, 0.4, "test")
    with caplog.at_level("WARNING"):
        pruned = apply_mask(net, mask)
    assert "layer(s) [1]" in caplog.text
    assert collapsed_layers(net, mask) == [1]
    assert np.all(pruned.W[~bits] == 0) and np.array_equal(pruned.W[bits], net.W[bits])
    assert measured_sparsity(pruned) == pytest.approx(8 / 20)
    with pytest.raises(DimensionError):
        apply_mask(net, PruneMask(np.ones(3, bool), 0.0))


def test_jaccard():
    a = PruneMask([1, 1, 0, 0], 0.5)
    b = PruneMask([1, 0, 1, 0], 0.5)
    assert jaccard(a, a) == 1.0
    assert jaccard(a, b) == pytest.approx(1 / 3)
    assert jaccard(PruneMask([0, 0], 0.99), PruneMask([0, 0], 0.99)) == 1.0


@given(st.lists(st.booleans(), min_size=0, max_size=300), fractions,
       st.one_of(st.none(), st.integers(0, 2**40)))
def test_mask_text_round_trip(bits, q, seed):
    m = PruneMask(np.array(bits, bool), q, "block", seed)
    back = mask_from_text(mask_to_text(m))
    assert np.array_equal(back.bits, m.bits)
    assert (back.sparsity, back.method, back.seed) == (q, "block", seed)


def test_mask_text_rejects_bad_length():
    txt = mask_to_text(PruneMask([1, 0, 1], 0.3)).replace("length 3", "length 4")
    with pytest.raises(ValueError):
        mask_from_text(txt)
