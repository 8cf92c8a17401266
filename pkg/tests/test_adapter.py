"""Tests for sparse-plus-low-rank updates and masks."""

import numpy as np
import pytest

from core.adapter import (
    SparseLowRankUpdate,
    UnstructuredMask,
    backward_rows,
    forward,
    forward_rows,
    init_update,
    merge,
    project_onto_support,
)
from core.decompose import Support
from core.exceptions import ParameterError, ShapeError
from core.linalg import make_rng
from training.optimizer import AdamWHyper, AdamWState, adamw_step


@pytest.fixture
def weight():
    """A 6x5 float32 weight."""
    return make_rng(0).standard_normal((6, 5)).astype(np.float32)


@pytest.fixture
def trained_update(weight):
    """An update with non-zero factors and sparse values."""
    rng = make_rng(1)
    upd = init_update(weight, 2, 4, "magnitude", rng)
    upd.u[...] = rng.standard_normal(upd.u.shape)
    upd.s2_values[...] = rng.standard_normal(upd.card)
    return upd


class TestUnstructuredMask:
    """Tests for UnstructuredMask."""

    def test_ones(self):
        """Test the all-ones mask."""
        mask = UnstructuredMask.ones((2, 3))
        assert mask.sparsity() == 0.0
        assert mask.nonzero_count() == 6

    def test_apply(self):
        """Test that masked entries become zero."""
        mask = UnstructuredMask(np.array([[True, False], [False, True]]), (2, 2))
        out = mask.apply(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(out, np.array([[1.0, 0.0], [0.0, 4.0]]))
        assert mask.sparsity() == 0.5

    def test_wrong_size(self):
        """Test that the bit count must match the host."""
        with pytest.raises(ShapeError):
            UnstructuredMask(np.ones(5, dtype=bool), (2, 3))


class TestInitUpdate:
    """Tests for init_update."""

    def test_zero_delta(self, weight):
        """Test that a fresh update contributes nothing."""
        upd = init_update(weight, 2, 4, "decompose", make_rng(2))
        assert not upd.u.any()
        assert not upd.delta_dense().any()
        assert upd.v.any()
        assert upd.card == 4

    def test_trainable_count(self, weight):
        """Test the (m + n) r + card count."""
        upd = init_update(weight, 3, 7, "random", make_rng(3))
        assert upd.num_trainable == (6 + 5) * 3 + 7

    def test_rank_out_of_range(self, weight):
        """Test that r must not exceed min(m, n)."""
        with pytest.raises(ParameterError):
            init_update(weight, 6, 1, "magnitude", make_rng(0))

    def test_bad_factor_shapes(self):
        """Test that mismatched factors are a shape error."""
        with pytest.raises(ShapeError):
            SparseLowRankUpdate(
                u=np.zeros((3, 2)), v=np.zeros((3, 4)), s2_values=np.zeros(0),
                support=Support.empty((3, 4)), host_shape=(3, 4),
            )


class TestForward:
    """Tests for the forward kernels."""

    def test_fresh_update_bit_exact(self, weight):
        """Test that zero-initialised updates leave outputs unchanged."""
        upd = init_update(weight, 2, 4, "magnitude", make_rng(4))
        x = make_rng(5).standard_normal((3, 5)).astype(np.float32)
        assert np.array_equal(forward_rows(x, weight, None, upd), forward_rows(x, weight, None, None))

    def test_matches_merged(self, weight, trained_update):
        """Test that the factored forward equals the merged matrix."""
        mask = UnstructuredMask(make_rng(6).random(weight.shape) > 0.3, weight.shape)
        x = make_rng(7).standard_normal((5, 4)).astype(np.float64)
        expected = merge(weight, mask, trained_update).astype(np.float64) @ x
        assert np.allclose(forward(x, weight, mask, trained_update), expected, atol=1e-5)

    def test_shape_mismatch(self, weight, trained_update):
        """Test that the input width must match."""
        with pytest.raises(ShapeError):
            forward(np.ones((4, 2)), weight, None, trained_update)


class TestBackward:
    """Tests for backward_rows."""

    def test_update_gradients(self, weight, trained_update):
        """Test the factor and support gradients against the dense delta gradient."""
        rng = make_rng(8)
        x = rng.standard_normal((4, 5))
        g = rng.standard_normal((4, 6))
        upd = trained_update.astype(np.float64)
        gx, gw, gu, gv, gs2 = backward_rows(x, g, weight.astype(np.float64), None, upd, need_weight_grad=True)
        dense = g.T @ x
        assert np.allclose(gw, dense)
        assert np.allclose(gu, dense @ upd.v.T)
        assert np.allclose(gv, upd.u.T @ dense)
        assert np.allclose(gs2, dense[upd.support.rows, upd.support.cols])
        full = weight.astype(np.float64) + upd.delta_dense()
        assert np.allclose(gx, g @ full)

    def test_weight_gradient_masked(self, weight):
        """Test that masked weights receive no gradient."""
        mask = UnstructuredMask(np.eye(6, 5, dtype=bool), weight.shape)
        x = np.ones((2, 5))
        g = np.ones((2, 6))
        _, gw, gu, _, _ = backward_rows(x, g, weight.astype(np.float64), mask, None, need_weight_grad=True)
        assert not gw[~mask.bits].any()
        assert gu is None


class TestSupportFreezing:
    """Tests that sparse values never leave the support."""

    def test_projection_idempotent(self, trained_update):
        """Test that the dense S2 is fixed by projection onto its support."""
        dense = trained_update.sparse_dense()
        assert np.array_equal(project_onto_support(dense, trained_update.support), dense)

    def test_projection_shape_error(self, trained_update):
        """Test that the projected matrix must have the host shape."""
        with pytest.raises(ShapeError):
            project_onto_support(np.zeros((2, 2)), trained_update.support)

    def test_optimizer_steps_keep_support(self, weight, trained_update):
        """Test that training the sparse values leaves zeros off the support."""
        params = {"s2": trained_update.s2_values, "u": trained_update.u, "v": trained_update.v}
        state = AdamWState()
        rng = make_rng(9)
        for _ in range(20):
            x = rng.standard_normal((3, 5)).astype(np.float32)
            g = rng.standard_normal((3, 6)).astype(np.float32)
            _, _, gu, gv, gs2 = backward_rows(x, g, weight, None, trained_update)
            adamw_step(params, {"s2": gs2, "u": gu, "v": gv}, state, AdamWHyper(), 1e-2)
        dense = trained_update.sparse_dense()
        off = np.ones(weight.shape, dtype=bool)
        off[trained_update.support.rows, trained_update.support.cols] = False
        assert not dense[off].any()
        assert np.array_equal(project_onto_support(dense, trained_update.support), dense)


class TestHandCases:
    """Small worked examples for the three-term forward."""

    def test_two_by_two(self):
        """Test (W*S1 + U V + S2) x on a 2x2 site."""
        w = np.eye(2, dtype=np.float32)
        mask = UnstructuredMask(np.array([[True, False], [False, False]]), (2, 2))
        upd = SparseLowRankUpdate(
            u=np.array([[1.0], [0.0]], np.float32),
            v=np.array([[0.0, 1.0]], np.float32),
            s2_values=np.array([3.0], np.float32),
            support=Support(np.array([[1, 1]]), (2, 2)),
            host_shape=(2, 2),
        )
        x = np.ones((2, 1), np.float32)
        assert forward(x, w, mask, upd).ravel().tolist() == [2.0, 3.0]
        assert np.array_equal(merge(w, mask, upd) @ x, forward(x, w, mask, upd))

    def test_linear_in_input(self, weight, trained_update):
        """Test forward(a x1 + x2) = a forward(x1) + forward(x2)."""
        rng = make_rng(10)
        x1 = rng.standard_normal((5, 3))
        x2 = rng.standard_normal((5, 3))
        upd = trained_update.astype(np.float64)
        w = weight.astype(np.float64)
        lhs = forward(2.5 * x1 + x2, w, None, upd)
        rhs = 2.5 * forward(x1, w, None, upd) + forward(x2, w, None, upd)
        assert np.allclose(lhs, rhs, rtol=1e-5, atol=1e-9)

    def test_masked_weight_only(self, weight):
        """Test that zero factors leave exactly the masked product."""
        mask = UnstructuredMask(make_rng(11).random(weight.shape) > 0.5, weight.shape)
        upd = init_update(weight, 2, 3, "magnitude", make_rng(12))
        upd.v[...] = 0.0
        x = make_rng(13).standard_normal((5, 4)).astype(np.float32)
        expected = np.where(mask.bits, weight, 0).astype(np.float32) @ x
        assert np.allclose(forward(x, weight, mask, upd), expected, atol=1e-6)
