import numpy as np
import pytest

from unitface import numerics as nx
from unitface.fusion import EmptyContextError, FusionBlock, FusionStack, fuse_stack, gate_activations
from unitface.numerics import ShapeError


def _identity_block(d=2):
    blk = FusionBlock(nx.make_rng(0), d, 1, norm=False)
    for W in (blk.Wq, blk.Wk, blk.Wv, blk.Wo):
        W.value[...] = np.eye(d)
    return blk


def test_single_head_hand_example():
    # zero gate weights give sigmoid(0) = 0.5; one context row means the
    # attention output is that row: Q + 0.5 * [0, 2] = [1, 1]
    out = _identity_block().forward(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]))[0]
    np.testing.assert_array_equal(out, [[1.0, 1.0]])


def test_gate_bias_saturates():
    blk = _identity_block()
    blk.bg.value[...] = 10.0
    g = gate_activations(blk, np.array([[1.0, 0.0], [-3.0, 4.0]]))
    assert g.shape == (2, 1, 2)
    assert np.all(g > 0.9999)


def test_very_negative_gate_bias_passes_queries_through():
    blk = _identity_block()
    blk.bg.value[...] = -800.0
    Q = np.array([[1.0, 0.0]])
    np.testing.assert_array_equal(blk.forward(Q, np.array([[0.0, 2.0]]))[0], Q)


def test_depth_two_shape():
    rng = nx.make_rng(4)
    stack = FusionStack(rng, 8, 2, 2)
    out = fuse_stack(stack, rng.normal(size=(3, 8)), rng.normal(size=(5, 8)))
    assert out.shape == (3, 8)


def test_depth_zero_is_identity():
    Q = np.arange(6.0).reshape(2, 3)
    out = fuse_stack(FusionStack(nx.make_rng(0), 3, 1, 0), Q, None)
    np.testing.assert_array_equal(out, Q)
    assert out is not Q


@pytest.mark.parametrize("seed", range(5))
def test_zero_values_give_identity(seed):
    rng = nx.make_rng(seed)
    stack = FusionStack(rng, 8, 4, 3, d_ctx=6)
    for p in stack.params().values():
        p.value[...] += rng.normal(size=p.shape)
    stack.zero_values()
    Q = rng.normal(size=(4, 8))
    np.testing.assert_array_equal(fuse_stack(stack, Q, rng.normal(size=(7, 6))), Q)


def test_gates_ignore_context():
    rng = nx.make_rng(9)
    blk = FusionBlock(rng, 8, 2, d_ctx=5)
    blk.Wg.value[...] = rng.normal(size=blk.Wg.shape)
    Q = rng.normal(size=(3, 8))
    g1 = blk.gate_activations(Q)
    blk.forward(Q, rng.normal(size=(2, 5)))
    blk.forward(Q, 100 * rng.normal(size=(9, 5)))
    np.testing.assert_array_equal(g1, blk.gate_activations(Q))


def test_output_length_follows_queries():
    rng = nx.make_rng(2)
    blk = FusionBlock(rng, 4, 2)
    for M, N in [(1, 7), (6, 1), (5, 5)]:
        assert blk.forward(rng.normal(size=(M, 4)), rng.normal(size=(N, 4)))[0].shape == (M, 4)


def test_errors():
    rng = nx.make_rng(0)
    blk = FusionBlock(rng, 4, 2)
    with pytest.raises(EmptyContextError):
        blk.forward(np.zeros((2, 4)), np.zeros((0, 4)))
    with pytest.raises(ShapeError):
        blk.forward(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        FusionBlock(rng, 6, 4)


@pytest.mark.parametrize("name", ["fusion_block", "fusion_stack"])
def test_gradients(name):
    from unitface.verify import GRADIENT_CHECKS

    for seed in (0, 1, 2):
        rep = GRADIENT_CHECKS[name](seed)
        assert rep.passed, rep.worst()
