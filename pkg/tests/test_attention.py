import numpy as np
import pytest

from attnlab.attention import (
    GraphAttentionParams,
    graph_attention_backward,
    graph_attention_forward,
    identity_graph_attention_params,
    init_graph_attention_params,
    masked_softmax,
    self_attention_forward,
)
from attnlab.errors import ShapeError, ValidationError
from attnlab.numerics import SeededRng
from attnlab.reference import loop_graph_attention


def random_instance(rng: SeededRng, n=None, d_in=None, d_out=None, p_edge=0.5):
    n = n or int(rng.integers(2, 7))
    d_in = d_in or int(rng.integers(2, 5))
    d_out = d_out or int(rng.integers(2, 5))
    H = rng.normal((n, d_in))
    adj = (rng.uniform((n, n)) < p_edge).astype(np.float64)
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 1.0)
    params = init_graph_attention_params(rng.split(99), d_in, d_out)
    return H, adj, params


def test_single_node_identity_projection():
    p = identity_graph_attention_params(3)
    H = np.array([[-1.0, 0.5, 2.0]])
    out, alpha, _ = graph_attention_forward(H, np.ones((1, 1)), p)
    assert np.array_equal(alpha, [[1.0]])
    np.testing.assert_array_equal(out, np.maximum(H, 0.0))


def test_zero_scores_give_uniform_attention():
    p = identity_graph_attention_params(1)
    H = np.array([[1.0], [-1.0]])
    out, alpha, _ = graph_attention_forward(H, np.ones((2, 2)), p)
    np.testing.assert_allclose(alpha, 0.5 * np.ones((2, 2)), atol=0)
    np.testing.assert_array_equal(out, np.zeros((2, 1)))


def test_matches_loop_oracle_on_random_instances():
    rng = SeededRng(0)
    for _ in range(50):
        H, adj, params = random_instance(rng)
        out, alpha, _ = graph_attention_forward(H, adj, params)
        ref_out, ref_alpha = loop_graph_attention(
            H, adj, params.proj, params.attn_vec, params.leaky_slope
        )
        np.testing.assert_allclose(out, ref_out, atol=1e-12)
        np.testing.assert_allclose(alpha, ref_alpha, atol=1e-12)


def test_self_attention_is_graph_attention_with_ones_bitwise():
    rng = SeededRng(1)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        H = rng.normal((n, 3))
        params = init_graph_attention_params(rng.split(5), 3, 4)
        a = graph_attention_forward(H, np.ones((n, n)), params)
        b = self_attention_forward(H, params)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])


def test_masking_exact_zeros_and_row_sums():
    rng = SeededRng(2)
    for _ in range(100):
        H, adj, params = random_instance(rng, p_edge=0.35)
        _, alpha, _ = graph_attention_forward(H, adj, params)
        outside = alpha[adj == 0.0]
        assert outside.size == 0 or (outside == 0.0).all()
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)


def test_locality_perturbation():
    rng = SeededRng(3)
    H, adj, params = random_instance(rng, n=6, p_edge=0.3)
    out0, _, _ = graph_attention_forward(H, adj, params)
    for j in range(6):
        H2 = H.copy()
        H2[j] += rng.normal(H[j].shape, 0.5)
        out1, _, _ = graph_attention_forward(H2, adj, params)
        changed = np.abs(out1 - out0).sum(axis=1) > 0
        for i in np.flatnonzero(changed):
            assert adj[i, j] == 1.0, f"node {i} changed without edge to perturbed {j}"


def test_permutation_equivariance():
    rng = SeededRng(4)
    for _ in range(30):
        H, adj, params = random_instance(rng)
        n = H.shape[0]
        perm = np.random.default_rng(int(rng.integers(0, 2**31))).permutation(n)
        out, alpha, _ = graph_attention_forward(H, adj, params)
        pout, palpha, _ = graph_attention_forward(
            H[perm], adj[np.ix_(perm, perm)], params
        )
        np.testing.assert_allclose(pout, out[perm], atol=1e-12)
        np.testing.assert_allclose(palpha, alpha[np.ix_(perm, perm)], atol=1e-12)


def test_zero_cotangent_zero_grads():
    rng = SeededRng(5)
    H, adj, params = random_instance(rng)
    out, _, cache = graph_attention_forward(H, adj, params)
    dH, d_proj, d_vec = graph_attention_backward(cache, np.zeros_like(out))
    assert not dH.any() and not d_proj.any() and not d_vec.any()


def test_symmetric_zero_attn_vec_gradient():
    # equal node states and zero scores: moving the score vector cannot
    # change the uniform attention, so its gradient vanishes
    d = 3
    params = identity_graph_attention_params(d)
    H = np.tile(np.array([[0.5, 1.5, 2.5]]), (4, 1))
    out, _, cache = graph_attention_forward(H, np.ones((4, 4)), params)
    _, _, d_vec = graph_attention_backward(cache, np.ones_like(out))
    np.testing.assert_allclose(d_vec, np.zeros(2 * d), atol=1e-12)


def test_validation_errors():
    rng = SeededRng(6)
    H = rng.normal((3, 2))
    params = init_graph_attention_params(rng, 2, 2)
    with pytest.raises(ValidationError):
        graph_attention_forward(H, np.eye(3) * 0.0, params)  # zero diagonal
    with pytest.raises(ValidationError):
        bad = np.ones((3, 3))
        bad[0, 1] = 0.5
        graph_attention_forward(H, bad, params)
    with pytest.raises(ShapeError):
        graph_attention_forward(H, np.ones((4, 4)), params)
    with pytest.raises(ShapeError):
        GraphAttentionParams(proj=np.ones((2, 2)), attn_vec=np.ones(3)).validate()


def test_masked_softmax_empty_row_rejected():
    scores = np.zeros((1, 2, 2))
    mask = np.zeros((1, 2, 2), dtype=bool)
    with pytest.raises(ValidationError):
        masked_softmax(scores, mask)
