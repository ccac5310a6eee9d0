import numpy as np
import pytest

from attnlab.attention import (
    init_transformer_params,
    transformer_backward,
    transformer_forward,
)
from attnlab.checks import gradcheck_transformer
from attnlab.errors import ShapeError
from attnlab.numerics import SeededRng
from oracles import loop_attention_head


def small_params(rng, layers=2, d=6, heads=2, ffn=5, pre_norm=False):
    return init_transformer_params(rng, layers, d, heads, ffn_dim=ffn, pre_norm=pre_norm)


def test_traces_row_stochastic_over_unpadded_keys():
    rng = SeededRng(0)
    params = small_params(rng)
    X = rng.normal((7, 6))
    pad = np.array([False] * 5 + [True, True])
    _, traces, _ = transformer_forward(X, params, pad)
    for layer in traces:
        for head in layer:
            np.testing.assert_allclose(head.sum(axis=1), 1.0, atol=1e-12)
            assert (head[:, 5:] == 0.0).all()


def test_permutation_equivariance_without_positions():
    rng = SeededRng(1)
    params = small_params(rng)
    X = rng.normal((6, 6))
    perm = np.random.default_rng(3).permutation(6)
    out, traces, _ = transformer_forward(X, params)
    pout, ptraces, _ = transformer_forward(X[perm], params)
    np.testing.assert_allclose(pout, out[perm], atol=1e-10)
    for layer, player in zip(traces, ptraces):
        for head, phead in zip(layer, player):
            np.testing.assert_allclose(phead, head[np.ix_(perm, perm)], atol=1e-10)


def test_single_head_matches_loop_oracle():
    rng = SeededRng(2)
    d, heads = 6, 2
    params = small_params(rng, layers=1, d=d, heads=heads)
    X = rng.normal((6, d))
    keep = np.ones(6, dtype=bool)
    _, traces, _ = transformer_forward(X, params)
    lp = params.layers[0]
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        _, ref_alpha = loop_attention_head(
            X, lp.wq[:, cols], lp.wk[:, cols], lp.wv[:, cols], scale, keep
        )
        np.testing.assert_allclose(traces[0][h], ref_alpha, atol=1e-12)


def test_zero_cotangent_gives_zero_grads():
    rng = SeededRng(3)
    params = small_params(rng)
    X = rng.normal((5, 6))
    out, _, cache = transformer_forward(X, params)
    dX, grads = transformer_backward(cache, np.zeros_like(out))
    assert not dX.any()
    for g in grads:
        for arr in g.values():
            assert not np.asarray(arr).any()


def test_padded_key_value_paths_get_zero_gradient():
    rng = SeededRng(4)
    params = small_params(rng, layers=1)
    X = rng.normal((6, 6))
    pad = np.array([False] * 5 + [True])
    out, _, cache = transformer_forward(X, params, pad)
    d_out = rng.normal(out.shape)
    d_out[5] = 0.0  # ignore the padded position's own output row
    dX, _ = transformer_backward(cache, d_out)
    # the padded position reaches the loss only through its residual/FFN
    # row, which d_out zeroes; key/value contributions must vanish
    assert np.abs(dX[5]).max() == 0.0


def test_gradcheck_post_and_pre_norm():
    assert gradcheck_transformer(10, seed=11) <= 1e-4
    assert gradcheck_transformer(10, seed=12, pre_norm=True) <= 1e-4
    assert gradcheck_transformer(10, seed=13, with_padding=True) <= 1e-4


def test_shape_validation():
    rng = SeededRng(5)
    params = small_params(rng)
    with pytest.raises(ShapeError):
        transformer_forward(rng.normal((4, 5)), params)
    with pytest.raises(ShapeError):
        transformer_forward(rng.normal((4, 6)), params, np.ones(3, dtype=bool))
