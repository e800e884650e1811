import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given

from crossaxis import tensor as T
from crossaxis.attention import (
    AttentionConfig,
    AttentionParams,
    cross_axis_attention,
    cross_axis_contract,
    gamma_scale_keys,
    head_gammas,
    naive_cross_axis_oracle,
    qkv_project,
    softmax_attention,
)
from crossaxis.errors import NotSquareGrid, ShapeMismatch
from crossaxis.gradcheck import attention_case
from crossaxis.rope import GridSpec, build_tables
from crossaxis.tensor import Tensor


def contract(q, k, v):
    return cross_axis_contract(Tensor(q), Tensor(k), Tensor(v)).data


def zero_params(d, H, dtype=np.float64):
    return AttentionParams(
        Tensor(np.zeros((d, 3 * d), dtype)),
        Tensor(np.zeros(3 * d, dtype)),
        Tensor(np.zeros((d, d), dtype)),
        Tensor(np.zeros(d, dtype)),
        Tensor(np.ones(H, dtype)),
        Tensor(np.zeros(H, dtype)),
    )


def random_params(rng, d, H, scale=0.5):
    return AttentionParams(
        Tensor(rng.standard_normal((d, 3 * d)) * scale),
        Tensor(rng.standard_normal(3 * d) * 0.1),
        Tensor(rng.standard_normal((d, d)) * scale),
        Tensor(rng.standard_normal(d) * 0.1),
        Tensor(np.ones(H)),
        Tensor(np.zeros(H)),
    )


# --------------------------------------------------------------------------
# contraction


def test_single_position_is_dot_times_v():
    q = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4)
    k = np.array([0.5, -1.0, 2.0, 0.0]).reshape(1, 1, 1, 4)
    v = np.array([1.0, 0.0, -2.0, 3.0]).reshape(1, 1, 1, 4)
    dot = 0.5 - 2.0 + 6.0
    np.testing.assert_allclose(contract(q, k, v), dot * v)
    np.testing.assert_allclose(naive_cross_axis_oracle(q, k, v), dot * v)


def test_zero_keys_annihilate(rng):
    q, v = rng.standard_normal((2, 3, 3, 2, 4))
    assert not contract(q, np.zeros_like(q), v).any()


def test_not_square_grid():
    x = np.zeros((2, 3, 1, 4))
    with pytest.raises(NotSquareGrid):
        contract(x, x, x)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        contract(np.zeros((2, 2, 1, 4)), np.zeros((2, 2, 1, 4)), np.zeros((2, 2, 2, 4)))


def test_hand_index_form(rng):
    q, k, v = rng.standard_normal((3, 3, 3, 1, 4))
    want = np.zeros_like(q)
    for x in range(3):
        for s in range(3):
            for j in range(3):
                want[x, s, 0] += (q[x, s, 0] @ k[x, j, 0]) * v[s, j, 0]
    np.testing.assert_allclose(contract(q, k, v), want, atol=1e-12)


def test_oracle_agreement_100_cases_s2(rng):
    worst = 0.0
    for _ in range(100):
        q, k, v = rng.standard_normal((3, 2, 2, 2, 8)).astype(np.float32)
        worst = max(worst, np.abs(contract(q, k, v) - naive_cross_axis_oracle(q, k, v)).max())
    assert worst < 1e-5


def test_batched_leading_axes(rng):
    q, k, v = rng.standard_normal((3, 5, 3, 3, 2, 4))
    got = contract(q, k, v)
    for b in range(5):
        np.testing.assert_allclose(got[b], naive_cross_axis_oracle(q[b], k[b], v[b]), atol=1e-12)


def test_oracle_linear_in_v(rng):
    q, k, v = rng.standard_normal((3, 2, 2, 1, 4))
    np.testing.assert_allclose(naive_cross_axis_oracle(q, k, 2.5 * v), 2.5 * naive_cross_axis_oracle(q, k, v))


@given(st.integers(1, 4), st.floats(-4, 4), st.floats(-4, 4), st.integers(0, 2**31))
def test_bilinear_in_q_and_v(S, a, b, seed):
    rng = np.random.default_rng(seed)
    q1, q2, k, v1, v2 = rng.standard_normal((5, S, S, 2, 4))
    in_v = contract(q1, k, a * v1 + b * v2) - (a * contract(q1, k, v1) + b * contract(q1, k, v2))
    in_q = contract(a * q1 + b * q2, k, v1) - (a * contract(q1, k, v1) + b * contract(q2, k, v1))
    assert np.abs(in_v).max() < 1e-6 * max(1, abs(a) + abs(b)) * 10
    assert np.abs(in_q).max() < 1e-6 * max(1, abs(a) + abs(b)) * 10


def test_scaling_q_scales_output_without_softmax(rng):
    q, k, v = rng.standard_normal((3, 4, 4, 2, 8))
    np.testing.assert_allclose(contract(3.0 * q, k, v), 3.0 * contract(q, k, v), atol=1e-6)
    # the softmax baseline does not behave this way
    d, H = 16, 2
    params = random_params(rng, d, H)
    x = rng.standard_normal((6, d))
    params_scaled = AttentionParams(params.w_qkv, params.b_qkv, params.w_out, Tensor(np.zeros(d)))
    base = AttentionParams(params.w_qkv, params.b_qkv, params.w_out, Tensor(np.zeros(d)))
    w = params.w_qkv.data.copy()
    w[:, :d] *= 3.0
    b = params.b_qkv.data.copy()
    b[:d] *= 3.0
    params_scaled = AttentionParams(Tensor(w), Tensor(b), params.w_out, Tensor(np.zeros(d)))
    y1 = softmax_attention(Tensor(x), base, H, "none").data
    y3 = softmax_attention(Tensor(x), params_scaled, H, "none").data
    assert np.abs(y3 - 3.0 * y1).max() > 1e-3


def test_axis_symmetry_against_oracle(rng):
    q, k, v = rng.standard_normal((3, 4, 4, 2, 4))
    qt, kt, vt = (np.swapaxes(a, 0, 1) for a in (q, k, v))
    np.testing.assert_allclose(contract(qt, kt, vt), naive_cross_axis_oracle(qt, kt, vt), atol=1e-10)


# --------------------------------------------------------------------------
# projection, gammas, full layer


def test_qkv_zero_and_identity(rng):
    d, H = 8, 2
    x = rng.standard_normal((3, 3, d))
    q, k, v = qkv_project(Tensor(x), zero_params(d, H), H)
    assert not (q.data.any() or k.data.any() or v.data.any())
    eye = AttentionParams(Tensor(np.hstack([np.eye(d)] * 3)), Tensor(np.zeros(3 * d)), None, None)
    for t in qkv_project(Tensor(x), eye, H):
        np.testing.assert_array_equal(t.data, x.reshape(3, 3, H, d // H))


def test_qkv_matches_matvec_loop(rng):
    d, H = 8, 2
    p = random_params(rng, d, H)
    x = rng.standard_normal((2, 2, d))
    q, k, v = qkv_project(Tensor(x), p, H)
    for r in range(2):
        for c in range(2):
            y = [sum(x[r, c, i] * p.w_qkv.data[i, o] for i in range(d)) + p.b_qkv.data[o] for o in range(3 * d)]
            y = np.array(y)
            np.testing.assert_allclose(q.data[r, c].ravel(), y[:d], atol=1e-6)
            np.testing.assert_allclose(k.data[r, c].ravel(), y[d:2 * d], atol=1e-6)
            np.testing.assert_allclose(v.data[r, c].ravel(), y[2 * d:], atol=1e-6)


def test_gammas():
    g = head_gammas(8)
    assert g[0] == 0.96875
    assert np.all(np.diff(g) > 0) and np.all((g > 0) & (g <= 1))
    np.testing.assert_array_equal(head_gammas(3, "ones"), [1, 1, 1])


def test_gamma_scale_keys(rng):
    k = rng.standard_normal((2, 2, 3, 4))
    np.testing.assert_array_equal(gamma_scale_keys(Tensor(k), np.ones(3)).data, k)
    out = gamma_scale_keys(Tensor(k), [1.0, 0.0, 1.0]).data
    assert not out[:, :, 1].any()
    np.testing.assert_array_equal(out[:, :, [0, 2]], k[:, :, [0, 2]])


def test_zero_params_give_output_bias(rng):
    d, H, S = 8, 2, 3
    p = zero_params(d, H)
    p.b_out = Tensor(np.arange(d, dtype=float))
    out = cross_axis_attention(Tensor(rng.standard_normal((S, S, d))), p, AttentionConfig(d, H, S),
                               build_tables(GridSpec(S, S, d // H)))
    np.testing.assert_allclose(out.data, np.broadcast_to(np.arange(d), (S, S, d)), atol=1e-12)


def test_zero_imprint_equals_absent(rng):
    d, H, S = 8, 2, 4
    p = random_params(rng, d, H)
    cfg = AttentionConfig(d, H, S)
    t = build_tables(GridSpec(S, S, d // H))
    x = Tensor(rng.standard_normal((S, S, d)))
    a = cross_axis_attention(x, p, cfg, t).data
    b = cross_axis_attention(x, p, cfg, t, Tensor(np.zeros((S, S, d)))).data
    np.testing.assert_array_equal(a, b)


def test_full_layer_gradient_check():
    case = attention_case(seed=3)
    assert case.run() < 1e-4


# --------------------------------------------------------------------------
# softmax baseline


def test_softmax_single_token_is_projected_v(rng):
    d, H = 8, 2
    p = random_params(rng, d, H)
    x = rng.standard_normal((1, d))
    y = x @ p.w_qkv.data + p.b_qkv.data
    want = y[:, 2 * d:] @ p.w_out.data + p.b_out.data
    np.testing.assert_allclose(softmax_attention(Tensor(x), p, H, "none").data, want, atol=1e-12)


def test_softmax_identical_keys_average_values(rng):
    d, H, n = 4, 1, 5
    w = np.zeros((d, 3 * d))
    w[:, 2 * d:] = np.eye(d)  # q = k = bias only, v = x
    b = np.zeros(3 * d)
    b[d:2 * d] = 1.0
    p = AttentionParams(Tensor(w), Tensor(b), Tensor(np.eye(d)), Tensor(np.zeros(d)))
    x = rng.standard_normal((n, d))
    out, weights = softmax_attention(Tensor(x), p, H, "none", return_weights=True)
    np.testing.assert_allclose(out.data, np.broadcast_to(x.mean(0), (n, d)), atol=1e-12)
    np.testing.assert_allclose(weights.data, 1.0 / n)


def test_softmax_rows_sum_to_one_with_rotary(rng):
    d, H, S = 16, 2, 3
    p = random_params(rng, d, H, scale=2.0)
    _, w = softmax_attention(Tensor(rng.standard_normal((2, S * S, d))), p, H, "rotary",
                             build_tables(GridSpec(S, S, d // H)), return_weights=True)
    assert w.shape == (2, H, S * S, S * S)
    assert np.abs(w.data.sum(-1) - 1).max() < 1e-6


def test_softmax_divides_by_sqrt_head_dim(rng):
    d, H, n = 8, 2, 3
    p = random_params(rng, d, H)
    x = rng.standard_normal((n, d))
    _, w = softmax_attention(Tensor(x), p, H, "none", return_weights=True)
    y = x @ p.w_qkv.data + p.b_qkv.data
    q = y[:, :d].reshape(n, H, 4).transpose(1, 0, 2)
    k = y[:, d:2 * d].reshape(n, H, 4).transpose(1, 0, 2)
    s = q @ k.transpose(0, 2, 1) / math.sqrt(4)
    want = np.exp(s - s.max(-1, keepdims=True))
    want /= want.sum(-1, keepdims=True)
    np.testing.assert_allclose(w.data, want, atol=1e-12)


def test_softmax_rotary_needs_full_grid(rng):
    d, H = 8, 2
    with pytest.raises(ShapeMismatch):
        softmax_attention(Tensor(np.zeros((5, d))), random_params(rng, d, H), H, "rotary",
                          build_tables(GridSpec(2, 2, 4)))
