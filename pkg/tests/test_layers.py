import math

import numpy as np
import pytest

from emospeech.core import Tensor, finite_diff_check, layer_norm_core
from emospeech.errors import ContractError, DimensionError
from emospeech.model import layers
from emospeech.model.layers import AttentionProjections


def leaf(data):
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)


def signed_weights(r, shape):
    return r.uniform(0.5, 1.5, shape) * r.choice([-1.0, 1.0], shape)


def attn_params(rng, hidden, prefix="blk.attn"):
    return {f"{prefix}.{p}.{wb}": leaf(rng.standard_normal((hidden, hidden) if wb == "w" else hidden) * 0.4)
            for p in "qkvo" for wb in "wb"}


# -- conditional layer norm ----------------------------------------------------------
def test_cln_with_unit_scale_and_zero_bias_is_plain_ln(rng):
    x, c = Tensor(rng.standard_normal((4, 6))), Tensor(rng.standard_normal(6))
    zeros, ones = Tensor(np.zeros((6, 6))), Tensor(np.ones(6))
    out = layers.conditional_layer_norm(x, c, zeros, ones, zeros, Tensor(np.zeros(6))).data
    assert np.array_equal(out, layer_norm_core(x).data)


def test_cln_constant_row_gives_bias_map(rng):
    x = Tensor(np.full((2, 4), 3.0))
    c = Tensor(rng.standard_normal(4))
    sw, sb, bw, bb = (Tensor(rng.standard_normal(s)) for s in [(4, 4), 4, (4, 4), 4])
    out = layers.conditional_layer_norm(x, c, sw, sb, bw, bb).data
    np.testing.assert_allclose(out, np.tile(c.data @ bw.data + bb.data, (2, 1)), atol=1e-14)


def test_cln_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        layers.conditional_layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.zeros(3)), *(Tensor(np.zeros(1)),) * 4)


def test_cln_gradcheck(rng):
    x, c = leaf(rng.standard_normal((3, 8))), leaf(rng.standard_normal(8))
    ps = [leaf(rng.standard_normal(s) * 0.5) for s in [(8, 8), 8, (8, 8), 8]]
    proj = signed_weights(rng, (3, 8))
    loss = lambda: (layers.conditional_layer_norm(x, c, *ps) * proj).sum()  # noqa: E731
    assert finite_diff_check(loss, [x, c, *ps], max_coords=None).max_rel_error < 1e-6


# -- self-attention ----------------------------------------------------------------
def brute_force_attention(h, P, prefix, n_heads):
    n, hidden = h.shape
    d = hidden // n_heads
    get = lambda name: P[f"{prefix}.{name}"].data  # noqa: E731
    q, k, v = (h @ get(f"{p}.w") + get(f"{p}.b") for p in "qkv")
    ctx = np.zeros((n, hidden))
    for head in range(n_heads):
        cols = slice(head * d, (head + 1) * d)
        for i in range(n):
            logits = [sum(q[i, cols] * k[j, cols]) / math.sqrt(d) for j in range(n)]
            w = np.exp(np.array(logits) - max(logits))
            w /= w.sum()
            for j in range(n):
                ctx[i, cols] += w[j] * v[j, cols]
    return ctx @ get("o.w") + get("o.b")


def test_self_attention_against_brute_force(rng):
    P = attn_params(rng, 6)
    h = rng.standard_normal((4, 6))
    out, proj = layers.self_attention(Tensor(h), P, "blk.attn", 2)
    assert np.max(np.abs(out.data - brute_force_attention(h, P, "blk.attn", 2))) < 1e-10
    assert proj.wq is P["blk.attn.q.w"] and proj.wv is P["blk.attn.v.w"]


def test_self_attention_single_token(rng):
    P = attn_params(rng, 4)
    h = rng.standard_normal((1, 4))
    out, _ = layers.self_attention(Tensor(h), P, "blk.attn", 2)
    v = h @ P["blk.attn.v.w"].data + P["blk.attn.v.b"].data
    np.testing.assert_allclose(out.data, v @ P["blk.attn.o.w"].data + P["blk.attn.o.b"].data, atol=1e-14)


def test_self_attention_permutation_equivariant(rng):
    P = attn_params(rng, 6)
    h = rng.standard_normal((5, 6))
    perm = np.array([0, 3, 2, 1, 4])
    out = layers.self_attention(Tensor(h), P, "blk.attn", 3)[0].data
    out_perm = layers.self_attention(Tensor(h[perm]), P, "blk.attn", 3)[0].data
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-13)


def test_self_attention_masked_keys_are_ignored(rng):
    P = attn_params(rng, 4)
    h = rng.standard_normal((5, 4))
    mask = np.array([True, True, True, False, False])
    padded = h.copy()
    padded[3:] = rng.standard_normal((2, 4)) * 100
    a = layers.self_attention(Tensor(h), P, "blk.attn", 2, mask)[0].data[:3]
    b = layers.self_attention(Tensor(padded), P, "blk.attn", 2, mask)[0].data[:3]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_self_attention_all_masked_rejected(rng):
    P = attn_params(rng, 4)
    with pytest.raises(ContractError):
        layers.self_attention(Tensor(np.zeros((2, 4))), P, "blk.attn", 2, np.array([False, False]))


def test_self_attention_gradcheck(rng):
    P = attn_params(rng, 6)
    h = leaf(rng.standard_normal((4, 6)))
    proj = signed_weights(rng, (4, 6))
    loss = lambda: (layers.self_attention(h, P, "blk.attn", 2)[0] * proj).sum()  # noqa: E731
    params = [h] + [p for k, p in P.items() if k != "blk.attn.k.b"]
    assert finite_diff_check(loss, params, max_coords=10).max_rel_error < 1e-6


def test_key_bias_has_zero_gradient(rng):
    # a bias shared by every key shifts all logits of a row equally
    P = attn_params(rng, 6)
    h = Tensor(rng.standard_normal((4, 6)))
    (layers.self_attention(h, P, "blk.attn", 2)[0] * rng.standard_normal((4, 6))).sum().backward()
    assert np.max(np.abs(P["blk.attn.k.b"].grad)) < 1e-14


# -- conditional cross-attention -----------------------------------------------------
def scripted_cca(h, c, proj, n_heads):
    n, hidden = h.shape
    d = hidden // n_heads
    q = h @ proj.wq.data + proj.bq.data
    k = c @ proj.wk.data + proj.bk.data
    v = c @ proj.wv.data + proj.bv.data
    out = h.copy()
    weights = np.zeros((n, n_heads))
    for head in range(n_heads):
        cols = slice(head * d, (head + 1) * d)
        logits = np.array([q[i, cols] @ k[cols] for i in range(n)]) / math.sqrt(d)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        weights[:, head] = w
        out[:, cols] += np.outer(w, v[cols])
    return out, weights


def test_cca_against_scripted_oracle(rng):
    P = attn_params(rng, 8)
    proj = layers.projections(P, "blk.attn")
    h, c = rng.standard_normal((5, 8)), rng.standard_normal(8)
    out, w = layers.conditional_cross_attention(Tensor(h), Tensor(c), proj, 2)
    ref_out, ref_w = scripted_cca(h, c, proj, 2)
    assert np.max(np.abs(out.data - ref_out)) < 1e-10
    assert np.max(np.abs(w.data - ref_w)) < 1e-10
    np.testing.assert_allclose(w.data.sum(axis=0), 1.0, atol=1e-12)


def test_cca_single_token_weight_is_one(rng):
    proj = layers.projections(attn_params(rng, 4), "blk.attn")
    _, w = layers.conditional_cross_attention(Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal(4)), proj, 2)
    assert w.data.tolist() == [[1.0, 1.0]]


def test_cca_outer_product_rows():
    out = layers.cca_combine(Tensor([[0.5], [0.5]]), Tensor([[2.0, 4.0]]))
    assert out.data.tolist() == [[1.0, 2.0], [1.0, 2.0]]


def test_cca_conditioning_dimension_checked(rng):
    proj = layers.projections(attn_params(rng, 4), "blk.attn")
    with pytest.raises(DimensionError):
        layers.conditional_cross_attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros(5)), proj, 2)


def test_cca_gradcheck(rng):
    P = attn_params(rng, 6)
    h, c = leaf(rng.standard_normal((4, 6))), leaf(rng.standard_normal(6))
    proj = signed_weights(rng, (4, 6))

    def loss():
        return (layers.conditional_cross_attention(h, c, layers.projections(P, "blk.attn"), 2)[0] * proj).sum()

    params = [h, c] + [P[f"blk.attn.{n}"] for n in ("q.w", "k.w", "k.b", "v.w", "v.b")]
    assert finite_diff_check(loss, params, max_coords=10).max_rel_error < 1e-6


def test_cca_shares_self_attention_projection_objects(rng):
    P = attn_params(rng, 4)
    _, proj = layers.self_attention(Tensor(rng.standard_normal((3, 4))), P, "blk.attn", 2)
    assert isinstance(proj, AttentionProjections)
    for name, tensor in [("q.w", proj.wq), ("k.w", proj.wk), ("v.w", proj.wv), ("q.b", proj.bq)]:
        assert tensor is P[f"blk.attn.{name}"]


# -- FFT block ------------------------------------------------------------------------
def block_params(rng, hidden, filt, conditional):
    P = attn_params(rng, hidden)
    P["blk.ffn.conv1.w"] = leaf(rng.standard_normal((filt, hidden, 3)) * 0.3)
    P["blk.ffn.conv1.b"] = leaf(rng.standard_normal(filt) * 0.1)
    P["blk.ffn.conv2.w"] = leaf(rng.standard_normal((hidden, filt, 1)) * 0.3)
    P["blk.ffn.conv2.b"] = leaf(rng.standard_normal(hidden) * 0.1)
    P["blk.attn_norm.gamma"] = leaf(1 + 0.1 * rng.standard_normal(hidden))
    P["blk.attn_norm.beta"] = leaf(0.1 * rng.standard_normal(hidden))
    if conditional:
        for part in ("scale", "bias"):
            P[f"blk.ffn_norm.{part}.w"] = leaf(0.2 * rng.standard_normal((hidden, hidden)))
            P[f"blk.ffn_norm.{part}.b"] = leaf((1.0 if part == "scale" else 0.0) + 0.1 * rng.standard_normal(hidden))
    else:
        P["blk.ffn_norm.gamma"] = leaf(1 + 0.1 * rng.standard_normal(hidden))
        P["blk.ffn_norm.beta"] = leaf(0.1 * rng.standard_normal(hidden))
    return P


def test_fft_block_padded_rows_stay_zero(rng):
    P = block_params(rng, 8, 10, conditional=True)
    h = rng.standard_normal((5, 8))
    h[3:] = 0.0
    mask = np.array([True, True, True, False, False])
    out = layers.fft_block(Tensor(h), Tensor(rng.standard_normal(8)), P, "blk", 2, True, mask).data
    assert np.all(out[3:] == 0.0)


def test_fft_block_gradcheck(rng):
    P = block_params(rng, 8, 10, conditional=True)
    h, c = leaf(rng.standard_normal((3, 8))), leaf(rng.standard_normal(8))
    proj = signed_weights(rng, (3, 8))
    loss = lambda: (layers.fft_block(h, c, P, "blk", 2, True) * proj).sum()  # noqa: E731
    params = [h, c] + [p for k, p in P.items() if k not in ("blk.attn.k.b", "blk.attn.q.b")]
    assert finite_diff_check(loss, params, max_coords=6).max_rel_error < 1e-6


# -- predictors, length regulator, embeddings ---------------------------------------------
def predictor_params(rng, hidden, filt, n_out, prefix="va.x"):
    P = {}
    for i, c_in in ((1, hidden), (2, filt)):
        P[f"{prefix}.conv{i}.w"] = leaf(rng.standard_normal((filt, c_in, 3)) * 0.3)
        P[f"{prefix}.conv{i}.b"] = leaf(rng.standard_normal(filt) * 0.1)
        P[f"{prefix}.norm{i}.gamma"] = leaf(1 + 0.1 * rng.standard_normal(filt))
        P[f"{prefix}.norm{i}.beta"] = leaf(0.1 * rng.standard_normal(filt))
    P[f"{prefix}.out.w"] = leaf(rng.standard_normal((filt, n_out)))
    P[f"{prefix}.out.b"] = leaf(rng.standard_normal(n_out))
    return P


def test_variance_predictor_shape_and_gradcheck(rng):
    P = predictor_params(rng, 6, 5, 1)
    h = leaf(rng.standard_normal((4, 6)))
    assert layers.variance_predictor(h, P, "va.x").shape == (4,)
    proj = signed_weights(rng, 4)
    loss = lambda: (layers.variance_predictor(h, P, "va.x") * proj).sum()  # noqa: E731
    assert finite_diff_check(loss, [h, *P.values()], max_coords=10).max_rel_error < 1e-6


def test_egemaps_padding_invariance(rng):
    P = predictor_params(rng, 6, 5, 2)
    h = rng.standard_normal((3, 6))
    # the convolution zero-pads, so masked tail rows that are zero reproduce the unpadded run
    padded = np.vstack([h, np.zeros((2, 6))])
    mask = np.array([True] * 3 + [False] * 2)
    a = layers.egemaps_predict(Tensor(h), P, "va.x").data
    b = layers.egemaps_predict(Tensor(padded), P, "va.x", mask=mask).data
    assert a.shape == (2,)
    assert np.max(np.abs(a - b)) < 1e-12


def test_egemaps_empty_utterance_rejected(rng):
    P = predictor_params(rng, 4, 3, 2)
    with pytest.raises(ContractError):
        layers.egemaps_predict(Tensor(np.zeros((2, 4))), P, "va.x", mask=np.array([False, False]))


def test_egemaps_gradcheck(rng):
    P = predictor_params(rng, 6, 5, 2)
    h = leaf(rng.standard_normal((4, 6)))
    proj = signed_weights(rng, 2)
    loss = lambda: (layers.egemaps_predict(h, P, "va.x") * proj).sum()  # noqa: E731
    assert finite_diff_check(loss, [h, *P.values()], max_coords=10).max_rel_error < 1e-6


def test_length_regulate_identity_and_drop(rng):
    h = Tensor(rng.standard_normal((3, 2)))
    np.testing.assert_array_equal(layers.length_regulate(h, [1, 1, 1]).data, h.data)
    out = layers.length_regulate(h, [2, 0, 3]).data
    np.testing.assert_array_equal(out, h.data[[0, 0, 2, 2, 2]])


def test_length_regulate_frame_count_over_seeds():
    for seed in range(100):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 12))
        d = r.integers(0, 5, size=n)
        if d.sum() == 0:
            d[r.integers(n)] = 1
        h = Tensor(r.standard_normal((n, 3)))
        out = layers.length_regulate(h, d).data
        assert out.shape[0] == d.sum()
        owners = np.repeat(np.arange(n), d)
        assert set(owners) == set(np.flatnonzero(d))
        np.testing.assert_array_equal(out, h.data[owners])


def test_length_regulate_rejects_empty_and_negative():
    h = Tensor(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        layers.length_regulate(h, [0, 0])
    with pytest.raises(ContractError):
        layers.length_regulate(h, [2, -1])


def test_embed_out_of_range_names_table():
    with pytest.raises(IndexError, match="emotion"):
        layers.conditioning_vector(0, 7, Tensor(np.zeros((2, 3))), Tensor(np.zeros((5, 3))))
    with pytest.raises(IndexError, match="speaker"):
        layers.conditioning_vector(2, 0, Tensor(np.zeros((2, 3))), Tensor(np.zeros((5, 3))))
