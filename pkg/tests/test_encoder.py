import numpy as np
import pytest

from oracles import central_diff, max_rel_err
from supcon_ehr.encoder import (
    EncoderConfig,
    SequenceBatch,
    encode,
    encode_backward,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from supcon_ehr.losses import BatchEmbeddings, LossConfig, combined_loss


def tiny(static_dim=0, layers=1, dropout=0.0, seed=0):
    cfg = EncoderConfig(input_dim=2, hidden_dim=3, num_layers=layers, dropout_rate=dropout,
                        static_dim=static_dim)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, num_classes=1, seed=seed)
    X = rng.normal(size=(2, 3, 2))
    st = rng.normal(size=(2, static_dim)) if static_dim else None
    return params, SequenceBatch(X, [3, 2], st)


def test_init_deterministic():
    cfg = EncoderConfig(input_dim=5, hidden_dim=4, num_layers=2)
    a, b, c = init_params(cfg, 2, 7), init_params(cfg, 2, 7), init_params(cfg, 2, 8)
    assert all(a.arrays[k].tobytes() == b.arrays[k].tobytes() for k in a.arrays)
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in a.arrays)


def test_init_ranges_and_forget_bias():
    cfg = EncoderConfig(input_dim=5, hidden_dim=16)
    p = init_params(cfg, 1, 0)
    bound = 1 / np.sqrt(16)
    assert np.all(np.abs(p.arrays["lstm0.W_x"]) <= bound)
    assert np.all(p.arrays["lstm0.b"][16:32] == 1.0)


def test_parameter_count():
    cfg = EncoderConfig(input_dim=76, hidden_dim=16, num_layers=2)
    p = init_params(cfg, 1, 0)
    # 4 gates x H x (inputs + recurrent + bias) per layer, plus two anchor rows
    expected = 4 * 16 * (76 + 16 + 1) + 4 * 16 * (16 + 16 + 1) + 2 * 16
    assert p.count() == parameter_count(cfg, 1) == expected
    # the reported comparable model has 7,697 parameters; same order of magnitude
    assert 0.5 < expected / 7697 < 2.0


def test_zero_weights_zero_input_gives_zero_state():
    p, _ = tiny()
    for a in p.arrays.values():
        a[...] = 0.0
    Z = encode(p, SequenceBatch(np.zeros((1, 1, 2)), [1]))
    assert np.all(Z == 0.0)


def test_eval_is_deterministic_and_padding_invariant():
    p, batch = tiny(layers=2, dropout=0.3)
    Z1 = encode(p, batch)
    Z2 = encode(p, batch)
    assert np.array_equal(Z1, Z2)
    X = np.concatenate([batch.X, np.full((2, 4, 2), 1e6)], axis=1)
    X[1, 2] = np.nan  # beyond sample 1's length
    Z3 = encode(p, SequenceBatch(X, batch.lengths))
    assert np.array_equal(Z1, Z3)


def test_invalid_lengths():
    with pytest.raises(ValueError):
        SequenceBatch(np.zeros((2, 3, 2)), [0, 2])
    p, _ = tiny()
    with pytest.raises(ValueError, match="D=2"):
        encode(p, SequenceBatch(np.zeros((1, 2, 5)), [2]))


def test_zero_upstream_gradient():
    p, batch = tiny(static_dim=2, layers=2)
    grads = encode_backward(p, batch, np.zeros((2, 3)))
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("layers,static_dim,dropout", [(1, 0, 0.0), (2, 2, 0.3), (3, 0, 0.5)])
def test_backward_matches_finite_differences(layers, static_dim, dropout):
    p, batch = tiny(static_dim=static_dim, layers=layers, dropout=dropout, seed=4)
    G = np.random.default_rng(9).normal(size=(2, 3))
    f = lambda: float(np.sum(G * encode(p, batch, training=True, dropout_seed=3)))
    grads = encode_backward(p, batch, G, training=True, dropout_seed=3)
    for name, arr in p.arrays.items():
        if name.startswith("anchor"):
            continue
        assert max_rel_err(grads[name], central_diff(f, arr)) < 1e-4, name


def test_length_one_sample_touches_only_first_step():
    p, batch = tiny()
    batch = SequenceBatch(batch.X[:1], [1])
    _, tape = encode(p, batch, return_cache=True)
    G = np.ones((1, 3))
    grads = encode_backward(p, batch, G, cache=tape)
    # W_h only acts on h_prev, which is zero at the first step
    assert np.all(grads["lstm0.W_h"] == 0.0)
    X2 = batch.X.copy()
    X2 = np.concatenate([X2, np.ones((1, 5, 2))], axis=1)
    grads2 = encode_backward(p, SequenceBatch(X2, [1]), G)
    for k in grads:
        assert np.array_equal(grads[k], grads2[k])


def test_encoder_plus_loss_end_to_end():
    p, batch = tiny(layers=2, dropout=0.3, seed=2)
    p = init_params(p.config, 2, 2)
    y = np.array([[1, 0], [0, 0]])
    cfg = LossConfig("csce+scr", 0.5, 0.1)

    def loss():
        Z = encode(p, batch, training=True, dropout_seed=1)
        return combined_loss(cfg, BatchEmbeddings(Z, y), p.anchors)

    out = loss()
    grads = encode_backward(p, batch, out.grad_Z, training=True, dropout_seed=1)
    grads["anchor.U"], grads["anchor.V"] = out.grad_U, out.grad_V
    for name, arr in p.arrays.items():
        assert max_rel_err(grads[name], central_diff(lambda: loss().value, arr)) < 1e-4, name


def test_dropout_rate():
    cfg = EncoderConfig(input_dim=1, hidden_dim=10, num_layers=2, dropout_rate=0.3)
    from supcon_ehr.encoder import _dropout_masks

    (mask,) = _dropout_masks(cfg, (100, 100, 10), True, 0)
    assert abs(np.mean(mask == 0) - 0.3) < 0.01
    assert np.allclose(mask[mask > 0], 1 / 0.7)
    assert _dropout_masks(cfg, (2, 2, 10), False, 0) == [None]


def test_batch_order_equivariance():
    p, batch = tiny(layers=2, seed=6)
    G = np.random.default_rng(1).normal(size=(2, 3))
    g1 = encode_backward(p, batch, G)
    perm = np.array([1, 0])
    b2 = SequenceBatch(batch.X[perm], batch.lengths[perm])
    assert np.array_equal(encode(p, b2), encode(p, batch)[perm])
    g2 = encode_backward(p, b2, G[perm])
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-9)


def test_checkpoint_roundtrip(tmp_path):
    cfg = EncoderConfig(input_dim=3, hidden_dim=4, num_layers=2, static_dim=2)
    p = init_params(cfg, 3, 5)
    path = save_checkpoint(tmp_path / "a.npz", p, {"loss": "cbce+scr"})
    q, meta = load_checkpoint(path)
    assert meta == {"loss": "cbce+scr"}
    assert q.config == cfg and q.num_classes == 3
    assert all(p.arrays[k].tobytes() == q.arrays[k].tobytes() for k in p.arrays)
    save_checkpoint(tmp_path / "b.npz", q, {"loss": "cbce+scr"})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
