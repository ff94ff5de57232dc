import numpy as np
import pytest

from topicfuse import autograd as ag
from topicfuse.autograd import Tape, Tensor
from topicfuse.corpus import Mention, Segment, collate, mask_batch
from topicfuse.encoder import Encoder, ModelConfig, base_losses, span_average_matrix


def _cfg(**kw):
    base = dict(word_vocab_size=20, entity_vocab_size=10, num_layers=2, hidden_dim=16,
                num_heads=2, ffn_dim=32, entity_embed_dim=16, max_positions=16,
                dropout_rate=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def _segments():
    return [Segment(2, [5, 6, 7, 8, 9, 10], [Mention(2, 3, 3), Mention(1, 4, 4)], "a"),
            Segment(3, [11, 12, 13], [Mention(0, 2, 5)], "b"),
            Segment(2, [6, 6, 7, 14], [], "a")]


def _zero_entity_path(enc):
    enc.entity_embed.data[:] = 0.0
    enc.type_embed.data[:] = 0.0


def test_entity_row_is_span_mean_position():
    enc = Encoder(_cfg(num_layers=0), np.random.default_rng(0))
    _zero_entity_path(enc)
    batch = collate(_segments())
    h = enc.embed_input(batch).data
    n_w = batch.tokens.shape[1]
    pos = enc.pos_embed.data
    # word span [2,3) sits at joint position 3 after [CLS]; [1,4) covers 2..4
    np.testing.assert_allclose(h[0, n_w + 0], pos[3], atol=1e-15)
    np.testing.assert_allclose(h[0, n_w + 1], (pos[2] + pos[3] + pos[4]) / 3, atol=1e-15)
    np.testing.assert_allclose(h[1, n_w + 0], (pos[1] + pos[2]) / 2, atol=1e-15)


def test_span_average_rows_sum_to_one():
    batch = collate(_segments())
    m = span_average_matrix(batch)
    np.testing.assert_allclose(m.sum(-1)[batch.entity_valid], 1.0)
    assert not m[~batch.entity_valid].any()


def test_small_entity_dim_is_projected():
    enc = Encoder(_cfg(entity_embed_dim=8), np.random.default_rng(0))
    assert enc.entity_proj is not None
    assert enc.embed_input(collate(_segments())).shape[-1] == 16


def test_entity_id_out_of_range():
    enc = Encoder(_cfg(), np.random.default_rng(0))
    batch = collate([Segment(2, [5, 6, 7], [Mention(0, 1, 99)], "x")])
    with pytest.raises(IndexError):
        enc.embed_input(batch)


def test_zero_layers_is_identity():
    enc = Encoder(_cfg(num_layers=0), np.random.default_rng(1))
    batch = collate(_segments())
    h = enc.embed_input(batch)
    out = enc.encode(h, batch)
    n_w = batch.tokens.shape[1]
    np.testing.assert_array_equal(out.words.data, h.data[:, :n_w])
    np.testing.assert_array_equal(out.entities.data, h.data[:, n_w:])


def test_batch_permutation_equivariance():
    enc = Encoder(_cfg(), np.random.default_rng(2))
    segs = _segments()
    perm = [2, 0, 1]
    a = collate(segs)
    b = collate([segs[i] for i in perm])
    ha = enc.encode(enc.embed_input(a), a)
    hb = enc.encode(enc.embed_input(b), b)
    np.testing.assert_allclose(hb.words.data, ha.words.data[perm], atol=1e-12)
    np.testing.assert_allclose(hb.entities.data, ha.entities.data[perm], atol=1e-12)


def test_padding_does_not_leak():
    enc = Encoder(_cfg(), np.random.default_rng(3))
    segs = _segments()
    alone = collate(segs[1:2])
    padded = collate(segs)
    h1 = enc.encode(enc.embed_input(alone), alone)
    h2 = enc.encode(enc.embed_input(padded), padded)
    n = alone.tokens.shape[1]
    np.testing.assert_allclose(h2.words.data[1, :n], h1.words.data[0], atol=1e-10)


def test_attention_rows_sum_to_one():
    enc = Encoder(_cfg(), np.random.default_rng(4))
    batch = collate(_segments())
    enc.encode(enc.embed_input(batch), batch)
    valid = batch.attention_valid
    for block in enc.layers:
        probs = block.last_attention
        np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)
        masked = np.broadcast_to(~valid[:, None, None, :], probs.shape)
        assert probs[masked].max() < 1e-12


def test_cls_is_row_zero_bitwise():
    enc = Encoder(_cfg(), np.random.default_rng(5))
    batch = collate(_segments())
    out = enc.encode(enc.embed_input(batch), batch)
    assert out.cls.data.tobytes() == np.ascontiguousarray(out.words.data[:, 0]).tobytes()


@pytest.mark.parametrize("segs", [_segments(), _segments()[2:], _segments()[:2]])
def test_output_shapes(segs):
    enc = Encoder(_cfg(), np.random.default_rng(6))
    batch = collate(segs)
    out = enc.encode(enc.embed_input(batch), batch)
    b, n_w = batch.tokens.shape
    assert out.words.shape == (b, n_w, 16)
    assert out.entities.shape == (b, batch.entity_ids.shape[1], 16)
    assert out.cls.shape == (b, 16)


def test_uniform_logits_give_log_vocab():
    enc = Encoder(_cfg(num_layers=0), np.random.default_rng(7))
    enc.word_decoder.weight.data[:] = 0.0
    enc.word_decoder.bias.data[:] = 0.0
    enc.entity_head_ln.scale.data[:] = 0.0
    enc.entity_head_ln.shift.data[:] = 0.0
    enc.entity_bias.data[:] = 0.0
    batch = mask_batch(_segments(), 0.5, 1.0, seed=0)
    out = enc.encode(enc.embed_input(batch), batch)
    l_plm, l_aux = base_losses(out, batch, enc)
    assert l_plm.item() == pytest.approx(np.log(20), abs=1e-12)
    assert l_aux.item() == pytest.approx(np.log(10), abs=1e-12)


def test_no_masked_positions_give_zero_losses():
    enc = Encoder(_cfg(), np.random.default_rng(8))
    batch = collate(_segments())
    out = enc.encode(enc.embed_input(batch), batch)
    l_plm, l_aux = base_losses(out, batch, enc)
    assert l_plm.item() == 0.0 and l_aux.item() == 0.0


def test_two_class_toy_head():
    logits = Tensor(np.array([[2.0, 0.0]]))
    loss = ag.cross_entropy(logits, np.array([0])).item()
    assert loss == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-12)
    assert loss == pytest.approx(0.1269, abs=5e-5)


def test_labels_flow_only_from_masked_positions():
    enc = Encoder(_cfg(num_layers=0), np.random.default_rng(9))
    batch = mask_batch(_segments(), 0.3, 0.6, seed=2)
    h = Tensor(enc.embed_input(batch).data.copy(), requires_grad=True)
    with Tape() as tape:
        out = enc.encode(h, batch)
        l_plm, l_aux = base_losses(out, batch, enc)
        loss = l_plm + l_aux
    g = tape.backward(loss)[h]
    masked = np.concatenate([batch.word_labels >= 0, batch.entity_labels >= 0], axis=1)
    assert masked.any()
    assert not g[~masked].any()
    assert np.abs(g[masked]).sum(-1).min() > 0


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(hidden_dim=15, num_heads=2).validate()
    with pytest.raises(ValueError):
        _cfg(entity_embed_dim=32).validate()
