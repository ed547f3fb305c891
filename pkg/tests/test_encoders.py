import numpy as np
import pytest
import torch

from misca.corpus import Sample, make_batches
from misca.encoders import BiLSTM, CharEncoder, LSTM, SelfAttention, SharedEncoder, TaskSpecificEncoder


def _init(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.rand(p.shape, generator=g) - 0.5)
    return module


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_oracle(cell: LSTM, xs: np.ndarray) -> np.ndarray:
    """Plain textbook recurrence over one unpadded sequence (n, in) -> (n, h)."""
    W, U, b = (t.detach().numpy() for t in (cell.weight_ih, cell.weight_hh, cell.bias))
    H = cell.hidden_size
    h = np.zeros(H)
    c = np.zeros(H)
    out = []
    for x in xs:
        z = W @ x + U @ h + b
        i = np_sigmoid(z[:H])
        f = np_sigmoid(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = np_sigmoid(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def bilstm_oracle(layer: BiLSTM, xs: np.ndarray) -> np.ndarray:
    fwd = lstm_oracle(layer.fwd, xs)
    bwd = lstm_oracle(layer.bwd, xs[::-1])[::-1]
    return np.concatenate([fwd, bwd], axis=1)


def test_lstm_matches_oracle_with_padding():
    cell = _init(LSTM(3, 4), 0)
    x = torch.randn(2, 5, 3, generator=torch.Generator().manual_seed(1))
    mask = torch.tensor([[1.0] * 5, [1.0, 1.0, 1.0, 0.0, 0.0]])
    out, last = cell(x, mask)
    for r, n in enumerate((5, 3)):
        ref = lstm_oracle(cell, x[r, :n].numpy())
        assert np.allclose(out[r, :n].detach().numpy(), ref, atol=1e-12)
        assert np.allclose(last[r].detach().numpy(), ref[-1], atol=1e-12)
        assert torch.count_nonzero(out[r, n:]) == 0


def test_bilstm_matches_oracle():
    layer = _init(BiLSTM(3, 2), 2)
    x = torch.randn(2, 4, 3, generator=torch.Generator().manual_seed(3))
    mask = torch.tensor([[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0]])
    out, last = layer(x, mask)
    for r, n in enumerate((4, 2)):
        ref = bilstm_oracle(layer, x[r, :n].numpy())
        assert np.allclose(out[r, :n].detach().numpy(), ref, atol=1e-12)
        # final states: forward at the last token, backward at the first
        assert np.allclose(last[r].detach().numpy(), np.concatenate([ref[-1, :2], ref[0, 2:]]), atol=1e-12)


def test_bilstm_reversal_swaps_directions():
    layer = _init(BiLSTM(2, 3), 4)
    # make the backward cell a copy of the forward one
    layer.bwd.load_state_dict(layer.fwd.state_dict())
    x = torch.randn(1, 5, 2, generator=torch.Generator().manual_seed(5))
    mask = torch.ones(1, 5)
    out, _ = layer(x, mask)
    out_rev, _ = layer(x.flip(1), mask)
    assert torch.allclose(out[0, :, :3], out_rev[0, :, 3:].flip(0), atol=1e-12)
    assert torch.allclose(out[0, :, 3:], out_rev[0, :, :3].flip(0), atol=1e-12)


def test_self_attention_single_token_is_value_projection():
    sa = _init(SelfAttention(3, 4), 6)
    x = torch.randn(1, 1, 3, generator=torch.Generator().manual_seed(7))
    out = sa(x, torch.ones(1, 1))
    assert torch.allclose(out, sa.value(x), atol=1e-14)


def test_self_attention_ignores_pads():
    sa = _init(SelfAttention(3, 4), 8)
    x = torch.randn(1, 4, 3, generator=torch.Generator().manual_seed(9))
    mask = torch.tensor([[1.0, 1.0, 1.0, 0.0]])
    w = sa.weights(x, mask)
    assert torch.all(w[0, :3, 3] == 0)
    assert torch.allclose(w[0, :3].sum(-1), torch.ones(3), atol=1e-12)


def test_shared_encoder_is_concatenation_of_parts(toy):
    samples, h, v = toy
    enc = _init(SharedEncoder(len(v.words), len(v.chars), 4, 3, 5, 2, 2), 10)
    b = make_batches(samples[:1], v, h, 4)[0]
    e = enc(b.token_ids, b.char_ids, b.mask)
    assert e.shape == (1, 2, 2 * 3 + 5 + 2 * 2)
    emb = enc.word_embed(b.token_ids)[0].detach().numpy()
    word_part = bilstm_oracle(enc.word_lstm, emb)
    sa_part = enc.self_attn(enc.word_embed(b.token_ids), b.mask)[0].detach().numpy()
    char_parts = []
    for tok in samples[0].tokens:
        ids = torch.tensor([v.chars[c] for c in tok])
        ref = bilstm_oracle(enc.chars.lstm, enc.chars.embed(ids).detach().numpy())
        char_parts.append(np.concatenate([ref[-1, :2], ref[0, 2:]]))
    expected = np.concatenate([word_part, sa_part, np.array(char_parts)], axis=1)
    assert np.allclose(e[0].detach().numpy(), expected, atol=1e-12)


def test_zero_cells_give_zero_features():
    enc = TaskSpecificEncoder(4, 3)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    feats = enc(torch.zeros(1, 3, 4), torch.ones(1, 3))
    assert torch.count_nonzero(feats.E_I) == 0 and torch.count_nonzero(feats.E_S) == 0
    assert feats.E_I.shape == (1, 6, 3)


def test_task_specific_matches_oracle_columns():
    enc = _init(TaskSpecificEncoder(4, 3), 11)
    e = torch.randn(1, 3, 4, generator=torch.Generator().manual_seed(12))
    feats = enc(e, torch.ones(1, 3))
    ref_i = bilstm_oracle(enc.intent_lstm, e[0].numpy())
    ref_s = bilstm_oracle(enc.slot_lstm, e[0].numpy())
    assert np.allclose(feats.E_I[0].detach().numpy(), ref_i.T, atol=1e-12)
    assert np.allclose(feats.E_S[0].detach().numpy(), ref_s.T, atol=1e-12)


def test_task_encoders_are_parameter_disjoint():
    enc = _init(TaskSpecificEncoder(4, 3), 13)
    e = torch.randn(1, 3, 4, generator=torch.Generator().manual_seed(14))
    mask = torch.ones(1, 3)
    before = enc(e, mask)
    with torch.no_grad():
        enc.intent_lstm.fwd.weight_ih.add_(0.3)
    after = enc(e, mask)
    assert not torch.allclose(before.E_I, after.E_I)
    assert torch.equal(before.E_S, after.E_S)

    enc.zero_grad()
    after.E_I.sum().backward()
    for p in enc.slot_lstm.parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0


def test_char_encoder_empty_word_is_zero():
    ce = _init(CharEncoder(5, 2, 3), 15)
    out = ce(torch.tensor([[[1, 2, 0], [0, 0, 0]]]))
    assert torch.count_nonzero(out[0, 1]) == 0
    assert torch.count_nonzero(out[0, 0]) > 0


def test_padding_does_not_change_real_positions(toy):
    samples, h, v = toy
    enc = _init(SharedEncoder(len(v.words), len(v.chars), 4, 3, 5, 2, 2), 16)
    task = _init(TaskSpecificEncoder(enc.output_size, 3), 17)
    short = Sample(("fly",), ("O",), ("atis_flight",))
    alone = make_batches([short], v, h, 4)[0]
    padded = make_batches([samples[0], short], v, h, 4)[0]
    f_alone = task(enc(alone.token_ids, alone.char_ids, alone.mask), alone.mask)
    f_pad = task(enc(padded.token_ids, padded.char_ids, padded.mask), padded.mask)
    assert torch.allclose(f_alone.E_S[0, :, 0], f_pad.E_S[1, :, 0], atol=1e-13)
    assert torch.allclose(f_alone.E_I[0, :, 0], f_pad.E_I[1, :, 0], atol=1e-13)
