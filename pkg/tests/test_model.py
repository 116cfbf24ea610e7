import math
from types import SimpleNamespace

import pytest
import torch

from csmt.model import (
    ModelConfig,
    TranslationModel,
    sinusoidal_positions,
    smoothed_targets,
    training_loss,
)

torch.manual_seed(0)


def tiny_cfg(mode="shared_pointer", **kw):
    defaults = dict(
        n_layers=1, d_model=16, n_heads=2, d_ffn=32, vocab_mode=mode, dropout=0.0
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


def tiny_model(mode="shared_pointer", n_src=8, n_tgt=7, **kw):
    model = TranslationModel(tiny_cfg(mode, **kw), n_src, n_tgt)
    model.eval()
    return model


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(confidence=0.0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_mode="bogus")
    with pytest.raises(ValueError):
        ModelConfig(activation="gelu")
    cfg = ModelConfig()
    assert ModelConfig(**cfg.to_dict()) == cfg


def test_merged_mode_requires_single_vocab_size():
    with pytest.raises(ValueError):
        TranslationModel(tiny_cfg("merged"), 8, 7)
    TranslationModel(tiny_cfg("merged"), 8, 8)


def test_sinusoidal_positions_spot_values():
    pe = sinusoidal_positions(4, 16)
    assert pe.shape == (4, 16)
    assert torch.allclose(pe[0, 0::2], torch.zeros(8))
    assert torch.allclose(pe[0, 1::2], torch.ones(8))
    assert pe[2, 0] == pytest.approx(math.sin(2.0), abs=1e-6)
    assert pe[2, 1] == pytest.approx(math.cos(2.0), abs=1e-6)


def test_embed_source_aliases_target_table_in_shared_mode():
    model = tiny_model("shared")
    src_ids = torch.tensor([[4, 5]])
    src_is_tgt = torch.tensor([[False, True]])
    emb = model.embed_source(src_ids, src_is_tgt)
    scale = math.sqrt(model.cfg.d_model)
    assert torch.allclose(emb[0, 0], model.src_embedding.weight[4] * scale)
    assert torch.allclose(emb[0, 1], model.tgt_embedding.weight[5] * scale)


def test_embed_source_gradient_reaches_only_selected_table():
    model = tiny_model("shared")
    model.train()
    src_ids = torch.tensor([[4, 5]])
    src_is_tgt = torch.tensor([[False, True]])
    model.embed_source(src_ids, src_is_tgt).sum().backward()
    assert model.src_embedding.weight.grad[4].abs().sum() > 0
    assert model.tgt_embedding.weight.grad[4].abs().sum() == 0
    assert model.tgt_embedding.weight.grad[5].abs().sum() > 0
    assert model.src_embedding.weight.grad[5].abs().sum() == 0


def test_merged_mode_uses_one_table_for_both_languages():
    model = tiny_model("merged", n_src=8, n_tgt=8)
    src_ids = torch.tensor([[4, 4]])
    src_is_tgt = torch.tensor([[False, True]])
    emb = model.embed_source(src_ids, src_is_tgt)
    assert torch.allclose(emb[0, 0], emb[0, 1])


def test_encode_shapes_and_length_guard():
    model = tiny_model(max_len=8)
    src = torch.tensor([[4, 5, 6]])
    flags = torch.zeros(1, 3, dtype=torch.bool)
    memory = model.encode(src, flags)
    assert memory.shape == (1, 3, 16)
    with pytest.raises(ValueError):
        model.encode(torch.full((1, 9), 4), torch.zeros(1, 9, dtype=torch.bool))


def test_decode_is_causal():
    model = tiny_model()
    src = torch.tensor([[4, 5, 6]])
    flags = torch.zeros(1, 3, dtype=torch.bool)
    memory = model.encode(src, flags)
    pad = src.eq(0)
    prefix = torch.tensor([[1, 4, 5]])
    longer = torch.tensor([[1, 4, 5, 6]])
    h_short, _ = model.decode(prefix, memory, pad)
    h_long, _ = model.decode(longer, memory, pad)
    assert torch.allclose(h_short, h_long[:, :3], atol=1e-6)
    with pytest.raises(ValueError):
        model.decode(torch.empty(1, 0, dtype=torch.long), memory, pad)


def test_decode_step_matches_last_decode_position():
    model = tiny_model()
    src = torch.tensor([[4, 5, 6, 0]])
    flags = torch.zeros(1, 4, dtype=torch.bool)
    memory = model.encode(src, flags)
    pad = src.eq(0)
    prefix = torch.tensor([[1, 4]])
    hidden, alpha = model.decode(prefix, memory, pad)
    state = model.decode_step(prefix, memory, pad)
    assert torch.allclose(state.hidden, hidden[:, -1])
    assert torch.allclose(state.alpha, alpha[:, -1])
    expected_ctx = torch.einsum("bs,bsd->bd", alpha[:, -1], memory)
    assert torch.allclose(state.context, expected_ctx, atol=1e-6)


def test_cross_attention_ignores_padding():
    model = tiny_model()
    src = torch.tensor([[4, 5, 0, 0]])
    flags = torch.zeros(1, 4, dtype=torch.bool)
    memory = model.encode(src, flags)
    state = model.decode_step(torch.tensor([[1]]), memory, src.eq(0))
    assert state.alpha[0, 2:].abs().sum().item() == 0
    assert state.alpha.sum().item() == pytest.approx(1.0, abs=1e-6)


def test_extended_slots_mapping():
    model = tiny_model(n_src=8, n_tgt=7)
    src_ids = torch.tensor([[4, 2, 5]])
    src_is_tgt = torch.tensor([[False, True, False]])
    slots = model.extended_slots(src_ids, src_is_tgt)
    assert slots.tolist() == [[7 + 4, 2, 7 + 5]]


def test_copy_distribution_hand_case():
    model = tiny_model(n_src=6, n_tgt=5)
    src_ids = torch.tensor([[4, 2, 4, 0]])
    src_is_tgt = torch.tensor([[False, True, False, False]])
    alpha = torch.tensor([[0.4, 0.3, 0.2, 0.1]])
    p = model.copy_distribution(alpha, src_ids, src_is_tgt)
    assert p.shape == (1, 11)
    expected = torch.zeros(11)
    expected[5 + 4] = 0.4 + 0.2  # both occurrences of source word 4
    expected[2] = 0.3            # target-language token keeps its target slot
    # attention on the PAD position is dropped
    assert torch.allclose(p[0], expected, atol=1e-7)


def test_output_distribution_normalizes_and_zeroes_absent_words():
    torch.manual_seed(1)
    model = tiny_model(n_src=9, n_tgt=7)
    src = torch.tensor([[4, 6, 5, 0]])
    flags = torch.tensor([[False, True, False, False]])
    memory = model.encode(src, flags)
    state = model.decode_step(torch.tensor([[1, 4]]), memory, src.eq(0))
    p = model.output_distribution(state, src, flags)
    assert p.shape == (1, 16)
    assert p.sum().item() == pytest.approx(1.0, abs=1e-6)
    present = {7 + 4, 7 + 5}
    for slot in range(7, 16):
        if slot not in present:
            assert p[0, slot].item() == 0.0
    assert (p >= 0).all()


def test_output_distribution_matches_mixture_formula():
    torch.manual_seed(2)
    model = tiny_model(n_src=6, n_tgt=5)
    src = torch.tensor([[4, 3]])
    flags = torch.tensor([[False, True]])
    memory = model.encode(src, flags)
    state = model.decode_step(torch.tensor([[1]]), memory, src.eq(0))
    g = model.copy_gate(state.context, state.hidden)
    assert 0.0 < g.item() < 1.0
    p_copy = model.copy_distribution(state.alpha, src, flags)
    p_pred = model.predict_distribution(state.hidden)
    expected = (1 - g) * p_copy
    expected[:, :5] += g * p_pred
    got = model.output_distribution(state, src, flags)
    assert torch.allclose(got, expected, atol=1e-7)


def test_non_pointer_modes_return_plain_softmax():
    for mode in ("merged", "shared"):
        n_src = 7 if mode == "merged" else 9
        model = tiny_model(mode, n_src=n_src, n_tgt=7)
        src = torch.tensor([[4, 5]])
        flags = torch.zeros(1, 2, dtype=torch.bool)
        memory = model.encode(src, flags)
        state = model.decode_step(torch.tensor([[1]]), memory, src.eq(0))
        p = model.output_distribution(state, src, flags)
        assert p.shape == (1, 7)
        assert p.sum().item() == pytest.approx(1.0, abs=1e-6)


def test_sequence_distribution_matches_stepwise():
    torch.manual_seed(3)
    model = tiny_model(n_src=6, n_tgt=5)
    src = torch.tensor([[4, 3, 5]])
    flags = torch.tensor([[False, True, False]])
    tgt_in = torch.tensor([[1, 4, 3]])
    seq = model.sequence_distribution(src, flags, tgt_in)
    memory = model.encode(src, flags)
    pad = src.eq(0)
    for t in range(1, 4):
        state = model.decode_step(tgt_in[:, :t], memory, pad)
        step = model.output_distribution(state, src, flags)
        assert torch.allclose(seq[:, t - 1], step, atol=1e-6)


# label smoothing with confidence 0.9 over 5 target slots:
# gold keeps 0.9, PAD gets 0, the three remaining slots share 0.1


def test_smoothed_targets_hand_case():
    labels = torch.tensor([[4]])
    q = smoothed_targets(labels, n_tgt_vocab=5, n_total=8, confidence=0.9)
    expected = torch.tensor([0.0, 1 / 30, 1 / 30, 1 / 30, 0.9, 0.0, 0.0, 0.0])
    assert torch.allclose(q[0, 0], expected, atol=1e-7)
    assert q.sum().item() == pytest.approx(1.0, abs=1e-6)


class StubModel:
    """Duck-typed stand-in exposing exactly what training_loss touches."""

    def __init__(self, probs, n_tgt, confidence):
        self._probs = probs
        self.n_tgt_vocab = n_tgt
        self.cfg = SimpleNamespace(confidence=confidence)

    def sequence_distribution(self, src_ids, src_is_tgt, tgt_in):
        return self._probs


def test_training_loss_zero_for_perfect_confident_prediction():
    labels = torch.tensor([[4, 2]])
    probs = torch.zeros(1, 2, 5)
    probs[0, 0, 4] = 1.0
    probs[0, 1, 2] = 1.0
    stub = StubModel(probs, n_tgt=5, confidence=1.0)
    dummy = torch.zeros(1, 2, dtype=torch.long)
    loss = training_loss(stub, dummy, dummy.bool(), dummy, labels)
    assert loss.item() == pytest.approx(0.0, abs=1e-6)


def test_training_loss_uniform_prediction_is_log_vocab():
    labels = torch.tensor([[4]])
    probs = torch.full((1, 1, 5), 1 / 5)
    stub = StubModel(probs, n_tgt=5, confidence=1.0)
    dummy = torch.zeros(1, 1, dtype=torch.long)
    loss = training_loss(stub, dummy, dummy.bool(), dummy, labels)
    assert loss.item() == pytest.approx(math.log(5), abs=1e-6)


def test_training_loss_matches_hand_computation():
    torch.manual_seed(4)
    model = tiny_model(n_src=6, n_tgt=5)
    src = torch.tensor([[4, 3], [5, 0]])
    flags = torch.tensor([[False, True], [False, False]])
    tgt_in = torch.tensor([[1, 4], [1, 0]])
    labels = torch.tensor([[4, 2], [3, 0]])
    loss = training_loss(model, src, flags, tgt_in, labels)

    probs = model.sequence_distribution(src, flags, tgt_in)
    smooth = 0.1 / 3
    total, count = 0.0, 0
    for b in range(2):
        for t in range(2):
            gold = labels[b, t].item()
            if gold == 0:
                continue
            q = [0.0] * probs.shape[-1]
            for v in range(1, 5):
                q[v] = smooth
            q[gold] = 0.9
            total += -sum(
                qv * math.log(max(probs[b, t, v].item(), 1e-9))
                for v, qv in enumerate(q)
                if qv > 0
            )
            count += 1
    assert loss.item() == pytest.approx(total / count, abs=1e-5)


def test_training_loss_rejects_all_pad_batch():
    stub = StubModel(torch.zeros(1, 1, 5), n_tgt=5, confidence=0.9)
    dummy = torch.zeros(1, 1, dtype=torch.long)
    with pytest.raises(ValueError):
        training_loss(stub, dummy, dummy.bool(), dummy, torch.zeros(1, 1, dtype=torch.long))
