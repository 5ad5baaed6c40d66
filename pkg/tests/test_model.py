import numpy as np
import pytest

from raunet.losses import cel_dice
from raunet.model import ModelConfig, build, count_params, forward
from raunet.tensor import Precision, Tape, Tensor, backward

DESK = ModelConfig(num_classes=4, width_mult=1 / 8, block_counts=(1, 1, 1, 1), input_size=(64, 64))


def desk(**kw):
    return ModelConfig(**{**DESK.to_dict(), **kw})


def images(n, seed=0, size=(64, 64)):
    return np.random.default_rng(seed).uniform(-1, 1, (n, 3) + size)


def test_config_validation():
    with pytest.raises(ValueError):
        desk(input_size=(60, 64))
    with pytest.raises(ValueError):
        desk(num_classes=1)
    with pytest.raises(ValueError):
        desk(block_counts=(1, 1, 1))
    assert desk().channels == (8, 8, 16, 32, 64)
    assert ModelConfig().channels == (64, 64, 128, 256, 512)


@pytest.mark.parametrize("use_aam", [True, False])
def test_forward_shapes_and_softmax(use_aam):
    model = build(desk(use_aam=use_aam), seed=3)
    logits = forward(model, images(2), "eval")
    assert logits.shape == (2, 4, 64, 64)
    assert np.all(np.isfinite(logits.data))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-5)


def test_non_square_input():
    model = build(desk(input_size=(32, 96)))
    assert forward(model, images(2, size=(32, 96))).shape == (2, 4, 32, 96)


def test_stride_ladder():
    model = build(desk())
    skips = model.encoder(Tensor(images(2), precision=Precision.F32))
    assert [s.shape[2:] for s in skips] == [(64 // f, 64 // f) for f in (2, 4, 8, 16, 32)]
    assert [s.shape[1] for s in skips] == [8, 8, 16, 32, 64]


def test_eval_is_deterministic_and_records_nothing():
    model = build(desk())
    x = images(2)
    with Tape() as tape:
        a = forward(model, x, "eval").data
        b = forward(model, x, "eval").data
    assert tape.nodes == []
    assert np.array_equal(a, b)


def test_forward_rejects_wrong_size():
    with pytest.raises(ValueError):
        forward(build(desk()), images(1, size=(32, 32)))


def test_build_is_deterministic():
    a, b = build(desk(), seed=5), build(desk(), seed=5)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb and np.array_equal(ta.data, tb.data)
    c = build(desk(), seed=6)
    assert not np.array_equal(a.encoder.stem.weight.data, c.encoder.stem.weight.data)


def test_full_scale_param_counts():
    aam = count_params(build(ModelConfig(use_aam=True)))
    base = count_params(build(ModelConfig(use_aam=False)))
    assert aam["total"] == pytest.approx(22.06e6, rel=0.10)
    assert base["total"] == pytest.approx(21.80e6, rel=0.10)
    skips = (256, 128, 64, 64)
    assert sum(3 * c * c for c in skips) == 270_336
    assert aam["aam"] == 270_336 + 3 * sum(skips) + 2 * sum(skips)
    assert aam["total"] - base["total"] == aam["aam"]
    assert base["aam"] == 0
    for key in ("encoder", "decoder", "head"):
        assert aam[key] == base[key]


def test_half_width_quarters_conv_weights():
    full = dict(build(desk(width_mult=1 / 4)).named_parameters())
    half = dict(build(desk(width_mult=1 / 8)).named_parameters())
    assert full.keys() == half.keys()
    for name, t in full.items():
        if t.ndim == 4 and name != "encoder.stem.weight" and "classifier" not in name:
            assert t.size == 4 * half[name].size, name


def test_every_parameter_gets_a_gradient():
    model = build(desk(), seed=1, precision=Precision.F64)
    x = images(4)
    target = np.random.default_rng(2).integers(0, 4, (4, 64, 64))
    with Tape() as tape:
        loss = cel_dice(forward(model, x, "train"), target)
    backward(loss, tape)
    missing = [n for n, t in model.named_parameters() if t.grad is None]
    assert missing == []
    # The attention output bias is followed by train-mode batch norm, which cancels it.
    zero = sorted(n for n, t in model.named_parameters() if not np.any(t.grad))
    assert all(n.endswith("w_phi.bias") for n in zero)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_small_gradient_step_decreases_loss(seed):
    model = build(desk(), seed=seed, precision=Precision.F64)
    rng = np.random.default_rng(seed)
    x = images(4, seed)
    target = rng.integers(0, 4, (4, 64, 64))

    def loss_value():
        with Tape() as tape:
            loss = cel_dice(forward(model, x, "train"), target)
        return loss, tape

    loss, tape = loss_value()
    before = loss.item()
    backward(loss, tape)
    for t in model.parameters():
        t.data -= 1e-4 * t.grad
        t.grad = None
    after, tape = loss_value()
    tape.clear()
    assert after.item() < before
