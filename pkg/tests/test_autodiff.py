import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from histlm import autodiff as ad


def test_numerical_grad_matches_closed_form():
    x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    (g,) = ad.numerical_grad(lambda: (x ** 3).sum(), [x])
    assert torch.allclose(g, 3 * x ** 2, atol=1e-8)


def test_gradient_check_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x.pow(2).sum()

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * x  # should be 2x

    x = torch.randn(4, dtype=torch.float64, requires_grad=True)
    assert ad.gradient_check(lambda: Wrong.apply(x), [x]) > 0.1


@pytest.mark.parametrize("op,args", [
    ("matmul", [(2, 3), (4, 2)]),
    ("add", [(2, 3), (4, 3)]),
    ("concat", [(2, 3), (3, 4)]),
])
def test_shape_errors_name_the_op(op, args):
    ts = [torch.zeros(s) for s in args]
    with pytest.raises(ad.ShapeError, match=op):
        if op == "concat":
            ad.concat(ts, axis=-1)
        else:
            getattr(ad, op)(*ts)


def test_cross_entropy_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.cross_entropy(torch.zeros(3, 5), torch.zeros(4, dtype=torch.long))


def test_backward_requires_scalar():
    x = torch.ones(3, requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(x * 2)


def test_weighted_bce_ignores_unweighted_entries():
    logits = torch.tensor([0.0, 5.0, -3.0], dtype=torch.float64)
    target = torch.tensor([True, False, False])
    weight = torch.tensor([True, False, True])
    expected = (math.log(2) + math.log1p(math.exp(-3.0))) / 2
    assert ad.binary_cross_entropy(logits, target, weight).item() == pytest.approx(expected, rel=1e-12)


# -- schedules --------------------------------------------------------------

def test_schedules():
    lin = ad.LrSchedule("linear", 1.0, 100, 10)
    assert lin(5) == pytest.approx(0.5)
    assert lin(10) == pytest.approx(1.0)
    assert lin(100) == pytest.approx(0.0)
    cos = ad.LrSchedule("cosine", 2.0, 2000, 1000)
    assert cos(1000) == pytest.approx(2.0)
    assert cos(1500) == pytest.approx(1.0)
    assert cos(2000) == pytest.approx(0.0, abs=1e-12)
    const = ad.LrSchedule.with_warmup_proportion("constant", 1e-5, 300, 0.1)
    assert const.warmup_steps == 30 and const(30) == pytest.approx(1e-5) and const(300) == pytest.approx(1e-5)


@given(st.sampled_from(["constant", "linear", "cosine"]), st.integers(1, 500), st.integers(0, 100))
def test_schedule_bounds(kind, total, warmup):
    s = ad.LrSchedule(kind, 0.1, total, warmup)
    lrs = [s(i) for i in range(1, total + 1)]
    assert all(0.0 <= lr <= 0.1 + 1e-15 for lr in lrs)


# -- optimizers: torch.optim as an independent reference --------------------

def _run(kind, ref_cls, wd, steps=5):
    gen = torch.Generator().manual_seed(0)
    p0 = torch.randn(6, 4, dtype=torch.float64, generator=gen)
    grads = [torch.randn(6, 4, dtype=torch.float64, generator=gen) for _ in range(steps)]
    ours = torch.nn.Parameter(p0.clone())
    ref = torch.nn.Parameter(p0.clone())
    opt = ad.Optimizer([("w", ours)], kind, lr=1e-2, weight_decay=wd)
    ref_opt = ref_cls([ref], lr=1e-2, weight_decay=wd)
    for g in grads:
        ours.grad, ref.grad = g.clone(), g.clone()
        opt.step()
        ref_opt.step()
    return ours.detach(), ref.detach()


@pytest.mark.parametrize("kind,ref_cls", [("adam", torch.optim.Adam), ("adamw", torch.optim.AdamW)])
@pytest.mark.parametrize("wd", [0.0, 0.1])
def test_optimizer_matches_reference(kind, ref_cls, wd):
    ours, ref = _run(kind, ref_cls, wd)
    # the only difference is where eps enters (after vs before bias correction)
    assert torch.allclose(ours, ref, rtol=1e-6, atol=1e-9)


def test_adamwscale_step_scales_with_rms():
    p = torch.nn.Parameter(torch.full((4,), 3.0, dtype=torch.float64))
    opt = ad.Optimizer([("p", p)], "adamwscale", lr=0.1)
    p.grad = torch.ones(4, dtype=torch.float64)
    opt.step()
    # first Adam step has magnitude lr (up to eps); scaled by RMS(p) = 3
    assert torch.allclose(p.detach(), torch.full((4,), 3.0 - 0.3, dtype=torch.float64), atol=1e-6)
    q = torch.nn.Parameter(torch.zeros(4, dtype=torch.float64))
    opt = ad.Optimizer([("q", q)], "adamwscale", lr=0.1)
    q.grad = torch.ones(4, dtype=torch.float64)
    opt.step()
    assert torch.allclose(q.detach(), torch.full((4,), -1e-4, dtype=torch.float64), atol=1e-9)


def test_nan_gradient_names_parameter():
    p = torch.nn.Parameter(torch.zeros(2))
    opt = ad.Optimizer([("layer.weight", p)], "adamw")
    p.grad = torch.tensor([0.0, float("nan")])
    with pytest.raises(ad.NumericalError, match="layer.weight"):
        opt.step()


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_bytes_deterministic_and_roundtrip(tmp_path):
    arrays = {"b": torch.arange(6, dtype=torch.float64).reshape(2, 3), "a": np.ones(3, dtype=np.float32)}
    rng = np.random.default_rng(7)
    assert ad.checkpoint_bytes(arrays, {"x": 1}, rng, 3) == ad.checkpoint_bytes(arrays, {"x": 1}, rng, 3)
    digest = ad.save_checkpoint(tmp_path / "c.ckpt", arrays, {"x": 1}, rng, 3)
    assert len(digest) == 64
    loaded, manifest = ad.load_checkpoint(tmp_path / "c.ckpt")
    assert torch.equal(loaded["b"], arrays["b"]) and loaded["a"].dtype == torch.float32
    assert manifest["x"] == 1 and manifest["step"] == 3
    restored = ad.restore_rng(manifest)
    assert restored.random() == np.random.default_rng(7).random()


def test_init_is_truncated_and_seeded():
    lin = torch.nn.Linear(50, 50)
    ad.init_weights(lin, torch.Generator().manual_seed(1), 0.02)
    w1 = lin.weight.detach().clone()
    assert w1.abs().max() <= 0.04 and torch.count_nonzero(lin.bias) == 0
    ad.init_weights(lin, torch.Generator().manual_seed(1), 0.02)
    assert torch.equal(w1, lin.weight)
