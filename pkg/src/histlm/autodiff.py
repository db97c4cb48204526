"""Tensor ops, gradient checking, optimizers, LR schedules and checkpoints.

Tensors are ``torch.Tensor`` (autograd does the backward pass).  The functional
ops below add shape validation that names the op, and the optimizers are
written out explicitly so their update rules are visible and testable.

Randomness: parameter init and generator sampling draw from a seeded
``torch.Generator`` (mt19937); mask planning, shuffling and span corruption
draw from ``numpy.random.Generator`` (PCG64).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
INIT_STD = 0.02


class ShapeError(ValueError):
    pass


class NumericalError(RuntimeError):
    """Raised on NaN/inf losses or gradients."""


def set_precision(bits: int) -> None:
    global DTYPE
    DTYPE = {64: torch.float64, 32: torch.float32}[bits]


def _shapes(*ts):
    return " and ".join(str(tuple(t.shape)) for t in ts)


def _check_broadcast(op, a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"{op}: incompatible shapes {_shapes(a, b)}") from None


def matmul(a, b):
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {_shapes(a, b)}")
    return a @ b


def add(a, b):
    _check_broadcast("add", a, b)
    return a + b


def mul(a, b):
    _check_broadcast("mul", a, b)
    return a * b


def softmax(x, axis=-1):
    return torch.softmax(x, dim=axis)


def log_softmax(x, axis=-1):
    return torch.log_softmax(x, dim=axis)


def sigmoid(x):
    return torch.sigmoid(x)


def gelu(x):
    return F.gelu(x)


def geglu(x, w_gate, w_up):
    """gelu(x @ w_gate) * (x @ w_up); weights are stored [in, out]."""
    if w_gate.shape != w_up.shape:
        raise ShapeError(f"geglu: gate/up weights differ {_shapes(w_gate, w_up)}")
    return gelu(matmul(x, w_gate)) * matmul(x, w_up)


def layer_norm(x, weight, bias, eps=1e-7):
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: input {_shapes(x)} vs parameters {_shapes(weight, bias)}")
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)


def rms_norm(x, weight, eps=1e-6):
    if weight.shape != x.shape[-1:]:
        raise ShapeError(f"rms_norm: input {_shapes(x)} vs weight {_shapes(weight)}")
    return weight * x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + eps)


def embedding_lookup(table, ids):
    if table.dim() != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, got {_shapes(table)}")
    return F.embedding(ids, table)


def concat(ts, axis=-1):
    ref = list(ts[0].shape)
    ax = axis % len(ref)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {_shapes(*ts)} on axis {axis}")
    return torch.cat(list(ts), dim=axis)


def slice_(x, axis, start, stop):
    return x.narrow(axis, start, stop - start)


def masked_fill(x, mask, value):
    _check_broadcast("masked_fill", x, mask)
    return x.masked_fill(mask, value)


def cross_entropy(logits, target, ignore_index=-100):
    """Mean token cross-entropy; ``logits`` [..., C], ``target`` [...]."""
    if logits.shape[:-1] != target.shape:
        raise ShapeError(f"cross_entropy: logits {_shapes(logits)} vs target {_shapes(target)}")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1),
                           ignore_index=ignore_index)


def binary_cross_entropy(logits, target, weight=None):
    """Mean sigmoid cross-entropy over the entries selected by ``weight`` (all if None)."""
    if logits.shape != target.shape:
        raise ShapeError(f"binary_cross_entropy: {_shapes(logits, target)}")
    losses = F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype), reduction="none")
    if weight is None:
        return losses.mean()
    weight = weight.to(logits.dtype)
    return (losses * weight).sum() / weight.sum().clamp_min(1.0)


def stop_gradient(x):
    return x.detach()


def backward(loss) -> None:
    if loss.numel() != 1 or loss.dim() != 0:
        raise ShapeError(f"backward: loss must be a scalar, got {_shapes(loss)}")
    loss.backward()


def grad_or_zero(p):
    return torch.zeros_like(p) if p.grad is None else p.grad


# -- finite-difference oracle ----------------------------------------------

def numerical_grad(fn, tensors, eps=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. each tensor, perturbing in place."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(fn())
                flat[i] = orig - eps
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a, b) -> float:
    num = (a - b).norm().item()
    den = max(a.norm().item(), b.norm().item(), 1e-10)
    return num / den


def gradient_check(fn, tensors, eps=1e-5) -> float:
    """Largest relative error between autograd and central differences over ``tensors``.

    ``fn`` must be a deterministic zero-argument closure returning a scalar.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    backward(fn())
    analytic = [grad_or_zero(t).clone() for t in tensors]
    numeric = numerical_grad(fn, tensors, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


# -- init ------------------------------------------------------------------

def trunc_normal_(p, generator=None, std: float = INIT_STD):
    if p.device.type != "meta":
        with torch.no_grad():
            torch.nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std, generator=generator)


def init_weights(module: torch.nn.Module, generator: torch.Generator | None, std: float = INIT_STD):
    """Truncated normal (±2 std) for linear weights, embeddings and any parameter a module
    lists in ``trunc_normal_params``; zeros for linear biases.  Norm gains keep their
    constructor init."""
    for m in module.modules():
        if isinstance(m, (torch.nn.Linear, torch.nn.Embedding)):
            trunc_normal_(m.weight, generator, std)
            if getattr(m, "bias", None) is not None:
                with torch.no_grad():
                    m.bias.zero_()
        for name in getattr(m, "trunc_normal_params", ()):
            trunc_normal_(getattr(m, name), generator, std)


def count_parameters(module: torch.nn.Module, trainable_only=True) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


# -- schedules -------------------------------------------------------------

@dataclass
class LrSchedule:
    kind: str  # constant | linear | cosine
    base_lr: float
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    @classmethod
    def with_warmup_proportion(cls, kind, base_lr, total_steps, proportion):
        return cls(kind, base_lr, total_steps, int(round(proportion * total_steps)))

    def __call__(self, step: int) -> float:
        """Learning rate for optimizer step ``step`` (1-based)."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        if self.kind == "constant":
            return self.base_lr
        span = max(self.total_steps - self.warmup_steps, 1)
        frac = min(max(step - self.warmup_steps, 0) / span, 1.0)
        if self.kind == "linear":
            return self.base_lr * (1.0 - frac)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


# -- optimizers ------------------------------------------------------------

class Optimizer:
    """Adam, AdamW (decoupled decay) and AdamWScale (AdamW with the update scaled by
    the parameter's RMS, floored at 1e-3).

    ``adam`` applies weight decay as L2 in the gradient.
    """

    KINDS = ("adam", "adamw", "adamwscale")

    def __init__(self, named_params, kind="adamw", lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, schedule: LrSchedule | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.kind, self.lr, self.betas, self.eps = kind, lr, betas, eps
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.step_count = 0
        self.exp_avg = {n: torch.zeros_like(p) for n, p in self.params}
        self.exp_avg_sq = {n: torch.zeros_like(p) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def current_lr(self) -> float:
        return self.schedule(self.step_count) if self.schedule else self.lr

    @torch.no_grad()
    def step(self):
        for n, p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericalError(f"non-finite gradient in parameter {n!r} at step {self.step_count + 1}")
        self.step_count += 1
        lr = self.current_lr()
        b1, b2 = self.betas
        bc1 = 1 - b1 ** self.step_count
        bc2 = 1 - b2 ** self.step_count
        for n, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.kind == "adam" and self.weight_decay:
                g = g + self.weight_decay * p
            m, v = self.exp_avg[n], self.exp_avg_sq[n]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = v.sqrt().add_(self.eps)
            step_size = lr * math.sqrt(bc2) / bc1
            if self.kind == "adamwscale":
                step_size *= max(1e-3, p.pow(2).mean().sqrt().item())
            elif self.kind == "adamw" and self.weight_decay:
                p.mul_(1 - lr * self.weight_decay)
            p.addcdiv_(m, denom, value=-step_size)
            if self.kind == "adamwscale" and self.weight_decay:
                p.add_(p, alpha=-lr * self.weight_decay)

    def state_dict(self) -> dict:
        return {"step": self.step_count,
                **{f"exp_avg/{n}": t for n, t in self.exp_avg.items()},
                **{f"exp_avg_sq/{n}": t for n, t in self.exp_avg_sq.items()}}


# -- checkpoints -----------------------------------------------------------

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _rng_state(rng):
    if rng is None:
        return None
    if isinstance(rng, np.random.Generator):
        return {"numpy": rng.bit_generator.state}
    return rng


def checkpoint_bytes(arrays: dict[str, torch.Tensor | np.ndarray], manifest: dict | None = None,
                     rng=None, step: int = 0) -> bytes:
    """Zip archive of named ``.npy`` arrays plus ``manifest.json``; byte-stable for equal inputs."""
    manifest = dict(manifest or {})
    meta = {}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            a = arrays[name]
            arr = a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else np.asarray(a)
            meta[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
            data = io.BytesIO()
            np.lib.format.write_array(data, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _EPOCH), data.getvalue())
        manifest.update(arrays=meta, step=step, rng=_rng_state(rng))
        zf.writestr(zipfile.ZipInfo("manifest.json", _EPOCH),
                    json.dumps(manifest, sort_keys=True, indent=1, ensure_ascii=False))
    return buf.getvalue()


def save_checkpoint(path, arrays, manifest=None, rng=None, step=0) -> str:
    data = checkpoint_bytes(arrays, manifest, rng, step)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        for name in manifest["arrays"]:
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            arrays[name] = torch.from_numpy(arr.copy())
    return arrays, manifest


def state_arrays(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {n: t for n, t in module.state_dict().items()}


def restore_rng(manifest) -> np.random.Generator | None:
    state = (manifest.get("rng") or {}).get("numpy")
    if state is None:
        return None
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
