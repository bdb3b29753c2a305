"""AdamW with decoupled weight decay and global gradient clipping."""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor
from ..models.layers import ParamStore

# matrix-shaped weights decay; biases, norm gains, the class token, the
# decoder start vector, and the temperature never do
_NO_DECAY_LEAVES = ("cls", "start", "log_scale")


def is_decayed(name: str, tensor: Tensor) -> bool:
    if tensor.data.ndim < 2:
        return False
    return name.rsplit(".", 1)[-1] not in _NO_DECAY_LEAVES


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.
    Returns the pre-clip norm. No-op for non-positive max_norm."""
    total = 0.0
    grads = []
    for t in params.values():
        if t.grad is not None:
            g = t.grad
            total += float((g.astype(np.float64) ** 2).sum())
            grads.append(g)
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm and grads:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Only the parameters present in ``params`` are ever touched, so
    freezing a model component is done by leaving its tensors out.
    """

    def __init__(
        self,
        params: dict,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 0.2,
    ):
        self.params = dict(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float, lr_multipliers: dict | None = None) -> None:
        """One update. ``lr_multipliers`` maps name prefixes to factors;
        the longest matching prefix wins, default factor 1."""
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            factor = 1.0
            if lr_multipliers:
                best = -1
                for prefix, f in lr_multipliers.items():
                    if name.startswith(prefix) and len(prefix) > best:
                        best = len(prefix)
                        factor = f
            eff_lr = lr * factor
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            update = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay and is_decayed(name, p):
                update = update + self.weight_decay * p.data
            p.data -= (eff_lr * update).astype(p.data.dtype)

    def state_arrays(self) -> dict:
        """Flat name-to-array view of the moment buffers, for snapshots."""
        out = {}
        for n in self.params:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict, t: int) -> None:
        self.t = t
        for n, p in self.params.items():
            # reshape guards against stale containers and keeps 0-d
            # buffers 0-d (ascontiguousarray would promote them to 1-d)
            self.m[n] = np.ascontiguousarray(arrays[f"opt.m.{n}"]).reshape(p.data.shape)
            self.v[n] = np.ascontiguousarray(arrays[f"opt.v.{n}"]).reshape(p.data.shape)
