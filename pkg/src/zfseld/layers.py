"""Minimal numpy layers with hand-written exact backward passes.

Every layer caches what its backward needs during forward and
accumulates parameter gradients into ``Param.grad``. Activations are
ELU (smooth, so central finite differences stay meaningful), pooling is
averaging, and attention masks use a large negative additive constant
whose softmax weight underflows to exactly zero.

Array layout: convolutional tensors are channels-last, (B, F, T, C),
which keeps the im2col/col2im paths nearly copy-free; sequence tensors
are (B, T, D).
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

MASK_NEG = -1e9


class Param:
    """A trainable array and its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class Layer:
    def param_dict(self) -> dict[str, Param]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Param)}

    def zero_grad(self) -> None:
        for p in self.param_dict().values():
            p.grad[...] = 0.0


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def glorot_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """3x3 (or kxk) same-padded, stride-1 convolution via im2col.

    Input and output are channels-last: (B, F, T, C).
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, dtype=np.float32):
        self.kernel = kernel
        self.c_in = c_in
        self.c_out = c_out
        fan_in = c_in * kernel * kernel
        self.w = Param(he_init(rng, (fan_in, c_out), fan_in, dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, f, t, c = x.shape
        k = self.kernel
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        # win is (B, F, T, C, k, k); the reshape makes the one required copy
        cols = win.reshape(b * f * t, c * k * k)
        y = cols @ self.w.value + self.b.value
        self._cache = (cols, (b, f, t, c))
        return y.reshape(b, f, t, self.c_out)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cols, (b, f, t, c) = self._cache
        k = self.kernel
        p = k // 2
        dy_r = dy.reshape(b * f * t, self.c_out)
        self.w.grad += cols.T @ dy_r
        self.b.grad += dy_r.sum(axis=0)
        dcols = (dy_r @ self.w.value.T).reshape(b, f, t, c, k, k)
        dxp = np.zeros((b, f + 2 * p, t + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + f, j : j + t, :] += dcols[:, :, :, :, i, j]
        return dxp[:, p : p + f, p : p + t, :]


class AvgPool2D(Layer):
    """Average pooling over (F, T) with zero padding up to full windows."""

    def __init__(self, pool_f: int, pool_t: int):
        self.pool_f = pool_f
        self.pool_t = pool_t
        self._cache = None

    def out_size(self, f: int, t: int) -> tuple[int, int]:
        return -(-f // self.pool_f), -(-t // self.pool_t)

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, f, t, c = x.shape
        fo, to = self.out_size(f, t)
        pf, pt = self.pool_f, self.pool_t
        xp = np.pad(x, ((0, 0), (0, fo * pf - f), (0, to * pt - t), (0, 0)))
        y = xp.reshape(b, fo, pf, to, pt, c).mean(axis=(2, 4))
        self._cache = (b, f, t, c)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, f, t, c = self._cache
        pf, pt = self.pool_f, self.pool_t
        scale = 1.0 / (pf * pt)
        dxp = np.repeat(np.repeat(dy * scale, pf, axis=1), pt, axis=2)
        return np.ascontiguousarray(dxp[:, :f, :t, :])


class ELU(Layer):
    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        neg = x <= 0
        y = x.copy()
        y[neg] = self.alpha * np.expm1(x[neg])
        self._cache = (neg, y)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        neg, y = self._cache
        scale = np.ones_like(y)
        scale[neg] = y[neg] + self.alpha
        return dy * scale


class Dense(Layer):
    """Affine map on the last axis of an N-d input."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.w = Param(glorot_init(rng, (d_in, d_out), d_in, d_out, dtype))
        self.b = Param(np.zeros(d_out, dtype=dtype))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.w.value + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.w.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.w.value.T


class LayerNorm(Layer):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.g = Param(np.ones(dim, dtype=dtype))
        self.b = Param(np.zeros(dim, dtype=dtype))
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return self.g.value * xhat + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        self.g.grad += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        self.b.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        dxhat = dy * self.g.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


class CrossStitch(Layer):
    """Per-channel 2x2 mixing between two branch activations (channels-last).

    Identity initialization leaves the branches fully independent.
    """

    def __init__(self, channels: int, dtype=np.float32):
        s = np.tile(np.eye(2, dtype=dtype), (channels, 1, 1))
        self.s = Param(s)
        self._cache = None

    def forward(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.s.value
        a2 = s[:, 0, 0] * a + s[:, 0, 1] * b
        b2 = s[:, 1, 0] * a + s[:, 1, 1] * b
        self._cache = (a, b)
        return a2, b2

    def backward(self, da2: np.ndarray, db2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self._cache
        s = self.s.value
        self.s.grad[:, 0, 0] += np.einsum("bftc,bftc->c", da2, a)
        self.s.grad[:, 0, 1] += np.einsum("bftc,bftc->c", da2, b)
        self.s.grad[:, 1, 0] += np.einsum("bftc,bftc->c", db2, a)
        self.s.grad[:, 1, 1] += np.einsum("bftc,bftc->c", db2, b)
        da = s[:, 0, 0] * da2 + s[:, 1, 0] * db2
        db = s[:, 0, 1] * da2 + s[:, 1, 1] * db2
        return da, db


def sinusoidal_positions(n: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal positional code, shape (n, dim)."""
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return pe.astype(dtype)


class MultiHeadSelfAttention(Layer):
    """Self-attention over the time axis of (B, T, D) input."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Dense(d_model, d_model, rng, dtype)
        self.wk = Dense(d_model, d_model, rng, dtype)
        self.wv = Dense(d_model, d_model, rng, dtype)
        self.wo = Dense(d_model, d_model, rng, dtype)
        self._cache = None

    def param_dict(self) -> dict[str, Param]:
        out = {}
        for sub in ("wq", "wk", "wv", "wo"):
            for k, p in getattr(self, sub).param_dict().items():
                out[f"{sub}.{k}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.param_dict().values():
            p.grad[...] = 0.0

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, t, dh = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)

    def forward(self, x: np.ndarray, key_mask: np.ndarray | None = None) -> np.ndarray:
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scale = 1.0 / np.sqrt(self.d_head)
        scores = np.einsum("bhid,bhjd->bhij", q, k) * scale
        if key_mask is not None:
            # key_mask: (B, T) True where the frame is real
            scores = scores + np.where(key_mask[:, None, None, :], 0.0, MASK_NEG).astype(
                scores.dtype
            )
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = np.einsum("bhij,bhjd->bhid", attn, v)
        out = self.wo.forward(self._merge(ctx))
        self._cache = (q, k, v, attn, scale)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        q, k, v, attn, scale = self._cache
        dctx = self._split(self.wo.backward(dy))
        dattn = np.einsum("bhid,bhjd->bhij", dctx, v)
        dv = np.einsum("bhij,bhid->bhjd", attn, dctx)
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = np.einsum("bhij,bhjd->bhid", dscores, k) * scale
        dk = np.einsum("bhij,bhid->bhjd", dscores, q) * scale
        dx = self.wq.backward(self._merge(dq))
        dx += self.wk.backward(self._merge(dk))
        dx += self.wv.backward(self._merge(dv))
        return dx
