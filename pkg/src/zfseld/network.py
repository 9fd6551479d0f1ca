"""Two-branch track-wise network emitting embeddings and coupled DOAs.

Both branches share the input features. Each runs its own stack of
conv/ELU/avg-pool blocks, linked after every block by identity-initialized
cross-stitch units (soft parameter sharing), followed by a projection to
the attention width, fixed sinusoidal positional codes, pre-norm
self-attention blocks, and a linear head:

* branch A head: (B, T_out, n_tracks, embed_dim) embeddings (unnormalized;
  similarity computations handle scale),
* branch B head: (B, T_out, n_tracks, 3) activity-coupled DOA vectors.

Time is pooled 2x per conv block; the input is zero-padded on the right
to a multiple of the total pooling factor, and fully-padded attention
tokens can be masked out via ``n_valid_frames``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ValidationError
from .layers import (
    ELU,
    AvgPool2D,
    Conv2D,
    CrossStitch,
    Dense,
    LayerNorm,
    MultiHeadSelfAttention,
    Param,
    sinusoidal_positions,
)

CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    n_tracks: int = 3
    embed_dim: int = 512
    in_channels: int = 7
    conv_widths: list[int] = field(default_factory=lambda: [16, 32, 64])
    conv_pool_time: list[int] = field(default_factory=lambda: [2, 2, 2])
    conv_pool_freq: list[int] = field(default_factory=lambda: [4, 4, 2])
    input_freq_pool: int = 2
    attn_dim: int = 64
    attn_heads: int = 2
    attn_blocks: int = 1
    ffn_dim: int = 128
    cross_stitch: bool = True
    dtype: str = "float32"

    @property
    def total_time_pool(self) -> int:
        out = 1
        for p in self.conv_pool_time:
            out *= p
        return out

    def np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        return np.dtype(self.dtype)

    def validate(self) -> list[str]:
        problems = []
        if self.n_tracks < 1:
            problems.append("network.n_tracks must be >= 1")
        if self.embed_dim < 1:
            problems.append("network.embed_dim must be >= 1")
        if not (len(self.conv_widths) == len(self.conv_pool_time) == len(self.conv_pool_freq)):
            problems.append("network.conv_widths/pool lists must have equal length")
        if any(w < 1 for w in self.conv_widths):
            problems.append("network.conv_widths must be positive")
        if any(p < 1 for p in self.conv_pool_time + self.conv_pool_freq):
            problems.append("network.pool factors must be >= 1")
        if self.input_freq_pool < 1:
            problems.append("network.input_freq_pool must be >= 1")
        if self.attn_dim % max(self.attn_heads, 1) != 0:
            problems.append("network.attn_dim must divide evenly by attn_heads")
        if self.dtype not in ("float32", "float64"):
            problems.append("network.dtype must be float32 or float64")
        return problems

    def out_frames(self, n_frames: int) -> int:
        return -(-n_frames // self.total_time_pool)

    def out_bins(self, n_bins: int) -> int:
        f = -(-n_bins // self.input_freq_pool)
        for p in self.conv_pool_freq:
            f = -(-f // p)
        return f


class EmbedAccdoaNet:
    """Forward + exact backward of the two-branch model."""

    def __init__(self, config: NetworkConfig, n_bins: int, rng: np.random.Generator):
        problems = config.validate()
        if problems:
            raise ConfigError("; ".join(problems))
        self.config = config
        self.n_bins = n_bins
        dtype = config.np_dtype()
        self._layers: dict[str, object] = {}

        def reg(name, layer):
            self._layers[name] = layer
            return layer

        self.freq_pool = reg("freq_pool", AvgPool2D(config.input_freq_pool, 1))

        self.blocks_a, self.blocks_b, self.stitches = [], [], []
        c_in = config.in_channels
        for i, width in enumerate(config.conv_widths):
            pf, pt = config.conv_pool_freq[i], config.conv_pool_time[i]
            rng_a, rng_b = rng.spawn(2)
            block_a = (
                reg(f"a.conv{i}", Conv2D(c_in, width, rng_a, dtype=dtype)),
                reg(f"a.elu{i}", ELU()),
                reg(f"a.pool{i}", AvgPool2D(pf, pt)),
            )
            block_b = (
                reg(f"b.conv{i}", Conv2D(c_in, width, rng_b, dtype=dtype)),
                reg(f"b.elu{i}", ELU()),
                reg(f"b.pool{i}", AvgPool2D(pf, pt)),
            )
            self.blocks_a.append(block_a)
            self.blocks_b.append(block_b)
            if config.cross_stitch:
                self.stitches.append(reg(f"stitch{i}", CrossStitch(width, dtype=dtype)))
            c_in = width

        token_dim = config.conv_widths[-1] * config.out_bins(n_bins)
        self.proj_a = reg("a.proj", Dense(token_dim, config.attn_dim, rng.spawn(1)[0], dtype))
        self.proj_b = reg("b.proj", Dense(token_dim, config.attn_dim, rng.spawn(1)[0], dtype))

        self.attn_a, self.attn_b = [], []
        for branch, store in (("a", self.attn_a), ("b", self.attn_b)):
            for j in range(config.attn_blocks):
                sub = {
                    "ln1": reg(f"{branch}.attn{j}.ln1", LayerNorm(config.attn_dim, dtype)),
                    "mhsa": reg(
                        f"{branch}.attn{j}.mhsa",
                        MultiHeadSelfAttention(config.attn_dim, config.attn_heads,
                                               rng.spawn(1)[0], dtype),
                    ),
                    "ln2": reg(f"{branch}.attn{j}.ln2", LayerNorm(config.attn_dim, dtype)),
                    "ff1": reg(f"{branch}.attn{j}.ff1",
                               Dense(config.attn_dim, config.ffn_dim, rng.spawn(1)[0], dtype)),
                    "ffact": reg(f"{branch}.attn{j}.ffact", ELU()),
                    "ff2": reg(f"{branch}.attn{j}.ff2",
                               Dense(config.ffn_dim, config.attn_dim, rng.spawn(1)[0], dtype)),
                }
                store.append(sub)

        self.head_a = reg(
            "a.head", Dense(config.attn_dim, config.n_tracks * config.embed_dim,
                            rng.spawn(1)[0], dtype)
        )
        self.head_b = reg(
            "b.head", Dense(config.attn_dim, config.n_tracks * 3, rng.spawn(1)[0], dtype)
        )
        self._cache = None

    # ---- parameter plumbing -------------------------------------------------

    def named_params(self) -> dict[str, Param]:
        out: dict[str, Param] = {}
        for lname, layer in self._layers.items():
            if hasattr(layer, "param_dict"):
                for pname, p in layer.param_dict().items():
                    out[f"{lname}.{pname}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.named_params().values():
            p.grad[...] = 0.0

    def n_params(self) -> int:
        return sum(p.value.size for p in self.named_params().values())

    # ---- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, n_valid_frames=None):
        """Run the network; returns (embeddings, accdoa) arrays.

        Args:
            x: features, shape (B, in_channels, n_bins, T).
            n_valid_frames: scalar or (B,) count of un-padded frames per
                sample. Fully-padded frames are zeroed after every conv
                block and masked out of attention, so right-padding an
                input never changes the outputs of its valid frames.

        Returns:
            embeddings (B, T_out, n_tracks, embed_dim) and
            accdoa (B, T_out, n_tracks, 3), with T_out = ceil(T / time pool).
        """
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != self.n_bins:
            raise ValidationError(
                f"expected input (B, {cfg.in_channels}, {self.n_bins}, T), got {x.shape}"
            )
        b, _, _, t_in = x.shape
        # channels-last internally: (B, F, T, C)
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=cfg.np_dtype())
        ttp = cfg.total_time_pool
        t_pad = -(-t_in // ttp) * ttp
        if t_pad != t_in:
            x = np.pad(x, ((0, 0), (0, 0), (0, t_pad - t_in), (0, 0)))

        valid = None
        if n_valid_frames is not None:
            valid = np.minimum(
                np.broadcast_to(np.asarray(n_valid_frames, dtype=int), (b,)), t_pad
            )

        h = self.freq_pool.forward(x)
        a = h
        bb = h
        self._time_masks: list[np.ndarray | None] = []
        for i in range(len(self.blocks_a)):
            conv_a, elu_a, pool_a = self.blocks_a[i]
            conv_b, elu_b, pool_b = self.blocks_b[i]
            a = pool_a.forward(elu_a.forward(conv_a.forward(a)))
            bb = pool_b.forward(elu_b.forward(conv_b.forward(bb)))
            block_mask = None
            if valid is not None:
                valid = -(-valid // cfg.conv_pool_time[i])
                if np.any(valid < a.shape[2]):
                    block_mask = (
                        np.arange(a.shape[2])[None, :] < valid[:, None]
                    )[:, None, :, None]
                    a = a * block_mask
                    bb = bb * block_mask
            self._time_masks.append(block_mask)
            if cfg.cross_stitch:
                a, bb = self.stitches[i].forward(a, bb)

        bsz, f, t_out, c = a.shape
        shape_tokens = (bsz, f, t_out, c)
        a_tok = a.transpose(0, 2, 1, 3).reshape(bsz, t_out, f * c)
        b_tok = bb.transpose(0, 2, 1, 3).reshape(bsz, t_out, f * c)

        pe = sinusoidal_positions(t_out, cfg.attn_dim, cfg.np_dtype())
        mask = None
        if valid is not None and np.any(valid < t_out):
            mask = np.arange(t_out)[None, :] < valid[:, None]

        ha = self.proj_a.forward(a_tok) + pe
        hb = self.proj_b.forward(b_tok) + pe
        for sub in self.attn_a:
            ha = ha + sub["mhsa"].forward(sub["ln1"].forward(ha), mask)
            ha = ha + sub["ff2"].forward(sub["ffact"].forward(sub["ff1"].forward(sub["ln2"].forward(ha))))
        for sub in self.attn_b:
            hb = hb + sub["mhsa"].forward(sub["ln1"].forward(hb), mask)
            hb = hb + sub["ff2"].forward(sub["ffact"].forward(sub["ff1"].forward(sub["ln2"].forward(hb))))

        emb = self.head_a.forward(ha).reshape(bsz, t_out, cfg.n_tracks, cfg.embed_dim)
        acc = self.head_b.forward(hb).reshape(bsz, t_out, cfg.n_tracks, 3)
        self._cache = shape_tokens
        return emb, acc

    def backward(self, d_emb: np.ndarray, d_acc: np.ndarray) -> None:
        """Accumulate parameter gradients for the last forward pass."""
        if self._cache is None:
            raise ValidationError("backward called without a cached forward pass")
        cfg = self.config
        bsz, f, t_out, c = self._cache

        dha = self.head_a.backward(
            np.ascontiguousarray(d_emb, dtype=cfg.np_dtype()).reshape(bsz, t_out, -1)
        )
        dhb = self.head_b.backward(
            np.ascontiguousarray(d_acc, dtype=cfg.np_dtype()).reshape(bsz, t_out, -1)
        )
        for sub in reversed(self.attn_a):
            dha = dha + sub["ln2"].backward(
                sub["ff1"].backward(sub["ffact"].backward(sub["ff2"].backward(dha)))
            )
            dha = dha + sub["ln1"].backward(sub["mhsa"].backward(dha))
        for sub in reversed(self.attn_b):
            dhb = dhb + sub["ln2"].backward(
                sub["ff1"].backward(sub["ffact"].backward(sub["ff2"].backward(dhb)))
            )
            dhb = dhb + sub["ln1"].backward(sub["mhsa"].backward(dhb))

        da_tok = self.proj_a.backward(dha)
        db_tok = self.proj_b.backward(dhb)
        da = np.ascontiguousarray(
            da_tok.reshape(bsz, t_out, f, c).transpose(0, 2, 1, 3)
        )
        db = np.ascontiguousarray(
            db_tok.reshape(bsz, t_out, f, c).transpose(0, 2, 1, 3)
        )

        for i in reversed(range(len(self.blocks_a))):
            if cfg.cross_stitch:
                da, db = self.stitches[i].backward(da, db)
            if self._time_masks[i] is not None:
                da = da * self._time_masks[i]
                db = db * self._time_masks[i]
            conv_a, elu_a, pool_a = self.blocks_a[i]
            conv_b, elu_b, pool_b = self.blocks_b[i]
            da = conv_a.backward(elu_a.backward(pool_a.backward(da)))
            db = conv_b.backward(elu_b.backward(pool_b.backward(db)))

        self.freq_pool.backward(da + db)


# ---- checkpointing ----------------------------------------------------------


def save_checkpoint(
    path,
    net: EmbedAccdoaNet,
    optimizer_state: dict | None = None,
    iteration: int = 0,
) -> None:
    """Write a bit-exact npz checkpoint: config echo + named tensors."""
    payload = {
        "__meta__": np.bytes_(
            json.dumps(
                {
                    "version": CHECKPOINT_VERSION,
                    "config": asdict(net.config),
                    "n_bins": net.n_bins,
                    "iteration": iteration,
                },
                sort_keys=True,
            ).encode()
        )
    }
    for name, p in net.named_params().items():
        payload[f"param/{name}"] = p.value
    if optimizer_state is not None:
        for key, arr in optimizer_state.items():
            payload[f"opt/{key}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[EmbedAccdoaNet, dict, int]:
    """Rebuild the network (and optimizer state) from a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint version {meta.get('version')!r}"
            )
        config = NetworkConfig(**meta["config"])
        net = EmbedAccdoaNet(config, meta["n_bins"], np.random.default_rng(0))
        params = net.named_params()
        opt_state: dict[str, np.ndarray] = {}
        seen = set()
        for key in data.files:
            if key.startswith("param/"):
                name = key[len("param/"):]
                if name not in params:
                    raise ConfigError(f"checkpoint has unknown parameter {name!r}")
                if data[key].shape != params[name].value.shape:
                    raise ConfigError(f"checkpoint shape mismatch for {name!r}")
                params[name].value = data[key].astype(config.np_dtype())
                seen.add(name)
            elif key.startswith("opt/"):
                opt_state[key[len("opt/"):]] = data[key]
        missing = set(params) - seen
        if missing:
            raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)}")
    # re-wire Param objects mutated above into fresh grad buffers
    for p in net.named_params().values():
        p.grad = np.zeros_like(p.value)
    return net, opt_state, int(meta["iteration"])
