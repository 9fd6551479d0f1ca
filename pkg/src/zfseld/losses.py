"""Frame-level permutation-invariant loss over output tracks.

Per frame, every assignment of oracle tracks to predicted tracks is
scored with a weighted sum of an embedding term (one minus cosine
similarity) and a coupled-DOA term (mean squared error over the three
components); the cheapest assignment wins and the loss is averaged over
frames. Gradients flow only through each frame's winning assignment,
with ties broken by the lexicographically lowest permutation so they
stay deterministic.

Inactive-track oracle embeddings are zero vectors; cosine against a zero
vector is undefined, so the embedding term is defined as 0 there and the
activity supervision for such tracks comes entirely from the DOA term's
zero-vector target.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

EPS = 1e-8


@dataclass
class LossConfig:
    beta_embed: float = 0.6
    beta_accdoa: float = 0.4

    def validate(self) -> list[str]:
        if self.beta_embed < 0 or self.beta_accdoa < 0:
            return ["loss coefficients must be >= 0"]
        return []


def embed_term(oracle: np.ndarray, predicted: np.ndarray) -> float:
    """1 - cos(oracle, predicted), or 0 for an inactive (zero) oracle."""
    oracle = np.asarray(oracle, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    no = np.linalg.norm(oracle)
    if no == 0.0:
        return 0.0
    npred = np.linalg.norm(predicted)
    cos = float(np.dot(oracle, predicted) / ((no + EPS) * (npred + EPS)))
    return 1.0 - cos


def accdoa_term(oracle: np.ndarray, predicted: np.ndarray) -> float:
    """Mean squared error over the three vector components."""
    oracle = np.asarray(oracle, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    d = predicted - oracle
    return float(np.mean(d * d))


def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=int)


def _pair_costs(
    oracle_emb: np.ndarray,
    oracle_acc: np.ndarray,
    pred_emb: np.ndarray,
    pred_acc: np.ndarray,
    config: LossConfig,
):
    """Per-frame cost matrix cost[t, i, j] for (oracle i, prediction j)."""
    t, n, _ = pred_emb.shape
    dots = np.einsum("tid,tjd->tij", oracle_emb, pred_emb)
    no = np.linalg.norm(oracle_emb, axis=2)
    npred = np.linalg.norm(pred_emb, axis=2)
    denom = (no + EPS)[:, :, None] * (npred + EPS)[:, None, :]
    cos = dots / denom
    active = (no > 0.0)[:, :, None]
    c_emb = np.where(active, 1.0 - cos, 0.0)

    diff2 = (
        np.sum(oracle_acc**2, axis=2)[:, :, None]
        + np.sum(pred_acc**2, axis=2)[:, None, :]
        - 2.0 * np.einsum("tic,tjc->tij", oracle_acc, pred_acc)
    )
    c_acc = diff2 / 3.0
    return config.beta_embed * c_emb + config.beta_accdoa * c_acc, no, npred


def _check_shapes(oracle_emb, oracle_acc, pred_emb, pred_acc):
    if oracle_emb.shape != pred_emb.shape:
        raise ValidationError(
            f"embedding shapes differ: {oracle_emb.shape} vs {pred_emb.shape}"
        )
    if oracle_acc.shape != pred_acc.shape:
        raise ValidationError(
            f"coupled-DOA shapes differ: {oracle_acc.shape} vs {pred_acc.shape}"
        )
    if oracle_emb.shape[:2] != oracle_acc.shape[:2]:
        raise ValidationError("embedding and DOA track/frame counts differ")


def pit_loss(
    oracle_emb: np.ndarray,
    oracle_acc: np.ndarray,
    pred_emb: np.ndarray,
    pred_acc: np.ndarray,
    config: LossConfig | None = None,
) -> tuple[float, np.ndarray]:
    """Permutation-invariant loss over a (T, N, .) frame block.

    Returns the frame-averaged minimum cost and, per frame, the winning
    assignment as an array perms[t, j] = oracle track matched to
    predicted track j.
    """
    config = config or LossConfig()
    oracle_emb = np.asarray(oracle_emb, dtype=float)
    oracle_acc = np.asarray(oracle_acc, dtype=float)
    pred_emb = np.asarray(pred_emb, dtype=float)
    pred_acc = np.asarray(pred_acc, dtype=float)
    _check_shapes(oracle_emb, oracle_acc, pred_emb, pred_acc)

    t, n = pred_emb.shape[:2]
    cost, _, _ = _pair_costs(oracle_emb, oracle_acc, pred_emb, pred_acc, config)
    perms = _permutations(n)  # (P, N), lexicographic order
    totals = cost[:, perms, np.arange(n)].mean(axis=2)  # (T, P)
    best = np.argmin(totals, axis=1)  # first minimum = lowest lexicographic
    loss = float(totals[np.arange(t), best].mean())
    return loss, perms[best]


def pit_loss_grad(
    oracle_emb: np.ndarray,
    oracle_acc: np.ndarray,
    pred_emb: np.ndarray,
    pred_acc: np.ndarray,
    config: LossConfig | None = None,
    grad_scale: float = 1.0,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss plus exact gradients w.r.t. the predictions.

    Gradients are routed through each frame's winning permutation only.
    Returns (loss, perms, d_pred_emb, d_pred_acc), already divided by
    the T*N frame-track normalization and scaled by ``grad_scale``.
    """
    config = config or LossConfig()
    oracle_emb = np.asarray(oracle_emb, dtype=float)
    oracle_acc = np.asarray(oracle_acc, dtype=float)
    pred_emb = np.asarray(pred_emb, dtype=float)
    pred_acc = np.asarray(pred_acc, dtype=float)
    _check_shapes(oracle_emb, oracle_acc, pred_emb, pred_acc)

    loss, best_perms = pit_loss(oracle_emb, oracle_acc, pred_emb, pred_acc, config)
    t, n = pred_emb.shape[:2]
    t_idx = np.arange(t)[:, None]

    # matched oracle for each prediction track under the winning assignment
    o_emb = oracle_emb[t_idx, best_perms]  # (T, N, D)
    o_acc = oracle_acc[t_idx, best_perms]  # (T, N, 3)

    scale = grad_scale / (t * n)

    no = np.linalg.norm(o_emb, axis=2, keepdims=True)
    npred = np.linalg.norm(pred_emb, axis=2, keepdims=True)
    denom = (no + EPS) * (npred + EPS)
    dots = np.sum(o_emb * pred_emb, axis=2, keepdims=True)
    # d(1 - cos)/dpred with the same epsilon guards as the forward value
    dcos = o_emb / denom - dots * pred_emb / ((npred + EPS) * denom * (npred + EPS))
    active = no > 0.0
    d_emb = np.where(active, -dcos, 0.0) * (config.beta_embed * scale)

    d_acc = (2.0 / 3.0) * (pred_acc - o_acc) * (config.beta_accdoa * scale)
    return loss, best_perms, d_emb, d_acc
