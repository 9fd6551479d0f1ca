"""Segment-based, location-dependent SELD evaluation.

Frame labels (100 ms) are aggregated into 1-second segments: an event
instance is present in a segment if it is active in any of its frames,
and its segment direction is the renormalized mean of its frame
directions. Within each (segment, class) cell, predictions are matched
one-to-one to references by minimum total angular distance.

Scoring rules (micro-averaged over one global accumulator):

* matched pairs within 20 degrees are true positives; matched pairs
  beyond 20 degrees count one false positive and one false negative;
  unmatched predictions are false positives, unmatched references false
  negatives;
* every matched pair's distance feeds the localization error (reported
  as 180 degrees when nothing was ever matched) and the matched-pair /
  reference counts feed localization recall;
* the error rate uses segment-level substitutions/deletions/insertions
  S = min(FN, FP), D = max(0, FN - FP), I = max(0, FP - FN) over each
  segment's FN/FP totals, normalized by the segment's reference count.

The four metrics aggregate into a single error score: the mean of ER,
1 - F, LE / 180, and 1 - LR.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import pairwise_angular_distance

DOA_THRESHOLD_DEG = 20.0
FRAMES_PER_SEGMENT = 10  # 1-second segments over 100 ms label frames
EXHAUSTIVE_LIMIT = 6
LE_WHEN_UNDEFINED = 180.0


def seld_error(er20: float, f20: float, le_cd_deg: float, lr_cd: float) -> float:
    """Aggregated SELD error: mean of ER, 1-F, LE/180deg, 1-LR."""
    return (er20 + (1.0 - f20) + le_cd_deg / 180.0 + (1.0 - lr_cd)) / 4.0


# ---- frame-label carrier -----------------------------------------------------


class FrameLabels:
    """Per label-frame, per class lists of (source id, unit DOA)."""

    def __init__(self):
        self.frames: dict[int, dict[int, list[tuple[int, np.ndarray]]]] = {}

    def add(self, frame: int, class_id: int, source: int, doa: np.ndarray) -> None:
        self.frames.setdefault(frame, {}).setdefault(class_id, []).append(
            (source, np.asarray(doa, dtype=float))
        )

    def max_frame(self) -> int:
        return max(self.frames.keys(), default=-1)

    def segment_views(self, frames_per_segment: int = FRAMES_PER_SEGMENT):
        """segment -> class -> list of per-instance directions.

        Instances are (class, source) groups within a segment; each
        contributes the renormalized mean of its frame directions.
        """
        grouped: dict[int, dict[tuple[int, int], list[np.ndarray]]] = {}
        for frame, classes in self.frames.items():
            seg = frame // frames_per_segment
            for class_id, entries in classes.items():
                for source, doa in entries:
                    grouped.setdefault(seg, {}).setdefault((class_id, source), []).append(doa)

        out: dict[int, dict[int, list[np.ndarray]]] = {}
        for seg, instances in grouped.items():
            per_class: dict[int, list[np.ndarray]] = {}
            for (class_id, _source), doas in sorted(instances.items()):
                mean = np.mean(doas, axis=0)
                norm = np.linalg.norm(mean)
                if norm < 1e-9:
                    mean = doas[0] / np.linalg.norm(doas[0])
                else:
                    mean = mean / norm
                per_class.setdefault(class_id, []).append(mean)
            out[seg] = per_class
        return out


# ---- optimal class-segment matching ------------------------------------------


def _exhaustive_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-total-cost one-to-one assignment by enumeration."""
    r, p = cost.shape
    if r <= p:
        best, best_cols = np.inf, None
        for cols in itertools.permutations(range(p), r):
            total = cost[np.arange(r), cols].sum()
            if total < best:
                best, best_cols = total, cols
        return np.arange(r), np.array(best_cols, dtype=int)
    rows, cols = _exhaustive_assignment(cost.T)
    return cols, rows


def optimal_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the min-total-cost matching of a cost matrix.

    Exhaustive search up to EXHAUSTIVE_LIMIT candidates per side, the
    Hungarian method (scipy) beyond; the two agree on their overlap.
    """
    if min(cost.shape) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    if max(cost.shape) <= EXHAUSTIVE_LIMIT:
        return _exhaustive_assignment(cost)
    return linear_sum_assignment(cost)


def match_class_segment(
    refs: np.ndarray, preds: np.ndarray
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Match same-class segment DOAs one-to-one by total angular distance.

    Returns (pairs, unmatched_ref_indices, unmatched_pred_indices) where
    each pair is (ref_index, pred_index, distance_degrees) and the pair
    count is min(len(refs), len(preds)).
    """
    refs = np.asarray(refs, dtype=float).reshape(-1, 3)
    preds = np.asarray(preds, dtype=float).reshape(-1, 3)
    if refs.shape[0] == 0 or preds.shape[0] == 0:
        return [], list(range(refs.shape[0])), list(range(preds.shape[0]))
    cost = pairwise_angular_distance(refs, preds)
    rows, cols = optimal_assignment(cost)
    pairs = [(int(r), int(c), float(cost[r, c])) for r, c in zip(rows, cols)]
    unmatched_refs = sorted(set(range(refs.shape[0])) - {r for r, _, _ in pairs})
    unmatched_preds = sorted(set(range(preds.shape[0])) - {c for _, c, _ in pairs})
    return pairs, unmatched_refs, unmatched_preds


# ---- accumulation ------------------------------------------------------------


@dataclass
class SELDAccumulator:
    """Mergeable counters behind the five evaluation metrics."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    total_de: float = 0.0
    pairs: int = 0
    n_refs: int = 0
    s: int = 0
    d: int = 0
    i: int = 0
    n_segments: int = 0
    doa_threshold: float = DOA_THRESHOLD_DEG

    def merge(self, other: "SELDAccumulator") -> "SELDAccumulator":
        for name in ("tp", "fp", "fn", "total_de", "pairs", "n_refs", "s", "d", "i", "n_segments"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def accumulate_segment(
        self,
        refs_by_class: dict[int, list[np.ndarray]],
        preds_by_class: dict[int, list[np.ndarray]],
    ) -> None:
        """Score one 1-second segment given its per-class instance DOAs."""
        seg_fp = 0
        seg_fn = 0
        seg_refs = 0
        for class_id in sorted(set(refs_by_class) | set(preds_by_class)):
            refs = refs_by_class.get(class_id, [])
            preds = preds_by_class.get(class_id, [])
            seg_refs += len(refs)
            pairs, unmatched_refs, unmatched_preds = match_class_segment(
                np.array(refs).reshape(-1, 3), np.array(preds).reshape(-1, 3)
            )
            for _r, _p, dist in pairs:
                self.total_de += dist
                self.pairs += 1
                if dist <= self.doa_threshold:
                    self.tp += 1
                else:
                    seg_fp += 1
                    seg_fn += 1
            seg_fp += len(unmatched_preds)
            seg_fn += len(unmatched_refs)

        self.fp += seg_fp
        self.fn += seg_fn
        self.n_refs += seg_refs
        self.s += min(seg_fn, seg_fp)
        self.d += max(0, seg_fn - seg_fp)
        self.i += max(0, seg_fp - seg_fn)
        self.n_segments += 1

    # ---- finalized metrics ----

    @property
    def er20(self) -> float:
        return (self.s + self.d + self.i) / self.n_refs if self.n_refs else 0.0

    @property
    def f20(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 1.0

    @property
    def le_cd(self) -> float:
        return self.total_de / self.pairs if self.pairs else LE_WHEN_UNDEFINED

    @property
    def lr_cd(self) -> float:
        return self.pairs / self.n_refs if self.n_refs else 1.0

    def report(self) -> "MetricsReport":
        return MetricsReport(
            er20=self.er20,
            f20=self.f20,
            le_cd=self.le_cd,
            lr_cd=self.lr_cd,
            e_seld=seld_error(self.er20, self.f20, self.le_cd, self.lr_cd),
            counts={
                "TP": self.tp,
                "FP": self.fp,
                "FN": self.fn,
                "S": self.s,
                "D": self.d,
                "I": self.i,
                "N": self.n_refs,
                "pairs": self.pairs,
                "segments": self.n_segments,
            },
        )


@dataclass
class MetricsReport:
    er20: float
    f20: float
    le_cd: float
    lr_cd: float
    e_seld: float
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "ER_20": self.er20,
            "F_20": self.f20,
            "LE_CD_deg": self.le_cd,
            "LR_CD": self.lr_cd,
            "E_SELD": self.e_seld,
        }
        out.update({f"count_{k}": v for k, v in self.counts.items()})
        return out

    def format_text(self) -> str:
        lines = [
            "SELD metrics (segment-based, micro-averaged)",
            f"  ER_20   : {self.er20:.4f}",
            f"  F_20    : {self.f20:.4f}",
            f"  LE_CD   : {self.le_cd:.2f} deg",
            f"  LR_CD   : {self.lr_cd:.4f}",
            f"  E_SELD  : {self.e_seld:.4f}",
        ]
        if self.counts:
            c = self.counts
            lines.append(
                "  counts  : "
                + " ".join(f"{k}={c[k]}" for k in ("TP", "FP", "FN", "N", "segments") if k in c)
            )
        return "\n".join(lines)


def evaluate_frames(
    refs: FrameLabels,
    preds: FrameLabels,
    frames_per_segment: int = FRAMES_PER_SEGMENT,
) -> MetricsReport:
    """Score predictions against references over all 1-second segments."""
    acc = SELDAccumulator()
    ref_segs = refs.segment_views(frames_per_segment)
    pred_segs = preds.segment_views(frames_per_segment)
    for seg in sorted(set(ref_segs) | set(pred_segs)):
        acc.accumulate_segment(ref_segs.get(seg, {}), pred_segs.get(seg, {}))
    return acc.report()
