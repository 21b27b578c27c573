"""Keypoint-detection evaluation for moving echoes.

OKS uses the ground-truth trajectory length as the per-object constant, so
faster vehicles (longer echoes) tolerate proportionally larger keypoint
errors.  AP follows the COCO 101-point interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .echoes import EchoTrajectory, trajectory_length_px

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MIN_SCALE_PX = 1.0


@dataclass(frozen=True)
class OksConfig:
    s: float = 1.0
    score_threshold: float = 0.7
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    rmse_threshold: float = 0.5

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("object scale s must be positive")
        if not 0 <= self.score_threshold <= 1:
            raise ValueError("score_threshold must lie in [0, 1]")
        th = tuple(float(t) for t in self.thresholds)
        if not th:
            raise ValueError("at least one OKS threshold is required")
        if any(not 0 < t <= 1 for t in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly increasing within (0, 1]")
        object.__setattr__(self, "thresholds", th)


def oks(pred: EchoTrajectory, gt: EchoTrajectory, cfg: OksConfig = OksConfig()) -> float:
    """Object keypoint similarity between two echoes."""
    k = max(trajectory_length_px(gt), MIN_SCALE_PX)
    denom = 2 * cfg.s**2 * k**2
    total = 0.0
    for p, g in zip(pred.keypoints, gt.keypoints):
        d2 = (p.col - g.col) ** 2 + (p.row - g.row) ** 2
        total += math.exp(-d2 / denom)
    return total / 3


def _score_order(preds: Sequence[EchoTrajectory]) -> list[EchoTrajectory]:
    return sorted(preds, key=lambda p: (-p.score, p.id))


@dataclass
class Matching:
    """Result of matching one image's detections at one OKS level."""

    pairs: list = field(default_factory=list)  # (pred, gt, oks)
    false_positives: list = field(default_factory=list)
    false_negatives: list = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


def match_image(
    preds: Sequence[EchoTrajectory],
    gts: Sequence[EchoTrajectory],
    threshold: float,
    cfg: OksConfig = OksConfig(),
) -> Matching:
    """Greedy matching: detections by descending score each take the unmatched
    ground truth of highest OKS, if that OKS reaches ``threshold``.

    Equal OKS values go to the ground truth with the smaller id.
    """
    gts = sorted(gts, key=lambda g: g.id)
    taken = [False] * len(gts)
    result = Matching()
    for pred in _score_order(preds):
        best, best_oks = -1, -1.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            sim = oks(pred, gt, cfg)
            if sim >= threshold and sim > best_oks:
                best, best_oks = j, sim
        if best < 0:
            result.false_positives.append(pred)
        else:
            taken[best] = True
            result.pairs.append((pred, gts[best], best_oks))
    result.false_negatives = [g for g, t in zip(gts, taken) if not t]
    return result


def filter_scores(preds, cfg: OksConfig = OksConfig()) -> list[EchoTrajectory]:
    """Keep detections strictly above the score gate."""
    return [p for p in preds if p.score > cfg.score_threshold]


def _group(echoes) -> dict:
    if isinstance(echoes, Mapping):
        return {k: list(v) for k, v in echoes.items()}
    out: dict = {}
    for e in echoes:
        out.setdefault(e.image_id, []).append(e)
    return out


def match_detections(preds, gts, threshold: float, cfg: OksConfig = OksConfig()) -> dict:
    """Per-image greedy matching.  Inputs are lists or ``{image_id: echoes}``.

    Detections must already be score-filtered.
    """
    preds = _group(preds)
    gts = _group(gts)
    return {
        image_id: match_image(preds.get(image_id, []), gts.get(image_id, []), threshold, cfg)
        for image_id in sorted(set(preds) | set(gts), key=lambda k: (k is None, k))
    }


def precision_recall(matchings) -> tuple[np.ndarray, np.ndarray, int]:
    """Cumulative precision and recall over detections pooled by descending score."""
    dets = []
    n_gt = 0
    for m in matchings:
        n_gt += m.tp + m.fn
        dets.extend((p.score, p.id, True) for p, _, _ in m.pairs)
        dets.extend((p.score, p.id, False) for p in m.false_positives)
    dets.sort(key=lambda d: (-d[0], d[1]))
    hits = np.array([d[2] for d in dets], dtype=bool)
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / np.maximum(tp + fp, 1)
        recall = tp / n_gt if n_gt else np.zeros_like(tp, dtype=float)
    return precision, recall, n_gt


def average_precision(matchings) -> float | None:
    """101-point interpolated AP; ``None`` when there is no ground truth."""
    precision, recall, n_gt = precision_recall(list(matchings))
    if n_gt == 0:
        return None
    if len(precision) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def mean_average_precision(preds, gts, cfg: OksConfig = OksConfig()) -> float | None:
    return evaluate(preds, gts, cfg).map


def trajectory_rmse(pairs) -> float | None:
    """RMSE of predicted minus ground-truth trajectory length over matched pairs."""
    errors = [trajectory_length_px(p) - trajectory_length_px(g) for p, g, *_ in pairs]
    if not errors:
        return None
    return math.sqrt(sum(e * e for e in errors) / len(errors))


@dataclass
class EvalReport:
    ap_per_threshold: dict
    map: float | None
    trajectory_rmse_px: float | None
    tp: int
    fp: int
    fn: int
    score_threshold: float
    stationary_gt: int = 0

    def to_json(self) -> dict:
        return {
            "ap_per_threshold": {f"{t:.2f}": ap for t, ap in self.ap_per_threshold.items()},
            "map": self.map,
            "trajectory_rmse_px": self.trajectory_rmse_px,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "score_threshold": self.score_threshold,
            "stationary_gt": self.stationary_gt,
        }


def evaluate(preds, gts, cfg: OksConfig = OksConfig()) -> EvalReport:
    """Score-gate the detections, then compute AP per threshold, mAP and RMSE."""
    pred_groups = {k: filter_scores(v, cfg) for k, v in _group(preds).items()}
    gt_groups = _group(gts)
    aps = {}
    for t in cfg.thresholds:
        matchings = match_detections(pred_groups, gt_groups, t, cfg)
        aps[t] = average_precision(matchings.values())
    base = match_detections(pred_groups, gt_groups, 0.5, cfg)
    rmse_match = (
        base
        if cfg.rmse_threshold == 0.5
        else match_detections(pred_groups, gt_groups, cfg.rmse_threshold, cfg)
    )
    pairs = [pair for m in rmse_match.values() for pair in m.pairs]
    valid = [ap for ap in aps.values() if ap is not None]
    stationary = sum(
        1 for group in gt_groups.values() for g in group if trajectory_length_px(g) == 0
    )
    return EvalReport(
        ap_per_threshold=aps,
        map=float(np.mean(valid)) if valid else None,
        trajectory_rmse_px=trajectory_rmse(pairs),
        tp=sum(m.tp for m in base.values()),
        fp=sum(m.fp for m in base.values()),
        fn=sum(m.fn for m in base.values()),
        score_threshold=cfg.score_threshold,
        stationary_gt=stationary,
    )
