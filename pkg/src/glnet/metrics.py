"""Saliency evaluation: PR curve, max F-measure, MAE, S-measure and E-measure.

All scores are computed per image and averaged over the dataset. Per-image
values are summed in sorted order so that the order of the pairs never
changes a reported digit.

Threshold sweeps run over the 256 levels ``t = 0..255``. A prediction pixel
counts as foreground at level ``t`` when ``value >= t / 255``. Internally the
predictions are bucketed into those 256 levels once, and every threshold is
read off cumulative histograms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class MetricConfig:
    beta2: float = 0.3
    s_alpha: float = 0.5
    thresholds: int = 256
    gt_binarize_level: int = 128
    eps: float = 1e-8

    def __post_init__(self):
        if self.thresholds != 256:
            raise ValueError("thresholds must cover the 256 8-bit levels")
        if self.beta2 <= 0:
            raise ValueError("beta2 must be positive")


class MapPair(NamedTuple):
    prediction: np.ndarray  # float in [0, 1]
    gt: np.ndarray          # bool

    @classmethod
    def make(cls, prediction, gt) -> "MapPair":
        pred = np.asarray(prediction, dtype=np.float64)
        gt = np.asarray(gt)
        if pred.shape != gt.shape or pred.ndim != 2:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} must be equal 2-D extents")
        if pred.size == 0:
            raise ValueError("empty map")
        if pred.min() < 0 or pred.max() > 1:
            raise ValueError("prediction values must lie in [0, 1]")
        return cls(pred, gt.astype(bool))


class SScore(NamedTuple):
    s: float
    s_object: float
    s_region: float


@dataclass
class MetricReport:
    max_f: float
    mae: float
    s: float
    s_object: float
    s_region: float
    max_e: float
    precision: np.ndarray
    recall: np.ndarray
    per_group: Dict[str, "MetricReport"] = field(default_factory=dict)

    def to_dict(self, digits: int = 6) -> dict:
        out = {
            "max_f": round(self.max_f, digits),
            "s": round(self.s, digits),
            "s_object": round(self.s_object, digits),
            "s_region": round(self.s_region, digits),
            "max_e": round(self.max_e, digits),
            "mae": round(self.mae, digits),
        }
        if self.per_group:
            out["per_group"] = {k: v.to_dict(digits) for k, v in sorted(self.per_group.items())}
        return out

    def pr_rows(self):
        return [(t, float(p), float(r)) for t, (p, r) in enumerate(zip(self.precision, self.recall))]


def _pairs(pairs: Sequence) -> List[MapPair]:
    if len(pairs) == 0:
        raise ValueError("no prediction/ground-truth pairs given")
    return [p if isinstance(p, MapPair) else MapPair.make(*p) for p in pairs]


def _ordered_mean(values, axis=0) -> np.ndarray:
    """Mean over ``axis`` after sorting, so the result is independent of input order."""
    values = np.sort(np.asarray(values, dtype=np.float64), axis=axis)
    return values.sum(axis=axis) / values.shape[axis]


def levels(prediction: np.ndarray) -> np.ndarray:
    """Largest ``t`` in 0..255 with ``prediction >= t / 255``."""
    lv = np.floor(prediction * 255.0).astype(np.int64)
    lv = np.clip(lv, 0, 255)
    # floor can land one below when value*255 rounds down; fix against the exact comparison
    bump = (lv < 255) & (prediction >= (lv + 1) / 255.0)
    return lv + bump


def _counts(pair: MapPair):
    """Foreground-prediction pixel counts inside and outside the GT, for every threshold."""
    lv = levels(pair.prediction)
    hist_fg = np.bincount(lv[pair.gt], minlength=256)
    hist_bg = np.bincount(lv[~pair.gt], minlength=256)
    # count of pixels with level >= t
    tp = np.cumsum(hist_fg[::-1])[::-1].astype(np.float64)
    fp = np.cumsum(hist_bg[::-1])[::-1].astype(np.float64)
    return tp, fp, float(pair.gt.sum()), float((~pair.gt).sum())


def image_pr(pair: MapPair, cfg: MetricConfig = MetricConfig()):
    tp, fp, pos, _ = _counts(pair)
    precision = tp / (tp + fp + cfg.eps)
    recall = tp / (pos + cfg.eps)
    return precision, recall


def pr_curve(pairs: Sequence, cfg: MetricConfig = MetricConfig()):
    """Dataset-mean (precision, recall), each of length 256, ordered by threshold."""
    pairs = _pairs(pairs)
    if not any(p.gt.any() for p in pairs):
        raise ValueError("PR curve needs at least one ground truth with a positive pixel")
    per = [image_pr(p, cfg) for p in pairs]
    return _ordered_mean([p for p, _ in per]), _ordered_mean([r for _, r in per])


def f_measure(precision, recall, beta2: float = 0.3):
    precision, recall = np.asarray(precision, np.float64), np.asarray(recall, np.float64)
    # written as R * x / (x + R - P) with x = (1 + beta2) P: same value, exact when P == R
    x = (1.0 + beta2) * precision
    den = x + (recall - precision)
    ratio = np.divide(x, den, out=np.zeros_like(x), where=den > 0)
    return recall * ratio


def max_f_measure(pairs: Sequence, cfg: MetricConfig = MetricConfig()) -> float:
    precision, recall = pr_curve(pairs, cfg)
    return float(f_measure(precision, recall, cfg.beta2).max())


def image_mae(pair: MapPair) -> float:
    return float(np.abs(pair.prediction - pair.gt).mean())


def mae(pairs: Sequence) -> float:
    return float(_ordered_mean([image_mae(p) for p in _pairs(pairs)]))


# -- S-measure -----------------------------------------------------------------
def _std1(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _object_score(pred: np.ndarray, region: np.ndarray, eps: float) -> float:
    vals = pred[region]
    if vals.size == 0:
        return 0.0
    x = float(vals.mean())
    return 2.0 * x / (x * x + 1.0 + _std1(vals) + eps)


def s_object(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-8) -> float:
    u = float(gt.mean())
    o_fg = _object_score(pred * gt, gt, eps)
    o_bg = _object_score((1.0 - pred) * ~gt, ~gt, eps)
    return u * o_fg + (1.0 - u) * o_bg


def _centroid(gt: np.ndarray):
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def _ssim(pred: np.ndarray, gt: np.ndarray, eps: float) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    if n > 1:
        sx = ((pred - x) ** 2).sum() / (n - 1)
        sy = ((gt - y) ** 2).sum() / (n - 1)
        sxy = ((pred - x) * (gt - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + eps))
    return 1.0 if beta == 0 else 0.0


def s_region(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-8) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    g = gt.astype(np.float64)
    area = h * w
    weights = (x * y / area, (w - x) * y / area, x * (h - y) / area)
    weights = weights + (1.0 - sum(weights),)
    parts = ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
             (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w)))
    return float(sum(wt * _ssim(pred[p], g[p], eps) for wt, p in zip(weights, parts)))


def image_s(pair: MapPair, cfg: MetricConfig = MetricConfig()) -> SScore:
    pred, gt = pair.prediction, pair.gt
    ratio = gt.mean()
    if ratio == 0:
        v = 1.0 - float(pred.mean())
        return SScore(v, v, v)
    if ratio == 1:
        v = float(pred.mean())
        return SScore(v, v, v)
    so, sr = s_object(pred, gt, cfg.eps), s_region(pred, gt, cfg.eps)
    s = max(0.0, cfg.s_alpha * so + (1.0 - cfg.s_alpha) * sr)
    return SScore(s, so, sr)


def s_measure(pairs: Sequence, cfg: MetricConfig = MetricConfig()) -> float:
    return float(_ordered_mean([image_s(p, cfg).s for p in _pairs(pairs)]))


# -- E-measure --------------------------------------------------------------------
def image_e_curve(pair: MapPair, cfg: MetricConfig = MetricConfig()) -> np.ndarray:
    """Enhanced alignment score at each of the 256 thresholds.

    A binarised map has only four (prediction, gt) pixel kinds, so the mean of
    theta is a count-weighted sum over those kinds.
    """
    tp, fp, pos, neg = _counts(pair)
    n = pos + neg
    if pos == 0:
        # empty GT: alignment is the fraction of pixels predicted background
        return (neg - fp) / n
    if neg == 0:
        return tp / n
    fn, tn = pos - tp, neg - fp
    mean_b = (tp + fp) / n
    mean_t = pos / n

    def theta(b, t):
        pb, pt = b - mean_b, t - mean_t
        phi = 2.0 * pt * pb / (pt * pt + pb * pb + cfg.eps)
        return 0.25 * (1.0 + phi) ** 2

    total = tp * theta(1.0, 1.0) + fp * theta(1.0, 0.0) + fn * theta(0.0, 1.0) + tn * theta(0.0, 0.0)
    return total / n


def e_curve(pairs: Sequence, cfg: MetricConfig = MetricConfig()) -> np.ndarray:
    return _ordered_mean([image_e_curve(p, cfg) for p in _pairs(pairs)])


def max_e_measure(pairs: Sequence, cfg: MetricConfig = MetricConfig()) -> float:
    return float(e_curve(pairs, cfg).max())


def evaluate(pairs: Sequence, cfg: MetricConfig = MetricConfig(),
             groups: Optional[Sequence[str]] = None) -> MetricReport:
    """Full report. ``groups`` (one label per pair) adds a per-group breakdown."""
    pairs = _pairs(pairs)
    precision, recall = pr_curve(pairs, cfg)
    s_scores = [image_s(p, cfg) for p in pairs]
    report = MetricReport(
        max_f=float(f_measure(precision, recall, cfg.beta2).max()),
        mae=mae(pairs),
        s=float(_ordered_mean([s.s for s in s_scores])),
        s_object=float(_ordered_mean([s.s_object for s in s_scores])),
        s_region=float(_ordered_mean([s.s_region for s in s_scores])),
        max_e=max_e_measure(pairs, cfg),
        precision=precision,
        recall=recall,
    )
    if groups is not None:
        if len(groups) != len(pairs):
            raise ValueError("one group label per pair is required")
        for name in sorted(set(groups)):
            members = [p for p, g in zip(pairs, groups) if g == name]
            if any(p.gt.any() for p in members):
                report.per_group[name] = evaluate(members, cfg)
    return report
