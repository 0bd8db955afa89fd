"""Detected-noisy id sets and detection-quality metrics."""

import csv
import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import mixfit
from .data import Dataset
from .uncertainty import CONFIDENCE, UNCERTAINTY, ScoreVector


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionSet:
    ids: np.ndarray               # sorted, unique image ids
    rule: str
    statistic: str

    def __post_init__(self):
        ids = np.unique(np.asarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    detected_count: int
    true_noisy_count: int


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def detect_top_fraction(scores: ScoreVector, p: float) -> DetectionSet:
    """Exactly round(p * N) ids with the largest uncertainty.

    Boundary ties go to the lower id first, so the set is deterministic for
    any tie pattern.
    """
    if scores.orientation != UNCERTAINTY:
        raise DetectionError("top-fraction detection expects uncertainty orientation")
    if not 0.0 <= p <= 1.0:
        raise DetectionError("fraction must be in [0, 1]")
    n = len(scores.scores)
    k = _round_half_up(p * n)
    # sort by descending score, then ascending id
    order = np.lexsort((np.arange(n), -scores.scores))
    return DetectionSet(order[:k], rule=f"top_fraction({p})", statistic=scores.statistic)


def detect_by_mixture(scores: ScoreVector, fit: mixfit.BetaMixtureFit,
                      posterior_cutoff: Optional[float] = 0.5,
                      contamination_target: Optional[float] = None) -> DetectionSet:
    """Mixture-based detection: posterior cutoff, or explicit contamination control."""
    if scores.orientation != CONFIDENCE:
        raise DetectionError("mixture detection expects confidence orientation")
    if contamination_target is not None:
        _, detected = mixfit.threshold_for_contamination(fit, scores, contamination_target)
        rule = f"mixture_contamination({contamination_target})"
        return DetectionSet(detected, rule=rule, statistic=scores.statistic)
    post = mixfit.posterior_noisy(fit, scores.scores)
    detected = np.nonzero(post >= posterior_cutoff)[0]
    return DetectionSet(detected, rule=f"mixture_posterior({posterior_cutoff})",
                        statistic=scores.statistic)


def detection_metrics(detection: DetectionSet, dataset: Dataset) -> DetectionMetrics:
    if dataset.true_labels is None:
        raise DetectionError("metrics need true labels")
    # scores and detections are positionally aligned with the dataset rows
    noisy_ids = set(np.nonzero(dataset.noisy_mask())[0].tolist())
    detected = set(detection.ids.tolist())
    hit = len(detected & noisy_ids)
    precision = hit / len(detected) if detected else 0.0
    recall = hit / len(noisy_ids) if noisy_ids else 0.0
    return DetectionMetrics(precision, recall, len(detected), len(noisy_ids))


def noise_ratio_curve(score_stream: List[ScoreVector], dataset: Dataset,
                      p: float) -> List[float]:
    """Per-epoch fraction of truly noisy labels inside the top-p uncertainty set."""
    if dataset.true_labels is None:
        raise DetectionError("noise ratio curve needs true labels")
    noisy = dataset.noisy_mask()
    curve = []
    for scores in score_stream:
        det = detect_top_fraction(scores, p)
        if len(det) == 0:
            curve.append(0.0)
            continue
        curve.append(float(noisy[det.ids].mean()))
    return curve


def save_detection_csv(detection: DetectionSet, scores: ScoreVector, path) -> None:
    detected = set(detection.ids.tolist())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "detected"])
        for i, s in enumerate(scores.scores):
            writer.writerow([i, repr(float(s)), int(i in detected)])


def save_metrics_json(metrics: DetectionMetrics, path) -> None:
    with open(path, "w") as fh:
        json.dump({
            "precision": metrics.precision,
            "recall": metrics.recall,
            "detected_count": metrics.detected_count,
            "true_noisy_count": metrics.true_noisy_count,
        }, fh, indent=2)
