"""Per-image uncertainty statistics over stacked stochastic predictions."""

import csv
from dataclasses import dataclass

import numpy as np

CONFIDENCE = "confidence"      # higher is cleaner
UNCERTAINTY = "uncertainty"    # higher is noisier

ALL_PASSES = "all_passes"
WITHIN_MEMBER_MEANS = "within_member_means"

_ENTROPY_EPS = 1e-12


class StatisticError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionTensor:
    """Softmax outputs indexed (member m, pass t, image n, class k)."""

    values: np.ndarray  # M x T x N x C

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 4:
            raise StatisticError("prediction tensor must be 4-d (M, T, N, C)")
        if v.size and ((v < 0).any() or not np.allclose(v.sum(axis=-1), 1.0, atol=1e-6)):
            raise StatisticError("each (m, t, n) slice must be a probability vector")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    orientation: str
    statistic: str

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", s)
        if s.ndim != 1 or not np.isfinite(s).all():
            raise StatisticError("scores must be a finite 1-d vector")
        if self.orientation not in (CONFIDENCE, UNCERTAINTY):
            raise StatisticError(f"unknown orientation {self.orientation!r}")


def mean_max_softmax(tensor: PredictionTensor) -> ScoreVector:
    """Mean over all passes of the winning softmax entry; a confidence score."""
    v = tensor.values
    scores = v.max(axis=-1).mean(axis=(0, 1))
    return ScoreVector(scores, CONFIDENCE, "mean_max_softmax")


def variation_ratio(tensor: PredictionTensor) -> ScoreVector:
    """1 - frequency of the modal argmax class across all M*T passes.

    Argmax ties within a pass go to the lowest class index.
    """
    v = tensor.values
    m, t, n, c = v.shape
    winners = v.argmax(axis=-1).reshape(m * t, n)
    counts = np.zeros((c, n), dtype=np.int64)
    for k in range(c):
        counts[k] = (winners == k).sum(axis=0)
    f_mode = counts.max(axis=0)
    return ScoreVector(1.0 - f_mode / (m * t), UNCERTAINTY, "variation_ratio")


def bald(tensor: PredictionTensor) -> ScoreVector:
    """Entropy of the mean prediction minus mean per-pass entropy (natural log)."""
    v = tensor.values
    mean_p = v.mean(axis=(0, 1))
    h_mean = -(mean_p * np.log(np.clip(mean_p, _ENTROPY_EPS, None))).sum(axis=-1)
    h_each = -(v * np.log(np.clip(v, _ENTROPY_EPS, None))).sum(axis=-1)
    scores = np.clip(h_mean - h_each.mean(axis=(0, 1)), 0.0, None)
    return ScoreVector(scores, UNCERTAINTY, "bald")


def _stddev_scores(values: np.ndarray, grouping: str) -> np.ndarray:
    # population std per class, then mean over classes; no M >= 2 guard so
    # degenerate single-member traces report 0 rather than erroring
    if grouping == ALL_PASSES:
        m, t, n, c = values.shape
        flat = values.reshape(m * t, n, c)
        return flat.std(axis=0).mean(axis=-1)
    if grouping == WITHIN_MEMBER_MEANS:
        member_means = values.mean(axis=1)  # M x N x C
        return member_means.std(axis=0).mean(axis=-1)
    raise StatisticError(f"unknown grouping {grouping!r}")


def softmax_stddev(tensor: PredictionTensor, grouping: str = ALL_PASSES) -> ScoreVector:
    """Per-class population std over passes, averaged over classes.

    all_passes pools the M*T passes; within_member_means first averages the
    T passes inside each member and takes the std over the M member means.
    """
    m, t = tensor.values.shape[:2]
    if grouping == ALL_PASSES and m * t < 2:
        raise StatisticError("all_passes grouping needs at least 2 passes")
    if grouping == WITHIN_MEMBER_MEANS and m < 2:
        raise StatisticError("within_member_means grouping needs at least 2 members")
    return ScoreVector(_stddev_scores(tensor.values, grouping), UNCERTAINTY,
                       f"softmax_stddev_{grouping}")


def to_uncertainty(vector: ScoreVector) -> ScoreVector:
    """Map confidence scores to uncertainty via u = 1 - s; pass-through otherwise."""
    if vector.orientation == UNCERTAINTY:
        return vector
    return ScoreVector(1.0 - vector.scores, UNCERTAINTY, vector.statistic)


STATISTICS = {
    "mean_max_softmax": mean_max_softmax,
    "variation_ratio": variation_ratio,
    "bald": bald,
    "softmax_stddev_all_passes": lambda t: softmax_stddev(t, ALL_PASSES),
    "softmax_stddev_within_member_means": lambda t: softmax_stddev(t, WITHIN_MEMBER_MEANS),
}


def compute_statistic(tensor: PredictionTensor, name: str) -> ScoreVector:
    try:
        fn = STATISTICS[name]
    except KeyError:
        raise StatisticError(f"unknown statistic {name!r}") from None
    return fn(tensor)


def save_scores(vector: ScoreVector, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "statistic", "orientation"])
        for i, s in enumerate(vector.scores):
            writer.writerow([i, repr(float(s)), vector.statistic, vector.orientation])


def load_scores(path) -> ScoreVector:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise StatisticError("score file has no rows")
    scores = np.array([float(r[1]) for r in rows[1:]])
    return ScoreVector(scores, rows[1][3], rows[1][2])
