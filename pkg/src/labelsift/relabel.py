"""Relabel-epoch selection from training dynamics and label reassignment."""

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .data import Dataset
from .detect import DetectionSet
from .nn import EpochTrace
from .uncertainty import ALL_PASSES, WITHIN_MEMBER_MEANS


class RelabelError(ValueError):
    pass


@dataclass(frozen=True)
class RelabelEpochChoice:
    epoch: int
    method: str
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RelabelOutcome:
    """Bookkeeping for one relabeling pass over the detected set.

    ``unchanged`` counts detected images whose label stayed equal or moved to
    another wrong class, so the three counts always sum to the detected size.
    Counts are None when true labels are unavailable.
    """

    ids: np.ndarray
    old_labels: np.ndarray
    new_labels: np.ndarray
    source: str                   # "predicted" | "oracle"
    correctly_relabeled: Optional[int] = None
    newly_corrupted: Optional[int] = None
    unchanged: Optional[int] = None


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with truncated edges; window=1 is the identity."""
    if window < 1 or window % 2 == 0:
        raise RelabelError("smoothing window must be a positive odd integer")
    half = window // 2
    out = np.empty_like(values, dtype=np.float64)
    for i in range(len(values)):
        lo, hi = max(0, i - half), min(len(values), i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


def _rise_onset(values: np.ndarray, s: int) -> Optional[int]:
    """Start index of the first run of s consecutive strict increases."""
    increasing = np.diff(values) > 0
    run = 0
    for i, inc in enumerate(increasing):
        run = run + 1 if inc else 0
        if run == s:
            return i - s + 1
    return None


def select_relabel_epoch_trajectory(traces: List[EpochTrace],
                                    variant: str = WITHIN_MEMBER_MEANS,
                                    window: int = 3,
                                    rise_length: int = 2) -> RelabelEpochChoice:
    """Pick the argmin of the smoothed uncertainty trajectory before its first
    sustained rise; falls back to the global argmin when no rise is found."""
    if variant == ALL_PASSES:
        raw = np.array([t.unc_all_passes for t in traces])
    elif variant == WITHIN_MEMBER_MEANS:
        raw = np.array([t.unc_within_member for t in traces])
    else:
        raise RelabelError(f"unknown trajectory variant {variant!r}")
    if len(raw) < window + rise_length:
        raise RelabelError("too few epochs for trajectory selection")
    smoothed = _smooth(raw, window)
    onset = _rise_onset(smoothed, rise_length)
    if onset is None:
        idx = int(np.argmin(smoothed))
        diagnostics = {"trajectory": smoothed.tolist(), "rise_onset": None,
                       "no_rise_detected": True}
    else:
        idx = int(np.argmin(smoothed[:onset + 1]))
        diagnostics = {"trajectory": smoothed.tolist(), "rise_onset": onset,
                       "no_rise_detected": False}
    diagnostics["minimum"] = float(smoothed[idx])
    return RelabelEpochChoice(epoch=traces[idx].epoch,
                              method=f"uncertainty_trajectory({variant})",
                              diagnostics=diagnostics)


def select_relabel_epoch_gold(traces: List[EpochTrace]) -> RelabelEpochChoice:
    """Deployable gold-subset heuristic: maximize clean-subset accuracy minus
    noisy-subset accuracy on the given labels; earliest epoch on ties."""
    if not traces or traces[0].gold_clean_acc is None:
        raise RelabelError("traces carry no gold-subset accuracies")
    clean = np.array([t.gold_clean_acc for t in traces])
    noisy_given = np.array([t.gold_noisy_given_acc for t in traces])
    gap = clean - noisy_given
    idx = int(np.argmax(gap))  # argmax returns the earliest maximizer
    diagnostics = {"gold_clean_acc": clean.tolist(),
                   "gold_noisy_given_acc": noisy_given.tolist(),
                   "gap": gap.tolist()}
    if np.ptp(gap) == 0.0:
        diagnostics["degenerate_gap"] = True
    return RelabelEpochChoice(epoch=traces[idx].epoch, method="gold_subset",
                              diagnostics=diagnostics)


def _outcome_counts(outcome: RelabelOutcome, dataset: Dataset) -> None:
    if dataset.true_labels is None:
        return
    true = dataset.true_labels[outcome.ids]
    was_wrong = outcome.old_labels != true
    outcome.correctly_relabeled = int((was_wrong & (outcome.new_labels == true)).sum())
    outcome.newly_corrupted = int((~was_wrong & (outcome.new_labels != true)).sum())
    outcome.unchanged = len(outcome.ids) - outcome.correctly_relabeled - outcome.newly_corrupted


def _apply(dataset: Dataset, outcome: RelabelOutcome) -> Dataset:
    new_given = dataset.given_labels.copy()
    new_given[outcome.ids] = outcome.new_labels
    return dataset.with_labels(new_given)


def relabel_predicted(detection: DetectionSet, traces: List[EpochTrace],
                      epoch: int, dataset: Dataset) -> Tuple[Dataset, RelabelOutcome]:
    """Assign each detected image the argmax of the stored epoch-mean softmax."""
    snapshot = next((t for t in traces if t.epoch == epoch), None)
    if snapshot is None:
        raise RelabelError(f"no stored softmax snapshot for epoch {epoch}")
    ids = detection.ids
    new_labels = snapshot.mean_softmax[ids].argmax(axis=-1).astype(np.int64)
    outcome = RelabelOutcome(ids=ids, old_labels=dataset.given_labels[ids].copy(),
                             new_labels=new_labels, source="predicted")
    _outcome_counts(outcome, dataset)
    return _apply(dataset, outcome), outcome


def relabel_oracle(detection: DetectionSet, dataset: Dataset) -> Tuple[Dataset, RelabelOutcome]:
    """Set every detected image's given label to its true label."""
    if dataset.true_labels is None:
        raise RelabelError("oracle relabeling needs true labels")
    ids = detection.ids
    outcome = RelabelOutcome(ids=ids, old_labels=dataset.given_labels[ids].copy(),
                             new_labels=dataset.true_labels[ids].copy(),
                             source="oracle")
    _outcome_counts(outcome, dataset)
    return _apply(dataset, outcome), outcome


def save_outcome_csv(outcome: RelabelOutcome, dataset: Dataset, path) -> None:
    has_truth = dataset.true_labels is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "old_label", "new_label", "was_noisy", "now_correct"])
        for i, idx in enumerate(outcome.ids):
            if has_truth:
                true = int(dataset.true_labels[idx])
                was_noisy = int(int(outcome.old_labels[i]) != true)
                now_correct = int(int(outcome.new_labels[i]) == true)
            else:
                was_noisy = now_correct = "unknown"
            writer.writerow([int(idx), int(outcome.old_labels[i]),
                             int(outcome.new_labels[i]), was_noisy, now_correct])
