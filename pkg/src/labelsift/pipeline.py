"""Iterative detect -> relabel loop with per-iteration records and report files."""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import detect as det
from . import mixfit, relabel
from .data import Dataset, GoldSubset, NoiseSpec, draw_gold_subset, inject_noise
from .nn import (EpochTrace, ModelConfig, predict_deterministic, train_ensemble)
from .seeding import mix_seeds
from .uncertainty import CONFIDENCE, ScoreVector, to_uncertainty


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    noise: NoiseSpec
    model: ModelConfig
    n_members: int = 5
    t_passes: int = 25
    statistic: str = "mean_max_softmax"
    detection_rule: str = "top_fraction"   # | mixture_posterior | mixture_contamination
    detection_param: float = 0.10          # p, posterior cutoff, or contamination target
    relabel_mode: str = "predicted"        # | oracle
    epoch_method: str = "trajectory"       # | gold | fixed
    fixed_epoch: int = 0
    trajectory_variant: str = "within_member_means"
    smoothing_window: int = 3
    rise_length: int = 2
    iterations: int = 5
    test_fraction: float = 0.2
    gold_size: int = 0
    trace_stride: int = 1
    final_detection: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise PipelineError("need at least one iteration")
        if not 0.0 <= self.test_fraction < 1.0:
            raise PipelineError("test fraction must be in [0, 1)")
        if self.relabel_mode not in ("predicted", "oracle"):
            raise PipelineError(f"unknown relabel mode {self.relabel_mode!r}")
        if self.detection_rule not in ("top_fraction", "mixture_posterior",
                                       "mixture_contamination"):
            raise PipelineError(f"unknown detection rule {self.detection_rule!r}")
        if self.epoch_method not in ("trajectory", "gold", "fixed"):
            raise PipelineError(f"unknown epoch method {self.epoch_method!r}")


@dataclass
class IterationRecord:
    iteration: int
    test_acc: float
    noisy_count: int
    noise_prop: float
    det_precision: Optional[float]
    det_recall: Optional[float]
    relabel_epoch: Optional[int]
    detected_count: Optional[int] = None
    correctly_relabeled: Optional[int] = None
    newly_corrupted: Optional[int] = None


@dataclass
class Report:
    config: dict
    records: List[IterationRecord]
    histograms: List[dict] = field(default_factory=list)
    traces: List[List[EpochTrace]] = field(default_factory=list)
    scores: List[Optional[ScoreVector]] = field(default_factory=list)
    mixture_fits: List[Optional[mixfit.BetaMixtureFit]] = field(default_factory=list)
    failure: Optional[str] = None


def split_train_test(dataset: Dataset, test_fraction: float, seed: int):
    """Disjoint train/test split by seeded permutation; rows re-indexed so
    positions and ids coincide inside each split."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_test = int(np.floor(test_fraction * dataset.n))
    test_rows, train_rows = perm[:n_test], perm[n_test:]
    assert len(set(test_rows) & set(train_rows)) == 0
    def rebuild(rows):
        true = None if dataset.true_labels is None else dataset.true_labels[rows]
        return Dataset(dataset.features[rows], dataset.given_labels[rows],
                       dataset.num_classes, true_labels=true)
    return rebuild(train_rows), rebuild(test_rows)


def _choose_epoch(traces, config: PipelineConfig):
    if config.epoch_method == "fixed":
        return relabel.RelabelEpochChoice(epoch=config.fixed_epoch, method="fixed")
    if config.epoch_method == "gold":
        return relabel.select_relabel_epoch_gold(traces)
    return relabel.select_relabel_epoch_trajectory(
        traces, variant=config.trajectory_variant,
        window=config.smoothing_window, rise_length=config.rise_length)


def _detect(scores: ScoreVector, config: PipelineConfig):
    if config.detection_rule == "top_fraction":
        return det.detect_top_fraction(to_uncertainty(scores), config.detection_param), None
    if scores.orientation != CONFIDENCE:
        raise PipelineError("mixture detection rules need a confidence statistic")
    fit = mixfit.fit_beta_mixture(scores)
    if config.detection_rule == "mixture_posterior":
        return det.detect_by_mixture(scores, fit,
                                     posterior_cutoff=config.detection_param), fit
    return det.detect_by_mixture(scores, fit, posterior_cutoff=None,
                                 contamination_target=config.detection_param), fit


def run_iteration(train: Dataset, test: Dataset, config: PipelineConfig,
                  iteration: int, gold: Optional[GoldSubset] = None,
                  apply_relabel: bool = True):
    """Train a fresh ensemble on the current labels, detect, relabel, evaluate.

    Returns (new train dataset, IterationRecord, artifacts dict).
    """
    seed_i = mix_seeds(config.master_seed, 1000 + iteration)
    model_cfg = dataclasses.replace(config.model, seed=seed_i)
    members, traces = train_ensemble(
        train, model_cfg, config.n_members, config.t_passes,
        trace_seed=mix_seeds(seed_i, 7), gold=gold,
        statistic=config.statistic, trace_stride=config.trace_stride)

    noisy_count = int(train.noisy_mask().sum()) if train.true_labels is not None else 0
    test_probs = predict_deterministic(members, test.features)
    if test.n and test.true_labels is not None:
        test_acc = float((test_probs.argmax(axis=-1) == test.true_labels).mean())
    else:
        test_acc = float("nan")

    artifacts = {"traces": traces}
    record = IterationRecord(
        iteration=iteration, test_acc=test_acc, noisy_count=noisy_count,
        noise_prop=noisy_count / train.n if train.n else 0.0,
        det_precision=None, det_recall=None, relabel_epoch=None)
    if not apply_relabel:
        artifacts["scores"] = None
        artifacts["fit"] = None
        return train, record, artifacts

    choice = _choose_epoch(traces, config)
    chosen_trace = next(t for t in traces if t.epoch == choice.epoch)
    scores = ScoreVector(chosen_trace.scores, chosen_trace.orientation,
                         chosen_trace.statistic)
    detection, fit = _detect(scores, config)
    metrics = det.detection_metrics(detection, train) if train.true_labels is not None else None

    if config.relabel_mode == "oracle":
        new_train, outcome = relabel.relabel_oracle(detection, train)
    else:
        new_train, outcome = relabel.relabel_predicted(detection, traces,
                                                       choice.epoch, train)
    record.relabel_epoch = choice.epoch
    record.detected_count = len(detection)
    if metrics is not None:
        record.det_precision = metrics.precision
        record.det_recall = metrics.recall
    record.correctly_relabeled = outcome.correctly_relabeled
    record.newly_corrupted = outcome.newly_corrupted
    artifacts.update({"scores": scores, "fit": fit, "detection": detection,
                      "outcome": outcome, "epoch_choice": choice})
    return new_train, record, artifacts


def _score_histogram(scores: ScoreVector, train: Dataset, bins: int = 20) -> dict:
    edges = np.linspace(0.0, 1.0, bins + 1)
    noisy = train.noisy_mask()
    clean_counts, _ = np.histogram(scores.scores[~noisy], bins=edges)
    noisy_counts, _ = np.histogram(scores.scores[noisy], bins=edges)
    return {"bin_edges": edges.tolist(), "clean": clean_counts.tolist(),
            "noisy": noisy_counts.tolist(), "statistic": scores.statistic}


def run_pipeline(dataset: Dataset, config: PipelineConfig,
                 out_dir: Optional[str] = None) -> Report:
    """Full loop: split, corrupt, then R detect/relabel iterations.

    The gold subset, when enabled, is drawn once and reused every iteration.
    """
    train, test = split_train_test(dataset, config.test_fraction,
                                   mix_seeds(config.master_seed, 1))
    train = inject_noise(train, config.noise)
    gold = None
    if config.gold_size > 0:
        gold = draw_gold_subset(train, config.gold_size,
                                mix_seeds(config.master_seed, 3))
    report = Report(config=_config_to_dict(config), records=[])
    for i in range(1, config.iterations + 1):
        last = i == config.iterations
        prev_train = train
        try:
            train, record, artifacts = run_iteration(
                train, test, config, i, gold=gold,
                apply_relabel=config.final_detection or not last)
        except Exception as exc:  # noqa: BLE001 - partial report with marker
            report.failure = f"iteration {i}: {exc}"
            break
        report.records.append(record)
        report.traces.append(artifacts["traces"])
        report.scores.append(artifacts.get("scores"))
        report.mixture_fits.append(artifacts.get("fit"))
        if artifacts.get("scores") is not None and prev_train.true_labels is not None:
            report.histograms.append(_score_histogram(artifacts["scores"], prev_train))
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _config_to_dict(config: PipelineConfig) -> dict:
    d = dataclasses.asdict(config)
    d["model"]["layer_sizes"] = list(d["model"]["layer_sizes"])
    return d


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_report(report: Report, directory) -> None:
    """records.csv, summary.json, and per-iteration score/trace/fit files."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "records.csv"), "w", newline="") as fh:
        fh.write("iter,acc,noisy_count,noise_prop,det_precision,det_recall,relabel_epoch\n")
        for r in report.records:
            fh.write(",".join([
                str(r.iteration), _fmt(r.test_acc), str(r.noisy_count),
                _fmt(r.noise_prop), _fmt(r.det_precision), _fmt(r.det_recall),
                _fmt(r.relabel_epoch)]) + "\n")
    summary = {
        "config": report.config,
        "records": [dataclasses.asdict(r) for r in report.records],
        "histograms": report.histograms,
        "failure": report.failure,
    }
    with open(os.path.join(directory, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    for i, (traces, scores, fit) in enumerate(
            zip(report.traces, report.scores, report.mixture_fits), start=1):
        _write_trace_csv(traces, os.path.join(directory, f"trace_iter{i}.csv"))
        if scores is not None:
            _write_scores_csv(scores, os.path.join(directory, f"scores_iter{i}.csv"))
        if fit is not None:
            mixfit.save_fit(fit, os.path.join(directory, f"mixturefit_iter{i}.json"))


def _write_scores_csv(scores: ScoreVector, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("id,score,statistic,orientation\n")
        for i, s in enumerate(scores.scores):
            fh.write(f"{i},{s!r},{scores.statistic},{scores.orientation}\n")


def _write_trace_csv(traces: List[EpochTrace], path) -> None:
    has_gold = traces and traces[0].gold_clean_acc is not None
    with open(path, "w", newline="") as fh:
        cols = ["epoch", "unc_all_passes", "unc_within_member", "train_acc"]
        if has_gold:
            cols += ["gold_clean_acc", "gold_noisy_given_acc", "gold_noisy_true_acc"]
        fh.write(",".join(cols) + "\n")
        for tr in traces:
            row = [str(tr.epoch), repr(tr.unc_all_passes),
                   repr(tr.unc_within_member), repr(tr.train_acc)]
            if has_gold:
                row += [repr(tr.gold_clean_acc), repr(tr.gold_noisy_given_acc),
                        repr(tr.gold_noisy_true_acc)]
            fh.write(",".join(row) + "\n")


def load_records_csv(path) -> List[IterationRecord]:
    records = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("iter,"):
            raise PipelineError("not a records.csv file")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            records.append(IterationRecord(
                iteration=int(parts[0]),
                test_acc=float(parts[1]) if parts[1] else float("nan"),
                noisy_count=int(parts[2]),
                noise_prop=float(parts[3]),
                det_precision=float(parts[4]) if parts[4] else None,
                det_recall=float(parts[5]) if parts[5] else None,
                relabel_epoch=int(parts[6]) if parts[6] else None))
    return records
