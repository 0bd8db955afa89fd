"""Dropout MLP classifier: training, stochastic ensemble prediction, epoch traces."""

import json
import struct
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from . import uncertainty as unc
from .data import Dataset, GoldSubset
from .seeding import mix_seeds

CHECKPOINT_MAGIC = b"LSNN"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layer_sizes: tuple            # (D, h1, ..., C)
    dropout_rate: float = 0.0
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]


@dataclass
class TrainedMember:
    weights: List[np.ndarray]     # per layer, shape (fan_in, fan_out)
    biases: List[np.ndarray]
    config: ModelConfig
    member_index: int = 0


@dataclass
class EpochTrace:
    """Per-epoch snapshot of ensemble predictions over the training set."""

    epoch: int
    mean_softmax: np.ndarray      # N x C float32
    unc_all_passes: float
    unc_within_member: float
    train_acc: float
    gold_clean_acc: Optional[float] = None
    gold_noisy_given_acc: Optional[float] = None
    gold_noisy_true_acc: Optional[float] = None
    scores: Optional[np.ndarray] = None   # per-image statistic, if requested
    statistic: Optional[str] = None
    orientation: Optional[str] = None


def init_params(layer_sizes, rng):
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)); zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(weights, biases, x, dropout_rate=0.0, rng=None):
    """Returns (output probs, cached activations, dropout masks)."""
    acts = [x]
    masks = []
    h = x
    n_layers = len(weights)
    for i in range(n_layers - 1):
        h = np.maximum(0.0, h @ weights[i] + biases[i])
        if dropout_rate > 0.0 and rng is not None:
            # inverted dropout: expectation matches the dropout-free pass
            mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        acts.append(h)
    probs = softmax(h @ weights[-1] + biases[-1])
    return probs, acts, masks


def forward_probs(weights, biases, x, dropout_rate=0.0, rng=None):
    return _forward(weights, biases, x, dropout_rate, rng)[0]


def cross_entropy(probs, labels):
    return float(-np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)).mean())


def gradients(weights, biases, x, labels, dropout_rate=0.0, rng=None):
    """Analytic gradients of mean cross-entropy; returns (loss, dW list, db list)."""
    probs, acts, masks = _forward(weights, biases, x, dropout_rate, rng)
    n = len(labels)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    d_w = [None] * len(weights)
    d_b = [None] * len(biases)
    for i in range(len(weights) - 1, -1, -1):
        d_w[i] = acts[i].T @ delta
        d_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta[acts[i] <= 0.0] = 0.0
    loss = cross_entropy(probs, labels)
    return loss, d_w, d_b


class MemberState:
    """One ensemble member mid-training; advances one epoch at a time so a
    synchronized ensemble can snapshot traces at every epoch boundary."""

    def __init__(self, config: ModelConfig, member_seed: int, member_index: int = 0):
        self.config = config
        self.member_index = member_index
        seed = mix_seeds(config.seed, member_seed)
        self.rng = np.random.default_rng(seed)
        self.weights, self.biases = init_params(config.layer_sizes, self.rng)
        self.vel_w = [np.zeros_like(w) for w in self.weights]
        self.vel_b = [np.zeros_like(b) for b in self.biases]
        self.loss_log: List[float] = []
        self.epochs_done = 0

    def step_epoch(self, features: np.ndarray, labels: np.ndarray) -> float:
        cfg = self.config
        n = len(labels)
        order = self.rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, d_w, d_b = gradients(self.weights, self.biases,
                                       features[idx], labels[idx],
                                       cfg.dropout_rate, self.rng)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {self.epochs_done}")
            for i in range(len(self.weights)):
                self.vel_w[i] = cfg.momentum * self.vel_w[i] - cfg.learning_rate * d_w[i]
                self.vel_b[i] = cfg.momentum * self.vel_b[i] - cfg.learning_rate * d_b[i]
                self.weights[i] += self.vel_w[i]
                self.biases[i] += self.vel_b[i]
            losses.append(loss)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        self.loss_log.append(epoch_loss)
        self.epochs_done += 1
        return epoch_loss

    def freeze(self) -> TrainedMember:
        return TrainedMember([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases],
                             self.config, self.member_index)


def train_member(dataset: Dataset, config: ModelConfig, member_seed: int):
    """Minibatch SGD with momentum on cross-entropy of the given labels.

    Deterministic under (config.seed, member_seed). Returns the trained
    member and its per-epoch loss log.
    """
    if dataset.n == 0:
        raise TrainingError("empty dataset")
    if config.input_dim != dataset.dim or config.num_classes != dataset.num_classes:
        raise TrainingError("config layer sizes do not match dataset")
    state = MemberState(config, member_seed)
    x = dataset.features.astype(np.float64)
    y = dataset.given_labels
    for _ in range(config.epochs):
        state.step_epoch(x, y)
    return state.freeze(), list(state.loss_log)


def stochastic_forward(member: TrainedMember, features: np.ndarray,
                       t_passes: int, seed: int) -> np.ndarray:
    """T stochastic forward passes with resampled dropout masks; T x N x C."""
    if t_passes < 1:
        raise ValueError("need at least one forward pass")
    x = np.asarray(features, dtype=np.float64)
    p = member.config.dropout_rate
    out = np.empty((t_passes, x.shape[0], member.config.num_classes))
    rng = np.random.default_rng(seed)
    for t in range(t_passes):
        out[t] = forward_probs(member.weights, member.biases, x,
                               dropout_rate=p, rng=rng if p > 0 else None)
    return out


def predict_ensemble(members: List[TrainedMember], features: np.ndarray,
                     t_passes: int, seed: int) -> unc.PredictionTensor:
    """Stack stochastic passes over members into an (M, T, N, C) tensor."""
    shapes = {(m.config.input_dim, m.config.num_classes) for m in members}
    if len(shapes) != 1:
        raise ValueError("ensemble members disagree on input/output shape")
    stacked = np.stack([
        stochastic_forward(m, features, t_passes, mix_seeds(seed, i))
        for i, m in enumerate(members)
    ])
    return unc.PredictionTensor(stacked)


def predict_deterministic(members: List[TrainedMember], features: np.ndarray) -> np.ndarray:
    """Dropout-off single-pass mean softmax over members; N x C."""
    x = np.asarray(features, dtype=np.float64)
    probs = [forward_probs(m.weights, m.biases, x) for m in members]
    return np.mean(probs, axis=0)


def _subset_positions(dataset: Dataset, gold: GoldSubset) -> np.ndarray:
    pos = {int(i): p for p, i in enumerate(dataset.ids)}
    return np.array([pos[int(i)] for i in gold.ids], dtype=np.int64)


def snapshot_epoch(dataset: Dataset, members: List[TrainedMember], t_passes: int,
                   seed: int, epoch: int, gold: Optional[GoldSubset] = None,
                   statistic: Optional[str] = None) -> EpochTrace:
    """One EpochTrace entry from the current ensemble state.

    Trajectory-uncertainty scalars are the per-image stddev statistics
    averaged over images whose current mean prediction matches the given
    label; they are 0 by construction for a single dropout-free model.
    """
    tensor = predict_ensemble(members, dataset.features, t_passes, seed)
    mean_sm = tensor.values.mean(axis=(0, 1))
    predicted = mean_sm.argmax(axis=-1)
    correct = predicted == dataset.given_labels
    std_all = unc._stddev_scores(tensor.values, unc.ALL_PASSES)
    std_within = unc._stddev_scores(tensor.values, unc.WITHIN_MEMBER_MEANS)
    trace = EpochTrace(
        epoch=epoch,
        mean_softmax=mean_sm.astype(np.float32),
        unc_all_passes=float(std_all[correct].mean()) if correct.any() else 0.0,
        unc_within_member=float(std_within[correct].mean()) if correct.any() else 0.0,
        train_acc=float(correct.mean()),
    )
    if gold is not None:
        if dataset.true_labels is None:
            raise TrainingError("gold tracing needs true labels")
        pos = _subset_positions(dataset, gold)
        noisy = dataset.given_labels[pos] != dataset.true_labels[pos]
        clean_pos, noisy_pos = pos[~noisy], pos[noisy]
        if len(clean_pos):
            trace.gold_clean_acc = float(
                (predicted[clean_pos] == dataset.given_labels[clean_pos]).mean())
        else:
            trace.gold_clean_acc = 0.0
        if len(noisy_pos):
            trace.gold_noisy_given_acc = float(
                (predicted[noisy_pos] == dataset.given_labels[noisy_pos]).mean())
            trace.gold_noisy_true_acc = float(
                (predicted[noisy_pos] == dataset.true_labels[noisy_pos]).mean())
        else:
            trace.gold_noisy_given_acc = 0.0
            trace.gold_noisy_true_acc = 0.0
    if statistic is not None:
        vec = unc.compute_statistic(tensor, statistic)
        trace.scores = vec.scores
        trace.statistic = vec.statistic
        trace.orientation = vec.orientation
    return trace


def train_ensemble(dataset: Dataset, config: ModelConfig, n_members: int,
                   t_passes: int, trace_seed: int = 0,
                   gold: Optional[GoldSubset] = None,
                   statistic: Optional[str] = None,
                   trace_stride: int = 1):
    """Synchronized ensemble training: all members advance epoch by epoch,
    with an EpochTrace recorded at each boundary (subsampled by trace_stride).

    Returns (members, traces).
    """
    if n_members < 1:
        raise TrainingError("need at least one member")
    states = [MemberState(config, member_seed=m, member_index=m) for m in range(n_members)]
    x = dataset.features.astype(np.float64)
    y = dataset.given_labels
    traces: List[EpochTrace] = []
    for epoch in range(config.epochs):
        for state in states:
            state.step_epoch(x, y)
        if epoch % trace_stride == 0 or epoch == config.epochs - 1:
            traces.append(snapshot_epoch(
                dataset, [s.freeze() for s in states], t_passes,
                mix_seeds(trace_seed, epoch), epoch, gold=gold, statistic=statistic))
    return [s.freeze() for s in states], traces


def save_member(member: TrainedMember, path) -> None:
    cfg = asdict(member.config)
    cfg["member_index"] = member.member_index
    blob = json.dumps(cfg).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(member.weights, member.biases):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_member(path) -> TrainedMember:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise TrainingError("not a labelsift checkpoint")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 6)
    cfg = json.loads(raw[10:10 + blob_len].decode("utf-8"))
    member_index = cfg.pop("member_index", 0)
    config = ModelConfig(**cfg)
    off = 10 + blob_len
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out,
                          offset=off).reshape(fan_in, fan_out).copy()
        off += 8 * fan_in * fan_out
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off).copy()
        off += 8 * fan_out
        weights.append(w)
        biases.append(b)
    return TrainedMember(weights, biases, config, member_index)


def save_traces_csv(traces: List[EpochTrace], path) -> None:
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
