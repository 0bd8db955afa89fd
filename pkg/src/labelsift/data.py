"""Dataset container, file IO, synthetic blobs, label-noise injection, gold subsets."""

import csv
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BINARY_MAGIC = b"LSFT"
BINARY_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Features plus given labels, optional hidden true labels, stable ids.

    Training and detection code must never read ``true_labels``; only metric
    computation and oracle relabeling may.
    """

    features: np.ndarray          # N x D float32
    given_labels: np.ndarray      # N int64 in [0, C)
    num_classes: int
    true_labels: Optional[np.ndarray] = None
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        given = np.asarray(self.given_labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "given_labels", given)
        if feats.ndim != 2:
            raise DataError("features must be a 2-d array")
        n = feats.shape[0]
        if given.shape != (n,):
            raise DataError("given_labels length must match feature rows")
        if not np.isfinite(feats).all():
            raise DataError("features contain NaN or Inf")
        if self.num_classes < 2:
            raise DataError("need at least 2 classes")
        if given.size and (given.min() < 0 or given.max() >= self.num_classes):
            raise DataError("given label out of range")
        if self.true_labels is not None:
            true = np.asarray(self.true_labels, dtype=np.int64)
            object.__setattr__(self, "true_labels", true)
            if true.shape != (n,):
                raise DataError("true_labels length must match given_labels")
            if true.size and (true.min() < 0 or true.max() >= self.num_classes):
                raise DataError("true label out of range")
        if self.ids is None:
            object.__setattr__(self, "ids", np.arange(n, dtype=np.int64))
        else:
            ids = np.asarray(self.ids, dtype=np.int64)
            object.__setattr__(self, "ids", ids)
            if ids.shape != (n,):
                raise DataError("ids length must match feature rows")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def noisy_mask(self) -> np.ndarray:
        """Boolean mask of images whose given label differs from the truth."""
        if self.true_labels is None:
            raise DataError("true labels not available")
        return self.given_labels != self.true_labels

    def with_labels(self, new_given: np.ndarray) -> "Dataset":
        return Dataset(self.features, new_given, self.num_classes,
                       true_labels=self.true_labels, ids=self.ids)

    def subset(self, index: np.ndarray) -> "Dataset":
        true = None if self.true_labels is None else self.true_labels[index]
        return Dataset(self.features[index], self.given_labels[index],
                       self.num_classes, true_labels=true, ids=self.ids[index])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.num_classes != other.num_classes:
            return False
        if not (np.array_equal(self.features, other.features)
                and np.array_equal(self.given_labels, other.given_labels)
                and np.array_equal(self.ids, other.ids)):
            return False
        if (self.true_labels is None) != (other.true_labels is None):
            return False
        return self.true_labels is None or np.array_equal(self.true_labels, other.true_labels)


@dataclass(frozen=True)
class NoiseSpec:
    pattern: str                  # "symmetric" | "pair"
    rate: float
    seed: int

    def __post_init__(self):
        if self.pattern not in ("symmetric", "pair"):
            raise DataError(f"unknown noise pattern {self.pattern!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise DataError("noise rate must be in [0, 1]")


@dataclass(frozen=True)
class GoldSubset:
    """Small set of image ids whose noise status is known."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "ids", ids)
        if len(np.unique(ids)) != len(ids):
            raise DataError("gold subset ids must be unique")


def make_blobs(n_per_class: int, num_classes: int, dim: int,
               separation: float, seed: int) -> Dataset:
    """Gaussian clusters, one per class, unit within-class std.

    Class means are placed at mutual distance >= separation; true labels
    equal given labels. Deterministic under seed.
    """
    if n_per_class < 1 or num_classes < 2 or dim < 1 or separation <= 0:
        raise DataError("invalid blob parameters")
    rng = np.random.default_rng(seed)
    if dim >= num_classes:
        # basis vectors scaled so every pair of means is exactly `separation` apart
        means = np.eye(num_classes, dim) * (separation / np.sqrt(2.0))
    else:
        means = np.zeros((num_classes, dim))
        means[:, 0] = np.arange(num_classes) * separation
    n = n_per_class * num_classes
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    feats = rng.standard_normal((n, dim)) + means[labels]
    return Dataset(feats.astype(np.float32), labels, num_classes,
                   true_labels=labels.copy())


def inject_noise(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Corrupt exactly floor(rate * N) given labels, chosen by seeded permutation.

    Symmetric noise flips to a uniformly random different class; pair noise
    flips class c to (c + 1) mod C. Originals are preserved as true_labels.
    """
    if dataset.true_labels is not None and not np.array_equal(
            dataset.true_labels, dataset.given_labels):
        raise DataError("dataset already carries noise; refusing to stack")
    rng = np.random.default_rng(spec.seed)
    n = dataset.n
    c = dataset.num_classes
    k = int(np.floor(spec.rate * n))
    flip_idx = rng.permutation(n)[:k]
    given = dataset.given_labels.copy()
    if spec.pattern == "pair":
        given[flip_idx] = (given[flip_idx] + 1) % c
    else:
        # uniform over the C-1 wrong classes
        offsets = rng.integers(1, c, size=k)
        given[flip_idx] = (given[flip_idx] + offsets) % c
    return Dataset(dataset.features, given, c,
                   true_labels=dataset.given_labels.copy(), ids=dataset.ids)


def draw_gold_subset(dataset: Dataset, size: int, seed: int) -> GoldSubset:
    if dataset.true_labels is None:
        raise DataError("gold subset needs true labels")
    if size > dataset.n:
        raise DataError("gold subset larger than dataset")
    rng = np.random.default_rng(seed)
    picked = rng.choice(dataset.n, size=size, replace=False)
    return GoldSubset(np.sort(dataset.ids[picked]))


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["label"]
        if dataset.true_labels is not None:
            header.append("true_label")
        header += [f"f{j}" for j in range(dataset.dim)]
        writer.writerow(header)
        for i in range(dataset.n):
            row = [int(dataset.given_labels[i])]
            if dataset.true_labels is not None:
                row.append(int(dataset.true_labels[i]))
            # %.9g round-trips float32 exactly
            row += [f"{x:.9g}" for x in dataset.features[i]]
            writer.writerow(row)


def load_csv(path, num_classes: Optional[int] = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no rows") from None
        if not header or header[0] != "label":
            raise DataError("first column must be 'label'")
        has_true = len(header) > 1 and header[1] == "true_label"
        skip = 2 if has_true else 1
        given, true, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                given.append(int(row[0]))
                if has_true:
                    true.append(int(row[1]))
                feats.append([np.float32(x) for x in row[skip:]])
            except (ValueError, IndexError):
                raise DataError(f"malformed row at line {lineno}") from None
    if not given:
        raise DataError("no rows")
    feats_arr = np.asarray(feats, dtype=np.float32)
    given_arr = np.asarray(given, dtype=np.int64)
    if num_classes is None:
        all_labels = given_arr if not has_true else np.concatenate(
            [given_arr, np.asarray(true, dtype=np.int64)])
        num_classes = max(int(all_labels.max()) + 1, 2)
    return Dataset(feats_arr, given_arr, num_classes,
                   true_labels=np.asarray(true, dtype=np.int64) if has_true else None)


def save_binary(dataset: Dataset, path) -> None:
    """Magic LSFT, version u16, N/D u64, C u32, flag u8 for true labels,
    u32 label array(s), little-endian f32 features row-major."""
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<H", BINARY_VERSION))
        fh.write(struct.pack("<QQI", dataset.n, dataset.dim, dataset.num_classes))
        fh.write(struct.pack("<B", 1 if dataset.true_labels is not None else 0))
        fh.write(dataset.given_labels.astype("<u4").tobytes())
        if dataset.true_labels is not None:
            fh.write(dataset.true_labels.astype("<u4").tobytes())
        fh.write(dataset.features.astype("<f4").tobytes())


def load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 27 or raw[:4] != BINARY_MAGIC:
        raise DataError("not a labelsift binary dataset")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != BINARY_VERSION:
        raise DataError(f"unsupported binary version {version}")
    n, d, c = struct.unpack_from("<QQI", raw, 6)
    (has_true,) = struct.unpack_from("<B", raw, 26)
    off = 27
    given = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += 4 * n
    true = None
    if has_true:
        true = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    return Dataset(feats.copy(), given, c, true_labels=true)


def load_dataset(path, fmt: str = "csv") -> Dataset:
    if fmt == "csv":
        return load_csv(path)
    if fmt == "binary":
        return load_binary(path)
    raise DataError(f"unknown format {fmt!r}")


def save_dataset(dataset: Dataset, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        save_csv(dataset, path)
    elif fmt == "binary":
        save_binary(dataset, path)
    else:
        raise DataError(f"unknown format {fmt!r}")
