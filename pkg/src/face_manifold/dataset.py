"""Clean/noisy parameter-pair datasets.

Corruption picks how many entries to hit (uniform on 1..P), which entries
(uniform without replacement), and then adds independent Gaussian noise to
just those.  Each clean sample gets ``copies`` corrupted versions; pair
``i * copies + j`` always uses the stream derived from ``(seed, i, j)``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import binio
from ._rng import derive_rng
from .morphable_model import Group

DATASET_MAGIC = b"FDS1"
SHAPE_NORMALIZATION = 1e-5
_SHAPE_DIVISOR = 1e5
_GROUP_CODES = {Group.IDENTITY: 0, Group.EXPRESSION: 1}


@dataclass(frozen=True)
class SamplePair:
    clean: np.ndarray
    noisy: np.ndarray


@dataclass(frozen=True)
class CorruptionConfig:
    sigma: float
    copies: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.copies < 1:
            raise ValueError(f"copies must be >= 1, got {self.copies}")


@dataclass(frozen=True, eq=False)
class ParamDataset:
    """Pairs stored as two aligned ``(count, P)`` arrays."""
    group: Group
    clean: np.ndarray
    noisy: np.ndarray
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "group", Group.parse(self.group))
        clean = np.asarray(self.clean, dtype=np.float64)
        noisy = np.asarray(self.noisy, dtype=np.float64)
        if clean.ndim == 1 and clean.size == 0:
            clean = clean.reshape(0, 0)
            noisy = noisy.reshape(0, 0)
        if clean.shape != noisy.shape or clean.ndim != 2:
            raise ValueError(f"clean {clean.shape} and noisy {noisy.shape} must be equal (count, P)")
        if not self.normalization > 0:
            raise ValueError(f"normalization must be positive, got {self.normalization}")
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "noisy", noisy)

    @property
    def param_count(self):
        return self.clean.shape[1]

    def __len__(self):
        return self.clean.shape[0]

    def __getitem__(self, i):
        return SamplePair(self.clean[i], self.noisy[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, rows):
        return replace(self, clean=self.clean[rows], noisy=self.noisy[rows])


def corrupt(clean, sigma, rng, n=None):
    """Add N(0, sigma) noise to ``n`` randomly chosen entries (n ~ U{1..P} if not given)."""
    clean = np.asarray(clean, dtype=np.float64)
    p = clean.size
    if p < 1:
        raise ValueError("cannot corrupt an empty vector")
    if n is None:
        n = int(rng.integers(1, p + 1))
    elif not 1 <= n <= p:
        raise ValueError(f"n must lie in [1, {p}], got {n}")
    idx = rng.choice(p, size=n, replace=False)
    out = clean.copy()
    out[idx] += rng.normal(0.0, sigma, size=n)
    return out


def _clean_matrix(clean_set):
    rows = [np.asarray(c, dtype=np.float64).reshape(-1) for c in clean_set]
    if not rows:
        raise ValueError("clean set is empty")
    lengths = {r.size for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"ragged clean set: vector lengths {sorted(lengths)}")
    return np.stack(rows)


def build_dataset(clean_set, config, group=Group.EXPRESSION, threads=1):
    """Corrupt each clean sample ``config.copies`` times."""
    clean = _clean_matrix(clean_set)
    copies = config.copies
    noisy = np.empty((clean.shape[0] * copies, clean.shape[1]))

    def fill(i):
        for j in range(copies):
            rng = derive_rng(config.seed, "corrupt", i, j)
            noisy[i * copies + j] = corrupt(clean[i], config.sigma, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(clean.shape[0])))
    else:
        for i in range(clean.shape[0]):
            fill(i)
    return ParamDataset(group, np.repeat(clean, copies, axis=0), noisy)


def normalize_shape(dataset):
    """Divide every identity entry by 1e5."""
    if dataset.group is not Group.IDENTITY:
        raise ValueError("only identity (shape) datasets are normalized")
    if dataset.normalization != 1.0:
        raise ValueError(f"dataset already normalized (normalization={dataset.normalization})")
    return replace(dataset, clean=dataset.clean / _SHAPE_DIVISOR,
                   noisy=dataset.noisy / _SHAPE_DIVISOR, normalization=SHAPE_NORMALIZATION)


def denormalize_shape(dataset):
    if dataset.group is not Group.IDENTITY:
        raise ValueError("only identity (shape) datasets are normalized")
    if dataset.normalization != SHAPE_NORMALIZATION:
        raise ValueError(f"dataset is not normalized (normalization={dataset.normalization})")
    return replace(dataset, clean=dataset.clean * _SHAPE_DIVISOR,
                   noisy=dataset.noisy * _SHAPE_DIVISOR, normalization=1.0)


def group_spans(dataset):
    """``(start, stop)`` runs of consecutive pairs sharing a bitwise-equal clean vector."""
    n = len(dataset)
    if n == 0:
        return []
    same = np.all(dataset.clean[1:] == dataset.clean[:-1], axis=1)
    starts = np.concatenate([[0], np.flatnonzero(~same) + 1])
    stops = np.concatenate([starts[1:], [n]])
    return list(zip(starts.tolist(), stops.tolist()))


def unique_clean(dataset):
    """One clean vector per clean-sample group."""
    return dataset.clean[[a for a, _ in group_spans(dataset)]]


def split(dataset, test_fraction, seed):
    """Partition by clean-sample group so noisy copies never straddle train/test."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    spans = group_spans(dataset)
    g = len(spans)
    if g < 2:
        raise ValueError("need at least two clean-sample groups to split")
    n_test = min(max(int(round(test_fraction * g)), 1), g - 1)
    rng = derive_rng(seed, "split")
    is_test = np.zeros(g, dtype=bool)
    is_test[rng.permutation(g)[:n_test]] = True
    test_rows = np.concatenate([np.arange(*spans[k]) for k in np.flatnonzero(is_test)])
    train_rows = np.concatenate([np.arange(*spans[k]) for k in np.flatnonzero(~is_test)])
    return dataset.subset(train_rows), dataset.subset(test_rows)


# --- persistence ---------------------------------------------------------------

def dataset_to_bytes(dataset):
    w = binio.Writer(DATASET_MAGIC)
    w.u8(_GROUP_CODES[dataset.group])
    w.u32(dataset.param_count)
    w.u64(len(dataset))
    w.f64(dataset.normalization)
    # pair blocks: [clean(P), noisy(P)]
    w.f64_array(np.concatenate([dataset.clean, dataset.noisy], axis=1))
    return w.getvalue()


def dataset_from_bytes(data):
    r = binio.Reader(data, DATASET_MAGIC, "dataset (.fds)")
    code = r.u8("header")
    groups = {v: k for k, v in _GROUP_CODES.items()}
    if code not in groups:
        raise binio.FileFormatError(f"unknown group byte {code} (expected 0 or 1)")
    p = r.u32("header")
    count = r.u64("header")
    normalization = r.f64("header")
    if not normalization > 0:
        raise binio.FileFormatError(f"normalization must be positive, got {normalization}")
    body = r.f64_array(2 * p * count, "pairs").reshape(count, 2 * p)
    r.finish()
    return ParamDataset(groups[code], body[:, :p], body[:, p:], normalization)


def save_dataset(dataset, path):
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(dataset))


def load_dataset(path):
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
