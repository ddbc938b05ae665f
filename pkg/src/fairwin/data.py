"""Datasets: CSV ingestion, a synthetic biased fixture, and stratified splits.

Labels are ``{-1, +1}`` (``+1`` favorable) and the sensitive attribute is
``{1, 2}`` with ``1`` the privileged group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np
import pandas as pd

from .errors import ConfigError, FileError, GroupEmptyError, SchemaError, StratificationError


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        s = np.asarray(self.s, dtype=np.int64)
        if x.ndim != 2 or not (x.shape[0] == y.shape[0] == s.shape[0]):
            raise SchemaError(f"row counts differ: x {x.shape}, y {y.shape}, s {s.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise SchemaError("labels must be -1 or +1")
        if not np.all((s == 1) | (s == 2)):
            raise SchemaError("sensitive values must be 1 or 2")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def take(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx], self.s[idx], name or self.name)

    def with_x(self, x) -> "Dataset":
        return Dataset(x, self.y, self.s, self.name)

    def tobytes(self) -> bytes:
        return self.x.tobytes() + self.y.tobytes() + self.s.tobytes()


def group_subset(ds: Dataset, s_value: int) -> Dataset:
    if s_value not in (1, 2):
        raise ConfigError(f"sensitive value must be 1 or 2, got {s_value}")
    idx = np.flatnonzero(ds.s == s_value)
    if idx.size == 0:
        raise GroupEmptyError(f"{ds.name}: no rows with s={s_value}")
    return ds.take(idx, f"{ds.name}[s={s_value}]")


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def standardize_like(train: Dataset, *others: Dataset):
    """Re-standardize ``train`` and ``others`` with ``train``'s column statistics."""
    st = Standardizer.fit(train.x)
    return tuple(ds.with_x(st.apply(ds.x)) for ds in (train, *others))


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for :func:`load_csv`.

    ``numeric=None`` means every column that is not the label, the
    sensitive attribute, or categorical; that is the embedding-CSV mode.
    Values are compared as stripped strings.
    """

    label: str
    sensitive: str
    positive: tuple = ("1",)
    negative: tuple = ("0", "-1")
    privileged: tuple = ("1",)
    unprivileged: tuple = ("2", "0")
    categorical: tuple = ()
    numeric: tuple | None = None
    missing: tuple = ("?", "")


ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)

ADULT_SCHEMA = ColumnSchema(
    label="income",
    sensitive="sex",
    positive=(">50K", ">50K."),
    negative=("<=50K", "<=50K."),
    privileged=("Male",),
    unprivileged=("Female",),
    categorical=("workclass", "education", "marital-status", "occupation", "relationship", "race", "native-country"),
    numeric=("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"),
)


def _map_values(col: pd.Series, pos, neg, codes, what):
    pos = {str(v).strip() for v in pos}
    neg = {str(v).strip() for v in neg}
    out = np.empty(len(col), dtype=np.int64)
    for i, v in enumerate(col):
        if v in pos:
            out[i] = codes[0]
        elif v in neg:
            out[i] = codes[1]
        else:
            raise SchemaError(f"row {col.index[i] + 2}: {what} value {v!r} is neither {sorted(pos)} nor {sorted(neg)}")
    return out


def load_csv(path, schema: ColumnSchema, header=True, name=None) -> Dataset:
    """Read a CSV into a standardized :class:`Dataset`.

    Rows with a missing value in any used column are dropped. Categorical
    columns are one-hot encoded with levels in sorted order, then every
    feature column is z-scored with the file's own statistics (use
    :func:`standardize_like` after splitting to switch to train-split
    statistics). Error messages count rows from 1 with the header as row 1.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            header=0 if header else None,
            names=None if header else list(ADULT_COLUMNS),
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except FileNotFoundError as exc:
        raise FileError(f"no such file: {path}") from exc
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    frame = frame.apply(lambda c: c.str.strip())

    roles = [schema.label, schema.sensitive, *schema.categorical]
    numeric = schema.numeric
    if numeric is None:
        numeric = tuple(c for c in frame.columns if c not in roles)
    for col in (*roles, *numeric):
        if col not in frame.columns:
            raise SchemaError(f"{path.name}: missing column {col!r}")
    used = [*roles, *numeric]
    keep = ~frame[used].isin(list(schema.missing)).any(axis=1)
    frame = frame.loc[keep]

    y = _map_values(frame[schema.label], schema.positive, schema.negative, (1, -1), "label")
    s = _map_values(frame[schema.sensitive], schema.privileged, schema.unprivileged, (1, 2), "sensitive")

    blocks = []
    for col in schema.categorical:
        levels = sorted(frame[col].unique())
        blocks.append(np.stack([(frame[col] == lv).to_numpy(dtype=np.float64) for lv in levels], axis=1))
    if numeric:
        try:
            blocks.append(frame[list(numeric)].astype(np.float64).to_numpy())
        except ValueError as exc:
            raise SchemaError(f"{path.name}: non-numeric value in a numeric column: {exc}") from exc
    if not blocks:
        raise SchemaError("schema selects no feature columns")
    x = np.concatenate(blocks, axis=1) if len(blocks) > 1 else blocks[0]
    x = Standardizer.fit(x).apply(x)
    return Dataset(x, y, s, name or path.stem)


# ---------------------------------------------------------------------------
# synthetic fixture

PROXY_STRENGTH = 1.0
LABEL_NOISE = 0.5


def _label_direction(n_inf, rotation):
    j = np.arange(n_inf)
    base = np.where(j % 2 == 0, 1.0, -1.0) * (1.0 - 0.5 * j / n_inf)
    base /= np.linalg.norm(base)
    if rotation == 0.0:
        return base
    other = np.roll(np.abs(base), 1)
    other -= (other @ base) * base
    other /= np.linalg.norm(other)
    return math.cos(rotation) * base + math.sin(rotation) * other


def _synth_rows(rng, n, d, bias_strength, rotation=0.0):
    n_proxy = max(1, d // 5)
    n_inf = d - n_proxy
    s_pm = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    z = rng.standard_normal((n, d))
    x = z.copy()
    x[:, n_inf:] += PROXY_STRENGTH * s_pm[:, None]
    score = z[:, :n_inf] @ _label_direction(n_inf, rotation) + LABEL_NOISE * rng.standard_normal(n)
    if bias_strength >= 1.0:
        y = s_pm
    else:
        # sign(g + c*s) with g ~ N(0, sigma^2) has corr(s, y) = 2*Phi(c/sigma) - 1
        sigma = math.sqrt(1.0 + LABEL_NOISE ** 2)
        c = NormalDist().inv_cdf((1.0 + bias_strength) / 2.0) * sigma
        y = np.where(score + c * s_pm >= 0, 1.0, -1.0)
    return x, y.astype(np.int64), np.where(s_pm > 0, 1, 2)


def _check_synth(n, d, bias_strength):
    if n < 40 or d < 2:
        raise ConfigError(f"synthetic data needs n >= 40 and d >= 2, got n={n}, d={d}")
    if not 0.0 <= bias_strength <= 1.0:
        raise ConfigError(f"bias_strength must lie in [0, 1], got {bias_strength}")


def synth_biased(n: int, d: int, bias_strength: float, seed: int, rotation: float = 0.0) -> Dataset:
    """Gaussian features with a label whose correlation with ``s`` is ``bias_strength``.

    The last ``max(1, d // 5)`` features are proxies shifted by the group,
    the rest drive a linear label score. The label also depends on the
    group directly, so any model that reads the proxies inherits the bias.
    ``rotation`` turns the label direction (radians) to make a related task.
    """
    _check_synth(n, d, bias_strength)
    rng = np.random.default_rng(seed)
    x, y, s = _synth_rows(rng, n, d, bias_strength, rotation)
    return Dataset(Standardizer.fit(x).apply(x), y, s, f"synth(n={n},d={d},bias={bias_strength},seed={seed})")


def synth_transfer(n, d, bias_strength, seed, task_fraction=0.4, shift=0.0, rotation=0.0):
    """Pretraining partition and new-task partition from one generator.

    The task partition (``task_fraction`` of ``n`` rows) uses label-group
    correlation ``min(bias_strength + shift, 0.95)`` and a label direction
    turned by ``rotation``. Both partitions share one standardization.
    """
    _check_synth(n, d, bias_strength)
    if not 0.0 < task_fraction < 1.0:
        raise ConfigError("task_fraction must be in (0, 1)")
    n_task = int(round(n * task_fraction))
    rng = np.random.default_rng(seed)
    xp, yp, sp = _synth_rows(rng, n - n_task, d, bias_strength)
    task_bias = min(bias_strength + shift, 0.95) if shift else bias_strength
    xt, yt, st_ = _synth_rows(rng, n_task, d, task_bias, rotation)
    scaler = Standardizer.fit(np.concatenate([xp, xt]))
    tag = f"n={n},d={d},bias={bias_strength},seed={seed}"
    return (
        Dataset(scaler.apply(xp), yp, sp, f"pretrain({tag})"),
        Dataset(scaler.apply(xt), yt, st_, f"task({tag},shift={shift},rot={rotation})"),
    )


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def fractions(self):
        return (self.train_fraction, self.validation_fraction, self.test_fraction)


def _exact_counts(n, fractions):
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_indices(y, s, spec: SplitSpec):
    """Disjoint index arrays (train, validation, test) stratified on ``(y, s)``.

    Rows are shuffled within each stratum and strata are laid end to end;
    positions are then dealt to splits by a running largest-deficit rule,
    which hits the global counts exactly and each stratum to within one row.
    """
    y = np.asarray(y)
    s = np.asarray(s)
    n = len(y)
    rng = np.random.default_rng(spec.seed)
    stratum = (y > 0).astype(np.int64) * 2 + (s == 2)
    order = np.lexsort((rng.permutation(n), stratum))
    targets = _exact_counts(n, spec.fractions)
    assigned = [0, 0, 0]
    buckets = [[], [], []]
    for pos, row in enumerate(order):
        want = [targets[j] * (pos + 1) / n - assigned[j] for j in range(3)]
        j = max(range(3), key=lambda k: (want[k], -k))
        assigned[j] += 1
        buckets[j].append(row)
    return tuple(np.sort(np.asarray(b, dtype=np.intp)) for b in buckets)


def split(ds: Dataset, spec: SplitSpec):
    names = ("train", "validation", "test")
    parts = []
    for name, idx in zip(names, split_indices(ds.y, ds.s, spec)):
        part = ds.take(idx, f"{ds.name}/{name}")
        for g in (1, 2):
            if not np.any(part.s == g):
                raise StratificationError(f"{name} split has no rows with s={g}")
        parts.append(part)
    return tuple(parts)
