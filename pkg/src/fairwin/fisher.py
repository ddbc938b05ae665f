"""Empirical Fisher information of the classifier head, per demographic group."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, group_subset
from .errors import ConfigError, DataError, FileError, InvariantError, ShapeError
from .model import NeuralNet, per_sample_final_grads

GROUP_TAGS = ("group1", "group2", "neutralized")
FLOOR_RATIO = 1e-8


@dataclass(frozen=True)
class FisherDiagonal:
    """Row importances ``sqrt(sum_j F_ij)`` of a ``d x k`` head weight."""

    diag: np.ndarray
    group_tag: str = "neutralized"

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=np.float64)
        if diag.ndim != 1:
            raise ShapeError("importance diagonal must be 1-D")
        if not np.all(np.isfinite(diag)) or np.any(diag < 0):
            raise InvariantError("importance entries must be finite and non-negative")
        if self.group_tag not in GROUP_TAGS:
            raise ConfigError(f"unknown group tag {self.group_tag!r}")
        object.__setattr__(self, "diag", diag)

    @property
    def dim(self) -> int:
        return self.diag.shape[0]

    @classmethod
    def identity(cls, dim) -> "FisherDiagonal":
        return cls(np.ones(dim), "neutralized")

    def floored(self, ratio=FLOOR_RATIO):
        """Copy with entries raised to ``ratio * max``; also returns how many moved.

        An all-zero diagonal has no scale to floor against and is returned as is.
        """
        top = float(self.diag.max()) if self.dim else 0.0
        if top == 0.0:
            return self, 0
        floor = ratio * top
        low = self.diag < floor
        return FisherDiagonal(np.where(low, floor, self.diag), self.group_tag), int(low.sum())


def empirical_fisher(net: NeuralNet, ds: Dataset, loss_scale: float = 1.0) -> np.ndarray:
    """Mean squared per-sample cross-entropy gradient for each head weight ``W_ij``."""
    if len(ds) == 0:
        raise DataError("empirical Fisher needs at least one sample")
    gw, _ = per_sample_final_grads(net, ds.x, ds.y, scale=loss_scale)
    return np.mean(np.square(gw), axis=0)


def empirical_fisher_bias(net: NeuralNet, ds: Dataset) -> np.ndarray:
    if len(ds) == 0:
        raise DataError("empirical Fisher needs at least one sample")
    _, gb = per_sample_final_grads(net, ds.x, ds.y)
    return np.mean(np.square(gb), axis=0)


def row_importance(fisher, group_tag="group1") -> FisherDiagonal:
    fisher = np.asarray(fisher, dtype=np.float64)
    if fisher.ndim != 2:
        raise ShapeError("Fisher matrix must be 2-D")
    if np.any(fisher < 0):
        raise InvariantError("Fisher entries must be non-negative")
    return FisherDiagonal(np.sqrt(fisher.sum(axis=1)), group_tag)


def blend(i1: FisherDiagonal, i2: FisherDiagonal, alpha: float) -> FisherDiagonal:
    """``alpha * i1 + (1 - alpha) * i2`` for ``alpha`` in ``[0.5, 1)``."""
    if not 0.5 <= alpha < 1.0:
        raise ConfigError(f"alpha must lie in [0.5, 1), got {alpha}")
    if i1.dim != i2.dim:
        raise ShapeError(f"importance dims differ: {i1.dim} vs {i2.dim}")
    if alpha == 0.5:
        return neutralize(i1, i2)
    return FisherDiagonal(alpha * i1.diag + (1.0 - alpha) * i2.diag, "neutralized")


def neutralize(i1: FisherDiagonal, i2: FisherDiagonal) -> FisherDiagonal:
    if i1.dim != i2.dim:
        raise ShapeError(f"importance dims differ: {i1.dim} vs {i2.dim}")
    return FisherDiagonal(0.5 * (i1.diag + i2.diag), "neutralized")


def group_importances(net: NeuralNet, ds: Dataset):
    """Row importances of ``net``'s head for the ``s=1`` and ``s=2`` rows of ``ds``."""
    i1 = row_importance(empirical_fisher(net, group_subset(ds, 1)), "group1")
    i2 = row_importance(empirical_fisher(net, group_subset(ds, 2)), "group2")
    return i1, i2


def heatmap_rows(net1: NeuralNet, ds_group1: Dataset, ds_group2: Dataset, net2: NeuralNet | None = None):
    """Per-parameter Fisher values of the last layer for two groups.

    Pass ``net2`` to compare two separately trained models (one per group);
    by default both groups are measured on ``net1``.
    """
    net2 = net1 if net2 is None else net2
    if len(ds_group1) == 0 or len(ds_group2) == 0:
        raise DataError("both groups need samples")
    f1 = np.concatenate([empirical_fisher(net1, ds_group1).ravel(), empirical_fisher_bias(net1, ds_group1)])
    f2 = np.concatenate([empirical_fisher(net2, ds_group2).ravel(), empirical_fisher_bias(net2, ds_group2)])
    n_weights = net1.layers[-1].weight.size
    return [(idx, float(f1[idx]), float(f2[idx]), int(idx >= n_weights)) for idx in range(f1.size)]


def export_fisher_heatmap(net, ds_group1, ds_group2, out_path, net2=None, header_comment=None):
    """Write ``index,group1,group2,is_bias`` rows.

    Weights come first in row-major order (``index = i * k + j``), then the
    ``k`` biases with ``is_bias = 1``.
    """
    rows = heatmap_rows(net, ds_group1, ds_group2, net2)
    try:
        with open(out_path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "group1", "group2", "is_bias"])
            for idx, a, b, is_bias in rows:
                writer.writerow([idx, repr(a), repr(b), is_bias])
    except OSError as exc:
        raise FileError(f"cannot write {out_path}: {exc}") from exc
    return Path(out_path)
