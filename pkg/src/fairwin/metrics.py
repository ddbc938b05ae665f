"""Group fairness gaps, weighted F1, and PCA of representations.

Rates, gaps and F1 are built from integer counts with exact rational
arithmetic and rounded to float once, so they are correctly rounded.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import linalg
from .data import Dataset
from .errors import ConfigError, DegenerateCellError, GroupEmptyError, ShapeError
from .model import NeuralNet, forward


def predict_logits(logits) -> np.ndarray:
    """Arg-max over two logits as ``{-1, +1}``; ties go to ``-1``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected (N, 2) logits, got {logits.shape}")
    return np.where(logits[:, 1] > logits[:, 0], 1, -1)


def predict(net: NeuralNet, data) -> np.ndarray:
    x = data.x if isinstance(data, Dataset) else data
    logits, _ = forward(net, x)
    return predict_logits(logits)


def _positive_rate(preds, mask) -> Fraction:
    return Fraction(int(np.count_nonzero(preds[mask] == 1)), int(np.count_nonzero(mask)))


def demographic_parity_gap(preds, ds: Dataset) -> float:
    preds = np.asarray(preds)
    for g in (1, 2):
        if not np.any(ds.s == g):
            raise GroupEmptyError(f"no samples with s={g}")
    return float(abs(_positive_rate(preds, ds.s == 1) - _positive_rate(preds, ds.s == 2)))


def equalized_odds_gap(preds, ds: Dataset):
    """``(delta_tpr, delta_fpr, delta_eo)`` with ``delta_eo`` their sum."""
    preds = np.asarray(preds)
    gaps = []
    for label in (1, -1):
        rates = []
        for g in (1, 2):
            cell = (ds.s == g) & (ds.y == label)
            if not np.any(cell):
                raise DegenerateCellError(g, label)
            rates.append(_positive_rate(preds, cell))
        gaps.append(abs(rates[0] - rates[1]))
    tpr, fpr = float(gaps[0]), float(gaps[1])
    return tpr, fpr, tpr + fpr  # float sum keeps delta_eo == delta_tpr + delta_fpr exact


def weighted_f1_err(preds, ds_or_y):
    """Support-weighted F1 over both classes and ``100 * (1 - F1)``.

    A class whose precision and recall are both zero, or undefined because
    it never occurs, scores F1 = 0.
    """
    y = np.asarray(ds_or_y.y if isinstance(ds_or_y, Dataset) else ds_or_y)
    preds = np.asarray(preds)
    if y.size == 0:
        raise ConfigError("weighted F1 of an empty set")
    total = Fraction(0)
    for c in (-1, 1):
        tp = int(np.count_nonzero((preds == c) & (y == c)))
        support = int(np.count_nonzero(y == c))
        predicted = int(np.count_nonzero(preds == c))
        if support + predicted:
            total += support * Fraction(2 * tp, support + predicted)
    f1w = total / y.size
    return float(f1w), float(100 * (1 - f1w))


@dataclass(frozen=True)
class FairnessReport:
    err_percent: float
    f1_weighted: float
    delta_dp: float
    delta_tpr: float
    delta_fpr: float
    delta_eo: float
    group_counts: dict = field(default_factory=dict)  # "s=1,y=+1,yhat=-1" -> count

    def bias(self, metric: str) -> float:
        return {"EO": self.delta_eo, "DP": self.delta_dp}[metric]

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload) -> "FairnessReport":
        return cls(**payload)


def contingency(preds, ds: Dataset) -> dict:
    counts = {}
    for g in (1, 2):
        for label in (1, -1):
            for yhat in (1, -1):
                key = f"s={g},y={label:+d},yhat={yhat:+d}"
                counts[key] = int(np.count_nonzero((ds.s == g) & (ds.y == label) & (preds == yhat)))
    return counts


def evaluate(preds_or_net, ds: Dataset) -> FairnessReport:
    preds = predict(preds_or_net, ds) if isinstance(preds_or_net, NeuralNet) else np.asarray(preds_or_net)
    f1w, err = weighted_f1_err(preds, ds)
    tpr, fpr, eo = equalized_odds_gap(preds, ds)
    return FairnessReport(
        err_percent=err,
        f1_weighted=f1w,
        delta_dp=demographic_parity_gap(preds, ds),
        delta_tpr=tpr,
        delta_fpr=fpr,
        delta_eo=eo,
        group_counts=contingency(preds, ds),
    )


def pca_project(representations, dims: int = 2):
    """Center, then project onto the top ``dims`` principal directions.

    Returns ``(projection, component_variance)``; the variance of each
    projected column is ``s_i**2 / (N - 1)``.
    """
    h = linalg.as_matrix(representations, "representations")
    if not 1 <= dims <= h.shape[1]:
        raise ConfigError(f"dims must lie in [1, {h.shape[1]}], got {dims}")
    centered = h - h.mean(axis=0)
    res = linalg.svd(centered)
    k = min(dims, res.rank)
    proj = centered @ res.v[:, :k]
    if k < dims:
        proj = np.hstack([proj, np.zeros((h.shape[0], dims - k))])
    var = np.zeros(dims)
    if h.shape[0] > 1:
        var[:k] = np.square(res.s[:k]) / (h.shape[0] - 1)
    return proj, var
