"""Importance-weighted truncated SVD of a head weight and the two-layer replacement.

For row weights ``D = diag(imp)`` the rank-``r`` minimiser of
``||D W - D A B||_F`` is read off the SVD ``D W = U S V^T``:
``A = D^-1 U_r S_r`` and ``B = V_r^T``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import NumericalError, RankError, ShapeError
from .fisher import FisherDiagonal
from .model import DenseLayer

log = logging.getLogger(__name__)

DEFAULT_ENERGY = 0.95


@dataclass(frozen=True)
class LowRankHead:
    a: np.ndarray  # (d, r)
    b_factor: np.ndarray  # (r, k)
    bias: np.ndarray  # (k,)
    rank: int
    floored_rows: int = 0

    def __post_init__(self):
        d, r = self.a.shape
        if self.b_factor.shape[0] != r or r != self.rank:
            raise ShapeError(f"factor shapes {self.a.shape} and {self.b_factor.shape} disagree with rank {self.rank}")
        if not 1 <= r <= min(d, self.b_factor.shape[1]):
            raise RankError(f"rank {r} outside [1, {min(d, self.b_factor.shape[1])}]")

    def product(self) -> np.ndarray:
        return self.a @ self.b_factor

    @property
    def n_params(self) -> int:
        return self.a.size + self.b_factor.size + self.bias.size


def _importance(imp, d):
    if imp is None:
        return FisherDiagonal.identity(d), 0
    if not isinstance(imp, FisherDiagonal):
        imp = FisherDiagonal(np.asarray(imp, dtype=np.float64))
    if imp.dim != d:
        raise ShapeError(f"importance has {imp.dim} entries, weight has {d} rows")
    imp, n_floored = imp.floored()
    if not np.any(imp.diag > 0):
        raise NumericalError("importance diagonal is identically zero")
    if n_floored:
        log.info("floored %d of %d importance entries at 1e-8 * max", n_floored, d)
    return imp, n_floored


def weighted_svd(w, imp=None) -> linalg.SvdResult:
    w = linalg.as_matrix(w, "weight")
    imp, _ = _importance(imp, w.shape[0])
    return linalg.svd(linalg.scale_rows(imp.diag, w))


def weighted_factorize(w, bias, imp, r) -> LowRankHead:
    """Rank-``r`` factors of ``w`` under row importances ``imp``.

    ``imp=None`` gives the plain truncated SVD. Entries of ``imp`` below
    ``1e-8 * max(imp)`` are raised to that floor before inversion.
    """
    w = linalg.as_matrix(w, "weight")
    d, k = w.shape
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (k,):
        raise ShapeError(f"bias has shape {bias.shape}, expected ({k},)")
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= min(d, k):
        raise RankError(f"rank {r} outside [1, {min(d, k)}]")
    imp, n_floored = _importance(imp, d)
    res = linalg.truncate(linalg.svd(linalg.scale_rows(imp.diag, w)), int(r))
    a = (res.u * res.s) / imp.diag[:, None]
    return LowRankHead(a=a, b_factor=res.v.T.copy(), bias=bias.copy(), rank=int(r), floored_rows=n_floored)


def max_compressive_rank(d: int, k: int) -> int:
    """Largest ``r`` with ``d*r + r*k + k < d*k + k``, but never below 1."""
    return max(1, -(-d * k // (d + k)) - 1)


def select_rank(w, imp=None, energy=DEFAULT_ENERGY, compress=True) -> int:
    """Smallest rank whose weighted singular values keep ``energy`` of the total.

    With ``compress`` the result is capped at :func:`max_compressive_rank`
    so the factorized head never has more parameters than the dense one.
    """
    if not 0.0 < energy <= 1.0:
        raise RankError(f"energy threshold must lie in (0, 1], got {energy}")
    s2 = np.square(weighted_svd(w, imp).s)
    total = s2.sum()
    if total == 0.0:
        r = 1
    else:
        frac = np.cumsum(s2) / total
        r = int(np.searchsorted(frac, energy - 1e-12) + 1)
    if compress:
        r = min(r, max_compressive_rank(*np.shape(w)))
    return r


def build_replacement_layers(head: LowRankHead):
    """``(l1, l2)``: ``d -> r`` without bias, then ``r -> k`` carrying the bias."""
    l1 = DenseLayer(head.a.copy(), np.zeros(head.rank), activation="identity", frozen=False, use_bias=False)
    l2 = DenseLayer(head.b_factor.copy(), head.bias.copy(), activation="identity", frozen=False, use_bias=True)
    return l1, l2


@dataclass(frozen=True)
class ReportRow:
    rank: int
    weighted_error: float
    unweighted_error: float
    energy: float

    def as_dict(self) -> dict:
        return {"rank": self.rank, "weighted_error": self.weighted_error,
                "unweighted_error": self.unweighted_error, "energy": self.energy}


def reconstruction_report(w, imp=None, ranks=None):
    """Errors and retained energy for each candidate rank (default: all)."""
    w = linalg.as_matrix(w, "weight")
    fd, _ = _importance(imp, w.shape[0])
    weighted = linalg.scale_rows(fd.diag, w)
    full = linalg.svd(weighted)
    s2 = np.square(full.s)
    total = s2.sum()
    ranks = range(1, full.rank + 1) if ranks is None else ranks
    rows = []
    for r in ranks:
        head = weighted_factorize(w, np.zeros(w.shape[1]), fd, int(r))
        approx = head.product()
        rows.append(ReportRow(
            rank=int(r),
            weighted_error=linalg.frobenius(weighted - linalg.scale_rows(fd.diag, approx)),
            unweighted_error=linalg.frobenius(w - approx),
            energy=float(s2[:r].sum() / total) if total > 0 else 1.0,
        ))
    return rows
