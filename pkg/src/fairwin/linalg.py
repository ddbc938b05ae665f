"""Dense linear algebra on float64 numpy arrays, with a Jacobi SVD.

Matrices are plain 2-D ``numpy.ndarray`` objects; diagonal matrices are
carried as their 1-D diagonal. Every public function returns fresh arrays
and never mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, NumericalError, RankError, ShapeError

SWEEP_TOL = 1e-12
MAX_SWEEPS = 100


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} has non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matmul overflowed")
    return out


def scale_rows(d, m) -> np.ndarray:
    """Left-multiply ``m`` by ``diag(d)``."""
    d = np.asarray(getattr(d, "diag", d), dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if d.ndim != 1 or m.ndim != 2 or d.shape[0] != m.shape[0]:
        raise ShapeError(f"diagonal of length {d.shape} cannot scale rows of {m.shape}")
    return d[:, None] * m


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(s) @ v.T`` with ``s`` descending."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    sweeps: int = 0

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _complete_orthonormal(u, bad):
    """Replace columns flagged in ``bad`` with unit vectors orthogonal to the rest."""
    m = u.shape[0]
    good = [j for j in range(u.shape[1]) if not bad[j]]
    basis = [u[:, j] for j in good]
    for j in np.flatnonzero(bad):
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            # two Gram-Schmidt passes keep the result orthogonal to 1e-15
            for _ in range(2):
                for b in basis:
                    cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-6:
                u[:, j] = cand / norm
                basis.append(u[:, j])
                break
    return u


def svd(m, tol=SWEEP_TOL, max_sweeps=MAX_SWEEPS) -> SvdResult:
    """One-sided Jacobi SVD.

    Works on the taller orientation (transposing wide inputs), orders
    singular values descending with ties kept in column order, and makes
    the largest-magnitude entry of each ``u`` column non-negative.

    Raises :class:`ConvergenceError` if ``max_sweeps`` sweeps do not
    bring every column pair below ``tol`` relative non-orthogonality.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        raise ShapeError(f"svd needs a non-empty matrix, got {a.shape}")
    wide = rows < cols
    if wide:
        a = a.T
    n = a.shape[1]

    # unit max-abs scaling keeps squared norms clear of under/overflow
    peak = float(np.max(np.abs(a)))
    work = np.ascontiguousarray(a.T) / (peak if peak > 0 else 1.0)
    vwork = np.eye(n)
    noise = a.shape[0] * np.finfo(float).eps * np.linalg.norm(work)
    sweeps = _kernels.jacobi_sweeps(work, vwork, tol, max_sweeps, noise * noise)
    if sweeps < 0:
        raise ConvergenceError("Jacobi SVD did not converge", max_sweeps)

    s = np.sqrt(np.einsum("ij,ij->i", work, work))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[order]
    v = vwork[order].T

    # same cut as the kernel's skip floor: anything it left alone counts as zero
    bad = s <= max(noise, np.finfo(float).tiny)
    u = np.zeros((a.shape[0], n))
    for j in range(n):
        if not bad[j]:
            u[:, j] = work[j] / s[j]
    s[bad] = 0.0
    s = s * peak
    if bad.any():
        u = _complete_orthonormal(u, bad)

    if wide:
        u, v = v, u

    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return SvdResult(u=u, s=s, v=v, sweeps=sweeps)


def truncate(res: SvdResult, r: int) -> SvdResult:
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= res.rank:
        raise RankError(f"rank {r} outside [1, {res.rank}]")
    return SvdResult(u=res.u[:, :r].copy(), s=res.s[:r].copy(), v=res.v[:, :r].copy(), sweeps=res.sweeps)


def frobenius(m) -> float:
    return float(np.sqrt(np.sum(np.square(m))))
