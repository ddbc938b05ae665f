"""Pure-Python one-sided Jacobi sweeps; the fallback when the extension is absent."""
import math

import numpy as np


def jacobi_sweeps(cols, vcols, tol, max_sweeps, floor=0.0):
    """Orthogonalize the rows of ``cols`` in place by plane rotations.

    ``cols`` is (n, m): row ``j`` holds column ``j`` of the working matrix.
    ``vcols`` (n, n) accumulates the same rotations. Returns the number of
    sweeps performed, or ``-1`` when ``max_sweeps`` ran out first.
    Pairs where either squared column norm is at most ``floor`` are
    skipped; such columns are rounding noise and never settle.
    """
    n = cols.shape[0]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            cp = cols[p]
            for q in range(p + 1, n):
                cq = cols[q]
                alpha = float(cp @ cp)
                beta = float(cq @ cq)
                gamma = float(cp @ cq)
                if gamma == 0.0 or min(alpha, beta) <= floor or abs(gamma) <= tol * math.sqrt(alpha) * math.sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * cp - s * cq
                cols[q] = s * cp + c * cq
                cols[p] = new_p
                cp = cols[p]
                vp, vq = vcols[p].copy(), vcols[q]
                vcols[p] = c * vp - s * vq
                vcols[q] = s * vp + c * vq
        if not rotated:
            return sweep
    return -1
