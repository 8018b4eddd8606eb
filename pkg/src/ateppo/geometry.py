"""Squared volume of the parallelotope spanned by per-task skill means."""
from __future__ import annotations

import numpy as np

RANK_RTOL = 1e-12


def _matrix(A):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError("expected a non-empty 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def gram_rank(A, rtol=RANK_RTOL):
    A = _matrix(A)
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def gram_volume_sq(A, rtol=RANK_RTOL):
    """``det(A A^T)`` for the rows of ``A``, computed from singular values.

    Returns exactly 0 when the rows are linearly dependent (more rows than
    columns, or a singular value below ``rtol`` times the largest).
    """
    A = _matrix(A)
    m, n = A.shape
    if m > n:
        return 0.0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= rtol * s[0]:
        return 0.0
    return float(np.prod(s * s))


def orthogonalize_rows(A):
    """Shear each row against the span of the previous ones.

    Subtracting from row ``j`` its component in ``span(v_1..v_{j-1})`` is a
    sequence of add-a-multiple-of-a-row operations, so ``det(B B^T)`` equals
    ``det(A A^T)`` and the rows of ``B`` are the successive heights.
    """
    A = _matrix(A)
    B = A.copy()
    for j in range(1, len(B)):
        base = A[:j]
        coef, *_ = np.linalg.lstsq(base.T, A[j], rcond=None)
        B[j] = A[j] - base.T @ coef
    return B


def volume_sq_by_heights(A):
    """Base-times-height product of squared row norms after :func:`orthogonalize_rows`."""
    B = orthogonalize_rows(A)
    return float(np.prod(np.sum(B * B, axis=1)))


def embedding_matrix(agent, tasks=None, scaling=None):
    """Rows are the (optionally scaled) encoder means of ``tasks``."""
    means, _ = agent.task_heads()
    if tasks is not None:
        means = means[np.asarray(tasks, dtype=int)]
    if scaling is not None:
        scaling = np.asarray(scaling, dtype=np.float64)
        if scaling.shape != (means.shape[1],) or np.any(scaling <= 0):
            raise ValueError("scaling must be a positive vector with one entry per latent dimension")
        means = means * scaling
    return means


def efficiency(agent, tasks=None, scaling=None):
    return gram_volume_sq(embedding_matrix(agent, tasks, scaling))
