"""Sinkhorn-Knopp scaling for entropy-regularized optimal transport.

Two numerically distinct paths solve the same fixed point:

* a dense kernel path, ``T = diag(u) K diag(v)`` with ``K = exp(-C / eps)``,
  fast and fine for moderate ``C / eps``;
* a log-domain path that iterates additive potentials with max-stabilized
  logsumexp reductions, for small ``eps`` where the kernel underflows.

Both count one iteration as a full row-plus-column sweep and stop when the
worst marginal violation drops below ``tol``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError
from .tensors import ProbabilityVector, as_float_array


class SinkhornResult(NamedTuple):
    coupling: np.ndarray
    iterations: int
    converged: bool
    residual: float
    residual_history: tuple


def marginal_residual(coupling, p, q) -> float:
    """Worst absolute marginal violation, max over rows and columns."""
    T = np.asarray(coupling, dtype=np.float64)
    row = np.abs(T.sum(axis=1) - np.asarray(p)).max()
    col = np.abs(T.sum(axis=0) - np.asarray(q)).max()
    return float(max(row, col))


def _as_marginal(p, name: str) -> np.ndarray:
    if isinstance(p, ProbabilityVector):
        return np.asarray(p.values)
    return ProbabilityVector(as_float_array(p, name)).values


def sinkhorn(cost, p, q, *, epsilon: float, tol: float = 1e-9,
             max_iters: int = 1000, log_domain: bool = False) -> SinkhornResult:
    """Solve ``min <C, T> - eps H(T)`` over couplings of ``(p, q)``.

    Returns the coupling together with the sweep count, a convergence flag
    (the cap may be hit without erroring), the final residual, and the
    per-sweep residual history.
    """
    C = as_float_array(cost, "cost matrix")
    if C.ndim != 2:
        raise ValidationError("cost matrix must be two dimensional")
    p = _as_marginal(p, "source marginal")
    q = _as_marginal(q, "target marginal")
    if C.shape != (p.size, q.size):
        raise ValidationError(
            f"cost shape {C.shape} does not match marginals ({p.size}, {q.size})"
        )
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon!r}")
    if max_iters < 1:
        raise ValidationError(f"max_iters must be at least 1, got {max_iters!r}")
    if log_domain:
        return _sinkhorn_log(C, p, q, epsilon, tol, max_iters)
    return _sinkhorn_dense(C, p, q, epsilon, tol, max_iters)


def _sinkhorn_dense(C, p, q, epsilon, tol, max_iters) -> SinkhornResult:
    # Shift each row and column of C to a zero minimum before exponentiating.
    # The shifts are absorbed by the scalings, so the coupling is unchanged,
    # but every row and column of K keeps at least one entry equal to one.
    shifted = C - C.min(axis=1, keepdims=True)
    shifted -= shifted.min(axis=0, keepdims=True)
    K = np.exp(-shifted / epsilon)
    v = np.ones(q.size)
    T = None
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            u = np.where(p > 0, p / (K @ v), 0.0)
            v = np.where(q > 0, q / (K.T @ u), 0.0)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalError(
                "sinkhorn scaling overflowed; increase epsilon or use the "
                "log-domain path"
            )
        T = u[:, None] * K * v[None, :]
        history.append(marginal_residual(T, p, q))
        if history[-1] < tol:
            converged = True
            break
    return SinkhornResult(T, iterations, converged, history[-1], tuple(history))


def _sinkhorn_log(C, p, q, epsilon, tol, max_iters) -> SinkhornResult:
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_q = np.log(q)
    log_K = -C / epsilon
    a = np.zeros(p.size)
    b = np.zeros(q.size)
    T = None
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        a = log_p - logsumexp(log_K + b[None, :], axis=1)
        b = log_q - logsumexp(log_K + a[:, None], axis=0)
        T = np.exp(log_K + a[:, None] + b[None, :])
        if not np.all(np.isfinite(T)):
            raise NumericalError(
                "log-domain sinkhorn produced a non-finite coupling; "
                "increase epsilon"
            )
        history.append(marginal_residual(T, p, q))
        if history[-1] < tol:
            converged = True
            break
    return SinkhornResult(T, iterations, converged, history[-1], tuple(history))


def project_to_marginals(matrix, p, q, *, tol: float = 1e-12,
                         max_iters: int = 2000) -> np.ndarray:
    """Rescale a positive matrix to the coupling polytope of ``(p, q)``.

    Classic matrix scaling: the input plays the role of the kernel. Entries
    that are exactly zero stay zero.
    """
    M = as_float_array(matrix, "matrix")
    p = _as_marginal(p, "source marginal")
    q = _as_marginal(q, "target marginal")
    if M.shape != (p.size, q.size):
        raise ValidationError(
            f"matrix shape {M.shape} does not match marginals ({p.size}, {q.size})"
        )
    if M.min() < 0:
        raise ValidationError("matrix entries must be non-negative")
    v = np.ones(q.size)
    T = M
    for _ in range(max_iters):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            u = np.where(p > 0, p / (M @ v), 0.0)
            v = np.where(q > 0, q / (M.T @ u), 0.0)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalError("matrix scaling overflowed; support too sparse")
        T = u[:, None] * M * v[None, :]
        if marginal_residual(T, p, q) < tol:
            break
    return T
