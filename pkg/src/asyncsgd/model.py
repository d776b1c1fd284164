"""Stochastic objectives (least squares, logistic) with analytic oracles.

A Problem bundles a sparse dataset with a loss family and exposes per-sample
gradients, the empirical objective, and the second-order quantities needed
for the statistical checks: the minimizer, the Hessian at the minimizer, and
the empirical covariance of per-sample gradients there.

Normalization convention: the objective is the empirical *mean* loss, so the
Hessian H and gradient covariance Sigma both carry the 1/N factor.  This
keeps f, H, and Sigma mutually consistent (the gap statistic and sandwich
covariance are computed from these exact quantities).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

__all__ = [
    "SparseVec",
    "Dataset",
    "Problem",
    "SecondOrderInfo",
    "SolverError",
    "sample_gradient",
    "batch_gradient",
    "objective",
    "second_order_info",
]


class SolverError(RuntimeError):
    """Raised when a minimizer cannot be computed to tolerance."""


TOL_OPT_LSTSQ = 1e-10
TOL_OPT_LOGISTIC = 1e-8
LOGISTIC_MAX_ITERS = 100_000


@dataclass(frozen=True)
class SparseVec:
    """Sparse vector with strictly increasing indices, all below dim."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        val = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d and equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range for dim=%d" % self.dim)
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, x: np.ndarray) -> float:
        return float(self.values @ x[self.indices])


@dataclass
class Dataset:
    """Row-sparse dataset stored in CSR form.

    task is "regression" or "binary"; binary labels must be -1/+1.
    """

    dim: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    task: str

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.n_rows <= 0:
            raise ValueError("dataset must contain at least one row")
        if self.task not in ("regression", "binary"):
            raise ValueError("task must be 'regression' or 'binary'")
        if self.labels.shape[0] != self.n_rows:
            raise ValueError("label count does not match row count")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.dim:
                raise ValueError("feature index out of range")
        for i in range(self.n_rows):
            seg = self.indices[self.indptr[i]:self.indptr[i + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ValueError(f"row {i}: indices not strictly increasing")
        if self.task == "binary" and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("binary task requires labels in {-1, +1}")

    @property
    def n_rows(self) -> int:
        return self.indptr.shape[0] - 1

    @classmethod
    def from_rows(cls, rows, task: str) -> "Dataset":
        """Build from a list of (SparseVec, label) pairs sharing one dim."""
        if not rows:
            raise ValueError("dataset must contain at least one row")
        dim = rows[0][0].dim
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        chunks_i, chunks_v, labels = [], [], []
        for r, (vec, label) in enumerate(rows):
            if vec.dim != dim:
                raise ValueError(f"row {r}: dim {vec.dim} != {dim}")
            chunks_i.append(vec.indices)
            chunks_v.append(vec.values)
            labels.append(label)
            indptr[r + 1] = indptr[r] + vec.indices.size
        indices = np.concatenate(chunks_i) if chunks_i else np.empty(0, np.int64)
        values = np.concatenate(chunks_v) if chunks_v else np.empty(0)
        return cls(dim=dim, indptr=indptr, indices=indices, data=values,
                   labels=np.asarray(labels, dtype=np.float64), task=task)

    def row(self, i: int) -> SparseVec:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVec(self.dim, self.indices[lo:hi].copy(), self.data[lo:hi].copy())

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n_rows, self.dim))


@dataclass
class Problem:
    """Dataset plus loss family. loss is 'least_squares' or 'logistic'."""

    dataset: Dataset
    loss: str

    def __post_init__(self):
        if self.loss not in ("least_squares", "logistic"):
            raise ValueError("loss must be 'least_squares' or 'logistic'")
        if self.loss == "logistic" and self.dataset.task != "binary":
            raise ValueError("logistic loss requires a binary task")

    @property
    def dim(self) -> int:
        return self.dataset.dim

    @property
    def n_rows(self) -> int:
        return self.dataset.n_rows

    @property
    def loss_kind(self) -> int:
        return 0 if self.loss == "least_squares" else 1


@dataclass
class SecondOrderInfo:
    """Minimizer with the Hessian and gradient covariance evaluated there."""

    x_star: np.ndarray
    hessian: np.ndarray
    grad_cov: np.ndarray
    f_star: float = field(default=float("nan"))


def _check_x(problem: Problem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({problem.dim},)")
    return x


def sample_gradient(problem: Problem, x: np.ndarray, row_index: int) -> np.ndarray:
    """Gradient of the per-sample loss at x for one dataset row.

    Least squares: (<a, x> - b) a.  Logistic: -b a / (1 + exp(b <a, x>)).
    The result is dense but supported on the row's nonzero coordinates.
    """
    x = _check_x(problem, x)
    ds = problem.dataset
    if not 0 <= row_index < ds.n_rows:
        raise IndexError(f"row_index {row_index} out of range [0, {ds.n_rows})")
    lo, hi = ds.indptr[row_index], ds.indptr[row_index + 1]
    idx = ds.indices[lo:hi]
    val = ds.data[lo:hi]
    b = ds.labels[row_index]
    dot = float(val @ x[idx])
    if problem.loss == "least_squares":
        coeff = dot - b
    else:
        coeff = -b / (1.0 + np.exp(b * dot))
    g = np.zeros(problem.dim)
    g[idx] = coeff * val
    return g


def batch_gradient(problem: Problem, x: np.ndarray, row_indices) -> np.ndarray:
    """Arithmetic mean of sample gradients over a non-empty index list."""
    rows = np.asarray(row_indices, dtype=np.int64).ravel()
    if rows.size == 0:
        raise ValueError("batch must contain at least one row index")
    g = sample_gradient(problem, x, int(rows[0]))
    for i in rows[1:]:
        g += sample_gradient(problem, x, int(i))
    if rows.size > 1:
        g /= rows.size
    return g


def objective(problem: Problem, x: np.ndarray) -> float:
    """Empirical mean loss: (1/2N) sum residual^2, or mean logistic loss."""
    x = _check_x(problem, x)
    ds = problem.dataset
    margins = ds.to_scipy() @ x
    if problem.loss == "least_squares":
        r = margins - ds.labels
        return float(r @ r) / (2.0 * ds.n_rows)
    z = ds.labels * margins
    # log(1 + exp(-z)) evaluated stably on both tails
    return float(np.mean(np.logaddexp(0.0, -z)))


def _full_gradient(problem: Problem, x: np.ndarray) -> np.ndarray:
    ds = problem.dataset
    A = ds.to_scipy()
    margins = A @ x
    if problem.loss == "least_squares":
        coeff = margins - ds.labels
    else:
        z = ds.labels * margins
        coeff = -ds.labels * _sigmoid(-z)
    return (A.T @ coeff) / ds.n_rows


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _design_matrix(ds: Dataset):
    """CSR for sparse data; dense ndarray when density makes BLAS cheaper."""
    A = ds.to_scipy()
    fill = A.nnz / (ds.n_rows * ds.dim)
    if fill > 0.2 and ds.n_rows * ds.dim <= 2 * 10**8:
        return A.toarray()
    return A


def _weighted_gram(A, weights: np.ndarray) -> np.ndarray:
    """(A^T diag(weights) A) as a dense matrix, for CSR or ndarray A."""
    if isinstance(A, np.ndarray):
        return A.T @ (weights[:, None] * A)
    Aw = A.multiply(np.sqrt(weights)[:, None]).tocsr()
    return (Aw.T @ Aw).toarray()


def _solve_least_squares(problem: Problem) -> np.ndarray:
    ds = problem.dataset
    A = _design_matrix(ds)
    gram = _weighted_gram(A, np.ones(ds.n_rows))
    rhs = A.T @ ds.labels
    try:
        c, low = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError as err:
        raise SolverError(f"normal equations are singular: {err}") from err
    return scipy.linalg.cho_solve((c, low), rhs)


def _solve_logistic(problem: Problem) -> np.ndarray:
    """Full-batch descent with backtracking; stops at grad norm <= 1e-8."""
    x = np.zeros(problem.dim)
    fx = objective(problem, x)
    step = 1.0
    for _ in range(LOGISTIC_MAX_ITERS):
        g = _full_gradient(problem, x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= TOL_OPT_LOGISTIC:
            return x
        step = min(step * 2.0, 1e8)
        gg = gnorm * gnorm
        while True:
            cand = x - step * g
            fc = objective(problem, cand)
            if fc <= fx - 0.5 * step * gg or step < 1e-18:
                break
            step *= 0.5
        if step < 1e-18:
            raise SolverError("logistic line search stalled; data may be separable")
        x, fx = cand, fc
    raise SolverError(
        f"logistic solver: grad norm still above {TOL_OPT_LOGISTIC} "
        f"after {LOGISTIC_MAX_ITERS} iterations (separable data?)")


def second_order_info(problem: Problem) -> SecondOrderInfo:
    """Minimizer, Hessian at it, and empirical gradient covariance at it.

    Least squares solves the normal equations directly (rank deficiency is
    an error, not a pseudo-inverse fallback).  Logistic uses the full-batch
    descent above.  H and Sigma use the per-row weights at x_star:

        H     = (1/N) sum  w_i  a_i a_i^T
        Sigma = (1/N) sum  c_i^2 a_i a_i^T   (c_i = per-sample grad coefficient)
    """
    ds = problem.dataset
    A = _design_matrix(ds)
    if problem.loss == "least_squares":
        x_star = _solve_least_squares(problem)
        resid = A @ x_star - ds.labels
        hessian = _weighted_gram(A, np.ones(ds.n_rows)) / ds.n_rows
        coeff = resid
    else:
        x_star = _solve_logistic(problem)
        margins = A @ x_star
        z = ds.labels * margins
        s = _sigmoid(z)
        coeff = -ds.labels * _sigmoid(-z)
        hessian = _weighted_gram(A, s * (1.0 - s)) / ds.n_rows
    grad_cov = _weighted_gram(A, coeff * coeff) / ds.n_rows
    hessian = (hessian + hessian.T) / 2.0
    grad_cov = (grad_cov + grad_cov.T) / 2.0
    return SecondOrderInfo(
        x_star=x_star, hessian=hessian, grad_cov=grad_cov,
        f_star=objective(problem, x_star))
