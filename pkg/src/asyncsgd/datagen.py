"""Synthetic regression data, quantile one-hot binning, and svmlight I/O.

Reproducibility contract: generation is driven by a counter-based Philox
stream split per row.  Substream 0 draws the planted coefficient vector
u_star, substream i+1 draws row i (first the kept coordinate indices, then
their Gaussian values, then the label noise).  Identical SynthSpec values
therefore produce bit-identical datasets on any platform, independent of
chunking or thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .model import Dataset, SparseVec

__all__ = [
    "SynthSpec",
    "gen_linreg",
    "quantile_bin_encode",
    "load_svmlight",
    "save_svmlight",
    "SvmlightFormatError",
]


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic sparse linear-regression sample.

    density is the nonzero fraction per row; each row keeps exactly
    s = max(1, round(density * dim)) coordinates of an i.i.d. standard
    Gaussian vector, chosen uniformly without replacement.
    """

    n_rows: int
    dim: int
    density: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows <= 0 or self.dim <= 0:
            raise ValueError("n_rows and dim must be positive")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if self.noise_sd < 0.0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def nnz_per_row(self) -> int:
        return max(1, round(self.density * self.dim))


def gen_linreg(spec: SynthSpec):
    """Draw (Dataset, u_star) with labels b_i = <a_i, u_star> + noise_sd * eps_i.

    a_i keeps nnz_per_row coordinates of a standard Gaussian vector (the
    rest zeroed); eps_i is standard Gaussian.  Drawing only the kept
    coordinates is distributionally identical to drawing all of them and
    zeroing, and is what keeps sparse generation cheap.
    """
    root = SeedSequence(spec.seed)
    streams = root.spawn(spec.n_rows + 1)
    u_star = Generator(Philox(streams[0])).standard_normal(spec.dim)

    s = spec.nnz_per_row
    n, d = spec.n_rows, spec.dim
    indptr = np.arange(0, (n + 1) * s, s, dtype=np.int64)
    indices = np.empty(n * s, dtype=np.int64)
    values = np.empty(n * s, dtype=np.float64)
    labels = np.empty(n, dtype=np.float64)

    for i in range(n):
        rng = Generator(Philox(streams[i + 1]))
        if s == d:
            idx = np.arange(d, dtype=np.int64)
        else:
            idx = np.sort(rng.choice(d, size=s, replace=False).astype(np.int64))
        val = rng.standard_normal(s)
        eps = rng.standard_normal()
        lo = i * s
        indices[lo:lo + s] = idx
        values[lo:lo + s] = val
        labels[i] = val @ u_star[idx] + spec.noise_sd * eps

    ds = Dataset(dim=d, indptr=indptr, indices=indices, data=values,
                 labels=labels, task="regression")
    return ds, u_star


def quantile_bin_encode(raw: np.ndarray, bins: int):
    """One-hot encode each column by its empirical-quantile bin.

    Bin edges for a column are its k/bins nearest-rank quantiles
    (right-closed: a value equal to an edge falls in the lower bin).
    Output dim is bins * d0 with original column c, bin j mapping to index
    c * bins + j; every encoded row has exactly d0 nonzero entries.

    Constant columns collapse to bin 0; each such column is reported in the
    returned warnings list (and via warnings.warn).

    Returns (rows, warnings) where rows is a list of SparseVec.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("raw must be a 2-d matrix")
    n, d0 = raw.shape
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n < bins:
        raise ValueError("need at least `bins` rows to estimate quantiles")

    bin_of = np.empty((n, d0), dtype=np.int64)
    warn_cols = []
    for c in range(d0):
        col = raw[:, c]
        srt = np.sort(col)
        # nearest-rank k/bins quantiles as right-closed upper edges
        ranks = [math.ceil(k * n / bins) - 1 for k in range(1, bins)]
        edges = srt[ranks]
        if srt[0] == srt[-1]:
            warn_cols.append(c)
            bin_of[:, c] = 0
            continue
        # value <= edge_j  =>  bin <= j  (ties to the lower bin)
        bin_of[:, c] = np.searchsorted(edges, col, side="left")

    if warn_cols:
        warnings.warn(f"constant columns collapsed to bin 0: {warn_cols}")

    dim = bins * d0
    base = np.arange(d0, dtype=np.int64) * bins
    ones = np.ones(d0)
    rows = [SparseVec(dim, base + bin_of[i], ones.copy()) for i in range(n)]
    return rows, warn_cols


class SvmlightFormatError(ValueError):
    """Malformed svmlight/libsvm input; message carries the line number."""


def load_svmlight(path, *, force_dim: int | None = None,
                  zero_one_labels: bool = False) -> Dataset:
    """Read an svmlight/libsvm text file ("label idx:val ...", 1-based indices).

    Indices are converted to 0-based.  dim defaults to the largest index
    seen unless force_dim overrides it.  The task is 'binary' when every
    label is in {-1, +1}; zero_one_labels remaps 0/1 labels to -1/+1 first.
    """
    labels = []
    row_idx = []
    row_val = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError as err:
                raise SvmlightFormatError(
                    f"line {lineno}: bad label {parts[0]!r}") from err
            idx = np.empty(len(parts) - 1, dtype=np.int64)
            val = np.empty(len(parts) - 1, dtype=np.float64)
            prev = 0
            for j, tok in enumerate(parts[1:]):
                try:
                    k, v = tok.split(":", 1)
                    k = int(k)
                    val[j] = float(v)
                except ValueError as err:
                    raise SvmlightFormatError(
                        f"line {lineno}: bad feature entry {tok!r}") from err
                if k <= prev:
                    raise SvmlightFormatError(
                        f"line {lineno}: indices must be ascending and 1-based "
                        f"(saw {k} after {prev})")
                prev = k
                idx[j] = k - 1
            max_index = max(max_index, prev)
            labels.append(label)
            row_idx.append(idx)
            row_val.append(val)

    if not labels:
        raise SvmlightFormatError("file contains no data rows")

    dim = force_dim if force_dim is not None else max_index
    if dim < max_index:
        raise ValueError(f"force_dim={dim} below largest feature index {max_index}")
    if dim == 0:
        raise SvmlightFormatError("no features present and no force_dim given")

    y = np.asarray(labels, dtype=np.float64)
    if zero_one_labels:
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("zero_one_labels requires labels in {0, 1}")
        y = 2.0 * y - 1.0
    task = "binary" if np.all(np.isin(y, (-1.0, 1.0))) else "regression"

    indptr = np.zeros(len(labels) + 1, dtype=np.int64)
    for i, idx in enumerate(row_idx):
        indptr[i + 1] = indptr[i] + idx.size
    indices = (np.concatenate(row_idx) if row_idx else np.empty(0, np.int64))
    data = (np.concatenate(row_val) if row_val else np.empty(0))
    return Dataset(dim=dim, indptr=indptr, indices=indices, data=data,
                   labels=y, task=task)


def save_svmlight(dataset: Dataset, path) -> None:
    """Write a Dataset in svmlight text form (1-based indices, %.17g values)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dataset.n_rows):
            lo, hi = dataset.indptr[i], dataset.indptr[i + 1]
            feats = " ".join(
                "%d:%.17g" % (j + 1, v)
                for j, v in zip(dataset.indices[lo:hi], dataset.data[lo:hi]))
            label = "%.17g" % dataset.labels[i]
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")
