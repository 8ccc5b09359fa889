"""Feature-to-bit-string encoding and nested partition construction.

Real-valued features are rescaled into [0, 1] per dimension (optionally
through a piecewise-linear ECDF map first), expanded into their first p
binary digits, and the d*p bits are laid out by a fixed bit order. Sorting
the resulting bit strings lexically and counting distinct prefixes yields
the nested partition columns consumed by the SROS kernel machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ECDF_PERCENTILES = np.arange(0, 101, 10)


def default_precision(n_dims):
    """Heuristic bits-per-dimension: min(8, floor(150 / d) + 1)."""
    return min(8, 150 // int(n_dims) + 1)


def interleaved_bit_order(n_dims, precision):
    """Default bit order: bit 1 of every dimension, then bit 2, and so on.

    Returns a permutation ``perm`` such that output bit k is base bit
    ``perm[k]``, where the base layout is dimension-major (all p bits of
    dimension 0, then dimension 1, ...).
    """
    return np.arange(n_dims * precision).reshape(n_dims, precision).T.ravel()


@dataclass(frozen=True)
class EncodingConfig:
    """Fitted per-dimension rescaling plus the bit layout.

    ``lo``/``hi`` are the raw training extents used both for rescaling and
    for out-of-box flagging. When ``ecdf_knots`` is set (shape d x 11), each
    dimension is first mapped through the piecewise-linear function sending
    its k-th training percentile to k/100, and rescaling is the identity on
    the resulting [0, 1] values.
    """

    n_dims: int
    precision: int
    bit_order: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    ecdf_knots: np.ndarray | None = None
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(
                self, "degenerate", np.zeros(self.n_dims, dtype=bool)
            )
        q = self.n_dims * self.precision
        order = np.asarray(self.bit_order)
        if sorted(order.tolist()) != list(range(q)):
            raise ValueError("bit_order is not a permutation of the q bits")

    @property
    def n_bits(self):
        return self.n_dims * self.precision


def fit_encoding(X, precision=None, use_ecdf=False, bit_order=None):
    """Fit the rescaling box (and optional ECDF knots) on training features."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("X must be a nonempty 2-d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    n, d = X.shape
    if precision is None:
        precision = default_precision(d)
    precision = int(precision)
    if not 1 <= precision <= 32:
        raise ValueError("precision must be in [1, 32]")

    lo = X.min(axis=0)
    hi = X.max(axis=0)
    degenerate = hi <= lo
    knots = None
    if use_ecdf:
        knots = np.percentile(X, ECDF_PERCENTILES, axis=0).T  # (d, 11)
    if bit_order is None:
        bit_order = interleaved_bit_order(d, precision)
    return EncodingConfig(
        n_dims=d,
        precision=precision,
        bit_order=np.asarray(bit_order),
        lo=lo,
        hi=hi,
        ecdf_knots=knots,
        degenerate=degenerate,
    )


def _rescale(X, cfg):
    """Map raw features to [0, 1]^d (values outside are clipped later)."""
    if cfg.ecdf_knots is not None:
        targets = ECDF_PERCENTILES / 100.0
        V = np.empty_like(X)
        for j in range(cfg.n_dims):
            V[:, j] = np.interp(X[:, j], cfg.ecdf_knots[j], targets)
    else:
        span = np.where(cfg.degenerate, 1.0, cfg.hi - cfg.lo)
        V = (X - cfg.lo) / span
    V[:, cfg.degenerate] = 0.5
    return V


def encode(X, cfg):
    """Encode features into bit strings.

    Returns (bits, out_of_box): an n x q uint8 matrix laid out by
    ``cfg.bit_order``, and a flag per row set when any coordinate falls
    strictly outside the training extents. Flagged rows are still encoded
    from the clipped value; downstream zeroes their cross-kernel row.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != cfg.n_dims:
        raise ValueError(
            f"expected {cfg.n_dims} feature columns, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    n, d = X.shape
    p = cfg.precision

    below = X < cfg.lo
    above = X > cfg.hi
    out_of_box = np.any(below | above, axis=1)

    V = np.clip(_rescale(X, cfg), 0.0, 1.0)
    # First p binary digits of each coordinate; v = 1.0 clamps to all ones.
    levels = np.minimum(np.floor(V * 2.0**p).astype(np.int64), 2**p - 1)
    shifts = p - 1 - np.arange(p)
    base = ((levels[:, :, None] >> shifts) & 1).astype(np.uint8)
    base = base.reshape(n, d * p)
    return base[:, cfg.bit_order], out_of_box


def build_partitions(bits):
    """Nested partitions from bit strings, via lexical sort.

    Column i assigns two rows the same id iff their first i+1 bits agree;
    ids count distinct prefixes in sorted order, so each column refines the
    previous one by construction. Returns (P, order) where ``order`` is the
    sort permutation (P in sorted order is P[order]).
    """
    bits = np.asarray(bits)
    n, q = bits.shape
    order = np.lexsort(bits.T[::-1])
    sb = bits[order]
    P_sorted = np.ones((n, q), dtype=np.int64)
    if n > 1:
        changed = np.logical_or.accumulate(sb[1:] != sb[:-1], axis=1)
        P_sorted[1:] += np.cumsum(changed, axis=0)
    P = np.empty_like(P_sorted)
    P[order] = P_sorted
    return P, order


def uniqueness_stats(X, bits):
    """Percentage of unique feature rows and unique bit strings."""
    X = np.asarray(X)
    bits = np.asarray(bits)
    if X.shape[0] != bits.shape[0]:
        raise ValueError("X and bits must have the same number of rows")
    n = X.shape[0]
    pct_rows = 100.0 * len(np.unique(X, axis=0)) / n
    pct_bits = 100.0 * len(np.unique(bits, axis=0)) / n
    return pct_rows, pct_bits
