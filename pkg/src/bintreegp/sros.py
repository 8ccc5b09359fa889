"""Sparse rank one sum (SROS) linear operators.

An SROS operator is a sum, over columns i, of block matrices built from a
partition column p (integer cell ids) and value columns u, u':

    L(p, p', u, u')[a, b] = [p_a == p'_b] * u_a * u'_b

Symmetric operators are stored as L(P, C, U) = L(P, P, U, C * U) with C
constant within each partition cell. When the partition columns are nested
(each column refines the previous one), I + L(P, C, U) can be inverted in
O(n q^2) time by Sherman-Morrison updates applied cell by cell, and in
O(n q) time when all columns of U coincide.

All functions here are pure and operate on plain numpy arrays. Partition
ids are positive integers; they need not be contiguous (scatter buffers are
sized by the largest id). ``to_dense`` / ``to_dense_symmetric`` materialize
operators for verification at small n and are not used on any fast path.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class NotNestedError(ValueError):
    """Partition columns are not ordered coarse-to-fine."""


class CellConstantError(ValueError):
    """A value array is not constant within the cells of its partition."""


class IndefiniteOperatorError(ArithmeticError):
    """A Sherman-Morrison pivot 1 + z_l fell below the positive-definiteness
    guard; the running matrix is singular or indefinite."""

    def __init__(self, column, cell, pivot):
        self.column = column
        self.cell = cell
        self.pivot = pivot
        super().__init__(
            f"non-positive pivot 1 + z = {pivot:.3e} at column {column}, "
            f"cell {cell}"
        )


class InverseResult(NamedTuple):
    """Arrays (C', U') with I + L(P, C', U') = (I + L(P, C, U))^-1, plus
    logdet = log|I + L(P, C, U)|."""

    Cp: np.ndarray
    Up: np.ndarray
    logdet: float


def canonicalize(p):
    """Relabel partition ids to first-occurrence order, starting at 1."""
    p = np.asarray(p)
    _, first, inverse = np.unique(p, return_index=True, return_inverse=True)
    # np.unique sorts by value; re-rank cells by first occurrence instead.
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, len(first) + 1)
    return rank[inverse]


def refines(p_fine, p_coarse):
    """True iff equal ids in p_fine imply equal ids in p_coarse."""
    p_fine = np.asarray(p_fine)
    p_coarse = np.asarray(p_coarse)
    if p_fine.shape != p_coarse.shape:
        raise ValueError("partitions must have equal length")
    order = np.argsort(p_fine, kind="stable")
    same_fine = p_fine[order][1:] == p_fine[order][:-1]
    same_coarse = p_coarse[order][1:] == p_coarse[order][:-1]
    return bool(np.all(same_coarse[same_fine]))


def check_nested(P):
    """Raise NotNestedError unless column i+1 refines column i for all i."""
    P = np.asarray(P)
    for i in range(P.shape[1] - 1):
        if not refines(P[:, i + 1], P[:, i]):
            raise NotNestedError(
                f"column {i + 1} does not refine column {i}"
            )


def _check_cell_constant(p, c):
    order = np.argsort(p, kind="stable")
    same = p[order][1:] == p[order][:-1]
    if not np.all(c[order][1:][same] == c[order][:-1][same]):
        raise CellConstantError("values differ within a partition cell")


def lin_transform(P, Pp, U, Up, x):
    """Compute y = L(P, P', U, U') x in O((n + m) q) time.

    P, U have n rows (output side); Pp, Up have m rows (input side, matching
    x). Per column, u'_j x_j is scatter-added into a per-cell accumulator
    which is then gathered through p.
    """
    P = np.asarray(P)
    Pp = np.asarray(Pp)
    U = np.asarray(U, dtype=np.float64)
    Up = np.asarray(Up, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if P.shape != U.shape or Pp.shape != Up.shape:
        raise ValueError("partition and value arrays must have equal shapes")
    if P.shape[1] != Pp.shape[1]:
        raise ValueError("P and P' must have the same number of columns")
    if x.shape != (Pp.shape[0],):
        raise ValueError(
            f"x has length {x.shape[0]}, expected {Pp.shape[0]}"
        )
    if P.size and P.min() < 0 or Pp.size and Pp.min() < 0:
        raise ValueError("partition ids must be nonnegative")

    n, q = P.shape
    y = np.zeros(n)
    for i in range(q):
        p = P[:, i]
        pp = Pp[:, i]
        r = int(max(p.max(initial=0), pp.max(initial=0))) + 1
        z = np.bincount(pp, weights=Up[:, i] * x, minlength=r)
        y += z[p] * U[:, i]
    return y


def invert(P, C, U, check=True, pd_eps=1e-12):
    """Invert I + L(P, C, U) for nested P, in O(n q^2) time.

    Iterates columns fine to coarse; each column applies one Sherman-Morrison
    update per partition cell and folds the matrix determinant lemma factor
    log(1 + z_l) into the running log-determinant. Columns coarser than the
    current one are corrected in place.

    ``check`` validates nestedness and cell-constancy of C up front; pass
    False on trusted inputs (construction already guarantees both).
    """
    P = np.asarray(P)
    C = np.asarray(C, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if P.shape != C.shape or P.shape != U.shape:
        raise ValueError("P, C, U must have equal shapes")
    if check:
        check_nested(P)
        for i in range(P.shape[1]):
            _check_cell_constant(P[:, i], C[:, i])

    n, q = P.shape
    Cp = np.zeros((n, q))
    Up = U.copy()
    logdet = 0.0
    for i in range(q - 1, -1, -1):
        p = P[:, i]
        r = int(p.max(initial=0)) + 1
        c = C[:, i]
        up = Up[:, i]
        z = np.bincount(p, weights=c * up * U[:, i], minlength=r)
        pivot = 1.0 + z[p]
        if np.any(pivot <= pd_eps):
            j = int(np.argmax(pivot <= pd_eps))
            raise IndefiniteOperatorError(i, int(p[j]), float(pivot[j]))
        Cp[:, i] = -c / pivot
        logdet += float(np.sum(np.log1p(z)))
        if i > 0:
            # y[l, k] = sum_{j: p_j = l} up_j U[j, k], for coarser columns k
            scale = Cp[:, i] * up
            for k in range(i):
                yk = np.bincount(p, weights=up * U[:, k], minlength=r)
                Up[:, k] += scale * yk[p]
    return InverseResult(Cp, Up, logdet)


def invert_shared_u(P, C, u, check=True, pd_eps=1e-12):
    """Invert I + L(P, C, u 1^T) for nested P, in O(n q) time.

    Same contract as ``invert`` with all columns of U equal to u. Because
    every coarser column would receive the identical correction at each step,
    only the next column is initialized from the current one and corrected
    once, collapsing the inner loop.
    """
    P = np.asarray(P)
    C = np.asarray(C, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if P.shape != C.shape:
        raise ValueError("P and C must have equal shapes")
    if u.shape != (P.shape[0],):
        raise ValueError("u must have one entry per row of P")
    if check:
        check_nested(P)
        for i in range(P.shape[1]):
            _check_cell_constant(P[:, i], C[:, i])

    n, q = P.shape
    Cp = np.zeros((n, q))
    Up = np.tile(u[:, None], (1, q))
    logdet = 0.0
    for i in range(q - 1, -1, -1):
        p = P[:, i]
        r = int(p.max(initial=0)) + 1
        c = C[:, i]
        up = Up[:, i]
        z = np.bincount(p, weights=c * up * u, minlength=r)
        pivot = 1.0 + z[p]
        if np.any(pivot <= pd_eps):
            j = int(np.argmax(pivot <= pd_eps))
            raise IndefiniteOperatorError(i, int(p[j]), float(pivot[j]))
        Cp[:, i] = -c / pivot
        logdet += float(np.sum(np.log1p(z)))
        if i > 0:
            yk = np.bincount(p, weights=up * u, minlength=r)
            Up[:, i - 1] = up + Cp[:, i] * up * yk[p]
    return InverseResult(Cp, Up, logdet)


def trace_part(p, c, u, check=True):
    """Sum over cells l of c^(l) * (sum of u over cell l)^2.

    Equals the sum of all entries of L(p, c-as-column, u). Signed cell sums
    are accumulated directly, so negative c needs no complex arithmetic.
    """
    p = np.asarray(p)
    c = np.asarray(c, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if check:
        _check_cell_constant(p, c)
    r = int(p.max(initial=0)) + 1
    s = np.bincount(p, weights=u, minlength=r)
    cells, first = np.unique(p, return_index=True)
    return float(np.sum(c[first] * s[cells] ** 2))


def to_dense(P, Pp, U, Up):
    """Materialize L(P, P', U, U') as a dense n x m matrix (tests only)."""
    P = np.asarray(P)
    Pp = np.asarray(Pp)
    U = np.asarray(U, dtype=np.float64)
    Up = np.asarray(Up, dtype=np.float64)
    if P.shape != U.shape or Pp.shape != Up.shape:
        raise ValueError("partition and value arrays must have equal shapes")
    if P.shape[1] != Pp.shape[1]:
        raise ValueError("P and P' must have the same number of columns")
    n, q = P.shape
    m = Pp.shape[0]
    A = np.zeros((n, m))
    for i in range(q):
        mask = P[:, i, None] == Pp[None, :, i]
        A += mask * (U[:, i, None] * Up[None, :, i])
    return A


def to_dense_symmetric(P, C, U):
    """Materialize the symmetric operator L(P, C, U) = L(P, P, U, C * U)."""
    C = np.asarray(C, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    return to_dense(P, P, U, C * U)
