"""Binary tree kernel: prefix-weighted covariance and its SROS assembly.

k_w(a, b) = sum_i w_i * [first i bits of a and b agree], with w >= 0 and
||w||_1 = 1. The kernel matrix over a bit matrix is exactly the symmetric
SROS operator with nested prefix partitions, U = 1 and C[:, i] = w_i.

Bit order and weights are optimized jointly through one unconstrained
vector phi: theta = exp(phi) / max(exp(phi)), the permutation sorting theta
descending is the bit order, and adjacent differences of sorted theta (with
a trailing 0) are the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import build_partitions

THETA_TIE_TOL = 1e-12


class TiedThetaError(ValueError):
    """theta has (near-)ties; the bit order is not locally differentiable."""


def kernel_value(w, a, b):
    """Kernel between two bit strings: sum of w over the common prefix."""
    w = np.asarray(w, dtype=np.float64)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.shape != w.shape:
        raise ValueError("w, a, b must have equal lengths")
    neq = a != b
    depth = int(np.argmax(neq)) if neq.any() else len(w)
    return float(np.sum(w[:depth]))


def assemble_kernel(bits, w):
    """K_XX in SROS form: (P, C, U) with P the prefix partitions,
    U all ones and C[:, i] = w_i."""
    bits = np.asarray(bits)
    w = np.asarray(w, dtype=np.float64)
    n, q = bits.shape
    if w.shape != (q,):
        raise ValueError("w must have one weight per bit")
    P, _ = build_partitions(bits)
    C = np.tile(w, (n, 1))
    U = np.ones((n, q))
    return P, C, U


@dataclass(frozen=True)
class JointKernelParts:
    """Prefix partitions over concatenated train/test bit strings.

    K_XX = L(P_train, C, U) and K_XX' = L(P_train, P_test, C * U, U'),
    with C[:, i] = w_i and all value arrays ones; P_joint covers the full
    (n + m)-row point set for the predictive-variance path.
    """

    P_joint: np.ndarray
    P_train: np.ndarray
    P_test: np.ndarray
    w: np.ndarray

    @property
    def n_train(self):
        return self.P_train.shape[0]

    @property
    def n_test(self):
        return self.P_test.shape[0]


def assemble_joint(bits_train, bits_test, w):
    """Build prefix partitions over the concatenation of train and test
    bit strings and split them into row blocks."""
    bits_train = np.asarray(bits_train)
    bits_test = np.asarray(bits_test)
    if bits_train.shape[1] != bits_test.shape[1]:
        raise ValueError("train and test bit strings must share q")
    w = np.asarray(w, dtype=np.float64)
    n = bits_train.shape[0]
    P_joint, _ = build_partitions(np.vstack([bits_train, bits_test]))
    return JointKernelParts(
        P_joint=P_joint,
        P_train=P_joint[:n],
        P_test=P_joint[n:],
        w=w,
    )


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters derived from the unconstrained vector phi.

    theta = exp(phi) / max(exp(phi)); ``bit_order`` sorts theta descending
    (stable, ties by original index); ``w`` are adjacent differences of the
    sorted theta with a 0 appended, so w >= 0 and ||w||_1 = max(theta) = 1.
    ``noise`` is the observation-noise variance lambda.
    """

    phi: np.ndarray
    theta: np.ndarray
    bit_order: np.ndarray
    w: np.ndarray
    noise: float

    @property
    def n_bits(self):
        return len(self.phi)

    def has_ties(self, tol=THETA_TIE_TOL):
        """Near-ties in theta, relative to magnitude. Entries that have
        decayed to ~0 carry no weight and no gradient, so coincidences among
        them are harmless and not counted."""
        ts = self.theta[self.bit_order]
        gaps = ts[:-1] - ts[1:]
        return bool(np.any((ts[:-1] > 0) & (gaps <= tol * ts[:-1])))


def params_from_phi(phi, noise):
    """Derive (theta, bit order, weights) from phi."""
    phi = np.asarray(phi, dtype=np.float64)
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi contains non-finite values")
    if noise <= 0:
        raise ValueError("noise variance must be positive")
    theta = np.exp(phi - phi.max())  # shift-invariant under the max norm
    bit_order = np.argsort(-theta, kind="stable")
    ts = theta[bit_order]
    w = ts - np.append(ts[1:], 0.0)
    return KernelParams(
        phi=phi, theta=theta, bit_order=bit_order, w=w, noise=float(noise)
    )


def phi_from_order_and_weights(bit_order, w_sorted):
    """phi realizing a given bit order and weight vector.

    theta along the sorted axis is the reverse cumulative sum of the
    weights; phi = log(theta) scattered back through the permutation.
    Requires strictly positive weights cumulatively (theta > 0).
    """
    bit_order = np.asarray(bit_order)
    w_sorted = np.asarray(w_sorted, dtype=np.float64)
    ts = np.cumsum(w_sorted[::-1])[::-1]
    if np.any(ts <= 0):
        raise ValueError("cumulative weights must stay positive")
    phi = np.empty(len(w_sorted))
    phi[bit_order] = np.log(ts)
    return phi


def grad_w_to_phi(grad_w, params):
    """Chain the gradient with respect to w back to phi.

    Along the sorted axis, theta_(i) enters w_i with +1 and w_(i-1) with
    -1. The max coordinate of theta is pinned at 1 by the normalization, so
    its own phi derivative is taken as 0 (one-sided subgradient); the other
    coordinates contribute theta_k * g_theta_k to themselves and its
    negative to the max coordinate.
    """
    grad_w = np.asarray(grad_w, dtype=np.float64)
    if grad_w.shape != params.phi.shape:
        raise ValueError("grad_w must have one entry per bit")
    if params.has_ties():
        raise TiedThetaError(
            "theta has ties within tolerance; perturb phi before "
            "differentiating"
        )
    g_sorted = grad_w - np.concatenate([[0.0], grad_w[:-1]])
    g_theta = np.empty_like(g_sorted)
    g_theta[params.bit_order] = g_sorted
    g_phi = params.theta * g_theta
    k_max = params.bit_order[0]
    g_phi[k_max] = -(np.sum(g_phi) - g_phi[k_max])
    return g_phi
