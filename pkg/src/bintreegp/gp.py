"""Gaussian process regression with the binary tree kernel.

Everything runs through the SROS representation: the training NLL and
Woodbury vector come from the O(nq) shared-column inversion, the analytic
weight gradient from per-partition trace sums in O(nq^2), the predictive
mean from one rectangular matvec, and the predictive variances from the
test block of the joint inverse (Schur complement route) followed by an
O(mq^2) block inversion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sros
from .encoding import EncodingConfig, build_partitions
from .kernel import (
    KernelParams,
    assemble_joint,
    grad_w_to_phi,
    params_from_phi,
    phi_from_order_and_weights,
)
from .optimize import minimize_bfgs

LOG_2PI = math.log(2.0 * math.pi)

TIE_JITTER = 1e-10


@dataclass(frozen=True)
class NllResult:
    """Training NLL with the byproducts reused downstream: the Woodbury
    vector z = (K + lambda I)^-1 y, the SROS arrays (Cinv, Uinv) with
    (K + lambda I)^-1 = lambda^-1 I + L(P, Cinv, Uinv), and the
    log-determinant of K + lambda I."""

    nll: float
    z: np.ndarray
    Cinv: np.ndarray
    Uinv: np.ndarray
    logdet: float


def marginal_nll(P, w, noise, y):
    """NLL of y under N(0, K + lambda I) with K = L(P, w-columns, 1).

    Exploits the identical all-ones U columns for the O(nq) inversion;
    the log-determinant picks up the +n log(lambda) rescaling term.
    """
    P = np.asarray(P)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    n, q = P.shape
    if y.shape != (n,):
        raise ValueError("y must have one entry per row of P")
    C = np.tile(np.asarray(w, dtype=np.float64) / noise, (n, 1))
    inv = sros.invert_shared_u(P, C, np.ones(n), check=False)
    Cinv = inv.Cp / noise
    Uinv = inv.Up
    logdet = inv.logdet + n * math.log(noise)
    z = sros.lin_transform(P, P, Uinv, Cinv * Uinv, y) + y / noise
    nll = 0.5 * (float(y @ z) + logdet + n * LOG_2PI)
    return NllResult(nll=nll, z=z, Cinv=Cinv, Uinv=Uinv, logdet=logdet)


def nll_grad_w(P, noise, nll_result):
    """Analytic gradient of the NLL with respect to the kernel weights.

    d nll / d w_i = 0.5 * (-z^T dK/dw_i z + Tr(dK/dw_i (K + lambda I)^-1))
    with dK/dw_i = L(P[:, i], 1, 1). The trace splits into the
    lambda^-1 I part (n / lambda, since dK/dw_i has unit diagonal) and the
    SROS part, reduced to per-cell signed sums on the finer of each column
    pair. O(nq^2) total.
    """
    P = np.asarray(P)
    n, q = P.shape
    z = nll_result.z
    Cinv = nll_result.Cinv
    Uinv = nll_result.Uinv

    # Self terms Tr(L(P[:,j],1,1) L(P[:,j], Cinv_j, Uinv_j)): reused for all
    # i < j, where the finer partition is column j itself.
    self_terms = np.array(
        [
            sros.trace_part(P[:, j], Cinv[:, j], Uinv[:, j], check=False)
            for j in range(q)
        ]
    )
    finer_tail = np.concatenate([np.cumsum(self_terms[::-1])[::-1], [0.0]])

    grad = np.empty(q)
    for i in range(q):
        p = P[:, i]
        r = int(p.max(initial=0)) + 1
        s = np.bincount(p, weights=z, minlength=r)
        quad = -float(np.sum(s * s))

        cells, first = np.unique(p, return_index=True)
        S = np.empty((len(cells), i + 1))
        for j in range(i + 1):
            S[:, j] = np.bincount(p, weights=Uinv[:, j], minlength=r)[cells]
        cross = float(np.sum(Cinv[first, : i + 1] * S * S))

        trace = n / noise + cross + finer_tail[i + 1]
        grad[i] = 0.5 * (quad + trace)
    return grad


def nll_grad_phi(P, params, nll_result):
    """Gradient of the NLL with respect to phi, at the partitions built
    under params.bit_order."""
    gw = nll_grad_w(P, params.noise, nll_result)
    # gw is indexed by sorted (bit-order) position, which is exactly the
    # weight index; the chain rule routes it back through theta to phi.
    return grad_w_to_phi(gw, params)


@dataclass
class TrainedModel:
    """A fitted binary tree GP: hyperparameters plus the cached quantities
    needed for O((n + m) q log(n + m)) prediction."""

    params: KernelParams
    train_bits: np.ndarray  # base bit order, before params.bit_order
    P: np.ndarray  # partitions under params.bit_order
    z: np.ndarray
    Cinv: np.ndarray
    Uinv: np.ndarray
    logdet: float
    train_nll: float
    y_mean: float = 0.0
    y_std: float = 1.0
    encoding: Optional[EncodingConfig] = None
    converged: bool = True
    message: str = ""
    tie_jitter_events: int = 0

    @property
    def n_train(self):
        return self.train_bits.shape[0]


@dataclass
class PredictiveOutput:
    """Per-location predictive mean and variance, in original target units
    and in standardized units."""

    mean: np.ndarray
    var: np.ndarray
    mean_std: np.ndarray
    var_std: np.ndarray
    out_of_box: np.ndarray


def gaussian_nll(y, mean, var):
    """Per-point negative log density of y under N(mean, var)."""
    y = np.asarray(y, dtype=np.float64)
    return 0.5 * (np.log(2.0 * np.pi * var) + (y - mean) ** 2 / var)


def _ordered_bits(bits, params):
    return np.asarray(bits)[:, params.bit_order]


def predict(model, test_bits, out_of_box=None):
    """Predict at test bit strings (given in the model's base bit order).

    Mean: K_X'X z via one rectangular SROS matvec over the joint prefix
    partitions. Variance: invert the joint (K + lambda I) in SROS form,
    take the test-rows block as the predictive precision, invert that block
    (general O(mq^2) path; its U columns differ) and read the diagonal.
    Out-of-box rows get the prior predictive: mean 0, variance 1 + lambda
    in standardized units.
    """
    test_bits = np.atleast_2d(np.asarray(test_bits))
    m = test_bits.shape[0]
    if test_bits.shape[1] != model.train_bits.shape[1]:
        raise ValueError("test bit strings do not match the model's q")
    if out_of_box is None:
        out_of_box = np.zeros(m, dtype=bool)
    out_of_box = np.asarray(out_of_box, dtype=bool)

    params = model.params
    noise = params.noise
    if m == 0:
        empty = np.empty(0)
        return PredictiveOutput(empty, empty, empty.copy(), empty.copy(),
                                out_of_box)

    n, q = model.P.shape
    joint = assemble_joint(
        _ordered_bits(model.train_bits, params),
        _ordered_bits(test_bits, params),
        params.w,
    )
    mu = sros.lin_transform(
        joint.P_test,
        joint.P_train,
        np.ones((m, q)),
        np.tile(params.w, (n, 1)),
        model.z,
    )

    C_joint = np.tile(params.w / noise, (n + m, 1))
    prec = sros.invert_shared_u(joint.P_joint, C_joint, np.ones(n + m),
                                check=False)
    cov = sros.invert(joint.P_test, prec.Cp[n:], prec.Up[n:], check=False)
    sigma2 = noise * (1.0 + np.sum(cov.Cp * cov.Up * cov.Up, axis=1))

    mu = np.where(out_of_box, 0.0, mu)
    sigma2 = np.where(out_of_box, 1.0 + noise, sigma2)
    return PredictiveOutput(
        mean=mu * model.y_std + model.y_mean,
        var=sigma2 * model.y_std**2,
        mean_std=mu,
        var_std=sigma2,
        out_of_box=out_of_box,
    )


class _Objective:
    """NLL of phi over fixed training bits, with partition caching keyed by
    the bit order (line-search steps often keep the order unchanged)."""

    def __init__(self, bits, y, noise, jitter_seed=0):
        self.bits = np.asarray(bits)
        self.y = np.asarray(y, dtype=np.float64)
        self.noise = noise
        self.jitter_seed = jitter_seed
        self.tie_events = 0
        self._cache_key = None
        self._cache_P = None

    def prepare(self, phi):
        params = params_from_phi(phi, self.noise)
        if params.has_ties():
            # Ties leave the NLL unchanged but break differentiability;
            # nudge phi deterministically and rederive.
            rng = np.random.default_rng(self.jitter_seed)
            params = params_from_phi(
                phi + rng.normal(0.0, TIE_JITTER, size=len(phi)), self.noise
            )
            self.tie_events += 1
        key = params.bit_order.tobytes()
        if key != self._cache_key:
            self._cache_P, _ = build_partitions(
                self.bits[:, params.bit_order]
            )
            self._cache_key = key
        return params, self._cache_P

    def value(self, phi):
        params, P = self.prepare(phi)
        try:
            return marginal_nll(P, params.w, self.noise, self.y).nll
        except sros.IndefiniteOperatorError:
            return np.inf

    def grad(self, phi):
        params, P = self.prepare(phi)
        res = marginal_nll(P, params.w, self.noise, self.y)
        return nll_grad_phi(P, params, res)


def train(
    bits,
    y,
    phi0=None,
    noise=None,
    max_iter=200,
    gtol=1e-6,
    ftol=1e-9,
    standardize=True,
    encoding=None,
    jitter_seed=0,
):
    """Fit weights and bit order by minimizing the training NLL over phi.

    ``bits`` are in the base bit order; ``noise`` defaults to 1/n. Targets
    are standardized to zero mean and unit variance unless ``standardize``
    is False. phi0 defaults to the uniform weight vector under the identity
    bit order.
    """
    bits = np.asarray(bits)
    y = np.asarray(y, dtype=np.float64)
    n, q = bits.shape
    if y.shape != (n,):
        raise ValueError("y must have one entry per bit-string row")
    if noise is None:
        noise = 1.0 / n
    if standardize:
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if y_std == 0.0:
            y_std = 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    ys = (y - y_mean) / y_std
    if phi0 is None:
        phi0 = phi_from_order_and_weights(np.arange(q), np.full(q, 1.0 / q))

    obj = _Objective(bits, ys, noise, jitter_seed=jitter_seed)
    res = minimize_bfgs(
        obj.value, obj.grad, phi0, max_iter=max_iter, gtol=gtol, ftol=ftol
    )
    if not res.converged:
        warnings.warn(f"training did not converge: {res.message}")

    params, P = obj.prepare(res.x)
    final = marginal_nll(P, params.w, noise, ys)
    return TrainedModel(
        params=params,
        train_bits=bits,
        P=P,
        z=final.z,
        Cinv=final.Cinv,
        Uinv=final.Uinv,
        logdet=final.logdet,
        train_nll=final.nll,
        y_mean=y_mean,
        y_std=y_std,
        encoding=encoding,
        converged=res.converged,
        message=res.message,
        tie_jitter_events=obj.tie_events,
    )


def initial_weight_vectors(q):
    """The stock weight initializations: uniform, and uniform with the last
    bit carrying 0.5 or 0.9 of the mass."""
    inits = [np.full(q, 1.0 / q)]
    if q > 1:
        for last in (0.5, 0.9):
            w = np.full(q, (1.0 - last) / (q - 1))
            w[-1] = last
            inits.append(w)
    return inits


@dataclass
class EnsembleModel:
    """Trained ensemble members plus their Gaussian-mixture weights
    (softmax of negative per-data-point training NLL at ``temperature``)."""

    members: list
    weights: np.ndarray
    temperature: float
    encoding: Optional[EncodingConfig] = None

    @property
    def y_mean(self):
        return self.members[0].y_mean

    @property
    def y_std(self):
        return self.members[0].y_std


def _softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def mixture_weights(train_nlls, n, temperature):
    """Softmax of -train_nll / n at the given temperature."""
    return _softmax(-np.asarray(train_nlls, dtype=np.float64) / n
                    / temperature)


def train_ensemble(
    bits,
    y,
    noise=None,
    n_bit_orders=160,
    n_members=20,
    temperature=0.01,
    boltzmann_temperature=1.0,
    seed=0,
    max_iter=200,
    standardize=True,
    encoding=None,
):
    """Train an ensemble over random bit orders.

    For each random bit order, each stock weight vector gives one phi
    initialization. Every initialization is scored by its (un-optimized)
    training NLL; n_members of them are drawn by Boltzmann sampling on the
    per-data-point NLL, trained independently, and combined into a Gaussian
    mixture weighted by per-data-point training NLL at ``temperature``.
    """
    bits = np.asarray(bits)
    y = np.asarray(y, dtype=np.float64)
    n, q = bits.shape
    if noise is None:
        noise = 1.0 / n
    if standardize:
        y_mean = float(np.mean(y))
        y_std = float(np.std(y)) or 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    ys = (y - y_mean) / y_std

    rng = np.random.default_rng(seed)
    w_inits = initial_weight_vectors(q)
    phis = []
    for _ in range(n_bit_orders):
        perm = rng.permutation(q)
        for w0 in w_inits:
            phis.append(phi_from_order_and_weights(perm, w0))

    scores = np.empty(len(phis))
    for k, phi in enumerate(phis):
        params = params_from_phi(phi, noise)
        P, _ = build_partitions(bits[:, params.bit_order])
        try:
            scores[k] = marginal_nll(P, params.w, noise, ys).nll / n
        except sros.IndefiniteOperatorError:
            scores[k] = np.inf

    finite = np.isfinite(scores)
    if not finite.any():
        raise sros.IndefiniteOperatorError(-1, -1, float("nan"))
    probs = np.where(finite, -scores / boltzmann_temperature, -np.inf)
    probs = _softmax(probs)
    n_draw = min(n_members, int(np.count_nonzero(probs > 0)))
    chosen = rng.choice(len(phis), size=n_draw, replace=False, p=probs)

    members = []
    for idx in chosen:
        try:
            members.append(
                train(
                    bits,
                    y,
                    phi0=phis[idx],
                    noise=noise,
                    max_iter=max_iter,
                    standardize=standardize,
                    encoding=encoding,
                    jitter_seed=seed + int(idx),
                )
            )
        except (sros.IndefiniteOperatorError, FloatingPointError) as exc:
            warnings.warn(f"ensemble member {idx} failed and was skipped: "
                          f"{exc}")
    if not members:
        raise RuntimeError("all ensemble members failed to train")

    weights = mixture_weights([mdl.train_nll for mdl in members], n,
                              temperature)
    return EnsembleModel(members=members, weights=weights,
                         temperature=temperature, encoding=encoding)


@dataclass
class MixturePrediction(PredictiveOutput):
    """Mixture moments plus the per-member outputs and weights needed for
    exact mixture densities."""

    member_outputs: list = field(default_factory=list)
    weights: np.ndarray = None  # type: ignore[assignment]
    _y_mean: float = 0.0
    _y_std: float = 1.0

    def nll_of(self, y_true):
        """Per-point NLL of the Gaussian mixture, standardized units."""
        y = np.asarray(y_true, dtype=np.float64)
        ys = (y - self._y_mean) / self._y_std
        logs = np.stack(
            [
                -gaussian_nll(ys, out.mean_std, out.var_std)
                for out in self.member_outputs
            ]
        )  # (k, m)
        logw = np.log(self.weights)[:, None]
        top = logs + logw
        peak = top.max(axis=0)
        return -(peak + np.log(np.sum(np.exp(top - peak), axis=0)))


def ensemble_predict(ens, test_bits, out_of_box=None):
    """Gaussian-mixture prediction: weighted mean, exact mixture variance
    (weighted second moment minus squared mixture mean)."""
    outs = [predict(mdl, test_bits, out_of_box) for mdl in ens.members]
    w = ens.weights
    mu = np.sum([wi * o.mean_std for wi, o in zip(w, outs)], axis=0)
    second = np.sum(
        [wi * (o.var_std + o.mean_std**2) for wi, o in zip(w, outs)], axis=0
    )
    var = second - mu**2
    y_mean = ens.y_mean
    y_std = ens.y_std
    return MixturePrediction(
        mean=mu * y_std + y_mean,
        var=var * y_std**2,
        mean_std=mu,
        var_std=var,
        out_of_box=outs[0].out_of_box,
        member_outputs=outs,
        weights=w,
        _y_mean=y_mean,
        _y_std=y_std,
    )
