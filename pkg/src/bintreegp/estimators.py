"""Scikit-learn style estimators wrapping the binary tree GP core."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import gp
from .encoding import encode, fit_encoding
from .kernel import phi_from_order_and_weights


class BitStringEncoder(TransformerMixin, BaseEstimator):
    """Encode real-valued features into binary-expansion bit strings.

    Parameters
    ----------
    precision : int or None
        Bits per dimension; None applies min(8, floor(150/d) + 1).
    use_ecdf : bool
        Map each dimension through its training ECDF (11 percentile knots)
        before binary expansion.
    """

    def __init__(self, precision=None, use_ecdf=False):
        self.precision = precision
        self.use_ecdf = use_ecdf

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.encoding_ = fit_encoding(
            X, precision=self.precision, use_ecdf=self.use_ecdf
        )
        return self

    def transform(self, X):
        bits, _ = self.transform_with_flags(X)
        return bits

    def transform_with_flags(self, X):
        """Bit strings plus the out-of-box flag per row."""
        check_is_fitted(self, "encoding_")
        X = check_array(X, dtype=np.float64)
        return encode(X, self.encoding_)


class BinaryTreeGPRegressor(RegressorMixin, BaseEstimator):
    """GP regression with the binary tree kernel.

    Fitting encodes the features, standardizes the targets, and minimizes
    the training NLL over the joint (bit order, weights) parameterization.
    Both fitting and prediction run in O((n + m) q log(n + m)) time plus an
    O(q^2) factor for gradients and predictive variances.

    Parameters
    ----------
    precision : int or None
        Bits per dimension; None applies min(8, floor(150/d) + 1).
    noise : float or None
        Observation-noise variance lambda; None uses 1/n. Not optimized.
    use_ecdf : bool
        Apply the percentile-knot ECDF transform per dimension.
    max_iter : int
        Quasi-Newton iteration cap.
    random_state : int
        Seed for the tie-breaking jitter (ties in theta are measure-zero
        but possible at symmetric initializations).
    """

    def __init__(
        self,
        precision=None,
        noise=None,
        use_ecdf=False,
        max_iter=200,
        random_state=0,
    ):
        self.precision = precision
        self.noise = noise
        self.use_ecdf = use_ecdf
        self.max_iter = max_iter
        self.random_state = random_state

    def _encode_train(self, X):
        encoding = fit_encoding(
            X, precision=self.precision, use_ecdf=self.use_ecdf
        )
        bits, _ = encode(X, encoding)
        return encoding, bits

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training rows")
        encoding, bits = self._encode_train(X)
        self.model_ = gp.train(
            bits,
            y,
            noise=self.noise,
            max_iter=self.max_iter,
            encoding=encoding,
            jitter_seed=self.random_state,
        )
        self.encoding_ = encoding
        self.train_nll_ = self.model_.train_nll
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        bits, oob = encode(X, self.encoding_)
        out = gp.predict(self.model_, bits, oob)
        if return_std:
            return out.mean, np.sqrt(out.var)
        return out.mean

    def predict_full(self, X):
        """Full PredictiveOutput (means, variances, out-of-box flags)."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        bits, oob = encode(X, self.encoding_)
        return gp.predict(self.model_, bits, oob)


class BinaryTreeGPEnsembleRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-mixture ensemble of binary tree GPs over random bit orders.

    Initializations (n_bit_orders random orders x 3 stock weight vectors)
    are scored by training NLL; n_members are drawn by Boltzmann sampling,
    trained independently, and mixed with softmax weights on per-data-point
    training NLL at ``temperature``.
    """

    def __init__(
        self,
        precision=None,
        noise=None,
        use_ecdf=False,
        n_bit_orders=160,
        n_members=20,
        temperature=0.01,
        boltzmann_temperature=1.0,
        max_iter=200,
        random_state=0,
    ):
        self.precision = precision
        self.noise = noise
        self.use_ecdf = use_ecdf
        self.n_bit_orders = n_bit_orders
        self.n_members = n_members
        self.temperature = temperature
        self.boltzmann_temperature = boltzmann_temperature
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training rows")
        encoding = fit_encoding(
            X, precision=self.precision, use_ecdf=self.use_ecdf
        )
        bits, _ = encode(X, encoding)
        self.ensemble_ = gp.train_ensemble(
            bits,
            y,
            noise=self.noise,
            n_bit_orders=self.n_bit_orders,
            n_members=self.n_members,
            temperature=self.temperature,
            boltzmann_temperature=self.boltzmann_temperature,
            seed=self.random_state,
            max_iter=self.max_iter,
            encoding=encoding,
        )
        self.encoding_ = encoding
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        out = self.predict_full(X)
        if return_std:
            return out.mean, np.sqrt(out.var)
        return out.mean

    def predict_full(self, X):
        """Full MixturePrediction with member outputs and weights."""
        check_is_fitted(self, "ensemble_")
        X = check_array(X, dtype=np.float64)
        bits, oob = encode(X, self.encoding_)
        return gp.ensemble_predict(self.ensemble_, bits, oob)


def uniform_phi(q):
    """phi for the uniform weight vector under the identity bit order."""
    return phi_from_order_and_weights(np.arange(q), np.full(q, 1.0 / q))
