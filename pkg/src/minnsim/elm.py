"""Extreme learning machine whose hidden layer is a frozen MIMO channel.

Input features are amplitude-encoded one-per-antenna; the uncontrolled
fading matrix provides the random projection, a fixed nonlinearity acts at
the receive elements, and only a real readout is trained, in closed form,
by ridge least squares. Refitting after channel drift is one factorization,
no gradient steps.
"""

import numpy as np
import scipy.linalg

from .channel import rayleigh_channel


class FitError(ValueError):
    """Readout fitting was asked to run on unusable data."""


class NotFittedError(RuntimeError):
    """Prediction requires a fitted readout."""


ACTIVATIONS = ("abs", "abs2", "tanh_mag", "relu_real")


def _activate(z, kind):
    if kind == "abs":
        return np.abs(z)
    if kind == "abs2":
        return np.abs(z) ** 2
    if kind == "tanh_mag":
        return np.tanh(np.abs(z))
    if kind == "relu_real":
        return np.maximum(z.real, 0.0)
    raise ValueError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


class ElmModel:
    """Frozen random hidden layer plus a ridge-fitted linear readout.

    Args:
        H: hidden projection, (n_hidden, n_features); complex fading matrix
            or a real matrix for the fully digital baseline.
        activation: receiver nonlinearity, one of ACTIVATIONS.
        ridge_lambda: ridge weight relative to trace(G^T G)/n_hidden.
        n_classes: 2 uses a single +-1 output column and sign readout.
        snr_db: optional noise level applied to H x before the nonlinearity.
    """

    def __init__(self, H, activation="abs", ridge_lambda=1e-3, n_classes=2, snr_db=None):
        H = np.asarray(H)
        if H.ndim != 2 or H.shape[0] < 1:
            raise ValueError(f"H must be (n_hidden, n_features), got {H.shape}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if ridge_lambda <= 0:
            raise ValueError(f"ridge_lambda must be positive, got {ridge_lambda}")
        self.H = H
        self.activation = activation
        self.ridge_lambda = float(ridge_lambda)
        self.n_classes = int(n_classes)
        self.snr_db = snr_db
        self.W = None

    @property
    def n_hidden(self):
        return self.H.shape[0]

    @property
    def n_features(self):
        return self.H.shape[1]


def random_channel_elm(n_hidden, n_features, rng, activation="abs",
                       ridge_lambda=1e-3, n_classes=2, snr_db=None):
    """MINN-ELM: hidden layer drawn as a Rayleigh fading matrix."""
    return ElmModel(rayleigh_channel(n_hidden, n_features, rng), activation,
                    ridge_lambda, n_classes, snr_db)


def digital_elm(n_hidden, n_features, rng, activation="abs",
                ridge_lambda=1e-3, n_classes=2, snr_db=None):
    """Baseline with i.i.d. real Gaussian hidden weights instead of fading."""
    return ElmModel(rng.standard_normal((n_hidden, n_features)), activation,
                    ridge_lambda, n_classes, snr_db)


def elm_hidden(x, model, rng=None):
    """Hidden activations g = activation(H x) for one sample or a batch.

    When the model carries an SNR and an rng is given, receiver noise is
    added to H x before the nonlinearity (matched to the mean received
    power per element).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x2.shape[1]}")
    z = x2 @ model.H.T
    if model.snr_db is not None and rng is not None:
        power = np.mean(np.abs(z) ** 2)
        sigma2 = power * 10.0 ** (-model.snr_db / 10.0)
        if np.iscomplexobj(z):
            z = z + np.sqrt(sigma2 / 2) * (rng.standard_normal(z.shape)
                                           + 1j * rng.standard_normal(z.shape))
        else:
            z = z + np.sqrt(sigma2) * rng.standard_normal(z.shape)
    g = _activate(z, model.activation)
    return g[0] if single else g


def fit_readout(G, Y, ridge_lambda):
    """Closed-form ridge solution W = (G^T G + lambda I)^-1 G^T Y.

    Solved through a Cholesky factorization of the regularized Gram matrix;
    ``ridge_lambda`` is the absolute ridge weight here.
    """
    G = np.asarray(G, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if G.ndim != 2 or G.shape[0] < 1:
        raise FitError(f"G must be a non-empty 2-D matrix, got shape {G.shape}")
    if ridge_lambda <= 0:
        raise FitError(f"ridge_lambda must be positive, got {ridge_lambda}")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(Y))):
        raise FitError("non-finite entries in the fitting data")
    h = G.shape[1]
    gram = G.T @ G + ridge_lambda * np.eye(h)
    chol = scipy.linalg.cho_factor(gram, lower=True)
    return scipy.linalg.cho_solve(chol, G.T @ Y)


def _targets(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise FitError(f"labels outside [0, {n_classes}): {labels.min()}..{labels.max()}")
    if n_classes == 2:
        return np.where(labels == 1, 1.0, -1.0)[:, None]
    Y = np.zeros((labels.size, n_classes))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def fit(model, X, labels, rng=None):
    """Fit the readout on labeled data; returns the model with W set."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise FitError("cannot fit on an empty batch")
    G = elm_hidden(X, model, rng=rng)
    lam = model.ridge_lambda * np.trace(G.T @ G) / model.n_hidden
    lam = max(lam, 1e-12)
    model.W = fit_readout(G, _targets(labels, model.n_classes), lam)
    return model


def refit_on_drift(model, X_cal, labels_cal, new_H=None, rng=None):
    """Refit the readout for a drifted channel: one factorization, no descent."""
    if np.asarray(X_cal).shape[0] == 0:
        raise FitError("cannot refit on an empty calibration batch")
    if new_H is not None:
        new_H = np.asarray(new_H)
        if new_H.shape != model.H.shape:
            raise FitError(f"drifted channel shape {new_H.shape} != {model.H.shape}")
        model.H = new_H
    return fit(model, X_cal, labels_cal, rng=rng)


def elm_scores(x, model, rng=None):
    if model.W is None:
        raise NotFittedError("readout is not fitted; call fit() first")
    return elm_hidden(x, model, rng=rng) @ model.W


def elm_predict(x, model, rng=None):
    """Predicted class index (argmax of readout scores; sign for binary)."""
    scores = elm_scores(x, model, rng=rng)
    if model.n_classes == 2:
        return (scores[..., 0] > 0).astype(int)
    return np.argmax(scores, axis=-1)


def accuracy(model, X, labels, rng=None):
    return float(np.mean(elm_predict(X, model, rng=rng) == np.asarray(labels)))
