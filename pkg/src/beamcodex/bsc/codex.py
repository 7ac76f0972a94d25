"""Scikit-learn style wrappers around the beamspace network.

``BeamspaceCodex`` is a regressor from padded beamspace inputs to RSV
beamspace targets; ``BeamspaceTransformer`` converts codebook batches to and
from the real beamspace layout.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..channel import ArrayGeometry
from .beamspace import build_input, from_beamspace, merge_complex, split_complex, to_beamspace
from .mlp import DROPOUT, HIDDEN, MlpModel, TrainConfig, cosine_loss, evaluate_loss, train

logger = logging.getLogger(__name__)


def _check_xy(x, y=None, n_x0=None, n_y0=None, l_max=None):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"X must be [n_samples, n_x0+2, n_y0+2, 2*l_max], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("X contains non-finite values")
    if n_x0 is not None and x.shape[1:] != (n_x0 + 2, n_y0 + 2, 2 * l_max):
        raise ValueError(f"X sample shape {x.shape[1:]} != {(n_x0 + 2, n_y0 + 2, 2 * l_max)}")
    if y is None:
        return x
    y = np.asarray(y)
    if y.shape[0] != x.shape[0]:
        raise ValueError("X and y have different numbers of samples")
    if y.shape[1:] != (x.shape[1] - 2, x.shape[2] - 2, x.shape[3]):
        raise ValueError(f"y sample shape {y.shape[1:]} inconsistent with X {x.shape[1:]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return x, y


class BeamspaceCodex(RegressorMixin, BaseEstimator):
    """Beamspace-to-beamspace codebook generator.

    Parameters
    ----------
    n_x0, n_y0 : int
        Beamspace grid.
    l_max : int
        Codewords per codebook.
    hidden, dropout : tuple
        Hidden widths and per-layer dropout rates.
    learning_rate, batch_size, max_epochs, patience, decay_steps :
        Optimizer and early-stopping settings (see :class:`TrainConfig`).
    validation_fraction : float
        Share of the training data held out when ``fit`` gets no validation set.
    loss_mode : {"per_beam", "global"}
    seed : int
    """

    def __init__(self, n_x0=16, n_y0=16, l_max=8, hidden=HIDDEN, dropout=DROPOUT,
                 learning_rate=1e-3, batch_size=32, max_epochs=100, patience=10,
                 decay_steps=None, validation_fraction=0.1, loss_mode="per_beam",
                 seed=0, dtype="float32"):
        self.n_x0 = n_x0
        self.n_y0 = n_y0
        self.l_max = l_max
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.decay_steps = decay_steps
        self.validation_fraction = validation_fraction
        self.loss_mode = loss_mode
        self.seed = seed
        self.dtype = dtype

    def _train_config(self, **overrides):
        kw = dict(learning_rate=self.learning_rate, decay_steps=self.decay_steps,
                  patience=self.patience, batch_size=self.batch_size,
                  max_epochs=self.max_epochs, seed=self.seed, loss_mode=self.loss_mode)
        kw.update(overrides)
        return TrainConfig(**kw)

    def _split(self, x, y, x_val, y_val):
        if x_val is not None:
            return x, y, *_check_xy(x_val, y_val, self.n_x0, self.n_y0, self.l_max)
        n = len(x)
        n_val = max(1, int(round(self.validation_fraction * n)))
        if n - n_val < 1:
            raise ValueError("too few samples to hold out a validation split")
        perm = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5B1])).permutation(n)
        va, tr = perm[:n_val], perm[n_val:]
        return x[tr], y[tr], x[va], y[va]

    def fit(self, X, y, X_val=None, y_val=None):
        x, y = _check_xy(X, y, self.n_x0, self.n_y0, self.l_max)
        xt, yt, xv, yv = self._split(x, y, X_val, y_val)
        dt = np.dtype(self.dtype)
        model = MlpModel(x.shape[1:], y.shape[1:], self.hidden, self.dropout, self.seed, dt)
        cfg = self._train_config()
        model, history = train(model, xt.astype(dt), yt.astype(dt), xv.astype(dt), yv.astype(dt), cfg)
        self.model_ = model
        self.history_ = history
        self.n_steps_ = model.steps_taken
        self.n_features_in_ = int(np.prod(x.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        x = _check_xy(X, None, self.n_x0, self.n_y0, self.l_max)
        out = [self.model_.forward(x[s:s + 256]) for s in range(0, len(x), 256)]
        return np.concatenate(out).astype(float)

    def score(self, X, y, sample_weight=None):
        """Negative mean cosine distance (higher is better)."""
        x, y = _check_xy(X, y, self.n_x0, self.n_y0, self.l_max)
        return -cosine_loss(self.predict(x), y, self.loss_mode)

    def validation_loss(self, X, y):
        check_is_fitted(self, "model_")
        dt = self.model_.dtype
        return evaluate_loss(self.model_, np.asarray(X, dt), np.asarray(y, dt), self.loss_mode)

    def fine_tune(self, X, y, X_val=None, y_val=None, budget_fraction=0.01, max_steps=None):
        """Continue training for at most ``budget_fraction`` of the original step count.

        A zero budget leaves the model untouched.  Returns ``self``.
        """
        check_is_fitted(self, "model_")
        steps = int(math.floor(budget_fraction * self.n_steps_)) if max_steps is None else int(max_steps)
        self.fine_tune_steps_ = 0
        if steps <= 0:
            return self
        x, y = _check_xy(X, y, self.n_x0, self.n_y0, self.l_max)
        xt, yt, xv, yv = self._split(x, y, X_val, y_val)
        dt = self.model_.dtype
        epochs = math.ceil(steps / math.ceil(len(xt) / self.batch_size)) + 1
        cfg = self._train_config(max_epochs=epochs, patience=epochs, seed=self.seed + 1,
                                 decay_steps=steps)
        model, history = train(self.model_.copy(), xt.astype(dt), yt.astype(dt), xv.astype(dt),
                               yv.astype(dt), cfg, max_steps=steps, step_offset=self.n_steps_)
        self.model_ = model
        self.fine_tune_history_ = history
        self.fine_tune_steps_ = model.steps_taken
        return self

    def save(self, path):
        check_is_fitted(self, "model_")
        self.model_.save(path, extra={"params": _jsonable(self.get_params()), "n_steps": self.n_steps_})

    @classmethod
    def load(cls, path):
        model = MlpModel.load(path)
        params = dict(model.checkpoint_extra.get("params", {}))
        for key in ("hidden", "dropout"):
            if key in params:
                params[key] = tuple(params[key])
        est = cls(**params)
        est.model_ = model
        est.n_steps_ = int(model.checkpoint_extra.get("n_steps", 0))
        est.n_features_in_ = model.n_in
        return est


def _jsonable(params):
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


class BeamspaceTransformer(TransformerMixin, BaseEstimator):
    """Codebook batches ``[n, N_P, L]`` <-> real beamspace ``[n, n_x0, n_y0, 2L]``.

    Values are divided by ``sqrt(N_T)`` so that a steering-vector codeword has
    unit peak magnitude.
    """

    def __init__(self, n_x=4, n_y=8, n_x0=16, n_y0=16):
        self.n_x = n_x
        self.n_y = n_y
        self.n_x0 = n_x0
        self.n_y0 = n_y0

    @property
    def geometry(self):
        return ArrayGeometry(self.n_x, self.n_y)

    def fit(self, X=None, y=None):
        g = self.geometry
        if self.n_x0 < g.n_x or self.n_y0 < g.n_y:
            raise ValueError("beamspace grid smaller than the array")
        self.n_ports_ = g.n_ports
        return self

    def transform(self, X):
        check_is_fitted(self, "n_ports_")
        x = np.asarray(X, dtype=complex)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] != self.n_ports_:
            raise ValueError(f"codebooks have {x.shape[1]} ports, expected {self.n_ports_}")
        s = math.sqrt(self.n_ports_)
        return np.stack([split_complex(to_beamspace(w, self.geometry, self.n_x0, self.n_y0)) / s
                         for w in x])

    def inverse_transform(self, X):
        check_is_fitted(self, "n_ports_")
        x = np.asarray(X, dtype=float)
        if x.ndim == 3:
            x = x[None]
        return np.stack([from_beamspace(merge_complex(b), self.geometry).words for b in x])


def infer_codebook(estimator, prior, feedback, geometry):
    """Next SSB codebook from the prior codebook and its feedback."""
    x = build_input(prior, feedback, geometry, estimator.n_x0, estimator.n_y0)
    pred = estimator.predict(x[None])[0]
    return from_beamspace(merge_complex(pred), geometry, kind="SSB")
