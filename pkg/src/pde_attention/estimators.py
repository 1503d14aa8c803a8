"""Scikit-learn style facades over the evolution engine and the toy model.

Two estimators follow the fit/transform/predict conventions so they compose
with scikit-learn tooling (``get_params``, ``clone``, pipelines):

- :class:`AttentionEvolver` — a stateless transformer that evolves stacked
  attention fields under the configured dynamics.
- :class:`PdeTransformerClassifier` — trains the toy transformer on labelled
  token sequences and predicts class labels.

Both validate hyperparameters at ``fit`` time (never in ``__init__``) and
report failures with the package's :class:`~pde_attention.errors.ConfigError`,
which subclasses ``ValueError`` as scikit-learn expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, DatasetKind, _split
from .errors import ConfigError, DivergenceError
from .model import ModelConfig, PdeTransformer, TaskKind
from .pde import PdeConfig, run_evolution
from .training import TrainingOptions, train


def _as_fields(X, name: str = "X") -> np.ndarray:
    """Coerce to float64 fields of shape (T, T) or (B, T, T)."""
    fields = np.asarray(X, dtype=np.float64)
    if fields.ndim not in (2, 3):
        raise ConfigError(
            f"{name} must be one (T, T) field or a (B, T, T) stack; "
            f"got shape {fields.shape}")
    if fields.shape[-1] != fields.shape[-2] or fields.shape[-1] < 2:
        raise ConfigError(
            f"{name} fields must be square with T >= 2; got shape {fields.shape}")
    if not np.all(np.isfinite(fields)):
        raise ConfigError(f"{name} contains non-finite entries")
    return fields


def _as_tokens(X, name: str = "X") -> np.ndarray:
    tokens = np.asarray(X)
    if tokens.ndim != 2:
        raise ConfigError(
            f"{name} must be (n_sequences, seq_len) token ids; "
            f"got shape {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer):
        rounded = np.rint(tokens)
        if not np.all(np.isfinite(tokens)) or np.any(rounded != tokens):
            raise ConfigError(f"{name} must hold integer token ids")
        tokens = rounded
    return tokens.astype(np.int64)


class AttentionEvolver(TransformerMixin, BaseEstimator):
    """Evolve attention fields under diffusion/wave/reaction/advection dynamics.

    ``fit`` records the field size and freezes the PDE configuration;
    ``transform`` runs ``n_steps`` explicit steps on each field and returns
    the final state, preserving the input's shape ((T, T) in, (T, T) out;
    (B, T, T) in, (B, T, T) out).

    >>> evolver = AttentionEvolver(kind="diffusion", alpha=0.1, n_steps=2)
    >>> evolved = evolver.fit_transform(np.eye(4))
    """

    def __init__(self, kind="diffusion", alpha=0.1, beta=0.0, c=0.15,
                 dt=1.0, n_steps=4, bc="periodic", axis="per_row_1d",
                 renormalize_rows=False, clamp_nonnegative=False,
                 stability_guard=True):
        self.kind = kind
        self.alpha = alpha
        self.beta = beta
        self.c = c
        self.dt = dt
        self.n_steps = n_steps
        self.bc = bc
        self.axis = axis
        self.renormalize_rows = renormalize_rows
        self.clamp_nonnegative = clamp_nonnegative
        self.stability_guard = stability_guard

    def _build_config(self) -> PdeConfig:
        return PdeConfig(
            kind=self.kind, alpha=self.alpha, beta=self.beta, c=self.c,
            dt=self.dt, n_steps=self.n_steps, bc=self.bc, axis=self.axis,
            renormalize_rows=self.renormalize_rows,
            clamp_nonnegative=self.clamp_nonnegative,
            stability_guard=self.stability_guard)

    def fit(self, X, y=None):
        fields = _as_fields(X)
        config = self._build_config()
        config.check_stability()
        self.config_ = config
        self.t_ = int(fields.shape[-1])
        self.n_features_in_ = self.t_ * self.t_
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "config_")
        fields = _as_fields(X)
        if fields.shape[-1] != self.t_:
            raise ConfigError(
                f"field size {fields.shape[-1]} does not match the fitted "
                f"size {self.t_}")
        single = fields.ndim == 2
        batch = fields[None] if single else fields
        snapshots, _, _ = run_evolution(batch, self.config_)
        final = snapshots[-1]
        return final[0] if single else final


class PdeTransformerClassifier(ClassifierMixin, BaseEstimator):
    """Sequence classifier backed by the PDE-attention toy transformer.

    ``fit`` takes integer token sequences ``X`` of shape
    ``(n_sequences, seq_len)`` and labels ``y``; a validation split is carved
    out internally for the training loop's early stopping and divergence
    tracking. ``predict`` returns labels from ``classes_``;
    ``predict_proba`` returns per-class probabilities. The fitted model and
    its epoch-by-epoch history are exposed as ``model_`` and ``record_``.
    """

    def __init__(self, n_layers=2, n_heads=2, d_model=32, d_hidden=64,
                 attention_variant="pde", window=8, n_global=2,
                 kind="diffusion", alpha=0.1, beta=0.0, c=0.15, dt=1.0,
                 n_steps=2, bc="periodic", learn_coefficients=True,
                 renormalize_rows=True, clamp_nonnegative=True,
                 stability_guard=True, optimizer="adam", lr=3e-3,
                 momentum=0.9, batch_size=16, epochs=20, patience=None,
                 val_fraction=0.2, seed=0):
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_hidden = d_hidden
        self.attention_variant = attention_variant
        self.window = window
        self.n_global = n_global
        self.kind = kind
        self.alpha = alpha
        self.beta = beta
        self.c = c
        self.dt = dt
        self.n_steps = n_steps
        self.bc = bc
        self.learn_coefficients = learn_coefficients
        self.renormalize_rows = renormalize_rows
        self.clamp_nonnegative = clamp_nonnegative
        self.stability_guard = stability_guard
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y):
        tokens = _as_tokens(X)
        labels = np.asarray(y)
        if labels.shape != (tokens.shape[0],):
            raise ConfigError(
                f"y must be ({tokens.shape[0]},) labels; got shape {labels.shape}")
        classes, indices = np.unique(labels, return_inverse=True)
        if classes.size < 2:
            raise ConfigError("y must contain at least two classes")
        if tokens.size and tokens.min() < 0:
            raise ConfigError("X token ids must be nonnegative")

        rng = np.random.default_rng(self.seed)
        train_idx, val_idx = _split(tokens.shape[0], self.val_fraction, rng)
        dataset = Dataset(
            DatasetKind.CUSTOM, int(tokens.max()) + 1,
            tokens[train_idx], tokens[val_idx],
            train_labels=indices[train_idx], val_labels=indices[val_idx])

        config = ModelConfig(
            n_layers=self.n_layers, n_heads=self.n_heads,
            d_model=self.d_model, d_hidden=self.d_hidden,
            vocab_size=dataset.vocab_size, max_seq_len=dataset.seq_len,
            pde=PdeConfig(kind=self.kind, alpha=self.alpha, beta=self.beta,
                          c=self.c, dt=self.dt, n_steps=self.n_steps,
                          bc=self.bc,
                          renormalize_rows=self.renormalize_rows,
                          clamp_nonnegative=self.clamp_nonnegative,
                          stability_guard=self.stability_guard),
            task=TaskKind.CLASSIFICATION, n_classes=int(classes.size),
            attention_variant=self.attention_variant, window=self.window,
            n_global=self.n_global,
            learn_coefficients=self.learn_coefficients)
        options = TrainingOptions(
            optimizer=self.optimizer, lr=self.lr, momentum=self.momentum,
            batch_size=self.batch_size, epochs=self.epochs,
            patience=self.patience)

        model, record = train(dataset, config, options, seed=self.seed)
        if record.diverged:
            raise DivergenceError(
                f"training diverged at epoch {record.diverged_epoch}; "
                f"reduce dt/alpha or enable the stability guard")
        self.model_ = model
        self.record_ = record
        self.classes_ = classes
        self.n_features_in_ = int(tokens.shape[1])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        tokens = _as_tokens(X)
        return self.classes_[self.model_.predict_classes(tokens)]

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        tokens = _as_tokens(X)
        return self.model_.class_probabilities(tokens)
