"""Deterministic training loop for the toy transformer.

Single-threaded in the loss-update path: batch order comes from one seeded
generator, reductions are plain numpy sums, and parameter/optimizer state is
iterated in insertion order, so identical (dataset, config, options, seed)
reproduce identical trajectories bit for bit.

Stability interacts with training in two ways. While the PDE config keeps its
guard on, learnable per-head coefficients are clamped back into the CFL
region after every optimizer step (``alpha <= 0.5/dt``, transport/reaction
``beta <= 1/dt``). With the guard off, nothing prevents the dynamics from
leaving the stable region; a non-finite loss or a field blow-up then sets the
``diverged`` flag on the record and ends the run instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError
from .model import ModelConfig, PdeTransformer, TaskKind, cross_entropy_from_logits
from .tableio import write_csv
from .validation import check_int_in


@dataclass
class TrainingOptions:
    """Optimizer and loop settings (desk-scale defaults)."""

    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 30
    patience: int | None = 3  # early stopping on validation loss; None disables

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        self.batch_size = check_int_in(self.batch_size, "batch_size", low=1)
        self.epochs = check_int_in(self.epochs, "epochs", low=1)
        if self.patience is not None:
            self.patience = check_int_in(self.patience, "patience", low=1)

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "lr": self.lr,
            "momentum": self.momentum,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "patience": self.patience,
        }


class _SgdMomentum:
    def __init__(self, params: dict, options: TrainingOptions):
        self.lr = options.lr
        self.momentum = options.momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        for key, grad in grads.items():
            v = self.velocity[key]
            v *= self.momentum
            v -= self.lr * grad
            params[key] += v


class _Adam:
    def __init__(self, params: dict, options: TrainingOptions):
        self.lr = options.lr
        self.b1 = options.adam_beta1
        self.b2 = options.adam_beta2
        self.eps = options.adam_eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for key, grad in grads.items():
            m = self.m[key]
            v = self.v[key]
            m += (1.0 - self.b1) * (grad - m)
            v += (1.0 - self.b2) * (grad * grad - v)
            m_hat = m / (1.0 - self.b1 ** self.t)
            v_hat = v / (1.0 - self.b2 ** self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


_OPTIMIZERS = {"sgd": _SgdMomentum, "adam": _Adam}


@dataclass
class TrainRecord:
    """Per-epoch training history plus the divergence flag."""

    train_losses: list = dc_field(default_factory=list)
    val_losses: list = dc_field(default_factory=list)
    val_metrics: list = dc_field(default_factory=list)
    metric_name: str = "perplexity"
    grad_norm_means: list = dc_field(default_factory=list)
    grad_norm_maxes: list = dc_field(default_factory=list)
    layer_grad_norms: list = dc_field(default_factory=list)  # per epoch: name -> mean norm
    diverged: bool = False
    diverged_epoch: int | None = None
    stopped_early: bool = False

    @property
    def n_epochs(self) -> int:
        return len(self.train_losses)

    def to_csv(self, path) -> None:
        rows = []
        for epoch in range(self.n_epochs):
            rows.append({
                "epoch": epoch,
                "train_loss": self.train_losses[epoch],
                "val_loss": self.val_losses[epoch],
                "metric": self.val_metrics[epoch],
                "grad_norm_mean": self.grad_norm_means[epoch],
                "grad_norm_max": self.grad_norm_maxes[epoch],
                "diverged": self.diverged and epoch == self.diverged_epoch,
            })
        write_csv(path, ["epoch", "train_loss", "val_loss", "metric",
                         "grad_norm_mean", "grad_norm_max", "diverged"], rows)


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _clamp_coefficients(model: PdeTransformer) -> None:
    cfg = model.config
    if not cfg.pde.stability_guard or not cfg.has_learnable_coefficients():
        return
    alpha_max = 0.5 / cfg.pde.dt
    beta_max = 1.0 / cfg.pde.dt
    for key, value in model.params.items():
        if key.endswith("attn.alpha"):
            np.clip(value, 0.0, alpha_max, out=value)
        elif key.endswith("attn.beta"):
            np.clip(value, 0.0, beta_max, out=value)


def _layer_group(key: str) -> str:
    parts = key.split(".")
    return ".".join(parts[:2]) if parts[0] == "layers" else parts[0]


def evaluate(model: PdeTransformer, dataset: Dataset, split: str = "val",
             batch_size: int = 64):
    """Mean loss and task metric (perplexity or accuracy) over a split."""
    tokens = dataset.val_tokens if split == "val" else dataset.train_tokens
    labels = dataset.val_labels if split == "val" else dataset.train_labels
    if tokens.shape[0] == 0:
        raise ConfigError(f"{split} split is empty")
    total_loss = 0.0
    total_weight = 0
    correct = 0
    for start in range(0, tokens.shape[0], batch_size):
        batch = tokens[start:start + batch_size]
        if model.config.task is TaskKind.CAUSAL_LM:
            logits = model.forward(batch)
            loss, _ = cross_entropy_from_logits(logits[:, :-1, :], batch[:, 1:])
            weight = batch.shape[0] * (batch.shape[1] - 1)
        else:
            batch_labels = labels[start:start + batch_size]
            logits = model.forward(batch)
            loss, _ = cross_entropy_from_logits(logits, batch_labels)
            weight = batch.shape[0]
            correct += int(np.sum(np.argmax(logits, axis=-1) == batch_labels))
        total_loss += loss * weight
        total_weight += weight
    mean_loss = total_loss / total_weight
    if model.config.task is TaskKind.CAUSAL_LM:
        return mean_loss, float(np.exp(mean_loss))
    return mean_loss, correct / tokens.shape[0]


def train(dataset: Dataset, config: ModelConfig, options: TrainingOptions | None = None,
          seed: int = 0):
    """Train the toy model; returns ``(model, TrainRecord)``.

    Divergence (non-finite loss/gradients or a field blow-up) stops the loop
    and sets the record's flag rather than raising.
    """
    options = options or TrainingOptions()
    if dataset.is_classification and config.task is not TaskKind.CLASSIFICATION:
        raise ConfigError("labelled dataset requires task=classification")
    if not dataset.is_classification and config.task is TaskKind.CLASSIFICATION:
        raise ConfigError("classification task requires a labelled dataset")
    if dataset.seq_len > config.max_seq_len:
        raise ConfigError(
            f"dataset sequences ({dataset.seq_len}) exceed max_seq_len "
            f"({config.max_seq_len})")

    rng = np.random.default_rng(seed)
    model = PdeTransformer(config, rng)
    optimizer = _OPTIMIZERS[options.optimizer](model.params, options)
    record = TrainRecord(
        metric_name="perplexity" if config.task is TaskKind.CAUSAL_LM else "accuracy")

    n_train = dataset.train_tokens.shape[0]
    best_val = np.inf
    epochs_since_best = 0

    for epoch in range(options.epochs):
        order = rng.permutation(n_train)
        epoch_losses = []
        batch_norm_means = []
        batch_norm_maxes = []
        group_norms: dict[str, list] = {}
        diverged_now = False

        for idx in _batches(n_train, options.batch_size, order):
            batch = dataset.train_tokens[idx]
            batch_labels = (dataset.train_labels[idx]
                            if dataset.is_classification else None)
            try:
                loss, grads = model.loss_and_gradients(batch, batch_labels)
            except DivergenceError:
                diverged_now = True
                break
            norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
            if not np.isfinite(loss) or not all(np.isfinite(v) for v in norms.values()):
                diverged_now = True
                break
            epoch_losses.append(loss)
            values = list(norms.values())
            batch_norm_means.append(float(np.mean(values)))
            batch_norm_maxes.append(float(np.max(values)))
            for key, norm in norms.items():
                group_norms.setdefault(_layer_group(key), []).append(norm)
            optimizer.step(model.params, grads)
            _clamp_coefficients(model)

        if diverged_now:
            record.diverged = True
            record.diverged_epoch = epoch
            record.train_losses.append(float("nan"))
            record.val_losses.append(float("nan"))
            record.val_metrics.append(float("nan"))
            record.grad_norm_means.append(float("nan"))
            record.grad_norm_maxes.append(float("nan"))
            record.layer_grad_norms.append({})
            break

        try:
            val_loss, metric = evaluate(model, dataset)
        except DivergenceError:
            record.diverged = True
            record.diverged_epoch = epoch
            break
        if not np.isfinite(val_loss):
            record.diverged = True
            record.diverged_epoch = epoch
            break

        record.train_losses.append(float(np.mean(epoch_losses)))
        record.val_losses.append(float(val_loss))
        record.val_metrics.append(float(metric))
        record.grad_norm_means.append(float(np.mean(batch_norm_means)))
        record.grad_norm_maxes.append(float(np.max(batch_norm_maxes)))
        record.layer_grad_norms.append(
            {k: float(np.mean(v)) for k, v in sorted(group_norms.items())})

        if options.patience is not None:
            if val_loss < best_val:
                best_val = val_loss
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= options.patience:
                    record.stopped_early = True
                    break

    return model, record
