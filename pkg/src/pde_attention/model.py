"""Toy transformer with PDE-evolved attention and hand-written gradients.

Each block is post-norm: ``x = LN(x + Attention(x))`` then
``x = LN(x + FFN(x))``. Attention is the evolved multi-head layer from
:mod:`pde_attention.attention`; the ``standard`` variant is the same layer
with zero evolution steps (bit-identical weights and trajectories given the
same seed), and the ``hybrid`` variant initializes each head on a sliding
window + global-token pattern before evolving.

Parameters live in a flat ``name -> ndarray`` dict (insertion-ordered, so
optimizers and checkpoints are deterministic). ``loss_and_gradients``
returns a gradient dict with exactly the same keys, produced by an explicit
reverse pass: cross-entropy/softmax, output head, layer norms, the gated FFN
nonlinearity, residual adds, the attention tape, positional and embedding
scatters. No autodiff framework is involved anywhere.

Causal language modeling predicts token ``t+1`` from prefix ``<= t`` with a
causal mask (evolution included, via masked stencils); classification mean-
pools the final hidden states.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .attention import (
    ProjectionWeights,
    pde_attention_backward,
    pde_attention_forward,
    softmax,
)
from .errors import ConfigError
from .grid import coerce_enum
from .hybrid import SparsePattern
from .pde import PdeConfig, PdeKind, REFERENCE_COEFFICIENTS
from .validation import check_int_in, check_token_matrix

CHECKPOINT_VERSION = 1
_LN_EPS = 1e-5


class TaskKind(str, enum.Enum):
    CAUSAL_LM = "causal_lm"
    CLASSIFICATION = "classification"


class AttentionVariant(str, enum.Enum):
    STANDARD = "standard"
    PDE = "pde"
    HYBRID = "hybrid"


@dataclass
class ModelConfig:
    """Architecture plus dynamics settings for the toy transformer."""

    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_hidden: int = 64
    vocab_size: int = 16
    max_seq_len: int = 128
    pde: PdeConfig = dc_field(default_factory=PdeConfig)
    task: TaskKind = TaskKind.CAUSAL_LM
    attention_variant: AttentionVariant = AttentionVariant.PDE
    n_classes: int = 2
    window: int = 8
    n_global: int = 2
    learn_coefficients: bool = True

    def __post_init__(self):
        self.task = coerce_enum(TaskKind, self.task, "task")
        self.attention_variant = coerce_enum(
            AttentionVariant, self.attention_variant, "attention_variant")
        if isinstance(self.pde, dict):
            self.pde = PdeConfig.from_dict(self.pde)
        self.n_layers = check_int_in(self.n_layers, "n_layers", low=1)
        self.n_heads = check_int_in(self.n_heads, "n_heads", low=1)
        self.d_model = check_int_in(self.d_model, "d_model", low=1)
        self.d_hidden = check_int_in(self.d_hidden, "d_hidden", low=1)
        self.vocab_size = check_int_in(self.vocab_size, "vocab_size", low=2)
        self.max_seq_len = check_int_in(self.max_seq_len, "max_seq_len", low=2)
        self.n_classes = check_int_in(self.n_classes, "n_classes", low=2)
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"n_heads={self.n_heads} must divide d_model={self.d_model}")

    def effective_pde(self) -> PdeConfig:
        """The dynamics actually run: ``standard`` forces zero steps."""
        if self.attention_variant is AttentionVariant.STANDARD:
            return replace(self.pde, n_steps=0)
        return self.pde

    def has_learnable_coefficients(self) -> bool:
        return self.learn_coefficients and self.pde.kind is not PdeKind.WAVE

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_hidden": self.d_hidden,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "pde": self.pde.to_dict(),
            "task": self.task.value,
            "attention_variant": self.attention_variant.value,
            "n_classes": self.n_classes,
            "window": self.window,
            "n_global": self.n_global,
            "learn_coefficients": self.learn_coefficients,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        import dataclasses as _dc

        known = {f.name for f in _dc.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def gelu(u: np.ndarray) -> np.ndarray:
    """Smooth gating nonlinearity (tanh form)."""
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * u * (1.0 + np.tanh(c * (u + 0.044715 * u ** 3)))


def gelu_grad(u: np.ndarray) -> np.ndarray:
    c = np.sqrt(2.0 / np.pi)
    inner = c * (u + 0.044715 * u ** 3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th ** 2) * c * (1.0 + 3 * 0.044715 * u ** 2)


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    x_hat = centered * inv
    return gamma * x_hat + beta, (x_hat, inv, gamma)


def layer_norm_backward(grad_out: np.ndarray, cache):
    x_hat, inv, gamma = cache
    reduce_axes = tuple(range(grad_out.ndim - 1))
    d_gamma = (grad_out * x_hat).sum(axis=reduce_axes)
    d_beta = grad_out.sum(axis=reduce_axes)
    g = grad_out * gamma
    dx = inv * (
        g
        - g.mean(axis=-1, keepdims=True)
        - x_hat * (g * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gamma, d_beta


def cross_entropy_from_logits(logits: np.ndarray, targets: np.ndarray):
    """Mean cross entropy plus the softmax probabilities (for the backward)."""
    flat = logits.reshape(-1, logits.shape[-1])
    ids = np.asarray(targets).reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(flat.shape[0]), ids]
    loss = float(np.mean(log_z - picked))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    return loss, probs.reshape(logits.shape)


class PdeTransformer:
    """The toy model: embeddings, PDE-attention blocks, task head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 params: dict | None = None):
        self.config = config
        if params is not None:
            self.params = params
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self._init_params(rng)

    # -- parameters ---------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> dict:
        cfg = self.config
        d, dh = cfg.d_model, cfg.d_hidden

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params: dict[str, np.ndarray] = {}
        params["embedding"] = uniform(d, (cfg.vocab_size, d))
        params["positional"] = uniform(d, (cfg.max_seq_len, d))
        defaults = REFERENCE_COEFFICIENTS[cfg.pde.kind]
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            for name in ("w_q", "w_k", "w_v", "w_o"):
                params[p + "attn." + name] = uniform(d, (d, d))
            if cfg.has_learnable_coefficients():
                params[p + "attn.alpha"] = np.full(cfg.n_heads, cfg.pde.alpha)
                if "beta" in defaults:
                    params[p + "attn.beta"] = np.full(cfg.n_heads, cfg.pde.beta)
            params[p + "ln1.gamma"] = np.ones(d)
            params[p + "ln1.beta"] = np.zeros(d)
            params[p + "ffn.w1"] = uniform(d, (d, dh))
            params[p + "ffn.b1"] = np.zeros(dh)
            params[p + "ffn.w2"] = uniform(dh, (dh, d))
            params[p + "ffn.b2"] = np.zeros(d)
            params[p + "ln2.gamma"] = np.ones(d)
            params[p + "ln2.beta"] = np.zeros(d)
        out_width = cfg.vocab_size if cfg.task is TaskKind.CAUSAL_LM else cfg.n_classes
        params["head.w"] = uniform(d, (d, out_width))
        params["head.b"] = np.zeros(out_width)
        return params

    def _layer_weights(self, i: int) -> ProjectionWeights:
        p = self.params
        prefix = f"layers.{i}.attn."
        return ProjectionWeights(
            p[prefix + "w_q"], p[prefix + "w_k"], p[prefix + "w_v"], p[prefix + "w_o"],
            n_heads=self.config.n_heads,
            alpha=p.get(prefix + "alpha"),
            beta=p.get(prefix + "beta"),
        )

    def zero_like_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- forward ------------------------------------------------------------

    def _prepare_tokens(self, tokens) -> np.ndarray:
        arr = np.asarray(tokens)
        if arr.ndim == 1:
            arr = arr[None, :]
        check_token_matrix(arr, vocab_size=self.config.vocab_size, name="tokens")
        if arr.shape[1] > self.config.max_seq_len:
            raise ConfigError(
                f"sequence length {arr.shape[1]} exceeds max_seq_len "
                f"{self.config.max_seq_len}")
        if arr.shape[1] < 2:
            raise ConfigError("sequences must have at least 2 tokens")
        return arr.astype(np.int64)

    def forward(self, tokens, *, return_cache: bool = False):
        cfg = self.config
        tokens = self._prepare_tokens(tokens)
        b, t = tokens.shape
        causal = cfg.task is TaskKind.CAUSAL_LM
        pattern = None
        if cfg.attention_variant is AttentionVariant.HYBRID:
            pattern = SparsePattern(
                window=min(cfg.window, t - 1),
                global_indices=tuple(range(min(cfg.n_global, t))),
            ).mask(t)
        pde_cfg = cfg.effective_pde()

        x = self.params["embedding"][tokens] + self.params["positional"][:t]
        cache = {"tokens": tokens, "layers": [], "pattern": pattern, "causal": causal}
        for i in range(cfg.n_layers):
            layer_cache = {"x_in": x}
            weights = self._layer_weights(i)
            att, tape = pde_attention_forward(x, weights, pde_cfg,
                                              causal=causal, pattern=pattern)
            layer_cache["tape"] = tape
            h, ln1_cache = layer_norm_forward(
                x + att, self.params[f"layers.{i}.ln1.gamma"],
                self.params[f"layers.{i}.ln1.beta"])
            layer_cache["ln1"] = ln1_cache

            u = h @ self.params[f"layers.{i}.ffn.w1"] + self.params[f"layers.{i}.ffn.b1"]
            act = gelu(u)
            f = act @ self.params[f"layers.{i}.ffn.w2"] + self.params[f"layers.{i}.ffn.b2"]
            layer_cache["h"] = h
            layer_cache["u"] = u
            layer_cache["act"] = act
            x, ln2_cache = layer_norm_forward(
                h + f, self.params[f"layers.{i}.ln2.gamma"],
                self.params[f"layers.{i}.ln2.beta"])
            layer_cache["ln2"] = ln2_cache
            cache["layers"].append(layer_cache)

        if cfg.task is TaskKind.CAUSAL_LM:
            logits = x @ self.params["head.w"] + self.params["head.b"]
        else:
            pooled = x.mean(axis=1)
            cache["pooled_len"] = t
            logits = pooled @ self.params["head.w"] + self.params["head.b"]
        cache["x_final"] = x
        return (logits, cache) if return_cache else logits

    # -- loss and exact gradients -------------------------------------------

    def loss(self, tokens, labels=None) -> float:
        loss, _, _ = self._loss_with_cache(tokens, labels)
        return loss

    def _loss_with_cache(self, tokens, labels):
        cfg = self.config
        logits, cache = self.forward(tokens, return_cache=True)
        if cfg.task is TaskKind.CAUSAL_LM:
            if labels is not None:
                raise ConfigError("causal_lm derives targets from the tokens themselves")
            targets = cache["tokens"][:, 1:]
            loss, probs = cross_entropy_from_logits(logits[:, :-1, :], targets)
        else:
            if labels is None:
                raise ConfigError("classification needs labels")
            labels = np.asarray(labels).reshape(-1)
            if labels.shape[0] != cache["tokens"].shape[0]:
                raise ConfigError("labels must match the batch size")
            if labels.min() < 0 or labels.max() >= cfg.n_classes:
                raise ConfigError(f"labels must lie in [0, {cfg.n_classes})")
            targets = labels
            loss, probs = cross_entropy_from_logits(logits, targets)
        return loss, (logits, probs, targets), cache

    def loss_and_gradients(self, tokens, labels=None):
        """Mean cross-entropy loss and exact gradients for every parameter."""
        cfg = self.config
        loss, (logits, probs, targets), cache = self._loss_with_cache(tokens, labels)
        grads = self.zero_like_grads()
        x_final = cache["x_final"]
        b, t = cache["tokens"].shape

        if cfg.task is TaskKind.CAUSAL_LM:
            d_logits_used = probs.copy()
            flat = d_logits_used.reshape(-1, cfg.vocab_size)
            flat[np.arange(flat.shape[0]), targets.reshape(-1)] -= 1.0
            d_logits_used /= flat.shape[0]
            d_logits = np.zeros((b, t, cfg.vocab_size))
            d_logits[:, :-1, :] = d_logits_used
            grads["head.w"] = np.einsum("btd,btv->dv", x_final, d_logits)
            grads["head.b"] = d_logits.sum(axis=(0, 1))
            dx = d_logits @ self.params["head.w"].T
        else:
            d_logits = probs.copy()
            d_logits[np.arange(b), targets] -= 1.0
            d_logits /= b
            pooled = x_final.mean(axis=1)
            grads["head.w"] = pooled.T @ d_logits
            grads["head.b"] = d_logits.sum(axis=0)
            d_pooled = d_logits @ self.params["head.w"].T
            dx = np.repeat(d_pooled[:, None, :], t, axis=1) / t

        for i in reversed(range(cfg.n_layers)):
            lc = cache["layers"][i]
            d_sum2, d_g2, d_b2 = layer_norm_backward(dx, lc["ln2"])
            grads[f"layers.{i}.ln2.gamma"] = d_g2
            grads[f"layers.{i}.ln2.beta"] = d_b2

            d_act = d_sum2 @ self.params[f"layers.{i}.ffn.w2"].T
            grads[f"layers.{i}.ffn.w2"] = np.einsum("bth,btd->hd", lc["act"], d_sum2)
            grads[f"layers.{i}.ffn.b2"] = d_sum2.sum(axis=(0, 1))
            d_u = d_act * gelu_grad(lc["u"])
            grads[f"layers.{i}.ffn.w1"] = np.einsum("btd,bth->dh", lc["h"], d_u)
            grads[f"layers.{i}.ffn.b1"] = d_u.sum(axis=(0, 1))
            dh = d_sum2 + d_u @ self.params[f"layers.{i}.ffn.w1"].T

            d_sum1, d_g1, d_b1 = layer_norm_backward(dh, lc["ln1"])
            grads[f"layers.{i}.ln1.gamma"] = d_g1
            grads[f"layers.{i}.ln1.beta"] = d_b1

            dx_att, w_grads = pde_attention_backward(lc["tape"], d_sum1)
            p = f"layers.{i}.attn."
            grads[p + "w_q"] = w_grads.w_q
            grads[p + "w_k"] = w_grads.w_k
            grads[p + "w_v"] = w_grads.w_v
            grads[p + "w_o"] = w_grads.w_o
            if w_grads.alpha is not None:
                grads[p + "alpha"] = w_grads.alpha
            if w_grads.beta is not None:
                grads[p + "beta"] = w_grads.beta
            dx = d_sum1 + dx_att

        grads["positional"][:t] = dx.sum(axis=0)
        np.add.at(grads["embedding"], cache["tokens"], dx)
        return loss, grads

    # -- inference helpers ----------------------------------------------------

    def predict_classes(self, tokens) -> np.ndarray:
        if self.config.task is not TaskKind.CLASSIFICATION:
            raise ConfigError("predict_classes requires a classification model")
        return np.argmax(self.forward(tokens), axis=-1)

    def class_probabilities(self, tokens) -> np.ndarray:
        if self.config.task is not TaskKind.CLASSIFICATION:
            raise ConfigError("class_probabilities requires a classification model")
        return softmax(self.forward(tokens), axis=-1)

    # -- checkpointing --------------------------------------------------------

    def save(self, path) -> None:
        """Single-file checkpoint: arrays plus the JSON-encoded config."""
        payload = {"param." + k: v for k, v in self.params.items()}
        payload["__config__"] = np.frombuffer(
            json.dumps({"version": CHECKPOINT_VERSION,
                        "config": self.config.to_dict()},
                       sort_keys=True).encode("utf-8"), dtype=np.uint8)
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "PdeTransformer":
        with np.load(path) as bundle:
            meta = json.loads(bytes(bundle["__config__"]).decode("utf-8"))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(
                    f"checkpoint version {meta.get('version')} not supported "
                    f"(expected {CHECKPOINT_VERSION})")
            config = ModelConfig.from_dict(meta["config"])
            params = {k[len("param."):]: bundle[k].copy()
                      for k in bundle.files if k.startswith("param.")}
        return cls(config, params=params)


def model_forward(model: PdeTransformer, tokens) -> np.ndarray:
    """Functional alias: logits for a token batch under the model's config."""
    return model.forward(tokens)
