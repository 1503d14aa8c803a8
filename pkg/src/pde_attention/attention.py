"""Multi-head attention whose weight fields evolve under PDE dynamics.

The forward pass is standard scaled dot-product attention with one twist:
after the row softmax, each head's attention matrix is treated as a spatial
field and advanced ``n_steps`` of explicit PDE evolution before it multiplies
the values. ``n_steps = 0`` reproduces standard attention bit-exactly.

Gradients are hand-written reverse mode. A forward call returns an
``AttentionTape`` recording every intermediate needed for the exact backward
pass (softmax outputs, per-step field snapshots, pre-normalization masses),
and ``pde_attention_backward`` replays the chain in reverse: output
projection, value product, evolution adjoint (see ``pde.evolution_vjp``),
softmax Jacobian, and the input projections. Per-head diffusion/reaction
coefficients can be learnable; their gradients are accumulated across steps.

Causal use masks scores before the softmax and evolves the masked field with
zero-flux behavior at the causal frontier, so no attention mass ever crosses
to future positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, DivergenceError
from .pde import AttentionField, PdeConfig, PdeKind, REFERENCE_COEFFICIENTS, evolution_vjp, run_evolution


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row softmax with max subtraction; tolerates -inf entries from masks."""
    shifted = scores - np.max(scores, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(out: np.ndarray, grad_out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of the softmax given its output."""
    inner = (grad_out * out).sum(axis=axis, keepdims=True)
    return out * (grad_out - inner)


def causal_mask(t: int) -> np.ndarray:
    """Lower-triangular boolean mask: position i may attend to j <= i."""
    return np.tril(np.ones((t, t), dtype=bool))


def attention_init(q, k, mask=None) -> AttentionField:
    """Initial attention field ``softmax(q @ k.T / sqrt(d))``.

    ``mask`` (boolean, broadcastable to T x T) excludes positions before the
    softmax; every row must keep at least one admissible position.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    k = np.atleast_2d(np.asarray(k, dtype=np.float64))
    if q.ndim != 2 or k.ndim != 2:
        raise ConfigError("q and k must be 2-D (tokens, features)")
    if q.shape[1] != k.shape[1]:
        raise ConfigError(f"q and k feature widths differ: {q.shape[1]} != {k.shape[1]}")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise ConfigError("q and k must be finite")
    scores = q @ k.T / np.sqrt(q.shape[1])
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        if not mask.any(axis=1).all():
            raise ConfigError("mask leaves at least one row with no admissible position")
        scores = np.where(mask, scores, -np.inf)
    return AttentionField(softmax(scores))


@dataclass
class ProjectionWeights:
    """Per-layer projection matrices plus optional learnable PDE coefficients.

    ``alpha``/``beta`` are per-head arrays (shape ``(n_heads,)``) overriding
    the config coefficients when present; ``alpha`` is kept inside the CFL
    region ``[0, 0.5/dt]`` by the training loop.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    n_heads: int = 1
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ConfigError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ConfigError(f"n_heads={self.n_heads} must divide model width d={d}")
        for name in ("alpha", "beta"):
            coeff = getattr(self, name)
            if coeff is not None:
                coeff = np.asarray(coeff, dtype=np.float64)
                if coeff.shape != (self.n_heads,):
                    raise ConfigError(f"{name} must have shape ({self.n_heads},)")
                setattr(self, name, coeff)

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def random(cls, d: int, n_heads: int, rng: np.random.Generator,
               kind=PdeKind.DIFFUSION, learnable_coefficients: bool = False):
        """Scaled-uniform fan-in initialization; coefficients from the reference table."""
        def mat():
            bound = 1.0 / np.sqrt(d)
            return rng.uniform(-bound, bound, size=(d, d))

        kind = PdeKind(kind)
        defaults = REFERENCE_COEFFICIENTS[kind]
        alpha = beta = None
        if learnable_coefficients and kind is not PdeKind.WAVE:
            alpha = np.full(n_heads, defaults.get("alpha", 0.0))
            if "beta" in defaults:
                beta = np.full(n_heads, defaults["beta"])
        return cls(mat(), mat(), mat(), mat(), n_heads=n_heads, alpha=alpha, beta=beta)


@dataclass
class WeightGradients:
    """Gradients matching the ProjectionWeights layout."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None


@dataclass
class AttentionTape:
    """Everything the exact backward pass needs, in forward order."""

    x: np.ndarray  # (B, T, d)
    weights: ProjectionWeights
    config: PdeConfig
    causal: bool
    pattern: np.ndarray | None
    q: np.ndarray  # (B, H, T, d_head)
    k: np.ndarray
    v: np.ndarray
    snapshots: list  # n_steps + 1 fields of shape (B, H, T, T)
    masses: list
    concat: np.ndarray  # (B, T, d)
    squeeze_batch: bool

    def replay(self) -> np.ndarray:
        """Recompute the forward output from the recorded inputs (bit-identical)."""
        y, _ = pde_attention_forward(
            self.x if not self.squeeze_batch else self.x[0],
            self.weights, self.config, causal=self.causal, pattern=self.pattern,
        )
        return y


def _split_heads(z: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = z.shape
    return z.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(z: np.ndarray) -> np.ndarray:
    b, h, t, dh = z.shape
    return z.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _coefficient_overrides(weights: ProjectionWeights):
    alpha = beta = None
    if weights.alpha is not None:
        alpha = weights.alpha.reshape(-1, 1, 1)  # broadcast over (B, H, T, T)
    if weights.beta is not None:
        beta = weights.beta.reshape(-1, 1, 1)
    return alpha, beta


def pde_attention_forward(x, weights: ProjectionWeights, cfg: PdeConfig, *,
                          causal: bool = False, pattern=None):
    """Multi-head attention with evolved fields; returns ``(y, tape)``.

    ``x`` is ``(T, d)`` or batched ``(B, T, d)``. ``pattern`` restricts the
    softmax to a boolean ``(T, T)`` sparsity pattern (band/global); when
    ``causal`` is set, scores are additionally masked to the lower triangle
    and the evolution runs with zero-flux behavior at the causal frontier.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ConfigError(f"x must be (T, d) or (B, T, d), got shape {x.shape}")
    b, t, d = x.shape
    if d != weights.d_model:
        raise ConfigError(f"x width {d} != weight width {weights.d_model}")

    h, dh = weights.n_heads, weights.d_head
    q = _split_heads(x @ weights.w_q, h)
    k = _split_heads(x @ weights.w_k, h)
    v = _split_heads(x @ weights.w_v, h)

    scores = q @ k.swapaxes(-1, -2) / np.sqrt(dh)
    init_mask = None
    if pattern is not None:
        pattern = np.asarray(pattern, dtype=bool)
        if pattern.shape != (t, t):
            raise ConfigError(f"pattern must be ({t}, {t}), got {pattern.shape}")
        init_mask = pattern
    if causal:
        tri = causal_mask(t)
        init_mask = tri if init_mask is None else (init_mask & tri)
    if init_mask is not None:
        if not init_mask.any(axis=1).all():
            raise ConfigError("mask leaves at least one query with no admissible position")
        scores = np.where(init_mask, scores, -np.inf)
    a0 = softmax(scores)

    # dense evolution by default; the causal frontier (not the sparsity
    # pattern) bounds the evolution support, so banded mass may still spread
    support = causal_mask(t) if causal else None
    alpha, beta = _coefficient_overrides(weights)
    snapshots, masses, _ = run_evolution(a0, cfg, support=support, alpha=alpha, beta=beta)

    concat = _merge_heads(snapshots[-1] @ v)
    y = concat @ weights.w_o
    tape = AttentionTape(
        x=x, weights=weights, config=cfg, causal=causal, pattern=pattern,
        q=q, k=k, v=v, snapshots=snapshots, masses=masses, concat=concat,
        squeeze_batch=squeeze,
    )
    return (y[0] if squeeze else y), tape


def pde_attention_backward(tape: AttentionTape, dy):
    """Exact reverse-mode gradients; returns ``(dx, WeightGradients)``."""
    dy = np.asarray(dy, dtype=np.float64)
    if tape.squeeze_batch and dy.ndim == 2:
        dy = dy[None]
    w = tape.weights
    h, dh = w.n_heads, w.d_head
    t = tape.x.shape[1]
    cfg = tape.config
    support = causal_mask(t) if tape.causal else None

    d_wo = np.einsum("btd,bte->de", tape.concat, dy)
    dconcat = dy @ w.w_o.T
    dhead = _split_heads(dconcat, h)

    a_final = tape.snapshots[-1]
    dv = a_final.swapaxes(-1, -2) @ dhead
    da_final = dhead @ tape.v.swapaxes(-1, -2)

    alpha, beta = _coefficient_overrides(w)
    da0, d_alpha_lead, d_beta_lead = evolution_vjp(
        da_final, tape.snapshots, tape.masses, cfg,
        support=support, alpha=alpha, beta=beta,
    )

    # softmax rows are exactly zero at masked positions, so the Jacobian
    # already kills any gradient that leaked there
    dscores = softmax_vjp(tape.snapshots[0], da0) / np.sqrt(dh)
    dq = dscores @ tape.k
    dk = dscores.swapaxes(-1, -2) @ tape.q

    dq_flat = _merge_heads(dq)
    dk_flat = _merge_heads(dk)
    dv_flat = _merge_heads(dv)
    d_wq = np.einsum("btd,bte->de", tape.x, dq_flat)
    d_wk = np.einsum("btd,bte->de", tape.x, dk_flat)
    d_wv = np.einsum("btd,bte->de", tape.x, dv_flat)
    dx = dq_flat @ w.w_q.T + dk_flat @ w.w_k.T + dv_flat @ w.w_v.T

    d_alpha = d_beta = None
    if w.alpha is not None:
        d_alpha = d_alpha_lead.sum(axis=0)  # reduce over batch -> (H,)
    if w.beta is not None:
        d_beta = d_beta_lead.sum(axis=0)
    grads = WeightGradients(d_wq, d_wk, d_wv, d_wo, d_alpha, d_beta)
    return (dx[0] if tape.squeeze_batch else dx), grads


@dataclass
class GradientCheckReport:
    """Result of comparing an analytic gradient to central differences."""

    max_rel_error: float
    worst_index: tuple
    n_checked: int


def gradient_check(fn, theta, analytic_grad, eps: float = 1e-6,
                   floor: float = 1e-12) -> GradientCheckReport:
    """Central-difference check of ``analytic_grad`` against scalar ``fn(theta)``.

    Relative error per element uses ``max(|analytic|, |numeric|, floor)`` as
    the denominator. The default floor (1e-12) treats every element as
    significant; for deep compositions whose gradients span many orders of
    magnitude, pass ``floor=|grad|_max`` to hold negligible elements to an
    absolute standard instead of comparing them against cancellation noise.
    A non-finite probe value fails immediately, naming the probe index.
    """
    theta = np.array(theta, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ConfigError(f"gradient shape {analytic.shape} != parameter shape {theta.shape}")
    flat = theta.ravel()
    worst = 0.0
    worst_index = (0,)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = float(fn(theta))
        flat[i] = keep - eps
        down = float(fn(theta))
        flat[i] = keep
        if not (np.isfinite(up) and np.isfinite(down)):
            raise DivergenceError(
                f"non-finite loss while probing parameter index {np.unravel_index(i, theta.shape)}"
            )
        numeric = (up - down) / (2 * eps)
        a = analytic.ravel()[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if rel > worst:
            worst = rel
            worst_index = np.unravel_index(i, theta.shape)
    return GradientCheckReport(worst, tuple(int(j) for j in worst_index), flat.size)
