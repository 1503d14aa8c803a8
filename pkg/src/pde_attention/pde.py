"""Explicit pseudo-time evolution of attention fields.

Four dynamics are supported, all discretized with explicit Euler steps on a
unit grid (the wave equation uses the semi-implicit/symplectic Euler pair so
its discrete energy stays bounded):

* diffusion             ``A' = A + dt * alpha * lap(A)``
* wave                  ``V' = V + dt * c^2 * lap(A)``, ``A' = A + dt * V'``
* reaction-diffusion    ``A' = A + dt * (alpha * lap(A) + beta * A * (1 - A))``
* advection-diffusion   ``A' = A + dt * (alpha * lap(A) + beta * transport(A))``

``transport`` moves row mass toward increasing position index at speed
``beta`` (upwind: each cell receives ``beta*dt`` of its left neighbor's
mass and sheds the same fraction of its own).

Stability is governed by the usual explicit-scheme bounds: ``dt <= 1/(2*alpha)``
for the diffusion family, ``dt <= 1/c`` for the wave pair, and ``dt*beta <= 1``
for the reaction/transport terms. A stability guard enforces these before any
step; it can be disabled per-config for deliberate instability studies, in
which case a divergence detector (NaN/Inf or ``max|entry| > 1e6``) aborts the
run with the failing step index.

Every step kernel has an exact hand-written adjoint (``evolution_vjp``) so
attention layers built on these dynamics can be trained with reverse-mode
gradients; the Laplacian is self-adjoint under both boundary conditions, and
the transport operator's transpose is implemented explicitly.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateFieldError, DivergenceError, StabilityError
from .grid import (
    AxisMode,
    BoundaryCondition,
    GradScheme,
    coerce_enum,
    laplacian_rows,
    masked_laplacian_rows,
)
from .metrics import DynamicsMetrics
from .tableio import write_csv
from .validation import as_float_field, check_int_in, check_nonnegative, check_positive

# Divergence detector threshold on |entry| (guard-off runs only get this net).
MAX_FIELD_ABS = 1.0e6

# Reference operating point used by suggest_params: alpha_ref at T_ref, with
# alpha scaled like 1/T^2 and dt like 1/T for longer sequences.
ALPHA_REF = 0.10
T_REF = 512

_CFL_SLACK = 1.0 + 1e-12  # tolerate exact-boundary dt in float arithmetic


class PdeKind(str, enum.Enum):
    DIFFUSION = "diffusion"
    WAVE = "wave"
    REACTION_DIFFUSION = "reaction_diffusion"
    ADVECTION_DIFFUSION = "advection_diffusion"


# Reference coefficient defaults per dynamics type (desk-scale operating point).
REFERENCE_COEFFICIENTS = {
    PdeKind.DIFFUSION: {"alpha": 0.10},
    PdeKind.WAVE: {"c": 0.15},
    PdeKind.REACTION_DIFFUSION: {"alpha": 0.10, "beta": 0.02},
    PdeKind.ADVECTION_DIFFUSION: {"alpha": 0.10, "beta": 0.03},
}


@dataclass
class AttentionField:
    """A stack of per-query distributions plus its boundary treatment."""

    values: np.ndarray
    bc: BoundaryCondition = BoundaryCondition.PERIODIC

    def __post_init__(self):
        self.values = as_float_field(self.values)
        self.bc = BoundaryCondition(self.bc)

    @property
    def t(self) -> int:
        return self.values.shape[-1]


@dataclass
class WaveState:
    """Field plus conjugate velocity for the wave dynamics."""

    field: AttentionField
    velocity: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.field, AttentionField):
            self.field = AttentionField(self.field)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.field.values)
        else:
            self.velocity = np.asarray(self.velocity, dtype=np.float64)
            if self.velocity.shape != self.field.values.shape:
                raise ConfigError(
                    f"velocity shape {self.velocity.shape} != field shape {self.field.values.shape}"
                )


@dataclass
class PdeConfig:
    """Which dynamics to run and how."""

    kind: PdeKind = PdeKind.DIFFUSION
    alpha: float = ALPHA_REF
    beta: float = 0.0
    c: float = 0.15
    dt: float = 1.0
    n_steps: int = 4
    bc: BoundaryCondition = BoundaryCondition.PERIODIC
    axis: AxisMode = AxisMode.PER_ROW_1D
    renormalize_rows: bool = False
    clamp_nonnegative: bool = False
    stability_guard: bool = True

    def __post_init__(self):
        self.kind = coerce_enum(PdeKind, self.kind, "kind")
        self.bc = coerce_enum(BoundaryCondition, self.bc, "bc")
        self.axis = coerce_enum(AxisMode, self.axis, "axis")
        self.alpha = check_nonnegative(self.alpha, "alpha")
        self.beta = check_nonnegative(self.beta, "beta")
        self.c = check_nonnegative(self.c, "c")
        self.dt = check_positive(self.dt, "dt")
        self.n_steps = check_int_in(self.n_steps, "n_steps", low=0)

    def cfl_limit(self) -> float:
        """Largest stable dt for this config (inf when no term constrains it)."""
        limit = np.inf
        if self.kind is PdeKind.WAVE:
            if self.c > 0:
                limit = 1.0 / self.c
        elif self.alpha > 0:
            limit = 0.5 / self.alpha
        if self.kind in (PdeKind.REACTION_DIFFUSION, PdeKind.ADVECTION_DIFFUSION) and self.beta > 0:
            limit = min(limit, 1.0 / self.beta)
        return limit

    def check_stability(self) -> None:
        if self.stability_guard:
            limit = self.cfl_limit()
            if self.dt > limit * _CFL_SLACK:
                raise StabilityError(
                    f"dt={self.dt} exceeds the stability bound dt_max={limit} "
                    f"for kind={self.kind.value}",
                    max_dt=limit,
                )

    def to_dict(self) -> dict:
        """Plain-value dict for JSON/checkpoint embedding."""
        return {
            "kind": self.kind.value,
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "c": float(self.c),
            "dt": float(self.dt),
            "n_steps": int(self.n_steps),
            "bc": self.bc.value,
            "axis": self.axis.value,
            "renormalize_rows": bool(self.renormalize_rows),
            "clamp_nonnegative": bool(self.clamp_nonnegative),
            "stability_guard": bool(self.stability_guard),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PdeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown PDE config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def cfl_max_step(kind, *, alpha: float | None = None, c: float | None = None,
                 ds: float = 1.0) -> float:
    """Largest stable step size: ``ds^2/(2*alpha)`` (diffusion family), ``ds/c`` (wave)."""
    kind = PdeKind(kind)
    ds = check_positive(ds, "ds")
    if kind is PdeKind.WAVE:
        if c is None:
            raise ConfigError("wave dynamics need the speed c")
        return ds / check_positive(c, "c")
    if alpha is None:
        raise ConfigError(f"{kind.value} dynamics need the coefficient alpha")
    return ds * ds / (2.0 * check_positive(alpha, "alpha"))


def suggest_params(t: int, kind=PdeKind.DIFFUSION) -> PdeConfig:
    """Sequence-length-aware coefficients: alpha ~ 1/T^2, dt ~ 1/T, CFL-clamped."""
    t = check_int_in(t, "t", low=2)
    kind = PdeKind(kind)
    defaults = REFERENCE_COEFFICIENTS[kind]
    alpha = ALPHA_REF * (T_REF / t) ** 2
    cfg = PdeConfig(
        kind=kind,
        alpha=alpha,
        beta=defaults.get("beta", 0.0),
        c=defaults.get("c", 0.15),
        dt=min(1.0, T_REF / t),
        stability_guard=True,
    )
    return replace(cfg, dt=min(cfg.dt, cfg.cfl_limit()))


# ---------------------------------------------------------------------------
# spatial operators (batched over leading axes, optional support mask)


def _lap(values, bc, axis_mode, support):
    if support is not None:
        return masked_laplacian_rows(values, support)
    out = laplacian_rows(values, bc, axis=-1)
    if axis_mode is AxisMode.FULL_2D:
        out = out + laplacian_rows(values, bc, axis=-2)
    return out


def _left_neighbor(values, bc, support):
    """a[j-1] with wrap/mirror/support semantics (mirroring makes no-op cells)."""
    shifted = np.roll(values, 1, axis=-1)
    if support is not None:
        ok = np.zeros_like(support)
        ok[..., 1:] = support[..., :-1]
        return np.where(ok & support, shifted, values)
    if bc is BoundaryCondition.ZERO_FLUX:
        shifted[..., 0] = values[..., 0]
    return shifted


def _transport(values, bc, support, scheme=GradScheme.UPWIND):
    """Increment field for mass moving toward +s at unit speed."""
    if scheme is GradScheme.UPWIND:
        return _left_neighbor(values, bc, support) - values
    if support is not None:
        raise ConfigError("central transport is not defined on masked supports")
    right = np.roll(values, -1, axis=-1)
    left = np.roll(values, 1, axis=-1)
    if bc is BoundaryCondition.ZERO_FLUX:
        left[..., 0] = values[..., 0]
        right[..., -1] = values[..., -1]
    return (left - right) / 2.0


def _transport_transpose(g, bc, support):
    """Exact adjoint of the upwind transport operator."""
    if support is not None:
        ok = np.zeros_like(support)
        ok[..., 1:] = support[..., :-1]
        h = g * (ok & support)
        shifted = np.zeros_like(h)
        shifted[..., :-1] = h[..., 1:]
        return shifted - h
    if bc is BoundaryCondition.PERIODIC:
        return np.roll(g, -1, axis=-1) - g
    h = g.copy()
    h[..., 0] = 0.0
    shifted = np.zeros_like(h)
    shifted[..., :-1] = h[..., 1:]
    return shifted - h


# ---------------------------------------------------------------------------
# single steps


def _guard(enabled: bool, dt: float, limit: float, what: str) -> None:
    if enabled and dt > limit * _CFL_SLACK:
        raise StabilityError(
            f"dt={dt} exceeds the stability bound dt_max={limit} for {what}", max_dt=limit
        )


def _postprocess(raw, clamp: bool, renormalize: bool):
    """Optional clamp-to-nonnegative then row renormalization; returns (values, row mass)."""
    mass = None
    if clamp:
        raw = np.maximum(raw, 0.0)
    if renormalize:
        mass = raw.sum(axis=-1)
        if np.any(mass <= 0.0):
            raise DegenerateFieldError("row mass is nonpositive before renormalization")
        raw = raw / mass[..., None]
    return raw, mass


def step_values(values, cfg: PdeConfig, *, velocity=None, support=None,
                alpha=None, beta=None):
    """One explicit step on raw values (batched). Returns (values, velocity, mass).

    ``alpha``/``beta`` may override the config coefficients with arrays that
    broadcast over the leading axes (per-head learnable coefficients).
    """
    a = np.asarray(values, dtype=np.float64)
    alpha = cfg.alpha if alpha is None else np.asarray(alpha, dtype=np.float64)
    beta = cfg.beta if beta is None else np.asarray(beta, dtype=np.float64)
    dt = cfg.dt
    if cfg.stability_guard:
        if cfg.kind is PdeKind.WAVE:
            if cfg.c > 0:
                _guard(True, dt, 1.0 / cfg.c, "wave")
        elif np.max(alpha) > 0:
            _guard(True, dt, 0.5 / float(np.max(alpha)), "diffusion")
        if cfg.kind in (PdeKind.REACTION_DIFFUSION, PdeKind.ADVECTION_DIFFUSION) \
                and np.max(beta) > 0:
            _guard(True, dt, 1.0 / float(np.max(beta)), "transport/reaction")

    # overflow during deliberate guard-off instability runs is handled by the
    # divergence detector, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.kind is PdeKind.WAVE:
            if velocity is None:
                velocity = np.zeros_like(a)
            velocity = velocity + dt * (cfg.c ** 2) * _lap(a, cfg.bc, cfg.axis, support)
            raw = a + dt * velocity
        elif cfg.kind is PdeKind.DIFFUSION:
            raw = a + dt * alpha * _lap(a, cfg.bc, cfg.axis, support)
        elif cfg.kind is PdeKind.REACTION_DIFFUSION:
            raw = a + dt * (alpha * _lap(a, cfg.bc, cfg.axis, support) + beta * a * (1.0 - a))
        else:  # advection-diffusion
            raw = a + dt * (alpha * _lap(a, cfg.bc, cfg.axis, support)
                            + beta * _transport(a, cfg.bc, support))
        out, mass = _postprocess(raw, cfg.clamp_nonnegative, cfg.renormalize_rows)
    return out, velocity, mass


def diffusion_step(a, alpha: float, dt: float, *, axis=AxisMode.PER_ROW_1D,
                   guard: bool = True) -> AttentionField:
    """``A + dt*alpha*lap(A)``."""
    a = a if isinstance(a, AttentionField) else AttentionField(a)
    check_nonnegative(alpha, "alpha")
    check_positive(dt, "dt")
    if alpha > 0:
        _guard(guard, dt, 0.5 / alpha, "diffusion")
    values = a.values + dt * alpha * _lap(a.values, a.bc, AxisMode(axis), None)
    return AttentionField(values, a.bc)


def wave_step(state, c: float, dt: float, *, axis=AxisMode.PER_ROW_1D,
              guard: bool = True) -> WaveState:
    """Symplectic Euler pair: velocity first, then the field."""
    state = state if isinstance(state, WaveState) else WaveState(state)
    check_nonnegative(c, "c")
    check_positive(dt, "dt")
    if c > 0:
        _guard(guard, dt, 1.0 / c, "wave")
    a = state.field
    velocity = state.velocity + dt * (c ** 2) * _lap(a.values, a.bc, AxisMode(axis), None)
    values = a.values + dt * velocity
    return WaveState(AttentionField(values, a.bc), velocity)


def reaction_diffusion_step(a, alpha: float, beta: float, dt: float, *,
                            axis=AxisMode.PER_ROW_1D, guard: bool = True,
                            renormalize_rows: bool = False,
                            clamp_nonnegative: bool = False) -> AttentionField:
    """Diffusion plus logistic reaction ``beta * A * (1 - A)``."""
    a = a if isinstance(a, AttentionField) else AttentionField(a)
    check_nonnegative(alpha, "alpha")
    check_nonnegative(beta, "beta")
    check_positive(dt, "dt")
    if alpha > 0:
        _guard(guard, dt, 0.5 / alpha, "diffusion")
    if beta > 0:
        _guard(guard, dt, 1.0 / beta, "reaction")
    raw = a.values + dt * (alpha * _lap(a.values, a.bc, AxisMode(axis), None)
                           + beta * a.values * (1.0 - a.values))
    values, _ = _postprocess(raw, clamp_nonnegative, renormalize_rows)
    return AttentionField(values, a.bc)


def advection_diffusion_step(a, alpha: float, beta: float, dt: float, *,
                             scheme=GradScheme.UPWIND, axis=AxisMode.PER_ROW_1D,
                             guard: bool = True, renormalize_rows: bool = False,
                             clamp_nonnegative: bool = False) -> AttentionField:
    """Diffusion plus transport of row mass toward +s at speed ``beta``."""
    a = a if isinstance(a, AttentionField) else AttentionField(a)
    check_nonnegative(alpha, "alpha")
    check_nonnegative(beta, "beta")
    check_positive(dt, "dt")
    if alpha > 0:
        _guard(guard, dt, 0.5 / alpha, "diffusion")
    if beta > 0:
        _guard(guard, dt, 1.0 / beta, "transport")
    raw = a.values + dt * (alpha * _lap(a.values, a.bc, AxisMode(axis), None)
                           + beta * _transport(a.values, a.bc, None, GradScheme(scheme)))
    values, _ = _postprocess(raw, clamp_nonnegative, renormalize_rows)
    return AttentionField(values, a.bc)


# ---------------------------------------------------------------------------
# evolution drivers


def _check_divergence(values, step: int) -> None:
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"field diverged at step {step}: non-finite entries", step=step)
    peak = float(np.max(np.abs(values)))
    if peak > MAX_FIELD_ABS:
        raise DivergenceError(
            f"field diverged at step {step}: max |entry| = {peak:.3e} > {MAX_FIELD_ABS:.0e}",
            step=step,
        )


def run_evolution(values, cfg: PdeConfig, *, support=None, velocity=None,
                  alpha=None, beta=None):
    """Low-level batched driver used by the attention layers.

    Returns ``(snapshots, masses, velocity)`` where ``snapshots`` has
    ``n_steps + 1`` arrays (post-processing applied) and ``masses`` holds the
    pre-normalization row sums per step (``None`` entries when renormalization
    is off). ``alpha``/``beta`` may override the config coefficients with
    arrays broadcasting over leading axes (per-head values). Raises
    ``DivergenceError``/``DegenerateFieldError`` with the failing step index.
    """
    a = np.asarray(values, dtype=np.float64)
    if support is not None:
        support = np.asarray(support, dtype=bool)
        if cfg.axis is AxisMode.FULL_2D:
            raise ConfigError("masked evolution is defined for per-row dynamics only")
    snapshots = [a]
    masses = []
    for n in range(1, cfg.n_steps + 1):
        try:
            a, velocity, mass = step_values(a, cfg, velocity=velocity, support=support,
                                            alpha=alpha, beta=beta)
        except DegenerateFieldError as exc:
            raise DegenerateFieldError(f"step {n}: {exc}") from exc
        _check_divergence(a, n)
        snapshots.append(a)
        masses.append(mass)
    return snapshots, masses, velocity


def evolution_vjp(grad_final, snapshots, masses, cfg: PdeConfig, *, support=None,
                  alpha=None, beta=None):
    """Reverse-mode gradients through :func:`run_evolution`.

    Given the loss gradient w.r.t. the final field, returns
    ``(grad_initial, grad_alpha, grad_beta)`` where the coefficient gradients
    are reduced over the trailing (row, column) axes — one scalar per leading
    batch entry — ready for per-head accumulation. ``alpha``/``beta`` must
    mirror whatever overrides were passed to the forward driver.

    Adjoints used: the Laplacian is self-adjoint under both boundary
    conditions (symmetric stencil matrices), so the diffusion-step adjoint is
    ``g <- g + dt*alpha*lap(g)``; the transport adjoint is the explicit
    transpose; clamping masks the gradient where the forward output was
    clamped to zero; renormalization applies the quotient-rule Jacobian using
    the recorded pre-normalization row masses.
    """
    g = np.asarray(grad_final, dtype=np.float64)
    alpha = cfg.alpha if alpha is None else np.asarray(alpha, dtype=np.float64)
    beta = cfg.beta if beta is None else np.asarray(beta, dtype=np.float64)
    lead_shape = g.shape[:-2]
    d_alpha = np.zeros(lead_shape, dtype=np.float64)
    d_beta = np.zeros(lead_shape, dtype=np.float64)
    dt = cfg.dt
    g_vel = None  # wave: gradient flowing through the velocity chain

    for n in range(cfg.n_steps, 0, -1):
        a_in = snapshots[n - 1]
        a_out = snapshots[n]
        mass = masses[n - 1]
        if cfg.renormalize_rows:
            s = mass[..., None]
            g = (g - (g * a_out).sum(axis=-1, keepdims=True)) / s
        if cfg.clamp_nonnegative:
            # a_out > 0 identifies un-clamped entries even after renormalization
            g = g * (a_out > 0.0)

        if cfg.kind is PdeKind.WAVE:
            if g_vel is None:
                g_vel = np.zeros_like(g)
            g_vel = g_vel + dt * g
            g = g + dt * (cfg.c ** 2) * _lap(g_vel, cfg.bc, cfg.axis, support)
        elif cfg.kind is PdeKind.DIFFUSION:
            d_alpha += dt * (g * _lap(a_in, cfg.bc, cfg.axis, support)).sum(axis=(-2, -1))
            g = g + dt * alpha * _lap(g, cfg.bc, cfg.axis, support)
        elif cfg.kind is PdeKind.REACTION_DIFFUSION:
            lap_in = _lap(a_in, cfg.bc, cfg.axis, support)
            d_alpha += dt * (g * lap_in).sum(axis=(-2, -1))
            d_beta += dt * (g * a_in * (1.0 - a_in)).sum(axis=(-2, -1))
            g = g + dt * (alpha * _lap(g, cfg.bc, cfg.axis, support)
                          + beta * (1.0 - 2.0 * a_in) * g)
        else:  # advection-diffusion (upwind transport only on the training path)
            lap_in = _lap(a_in, cfg.bc, cfg.axis, support)
            d_alpha += dt * (g * lap_in).sum(axis=(-2, -1))
            d_beta += dt * (g * _transport(a_in, cfg.bc, support)).sum(axis=(-2, -1))
            g = g + dt * (alpha * _lap(g, cfg.bc, cfg.axis, support)
                          + beta * _transport_transpose(g, cfg.bc, support))
    return g, d_alpha, d_beta


@dataclass
class StepMetrics:
    """Per-snapshot diagnostics recorded along a trajectory."""

    step: int
    smoothness: float
    consistency: float
    effective_range: float
    row_sum_drift: float
    max_abs: float
    renorm_mass: float = float("nan")

    FIELDS = ("step", "smoothness", "consistency", "effective_range",
              "row_sum_drift", "max_abs", "renorm_mass")

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


@dataclass
class Trajectory:
    """All snapshots of one evolution run plus per-step diagnostics."""

    snapshots: list
    step_metrics: list
    config: PdeConfig
    velocities: list | None = None

    @property
    def final(self) -> AttentionField:
        return self.snapshots[-1]

    def to_csv(self, path) -> None:
        write_csv(path, StepMetrics.FIELDS, [m.as_row() for m in self.step_metrics])


def evolve(a0, cfg: PdeConfig, *, v0=None, range_mass: float = 0.9) -> Trajectory:
    """Run ``cfg.n_steps`` explicit steps and record snapshots + diagnostics."""
    a0 = a0 if isinstance(a0, AttentionField) else AttentionField(a0)
    if cfg.axis is AxisMode.FULL_2D and a0.values.shape[0] != a0.values.shape[1]:
        raise ConfigError("full_2d evolution requires a square field")
    cfg.check_stability()

    base_sums = a0.values.sum(axis=-1)
    velocity = None
    if cfg.kind is PdeKind.WAVE:
        velocity = np.zeros_like(a0.values) if v0 is None else np.asarray(v0, dtype=np.float64)
        if velocity.shape != a0.values.shape:
            raise ConfigError("v0 shape does not match the field")

    def make_metrics(step, values, mass):
        dyn = DynamicsMetrics.from_field(AttentionField(values, a0.bc), cfg.axis, range_mass)
        drift = float(np.max(np.abs(values.sum(axis=-1) - base_sums)))
        renorm = float("nan") if mass is None else float(np.mean(mass))
        return StepMetrics(step, dyn.smoothness, dyn.consistency, dyn.effective_range,
                           drift, float(np.max(np.abs(values))), renorm)

    values = a0.values
    snapshots = [AttentionField(values.copy(), a0.bc)]
    velocities = [velocity.copy()] if velocity is not None else None
    step_metrics = [make_metrics(0, values, None)]

    for n in range(1, cfg.n_steps + 1):
        try:
            values, velocity, mass = step_values(values, cfg, velocity=velocity)
        except DegenerateFieldError as exc:
            raise DegenerateFieldError(f"step {n}: {exc}") from exc
        _check_divergence(values, n)
        snapshots.append(AttentionField(values.copy(), a0.bc))
        if velocities is not None:
            velocities.append(velocity.copy())
        step_metrics.append(make_metrics(n, values, mass))

    return Trajectory(snapshots, step_metrics, cfg, velocities)
