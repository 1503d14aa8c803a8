"""Wall-clock cost of one explicit PDE step per kind and field size.

One dense step touches every entry of a T x T field a constant number of
times, so the time per step should scale as O(T^2); the fitted log-log slope
of nanoseconds-per-step against T documents that empirically.

Each timing sample steps a batch of distinct fields whose combined size is
held constant (~32 MiB) across T. Stepping a single small field repeatedly
would keep it cache-resident while large fields stream from main memory, and
the fitted slope would then measure the cache hierarchy rather than the
stencil's arithmetic scaling. With a constant working set every size pays
the same per-byte cost, and the minimum over repeats suppresses scheduler
noise.
"""

from __future__ import annotations

import time

import numpy as np

from .attention import softmax
from .errors import ConfigError
from .pde import REFERENCE_COEFFICIENTS, PdeConfig, PdeKind, step_values

DEFAULT_T_VALUES = (128, 256, 512, 1024, 2048, 4096)
BENCH_FIELDS = ("kind", "T", "ns_per_step")

# combined cells per timed batch: 2^22 doubles = 32 MiB, larger than typical
# last-level caches, so every field size is measured in the streaming regime
_TARGET_CELLS = 1 << 22


def bench_config(kind) -> PdeConfig:
    """A CFL-safe single-step config with the reference coefficients."""
    kind = PdeKind(kind)
    defaults = REFERENCE_COEFFICIENTS[kind]
    return PdeConfig(
        kind=kind,
        alpha=defaults.get("alpha", 0.0),
        beta=defaults.get("beta", 0.0),
        c=defaults.get("c", 0.0),
        dt=1.0,
        n_steps=1,
        renormalize_rows=True,
        clamp_nonnegative=True,
    )


def time_one_step(kind, t: int, *, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-``repeats`` nanoseconds for one explicit step on a T x T field.

    The step runs over a (batch, T, T) stack sized to ``_TARGET_CELLS`` total
    entries and the elapsed time is divided by the batch size.
    """
    if t < 2:
        raise ConfigError(f"field size must be >= 2, got {t}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    cfg = bench_config(kind)
    rng = np.random.default_rng(seed)
    batch = max(1, _TARGET_CELLS // (t * t))
    fields = softmax(rng.standard_normal((batch, t, t)))
    velocity = np.zeros_like(fields) if cfg.kind is PdeKind.WAVE else None

    best = np.inf
    for _ in range(repeats):
        values = fields.copy()
        vel = None if velocity is None else velocity.copy()
        start = time.perf_counter()
        step_values(values, cfg, velocity=vel)
        best = min(best, time.perf_counter() - start)
    return best / batch * 1e9


def bench_rows(kinds=None, t_values=DEFAULT_T_VALUES, *, repeats: int = 3,
               seed: int = 0) -> list[dict]:
    """Timing table rows ``{kind, T, ns_per_step}`` over the size grid."""
    kinds = list(PdeKind) if kinds is None else [PdeKind(k) for k in kinds]
    rows = []
    for kind in kinds:
        for t in t_values:
            ns = time_one_step(kind, int(t), repeats=repeats, seed=seed)
            rows.append({"kind": kind.value, "T": int(t), "ns_per_step": ns})
    return rows


def fitted_loglog_slope(rows, kind) -> float:
    """Slope of log(ns_per_step) against log(T) for one kind's rows."""
    kind = PdeKind(kind).value
    points = [(row["T"], row["ns_per_step"]) for row in rows if row["kind"] == kind]
    if len(points) < 2:
        raise ConfigError(f"need at least two sizes to fit a slope for {kind!r}")
    ts = np.log([p[0] for p in points])
    ns = np.log([p[1] for p in points])
    return float(np.polyfit(ts, ns, 1)[0])
