"""Numerical verification suites for the dynamics' provable properties.

Each suite evolves a concrete field, measures the quantity the theory
constrains, and returns a ``VerificationReport`` stating what was measured,
what was expected, and whether the check passed. Nothing here asserts; the
reports are data, consumed by tests and by the ``verify`` CLI command.

Covered properties:

- propagation speed: the effective range of a one-hot row grows like
  sqrt(pseudo-time) under diffusion (log-log slope near 1/2);
- smoothness/consistency decay: ``S(n) = ||lap A||_F^2`` is nonincreasing and
  bounded by a spectral envelope ``S(0) * rho^(2n)`` with
  ``rho = max_{lam != 0} |1 - alpha*dt*lam|``, and the entry variance ``C(n)``
  is nonincreasing;
- first-order time accuracy: explicit Euler error against the exact
  semi-discrete solution (DFT modes scaled by ``exp(-alpha*lam_k*t)``)
  shrinks linearly in dt;
- hybrid refinement error: the sparse-vs-dense error obeys the exact mode
  recursion and its spectral decay envelope.

The smoothness envelope uses the full spectral radius over nonconstant
modes rather than only the smallest nonzero eigenvalue: near the stability
boundary the highest mode decays slowest in magnitude (its factor is close
to -1), and the radius form is the bound that actually holds for every
CFL-stable configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import (
    BoundaryCondition,
    Spectrum,
    dft_row,
    idft_row,
    laplacian_eigenvalues,
    laplacian_rows,
)
from .hybrid import SparsePattern, hybrid_error_experiment
from .metrics import consistency, effective_range, smoothness
from .pde import AttentionField, PdeConfig, PdeKind, run_evolution
from .tableio import write_json


@dataclass
class VerificationReport:
    """Outcome of one verification suite: measured vs expected, pass/fail."""

    name: str
    passed: bool
    measured: dict
    expected: dict
    tolerance: dict
    notes: str = ""

    def to_json_dict(self) -> dict:
        def clean(value):
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [clean(v) for v in value]
            if isinstance(value, np.ndarray):
                return [clean(v) for v in value.tolist()]
            if isinstance(value, (np.bool_, bool)):
                return bool(value)
            if isinstance(value, (np.floating, np.integer)):
                return value.item()
            return value

        return clean({
            "name": self.name,
            "passed": bool(self.passed),
            "measured": self.measured,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "notes": self.notes,
        })

    def to_json(self, path) -> None:
        write_json(path, self.to_json_dict())

    def as_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"[{status}] {self.name}"]
        for key in sorted(self.measured):
            expected = self.expected.get(key, "-")
            lines.append(f"  {key}: measured={self.measured[key]} expected={expected}")
        if self.notes:
            lines.append(f"  notes: {self.notes}")
        return "\n".join(lines)


def _simplex_rows(t: int, rng: np.random.Generator, n_rows: int | None = None) -> np.ndarray:
    raw = rng.uniform(size=(n_rows or t, t)) + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)


def verify_propagation_speed(t: int = 256, alpha: float = 0.1, dt: float = 1.0,
                             n_steps: int = 400, *, mass: float = 0.9) -> VerificationReport:
    """Fit the growth exponent of the effective range of a diffused one-hot row.

    The fit uses log(range) vs log(pseudo-time) restricted to the window
    ``3 <= range <= t/2`` where the spread is neither grid-limited nor
    wrapped. Expected slope 1/2 (tolerance [0.4, 0.6]) with correlation
    at least 0.99.
    """
    row = np.zeros((1, t))
    row[0, t // 2] = 1.0
    cfg = PdeConfig(kind=PdeKind.DIFFUSION, alpha=alpha, dt=dt, n_steps=n_steps)
    snapshots, _, _ = run_evolution(row, cfg)

    times, ranges = [], []
    for n in range(1, len(snapshots)):
        r = effective_range(snapshots[n], mass=mass)
        if 3.0 <= r <= t / 2.0:
            times.append(n * dt)
            ranges.append(r)

    measured = {"n_fit_points": len(times)}
    expected = {"slope": 0.5, "correlation": ">= 0.99"}
    tolerance = {"slope": [0.4, 0.6], "correlation_min": 0.99}
    if len(times) < 3:
        return VerificationReport(
            name="propagation_speed", passed=False, measured=measured,
            expected=expected, tolerance=tolerance,
            notes="insufficient data: too few steps with range in [3, T/2]",
        )

    log_t = np.log(np.asarray(times))
    log_r = np.log(np.asarray(ranges))
    slope, _ = np.polyfit(log_t, log_r, 1)
    corr = float(np.corrcoef(log_t, log_r)[0, 1])
    measured.update({"slope": float(slope), "correlation": corr})
    passed = 0.4 <= slope <= 0.6 and corr >= 0.99
    return VerificationReport(
        name="propagation_speed", passed=passed, measured=measured,
        expected=expected, tolerance=tolerance,
    )


def _spectral_radius_nonconstant(t: int, alpha_dt: float, bc) -> float:
    """max |1 - alpha*dt*lam| over the Laplacian's nonzero eigenvalues."""
    if bc == BoundaryCondition.PERIODIC:
        lam = laplacian_eigenvalues(t)
    else:
        dense = laplacian_rows(np.eye(t), bc).T  # columns L e_j
        lam = -np.linalg.eigvalsh((dense + dense.T) / 2.0)
    lam = lam[lam > 1e-12]
    return float(np.max(np.abs(1.0 - alpha_dt * lam)))


def verify_smoothness_decay(t: int = 32, alpha: float = 0.1, dt: float = 1.0,
                            n_steps: int = 50, *, bc=BoundaryCondition.PERIODIC,
                            seed: int = 0, initial=None,
                            stability_guard: bool = True) -> VerificationReport:
    """Check the smoothness envelope and monotone consistency under diffusion.

    ``S(n) <= S(0) * rho^(2n) * (1 + 1e-9)`` with rho the nonconstant-mode
    spectral radius, S nonincreasing, and C nonincreasing. With
    ``stability_guard=False`` and an unstable dt this returns a failing
    report (the negative control).
    """
    bc = BoundaryCondition(bc)
    if initial is None:
        initial = _simplex_rows(t, np.random.default_rng(seed))
    else:
        initial = np.asarray(initial, dtype=np.float64)
        t = initial.shape[-1]
    cfg = PdeConfig(kind=PdeKind.DIFFUSION, alpha=alpha, dt=dt, n_steps=n_steps,
                    bc=bc, stability_guard=stability_guard)
    snapshots, _, _ = run_evolution(initial, cfg)

    s_curve = np.array([smoothness(AttentionField(a, bc=bc)) for a in snapshots])
    c_curve = np.array([consistency(a) for a in snapshots])
    rho = _spectral_radius_nonconstant(t, alpha * dt, bc)
    envelope = s_curve[0] * rho ** (2 * np.arange(len(snapshots))) * (1.0 + 1e-9)

    # once the field is uniform to round-off, S and C sit on a noise floor of
    # order (eps * scale)^2 that the geometric envelope eventually undercuts
    eps = np.finfo(np.float64).eps
    scale = max(1.0, float(np.max(np.abs(initial))))
    floor = (8.0 * eps * scale) ** 2 * t * t

    slack = 1.0 + 1e-12
    s_monotone = bool(np.all(s_curve[1:] <= s_curve[:-1] * slack + floor))
    c_monotone = bool(np.all(c_curve[1:] <= c_curve[:-1] * slack + floor))
    s_bounded = bool(np.all(s_curve <= envelope + floor))
    passed = s_monotone and c_monotone and s_bounded
    return VerificationReport(
        name="smoothness_decay", passed=passed,
        measured={
            "smoothness_monotone": s_monotone,
            "consistency_monotone": c_monotone,
            "smoothness_within_envelope": s_bounded,
            "initial_smoothness": float(s_curve[0]),
            "final_smoothness": float(s_curve[-1]),
            "spectral_radius": rho,
        },
        expected={
            "smoothness_monotone": True,
            "consistency_monotone": True,
            "smoothness_within_envelope": True,
        },
        tolerance={"envelope_slack": 1e-9, "monotone_slack": 1e-12},
    )


def verify_multilayer_error(t: int = 64, alpha: float = 0.1, total_time: float = 8.0,
                            dt_list=(0.5, 0.25, 0.125)) -> VerificationReport:
    """First-order accuracy of explicit Euler against the exact mode solution.

    The exact reference advances each DFT mode by ``exp(-alpha*lam_k*time)``
    (periodic semi-discrete heat solution). Shrinking dt by a factor r must
    shrink the max error by r within 20%: for the default halvings the
    accepted ratio band is [1.6, 2.4].
    """
    row = np.zeros(t)
    row[t // 2] = 1.0
    lam = laplacian_eigenvalues(t)
    modes = dft_row(row).coefficients
    exact = idft_row(Spectrum(modes * np.exp(-alpha * lam * total_time), lam))

    errors = []
    for dt in dt_list:
        n_float = total_time / dt
        n = round(n_float)
        if abs(n_float - n) > 1e-9 or n < 1:
            raise ConfigError(f"dt={dt} does not divide total_time={total_time}")
        cfg = PdeConfig(kind=PdeKind.DIFFUSION, alpha=alpha, dt=dt, n_steps=n)
        snapshots, _, _ = run_evolution(row[None, :], cfg)
        errors.append(float(np.max(np.abs(snapshots[-1][0] - exact))))

    measured = {"max_errors": errors}
    expected = {"ratio_per_halving": [float(dt_list[i] / dt_list[i + 1])
                                      for i in range(len(dt_list) - 1)]}
    tolerance = {"ratio_band_factor": [0.8, 1.2]}
    if max(errors) < 1e-12:  # round-off of the DFT oracle itself
        return VerificationReport(
            name="multilayer_error", passed=True, measured=measured,
            expected=expected, tolerance=tolerance,
            notes="discrete evolution matches the exact solution to round-off",
        )

    ratios = []
    ok = True
    for i in range(len(errors) - 1):
        if errors[i + 1] == 0.0:
            ok = False
            ratios.append(float("inf"))
            continue
        ratio = errors[i] / errors[i + 1]
        ratios.append(float(ratio))
        r = dt_list[i] / dt_list[i + 1]
        ok = ok and (0.8 * r <= ratio <= 1.2 * r)
    measured["ratios"] = ratios
    return VerificationReport(
        name="multilayer_error", passed=ok, measured=measured,
        expected=expected, tolerance=tolerance,
    )


def verify_hybrid_bound(t: int = 32, window: int = 2, alpha: float = 0.1,
                        dt: float = 1.0, n_steps: int = 10,
                        n_global: int = 0) -> VerificationReport:
    """Hybrid refinement error: exact mode recursion, envelope, and decay rate.

    Uses the row-uniform dense target (zero scores), where the refinement
    error contracts per mode by exactly ``1 - alpha*dt*lam_k``.
    """
    q = np.zeros((t, 1))
    pattern = SparsePattern(window=window, global_indices=tuple(range(n_global)))
    cfg = PdeConfig(kind=PdeKind.DIFFUSION, alpha=alpha, dt=dt, n_steps=n_steps)
    report = hybrid_error_experiment(q, q, pattern, cfg)

    lam1 = laplacian_eigenvalues(t)[1]
    envelope = report.epsilon_0 * (1.0 - alpha * dt * lam1) ** np.arange(n_steps + 1) + 1e-9
    within_envelope = bool(np.all(report.frobenius_errors <= envelope))
    recursion_ok = bool(report.recursion_max_rel_error <= 1e-8)
    rate_ok = bool(
        np.isfinite(report.fitted_decay_rate)
        and abs(report.fitted_decay_rate - report.theoretical_decay_rate)
        <= 0.05 * report.theoretical_decay_rate
    )
    passed = within_envelope and recursion_ok and rate_ok
    return VerificationReport(
        name="hybrid_bound", passed=passed,
        measured={
            "epsilon_0": report.epsilon_0,
            "final_error": float(report.frobenius_errors[-1]),
            "recursion_max_rel_error": report.recursion_max_rel_error,
            "fitted_decay_rate": report.fitted_decay_rate,
            "within_envelope": within_envelope,
        },
        expected={
            "recursion_max_rel_error": "<= 1e-8",
            "fitted_decay_rate": report.theoretical_decay_rate,
            "within_envelope": True,
        },
        tolerance={"recursion": 1e-8, "rate_rel": 0.05, "envelope_slack": 1e-9},
    )


ALL_SUITES = {
    "propagation_speed": verify_propagation_speed,
    "smoothness_decay": verify_smoothness_decay,
    "multilayer_error": verify_multilayer_error,
    "hybrid_bound": verify_hybrid_bound,
}


def run_all(names=None) -> list:
    """Run the named suites (default all) with default parameters."""
    chosen = list(ALL_SUITES) if names is None else list(names)
    reports = []
    for name in chosen:
        if name not in ALL_SUITES:
            raise ConfigError(f"unknown verification suite {name!r}; "
                              f"available: {', '.join(sorted(ALL_SUITES))}")
        reports.append(ALL_SUITES[name]())
    return reports
