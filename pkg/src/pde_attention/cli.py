"""Config-driven experiment runner.

Five subcommands expose the library end to end::

    evolve   evolve one attention field and dump the trajectory as CSV
    verify   run the numerical verification suites, write JSON reports
    train    train the toy transformer, write history CSV plus a checkpoint
    bench    time one explicit step per PDE kind across field sizes
    ablate   sweep pseudo-time step counts (or PDE kinds) on a fixed task

Settings come from an INI-style config file (flat ``key = value`` entries
under a ``[common]`` section plus one section per subcommand) with
command-line flags taking precedence; unknown keys or sections are rejected.
Every run writes the fully resolved configuration next to its outputs so the
run can be reproduced byte for byte; wall-clock timestamps live only in
``metadata.json``. Existing non-empty output directories are refused unless
``--force`` is given. The ``PDE_ATTENTION_OUTDIR`` environment variable sets
the default output root.

Exit codes: 0 success; 1 verification failure; 2 configuration error;
3 divergence during evolution or training.
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from os import environ
from pathlib import Path

import numpy as np

from .attention import softmax
from .bench import DEFAULT_T_VALUES, BENCH_FIELDS, bench_rows, fitted_loglog_slope
from .data import make_char_text_file, make_copy_task, make_long_range_recall
from .errors import ConfigError, DegenerateFieldError, DivergenceError
from .model import AttentionVariant, ModelConfig, TaskKind
from .pde import AttentionField, PdeConfig, PdeKind, evolve
from .tableio import write_csv, write_json
from .training import TrainingOptions, train
from .verify import ALL_SUITES

ENV_OUTDIR = "PDE_ATTENTION_OUTDIR"

EXIT_SUCCESS = 0
EXIT_VERIFICATION_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGENCE = 3

STEP_GRID = (0, 1, 2, 4, 8)

# the deliberately CFL-violating configuration used for the N_t = 8 ablation
# cell when --instability-control is set: growth |1 - 4*alpha*dt|^8 ~ 2e8 per
# pass trips the field blow-up detector on the first forward batch
INSTABILITY_PDE = dict(kind="diffusion", alpha=3.0, dt=1.0, n_steps=8,
                       renormalize_rows=False, clamp_nonnegative=False,
                       stability_guard=False)


# ---------------------------------------------------------------------------
# option schema shared by the config file and the command line
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Option:
    """One setting: its config-file key, type, default, and CLI flag."""

    name: str
    kind: str  # int | float | str | bool | str_list | int_list
    default: object
    help: str
    choices: tuple = ()
    flag: str | None = None  # overrides the derived --flag spelling


_KINDS = tuple(k.value for k in PdeKind)
_BCS = ("periodic", "zero_flux")

COMMON_OPTIONS = (
    Option("seed", "int", 0, "seed for every random draw in the run"),
    Option("workers", "int", 1, "worker processes for suites/ablation cells"),
    Option("outdir", "str", None, "output directory (default: "
           f"$[{ENV_OUTDIR}] or ./runs, plus the subcommand name)"),
)

PDE_OPTIONS = (
    Option("kind", "str", "diffusion", "PDE kind", choices=_KINDS),
    Option("alpha", "float", 0.1, "diffusion coefficient"),
    Option("beta", "float", 0.02, "reaction/transport coefficient"),
    Option("c", "float", 0.15, "wave speed"),
    Option("dt", "float", 1.0, "pseudo-time step size"),
    Option("steps", "int", 2, "number of explicit steps"),
    Option("bc", "str", "periodic", "boundary condition", choices=_BCS),
    Option("renormalize", "bool", False, "renormalize rows after each step"),
    Option("clamp", "bool", False, "clamp negatives after each step"),
    Option("guard", "bool", True, "refuse CFL-violating configurations"),
)

EVOLVE_OPTIONS = PDE_OPTIONS + (
    Option("t", "int", 4, "field size (T x T)", flag="--T"),
    Option("init", "str", "onehot", "generated initial field",
           choices=("onehot", "softmax")),
    Option("init_file", "str", None, "load the initial field from .npy/.csv "
           "instead of generating it"),
)

VERIFY_OPTIONS = (
    Option("suites", "str_list", ("all",),
           "comma-separated suite names, or 'all'"),
)

TRAIN_OPTIONS = (
    Option("dataset", "str", "copy_task", "task to train on",
           choices=("copy_task", "long_range_recall", "char_text")),
    Option("n_sequences", "int", 256, "dataset size (synthetic tasks)"),
    Option("prefix_len", "int", 8, "copy-task prefix length"),
    Option("seq_len", "int", 128, "sequence length (recall/char tasks)"),
    Option("vocab_size", "int", 16, "vocabulary size (synthetic tasks)"),
    Option("text_path", "str", None, "UTF-8 text file for char_text"),
    Option("val_fraction", "float", 0.2, "validation split fraction"),
    Option("variant", "str", "pde", "attention variant",
           choices=("standard", "pde", "hybrid")),
    Option("n_layers", "int", 2, "transformer blocks"),
    Option("n_heads", "int", 2, "attention heads"),
    Option("d_model", "int", 32, "model width"),
    Option("d_hidden", "int", 64, "feed-forward width"),
    Option("window", "int", 8, "hybrid sliding-window half-width"),
    Option("n_global", "int", 2, "hybrid global tokens"),
    Option("learn_coefficients", "bool", True,
           "make per-head PDE coefficients trainable"),
    Option("kind", "str", "diffusion", "PDE kind", choices=_KINDS),
    Option("alpha", "float", 0.1, "diffusion coefficient"),
    Option("beta", "float", 0.02, "reaction/transport coefficient"),
    Option("c", "float", 0.15, "wave speed"),
    Option("dt", "float", 1.0, "pseudo-time step size"),
    Option("steps", "int", 4, "evolution steps per attention layer"),
    Option("bc", "str", "periodic", "boundary condition", choices=_BCS),
    Option("renormalize", "bool", True, "renormalize rows after each step"),
    Option("clamp", "bool", True, "clamp negatives after each step"),
    Option("guard", "bool", True, "refuse CFL-violating configurations"),
    Option("optimizer", "str", "adam", "optimizer", choices=("sgd", "adam")),
    Option("lr", "float", 3e-3, "learning rate"),
    Option("momentum", "float", 0.9, "SGD momentum"),
    Option("batch_size", "int", 16, "batch size"),
    Option("epochs", "int", 30, "training epochs"),
    Option("patience", "int", 3, "early-stopping patience (0 disables)"),
)

BENCH_OPTIONS = (
    Option("kinds", "str_list", _KINDS, "comma-separated PDE kinds"),
    Option("t_values", "int_list", DEFAULT_T_VALUES,
           "comma-separated field sizes"),
    Option("repeats", "int", 3, "timing repeats (best is kept)"),
)

ABLATE_OPTIONS = (
    Option("axis", "str", "steps", "sweep axis", choices=("steps", "kind")),
    Option("n_sequences", "int", 192, "recall dataset size"),
    Option("seq_len", "int", 128, "recall sequence length"),
    Option("vocab_size", "int", 16, "recall vocabulary size"),
    Option("n_layers", "int", 2, "transformer blocks"),
    Option("n_heads", "int", 2, "attention heads"),
    Option("d_model", "int", 32, "model width"),
    Option("d_hidden", "int", 64, "feed-forward width"),
    Option("kind", "str", "diffusion", "PDE kind for the steps axis",
           choices=_KINDS),
    Option("alpha", "float", 0.1, "diffusion coefficient"),
    Option("dt", "float", 1.0, "pseudo-time step size"),
    Option("kind_steps", "int", 4, "N_t used by the kind axis"),
    Option("optimizer", "str", "adam", "optimizer", choices=("sgd", "adam")),
    Option("lr", "float", 3e-3, "learning rate"),
    Option("batch_size", "int", 16, "batch size"),
    Option("epochs", "int", 30, "training epochs per cell"),
    Option("n_seeds", "int", 3, "seeds per cell (0..n-1 offsets)"),
    Option("instability_control", "bool", False,
           "replace the N_t=8 cell with the CFL-violating control"),
)

SCHEMAS = {
    "evolve": EVOLVE_OPTIONS,
    "verify": VERIFY_OPTIONS,
    "train": TRAIN_OPTIONS,
    "bench": BENCH_OPTIONS,
    "ablate": ABLATE_OPTIONS,
}


def _convert(option: Option, raw: str):
    raw = raw.strip()
    try:
        if option.kind == "int":
            return int(raw)
        if option.kind == "float":
            return float(raw)
        if option.kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if option.kind == "str_list":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        if option.kind == "int_list":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw if raw else None
    except ValueError:
        raise ConfigError(
            f"cannot parse {option.name} = {raw!r} as {option.kind}") from None


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _check_choices(option: Option, value):
    if option.choices and value is not None:
        values = value if option.kind.endswith("_list") else (value,)
        for item in values:
            if item not in option.choices:
                raise ConfigError(
                    f"{option.name} must be one of {', '.join(option.choices)}; "
                    f"got {item!r}")
    return value


def _load_file_settings(path, subcommand: str) -> dict:
    """Read ``[common]`` plus the subcommand's section from an INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None

    known_sections = {"common", *SCHEMAS}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(
            f"unknown config sections: {', '.join(sorted(unknown))}")

    settings: dict = {}
    for section, schema in (("common", COMMON_OPTIONS),
                            (subcommand, SCHEMAS[subcommand])):
        if not parser.has_section(section):
            continue
        by_name = {opt.name: opt for opt in schema}
        for key, raw in parser.items(section):
            if key not in by_name:
                raise ConfigError(
                    f"unknown key {key!r} in config section [{section}]")
            opt = by_name[key]
            settings[key] = _check_choices(opt, _convert(opt, raw))
    return settings


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pde-attention",
        description="PDE-evolved attention experiments")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    descriptions = {
        "evolve": "evolve one attention field, write trajectory + metrics CSV",
        "verify": "run numerical verification suites, write JSON reports",
        "train": "train the toy transformer, write history CSV + checkpoint",
        "bench": "time one explicit step per PDE kind across field sizes",
        "ablate": "sweep N_t or PDE kind on the long-range recall task",
    }
    for name, schema in SCHEMAS.items():
        sub = subparsers.add_parser(name, help=descriptions[name])
        sub.add_argument("--config", default=None,
                         help="INI config file ([common] + [%s])" % name)
        sub.add_argument("--force", action="store_true",
                         help="overwrite an existing non-empty output directory")
        for opt in COMMON_OPTIONS + schema:
            flag = opt.flag or "--" + opt.name.replace("_", "-")
            if opt.kind == "bool":
                sub.add_argument(flag, dest=opt.name, default=None,
                                 action=argparse.BooleanOptionalAction,
                                 help=opt.help)
            else:
                sub.add_argument(flag, dest=opt.name, default=None,
                                 type=str, help=opt.help)
    return parser


def _resolve_settings(args, subcommand: str) -> dict:
    from_file = (_load_file_settings(args.config, subcommand)
                 if args.config else {})
    resolved = {}
    for opt in COMMON_OPTIONS + SCHEMAS[subcommand]:
        value = getattr(args, opt.name)
        if value is not None:
            if not isinstance(value, bool):
                value = _convert(opt, value)
            value = _check_choices(opt, value)
        elif opt.name in from_file:
            value = from_file[opt.name]
        else:
            value = opt.default
        resolved[opt.name] = value
    return resolved


def _default_outdir(subcommand: str) -> Path:
    root = Path(environ.get(ENV_OUTDIR, "runs"))
    return root / subcommand


def _prepare_outdir(settings: dict, subcommand: str, force: bool) -> Path:
    outdir = Path(settings["outdir"]) if settings["outdir"] else \
        _default_outdir(subcommand)
    settings["outdir"] = str(outdir)
    if outdir.exists() and any(outdir.iterdir()) and not force:
        raise ConfigError(
            f"output directory {outdir} already has contents; "
            f"pass --force to overwrite")
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _write_resolved_config(outdir: Path, subcommand: str, settings: dict) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser["common"] = {
        opt.name: _format_value(settings[opt.name]) for opt in COMMON_OPTIONS}
    parser[subcommand] = {
        opt.name: _format_value(settings[opt.name])
        for opt in SCHEMAS[subcommand]}
    with (outdir / "config.ini").open("w") as handle:
        parser.write(handle)


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------


def _pde_config_from(settings: dict) -> PdeConfig:
    return PdeConfig(
        kind=settings["kind"],
        alpha=settings["alpha"],
        beta=settings["beta"],
        c=settings.get("c", 0.0),
        dt=settings["dt"],
        n_steps=settings["steps"],
        bc=settings.get("bc", "periodic"),
        renormalize_rows=settings.get("renormalize", False),
        clamp_nonnegative=settings.get("clamp", False),
        stability_guard=settings.get("guard", True),
    )


def _initial_field(settings: dict) -> AttentionField:
    if settings["init_file"]:
        path = Path(settings["init_file"])
        try:
            if path.suffix == ".npy":
                values = np.load(path)
            else:
                values = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read initial field: {exc}") from None
        return AttentionField(values, bc=settings["bc"])
    t = settings["t"]
    if t < 2:
        raise ConfigError(f"field size T must be >= 2, got {t}")
    if settings["init"] == "onehot":
        values = np.eye(t)
    else:
        rng = np.random.default_rng(settings["seed"])
        values = softmax(rng.standard_normal((t, t)))
    return AttentionField(values, bc=settings["bc"])


def _cmd_evolve(settings: dict, outdir: Path) -> int:
    cfg = _pde_config_from(settings)
    field = _initial_field(settings)
    trajectory = evolve(field, cfg)

    t = field.t
    columns = ["step", "row"] + [f"c{j}" for j in range(t)]
    rows = []
    for step, snapshot in enumerate(trajectory.snapshots):
        for r in range(snapshot.values.shape[0]):
            row = {"step": step, "row": r}
            row.update({f"c{j}": float(snapshot.values[r, j]) for j in range(t)})
            rows.append(row)
    write_csv(outdir / "trajectory.csv", columns, rows)
    trajectory.to_csv(outdir / "metrics.csv")
    print(f"evolved {cfg.kind.value} for {cfg.n_steps} steps on a "
          f"{field.values.shape[0]}x{t} field -> {outdir}")
    return EXIT_SUCCESS


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _run_suite(name: str):
    return ALL_SUITES[name]()


def _cmd_verify(settings: dict, outdir: Path) -> int:
    names = settings["suites"]
    if names == ("all",):
        names = tuple(ALL_SUITES)
    unknown = [n for n in names if n not in ALL_SUITES]
    if unknown:
        raise ConfigError(
            f"unknown verification suites: {', '.join(unknown)}; "
            f"available: {', '.join(sorted(ALL_SUITES))}")

    if settings["workers"] > 1:
        with ProcessPoolExecutor(max_workers=settings["workers"]) as pool:
            reports = list(pool.map(_run_suite, names))
    else:
        reports = [_run_suite(name) for name in names]

    for report in reports:
        report.to_json(outdir / f"verify_{report.name}.json")
        print(report.as_text())
    write_json(outdir / "summary.json",
               {report.name: bool(report.passed) for report in reports})
    if all(report.passed for report in reports):
        return EXIT_SUCCESS
    return EXIT_VERIFICATION_FAILURE


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _build_dataset(settings: dict):
    seed = settings["seed"]
    name = settings["dataset"]
    if name == "copy_task":
        return make_copy_task(
            n_sequences=settings["n_sequences"],
            prefix_len=settings["prefix_len"],
            vocab_size=settings["vocab_size"], seed=seed,
            val_fraction=settings["val_fraction"])
    if name == "long_range_recall":
        return make_long_range_recall(
            n_sequences=settings["n_sequences"], seq_len=settings["seq_len"],
            vocab_size=settings["vocab_size"], seed=seed,
            val_fraction=settings["val_fraction"])
    if not settings["text_path"]:
        raise ConfigError("char_text needs text_path")
    return make_char_text_file(
        settings["text_path"], seq_len=settings["seq_len"], seed=seed,
        val_fraction=settings["val_fraction"])


def _cmd_train(settings: dict, outdir: Path) -> int:
    dataset = _build_dataset(settings)
    task = (TaskKind.CLASSIFICATION if dataset.is_classification
            else TaskKind.CAUSAL_LM)
    config = ModelConfig(
        n_layers=settings["n_layers"],
        n_heads=settings["n_heads"],
        d_model=settings["d_model"],
        d_hidden=settings["d_hidden"],
        vocab_size=dataset.vocab_size,
        max_seq_len=dataset.seq_len,
        pde=PdeConfig(kind=settings["kind"], alpha=settings["alpha"],
                      beta=settings["beta"], c=settings["c"],
                      dt=settings["dt"], n_steps=settings["steps"],
                      bc=settings["bc"],
                      renormalize_rows=settings["renormalize"],
                      clamp_nonnegative=settings["clamp"],
                      stability_guard=settings["guard"]),
        task=task,
        attention_variant=AttentionVariant(settings["variant"]),
        window=settings["window"],
        n_global=settings["n_global"],
        learn_coefficients=settings["learn_coefficients"],
    )
    options = TrainingOptions(
        optimizer=settings["optimizer"], lr=settings["lr"],
        momentum=settings["momentum"], batch_size=settings["batch_size"],
        epochs=settings["epochs"],
        patience=settings["patience"] if settings["patience"] > 0 else None)

    model, record = train(dataset, config, options, seed=settings["seed"])
    record.to_csv(outdir / "history.csv")
    model.save(outdir / "model.npz")
    finite_val = [v for v in record.val_losses if np.isfinite(v)]
    write_json(outdir / "summary.json", {
        "diverged": bool(record.diverged),
        "diverged_epoch": record.diverged_epoch,
        "epochs_run": record.n_epochs,
        "stopped_early": bool(record.stopped_early),
        "metric_name": record.metric_name,
        "final_val_loss": record.val_losses[-1] if record.val_losses else None,
        "best_val_loss": min(finite_val) if finite_val else None,
        "model_config": config.to_dict(),
        "training_options": options.to_dict(),
    })
    if record.diverged:
        print(f"training diverged at epoch {record.diverged_epoch} -> {outdir}")
        return EXIT_DIVERGENCE
    print(f"trained {record.n_epochs} epochs "
          f"({record.metric_name} {record.val_metrics[-1]:.4f}) -> {outdir}")
    return EXIT_SUCCESS


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _cmd_bench(settings: dict, outdir: Path) -> int:
    rows = bench_rows(settings["kinds"], settings["t_values"],
                      repeats=settings["repeats"], seed=settings["seed"])
    write_csv(outdir / "bench.csv", BENCH_FIELDS, rows)
    slopes = {kind: fitted_loglog_slope(rows, kind)
              for kind in settings["kinds"]}
    write_json(outdir / "slopes.json", slopes)
    for kind, slope in slopes.items():
        print(f"{kind}: log-log slope {slope:.3f}")
    return EXIT_SUCCESS


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _run_ablation_cell(payload: dict) -> dict:
    """Train one (cell, seed) pair; runs inside a worker process."""
    dataset = make_long_range_recall(
        n_sequences=payload["n_sequences"], seq_len=payload["seq_len"],
        vocab_size=payload["vocab_size"], seed=payload["data_seed"])
    config = ModelConfig.from_dict(payload["model_config"])
    options = TrainingOptions(**payload["options"])
    _, record = train(dataset, config, options, seed=payload["seed"])

    first = record.val_losses[0] if record.val_losses else float("nan")
    finite = [v for v in record.val_losses if np.isfinite(v)]
    best = min(finite) if finite else float("nan")
    reduction = ((first - best) / first
                 if finite and np.isfinite(first) and first > 0 else float("nan"))
    metrics = [m for m in record.val_metrics if np.isfinite(m)]
    record.to_csv(Path(payload["outdir"]) / payload["history_name"])
    return {
        "label": payload["label"],
        "seed": payload["seed"],
        "diverged": bool(record.diverged),
        "epochs_run": record.n_epochs,
        "first_val_loss": first,
        "best_val_loss": best,
        "loss_reduction": reduction,
        "best_metric": max(metrics) if metrics else float("nan"),
    }


def _ablation_payloads(settings: dict, outdir: Path) -> list[dict]:
    base_model = dict(
        n_layers=settings["n_layers"], n_heads=settings["n_heads"],
        d_model=settings["d_model"], d_hidden=settings["d_hidden"],
        vocab_size=settings["vocab_size"], max_seq_len=settings["seq_len"],
        task="classification", attention_variant="pde", n_classes=2,
    )
    base_pde = dict(kind=settings["kind"], alpha=settings["alpha"],
                    dt=settings["dt"], renormalize_rows=True,
                    clamp_nonnegative=True)
    if settings["axis"] == "steps":
        cells = [("n_steps", n) for n in STEP_GRID]
    else:
        cells = [("kind", kind) for kind in _KINDS]

    payloads = []
    for _, value in cells:
        for seed in range(settings["n_seeds"]):
            pde = dict(base_pde)
            model = dict(base_model, learn_coefficients=True)
            if settings["axis"] == "steps":
                pde["n_steps"] = value
                label = str(value)
                if value == 8 and settings["instability_control"]:
                    pde = dict(INSTABILITY_PDE)
                    model["learn_coefficients"] = False
            else:
                pde["kind"] = value
                pde["n_steps"] = settings["kind_steps"]
                if value == "wave":
                    pde["alpha"] = 0.0
                    pde["c"] = 0.15
                elif value in ("reaction_diffusion", "advection_diffusion"):
                    pde["beta"] = 0.02
                label = value
            model["pde"] = pde
            payloads.append({
                "label": label,
                "seed": seed,
                "data_seed": settings["seed"],
                "n_sequences": settings["n_sequences"],
                "seq_len": settings["seq_len"],
                "vocab_size": settings["vocab_size"],
                "model_config": model,
                "options": dict(
                    optimizer=settings["optimizer"], lr=settings["lr"],
                    batch_size=settings["batch_size"],
                    epochs=settings["epochs"], patience=None),
                "outdir": str(outdir),
                "history_name": f"cell_{settings['axis']}_{label}_seed{seed}.csv",
            })
    return payloads


def _cmd_ablate(settings: dict, outdir: Path) -> int:
    payloads = _ablation_payloads(settings, outdir)
    if settings["workers"] > 1:
        with ProcessPoolExecutor(max_workers=settings["workers"]) as pool:
            results = list(pool.map(_run_ablation_cell, payloads))
    else:
        results = [_run_ablation_cell(p) for p in payloads]

    axis_column = "n_steps" if settings["axis"] == "steps" else "kind"
    labels = []
    for payload in payloads:
        if payload["label"] not in labels:
            labels.append(payload["label"])
    summary_rows = []
    for label in labels:
        cell = [r for r in results if r["label"] == label]
        reductions = [r["loss_reduction"] for r in cell
                      if np.isfinite(r["loss_reduction"])]
        metrics = [r["best_metric"] for r in cell if np.isfinite(r["best_metric"])]
        summary_rows.append({
            axis_column: label,
            "n_seeds": len(cell),
            "n_diverged": sum(r["diverged"] for r in cell),
            "diverged": any(r["diverged"] for r in cell),
            "mean_loss_reduction": (float(np.mean(reductions))
                                    if reductions else float("nan")),
            "min_loss_reduction": (float(np.min(reductions))
                                   if reductions else float("nan")),
            "mean_best_metric": (float(np.mean(metrics))
                                 if metrics else float("nan")),
        })
    columns = [axis_column, "n_seeds", "n_diverged", "diverged",
               "mean_loss_reduction", "min_loss_reduction", "mean_best_metric"]
    write_csv(outdir / "ablation.csv", columns, summary_rows)
    for row in summary_rows:
        state = "DIVERGED" if row["diverged"] else \
            f"reduction {row['mean_loss_reduction']:.3f}"
        print(f"{axis_column}={row[axis_column]}: {state}")
    return EXIT_SUCCESS


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


_COMMANDS = {
    "evolve": _cmd_evolve,
    "verify": _cmd_verify,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
}


def run(argv=None) -> int:
    """Parse arguments, run one subcommand, and return the exit status."""
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    t0 = time.perf_counter()
    outdir = None
    try:
        try:
            args = _build_parser().parse_args(argv)
        except SystemExit as exc:  # argparse reports its own errors
            return int(exc.code or 0)
        settings = _resolve_settings(args, args.subcommand)
        outdir = _prepare_outdir(settings, args.subcommand, args.force)
        _write_resolved_config(outdir, args.subcommand, settings)
        status = _COMMANDS[args.subcommand](settings, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG_ERROR
    except (DivergenceError, DegenerateFieldError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        status = EXIT_DIVERGENCE

    if outdir is not None:
        write_json(outdir / "metadata.json", {
            "argv": argv,
            "started_utc": started,
            "elapsed_seconds": time.perf_counter() - t0,
            "exit_status": status,
        })
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
