"""End-to-end tests for the command-line runner.

Every test drives ``pde_attention.cli.run`` in process against a temporary
output directory and asserts on the exit status plus the artifacts the
subcommand leaves behind (CSV tables, JSON reports, resolved config).
"""

from __future__ import annotations

import configparser
import csv
import json

import numpy as np
import pytest

from pde_attention import cli
from pde_attention.attention import softmax
from pde_attention.cli import (
    EXIT_CONFIG_ERROR,
    EXIT_DIVERGENCE,
    EXIT_SUCCESS,
    EXIT_VERIFICATION_FAILURE,
    run,
)
from pde_attention.model import PdeTransformer
from pde_attention.verify import VerificationReport


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


TINY_TRAIN = [
    "train", "--dataset", "copy_task", "--n-sequences", "24",
    "--prefix-len", "3", "--vocab-size", "8", "--n-layers", "1",
    "--n-heads", "2", "--d-model", "8", "--d-hidden", "16", "--steps", "1",
    "--batch-size", "8", "--epochs", "2", "--patience", "0",
]

TINY_ABLATE = [
    "ablate", "--n-sequences", "24", "--seq-len", "16", "--vocab-size", "8",
    "--n-layers", "2", "--n-heads", "2", "--d-model", "8", "--d-hidden", "16",
    "--batch-size", "8", "--epochs", "1", "--n-seeds", "1",
]


# ---------------------------------------------------------------------------
# argument parsing and exit codes
# ---------------------------------------------------------------------------


def test_help_exits_zero(capsys):
    assert run(["--help"]) == EXIT_SUCCESS
    assert "evolve" in capsys.readouterr().out


def test_missing_subcommand_is_a_usage_error(capsys):
    assert run([]) == 2


def test_unknown_flag_is_a_usage_error(capsys):
    assert run(["evolve", "--no-such-flag", "1"]) == 2


def test_unparseable_value_exits_config_error(tmp_path, capsys):
    out = tmp_path / "out"
    status = run(["evolve", "--steps", "two", "--outdir", str(out)])
    assert status == EXIT_CONFIG_ERROR
    assert not out.exists()  # rejected before any output is written
    assert "cannot parse" in capsys.readouterr().err


def test_bad_choice_exits_config_error(tmp_path, capsys):
    status = run(["evolve", "--kind", "parabolic",
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR
    assert "must be one of" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------


def test_evolve_two_step_diffusion_oracle(tmp_path, capsys):
    """Default settings: two diffusion steps on a 4x4 one-hot field."""
    out = tmp_path / "run"
    assert run(["evolve", "--outdir", str(out)]) == EXIT_SUCCESS

    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 3 * 4  # snapshots at steps 0..2, four rows each
    assert list(rows[0]) == ["step", "row", "c0", "c1", "c2", "c3"]
    final_row0 = [r for r in rows if r["step"] == "2" and r["row"] == "0"][0]
    values = [float(final_row0[f"c{j}"]) for j in range(4)]
    np.testing.assert_allclose(values, [0.66, 0.16, 0.02, 0.16],
                               rtol=0.0, atol=1e-12)

    metric_rows = read_csv(out / "metrics.csv")
    assert len(metric_rows) == 3
    assert list(metric_rows[0]) == [
        "step", "smoothness", "consistency", "effective_range",
        "row_sum_drift", "max_abs", "renorm_mass"]

    metadata = read_json(out / "metadata.json")
    assert metadata["exit_status"] == EXIT_SUCCESS
    assert set(metadata) >= {"argv", "started_utc", "elapsed_seconds"}
    assert (out / "config.ini").exists()


def test_evolve_reruns_are_byte_identical(tmp_path):
    args = ["evolve", "--init", "softmax", "--seed", "3", "--T", "6",
            "--steps", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(args + ["--outdir", str(a)]) == EXIT_SUCCESS
    assert run(args + ["--outdir", str(b)]) == EXIT_SUCCESS
    for name in ("trajectory.csv", "metrics.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_evolve_seed_changes_softmax_init(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["evolve", "--init", "softmax", "--seed", "3", "--outdir", str(a)])
    run(["evolve", "--init", "softmax", "--seed", "4", "--outdir", str(b)])
    assert (a / "trajectory.csv").read_bytes() != \
        (b / "trajectory.csv").read_bytes()


@pytest.mark.parametrize("suffix", [".npy", ".csv"])
def test_evolve_reads_initial_field_from_file(tmp_path, suffix, capsys):
    field = softmax(np.random.default_rng(5).standard_normal((5, 5)))
    path = tmp_path / f"field{suffix}"
    if suffix == ".npy":
        np.save(path, field)
    else:
        np.savetxt(path, field, delimiter=",")

    out = tmp_path / "run"
    status = run(["evolve", "--init-file", str(path), "--steps", "0",
                  "--outdir", str(out)])
    assert status == EXIT_SUCCESS
    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 5  # a single step-0 snapshot
    loaded = np.array([[float(r[f"c{j}"]) for j in range(5)] for r in rows])
    np.testing.assert_array_equal(loaded, field)


def test_evolve_missing_init_file_exits_config_error(tmp_path, capsys):
    status = run(["evolve", "--init-file", str(tmp_path / "nope.npy"),
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR


def test_outdir_overwrite_needs_force(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["evolve", "--outdir", str(out)]) == EXIT_SUCCESS
    assert run(["evolve", "--outdir", str(out)]) == EXIT_CONFIG_ERROR
    assert "--force" in capsys.readouterr().err
    assert run(["evolve", "--outdir", str(out), "--force"]) == EXIT_SUCCESS


def test_evolve_divergence_exits_three(tmp_path, capsys):
    """An unguarded CFL-violating run trips the blow-up detector."""
    out = tmp_path / "run"
    status = run(["evolve", "--alpha", "0.6", "--dt", "2.0", "--steps",
                  "1000", "--no-guard", "--outdir", str(out)])
    assert status == EXIT_DIVERGENCE
    assert "divergence" in capsys.readouterr().err
    assert read_json(out / "metadata.json")["exit_status"] == EXIT_DIVERGENCE


def test_env_var_sets_default_output_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ENV_OUTDIR, str(tmp_path / "root"))
    assert run(["evolve"]) == EXIT_SUCCESS
    assert (tmp_path / "root" / "evolve" / "trajectory.csv").exists()


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def test_config_file_merge_and_cli_precedence(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text(
        "[common]\nseed = 9\n\n[evolve]\nt = 6\nsteps = 1\n")
    out = tmp_path / "run"
    status = run(["evolve", "--config", str(config), "--steps", "2",
                  "--outdir", str(out)])
    assert status == EXIT_SUCCESS

    resolved = configparser.ConfigParser(interpolation=None)
    resolved.read(out / "config.ini")
    assert set(resolved.sections()) == {"common", "evolve"}
    assert resolved["common"]["seed"] == "9"       # from the file
    assert resolved["evolve"]["t"] == "6"          # from the file
    assert resolved["evolve"]["steps"] == "2"      # CLI wins over the file
    assert resolved["evolve"]["alpha"] == "0.1"    # default fills the rest

    rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 3 * 6  # steps 0..2 on a 6x6 field


def test_config_file_unknown_key_rejected(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[evolve]\nstep_count = 3\n")
    status = run(["evolve", "--config", str(config),
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR
    assert "unknown key" in capsys.readouterr().err


def test_config_file_unknown_section_rejected(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[evolve]\nsteps = 1\n\n[plotting]\ndpi = 300\n")
    status = run(["evolve", "--config", str(config),
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR
    assert "unknown config section" in capsys.readouterr().err


def test_config_file_other_subcommand_section_tolerated(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[evolve]\nsteps = 1\n\n[train]\nepochs = 5\n")
    status = run(["evolve", "--config", str(config),
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_SUCCESS


def test_config_file_missing_exits_config_error(tmp_path, capsys):
    status = run(["evolve", "--config", str(tmp_path / "absent.ini"),
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def test_verify_single_suite_writes_reports(tmp_path, capsys):
    out = tmp_path / "run"
    status = run(["verify", "--suites", "hybrid_bound", "--outdir", str(out)])
    assert status == EXIT_SUCCESS
    assert "[PASS] hybrid_bound" in capsys.readouterr().out

    report = read_json(out / "verify_hybrid_bound.json")
    assert report["name"] == "hybrid_bound"
    assert report["passed"] is True
    assert set(report) >= {"measured", "expected", "tolerance"}
    assert read_json(out / "summary.json") == {"hybrid_bound": True}


def test_verify_unknown_suite_exits_config_error(tmp_path, capsys):
    status = run(["verify", "--suites", "telepathy",
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR
    assert "telepathy" in capsys.readouterr().err


def test_verify_failure_exits_one(tmp_path, monkeypatch, capsys):
    def failing_suite():
        return VerificationReport(
            name="propagation_speed", passed=False,
            measured={"slope": 0.0}, expected={"slope": 0.5},
            tolerance={"slope": 0.1}, notes="injected failure")

    monkeypatch.setitem(cli.ALL_SUITES, "propagation_speed", failing_suite)
    out = tmp_path / "run"
    status = run(["verify", "--suites", "propagation_speed",
                  "--outdir", str(out)])
    assert status == EXIT_VERIFICATION_FAILURE
    assert "[FAIL] propagation_speed" in capsys.readouterr().out
    assert read_json(out / "summary.json") == {"propagation_speed": False}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_writes_history_checkpoint_summary(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(TINY_TRAIN + ["--outdir", str(out)]) == EXIT_SUCCESS

    lines = (out / "history.csv").read_text().strip().splitlines()
    assert lines[0] == ("epoch,train_loss,val_loss,metric,"
                        "grad_norm_mean,grad_norm_max,diverged")
    assert len(lines) == 3  # header + 2 epochs

    summary = read_json(out / "summary.json")
    assert summary["diverged"] is False
    assert summary["epochs_run"] == 2
    assert summary["metric_name"] == "perplexity"
    assert np.isfinite(summary["best_val_loss"])

    model = PdeTransformer.load(out / "model.npz")
    assert model.config.vocab_size == 8
    assert model.config.to_dict() == summary["model_config"]


def test_train_char_text_dataset(tmp_path, capsys):
    text = tmp_path / "corpus.txt"
    text.write_text("abcd" * 60)
    out = tmp_path / "run"
    status = run(["train", "--dataset", "char_text", "--text-path", str(text),
                  "--seq-len", "5", "--n-layers", "1", "--d-model", "8",
                  "--d-hidden", "16", "--steps", "1", "--batch-size", "8",
                  "--epochs", "1", "--patience", "0", "--outdir", str(out)])
    assert status == EXIT_SUCCESS
    summary = read_json(out / "summary.json")
    assert summary["model_config"]["vocab_size"] == 4  # a, b, c, d


def test_train_char_text_without_path_exits_config_error(tmp_path, capsys):
    status = run(["train", "--dataset", "char_text",
                  "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR


def test_train_divergence_exits_three(tmp_path, capsys):
    out = tmp_path / "run"
    status = run([
        "train", "--dataset", "long_range_recall", "--n-sequences", "24",
        "--seq-len", "32", "--vocab-size", "8", "--n-layers", "2",
        "--n-heads", "2", "--d-model", "16", "--d-hidden", "32",
        "--alpha", "3.0", "--dt", "1.0", "--steps", "8",
        "--no-renormalize", "--no-clamp", "--no-guard",
        "--no-learn-coefficients", "--batch-size", "8", "--epochs", "3",
        "--patience", "0", "--outdir", str(out)])
    assert status == EXIT_DIVERGENCE
    assert "diverged" in capsys.readouterr().out

    summary = read_json(out / "summary.json")
    assert summary["diverged"] is True
    assert summary["diverged_epoch"] == 0
    assert (out / "history.csv").read_text().strip().endswith("true")


def test_train_guard_refuses_cfl_violation(tmp_path, capsys):
    """With the stability guard on, the same settings are a config error."""
    status = run([
        "train", "--dataset", "long_range_recall", "--n-sequences", "24",
        "--seq-len", "32", "--vocab-size", "8", "--d-model", "16",
        "--alpha", "3.0", "--steps", "8", "--no-renormalize", "--no-clamp",
        "--epochs", "1", "--outdir", str(tmp_path / "out")])
    assert status == EXIT_CONFIG_ERROR


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_small_grid(tmp_path, capsys):
    out = tmp_path / "run"
    status = run(["bench", "--kinds", "diffusion", "--t-values", "16,32",
                  "--repeats", "1", "--outdir", str(out)])
    assert status == EXIT_SUCCESS

    rows = read_csv(out / "bench.csv")
    assert list(rows[0]) == ["kind", "T", "ns_per_step"]
    assert [(r["kind"], r["T"]) for r in rows] == [
        ("diffusion", "16"), ("diffusion", "32")]
    assert all(float(r["ns_per_step"]) > 0 for r in rows)

    slopes = read_json(out / "slopes.json")
    assert set(slopes) == {"diffusion"}
    assert np.isfinite(slopes["diffusion"])


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def test_ablate_steps_axis_with_instability_control(tmp_path, capsys):
    out = tmp_path / "run"
    status = run(TINY_ABLATE + ["--axis", "steps", "--instability-control",
                                "--outdir", str(out)])
    assert status == EXIT_SUCCESS  # a diverged cell is data, not an error

    rows = read_csv(out / "ablation.csv")
    assert list(rows[0]) == [
        "n_steps", "n_seeds", "n_diverged", "diverged",
        "mean_loss_reduction", "min_loss_reduction", "mean_best_metric"]
    by_label = {r["n_steps"]: r for r in rows}
    assert sorted(by_label, key=int) == ["0", "1", "2", "4", "8"]

    for label in ("0", "1", "2", "4"):
        assert by_label[label]["diverged"] == "false"
        assert np.isfinite(float(by_label[label]["mean_loss_reduction"]))
    control = by_label["8"]
    assert control["diverged"] == "true"
    assert control["n_diverged"] == "1"
    assert np.isnan(float(control["mean_loss_reduction"]))

    for label in ("0", "1", "2", "4", "8"):
        assert (out / f"cell_steps_{label}_seed0.csv").exists()
    assert "n_steps=8: DIVERGED" in capsys.readouterr().out


def test_ablate_kind_axis(tmp_path, capsys):
    out = tmp_path / "run"
    status = run(TINY_ABLATE + ["--axis", "kind", "--kind-steps", "1",
                                "--outdir", str(out)])
    assert status == EXIT_SUCCESS
    rows = read_csv(out / "ablation.csv")
    assert [r["kind"] for r in rows] == [
        "diffusion", "wave", "reaction_diffusion", "advection_diffusion"]
    assert all(r["diverged"] == "false" for r in rows)


def test_ablate_parallel_matches_serial(tmp_path, capsys):
    args = TINY_ABLATE + ["--axis", "kind", "--kind-steps", "1"]
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert run(args + ["--workers", "1", "--outdir", str(serial)]) == 0
    assert run(args + ["--workers", "2", "--outdir", str(parallel)]) == 0
    assert (serial / "ablation.csv").read_bytes() == \
        (parallel / "ablation.csv").read_bytes()
