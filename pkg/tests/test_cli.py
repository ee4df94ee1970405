import json

import numpy as np
import pytest

from hmckit import experiment
from hmckit.adapt import Probe, StepSizeReport, TuningFailed
from hmckit.cli import main
from hmckit.errors import ConfigurationError
from hmckit.experiment import chain_stream, list_experiments, load_config, parse_config, run_experiment
from hmckit.hamiltonian import IdentityMass, LeapfrogConfig
from hmckit.hmc import run_chain
from hmckit.targets import GaussianTarget

BUNDLED = ["gaussian_period", "ideal_hmc_acf", "leapfrog_eps_sweep_s1", "leapfrog_eps_sweep_s10",
           "pima_two_stage", "table1"]

SMALL = """
name = "small"
iterations = 400
seed = 11

[target]
kind = "gaussian"
dim = 2

[kernel]
kind = "hmc"

[tuning]
step_size = 0.3
num_steps = 4
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_list_names_all_bundled(capsys):
    assert list_experiments() == BUNDLED
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in BUNDLED)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_validate(name):
    assert main(["validate", name]) == 0


def test_explicit_step_size_with_auto_is_rejected(tmp_path, capsys):
    text = SMALL.replace("[tuning]", "[tuning]\nauto = true")
    assert main(["validate", str(_write(tmp_path, text))]) == 2
    assert "conflicts" in capsys.readouterr().err


@pytest.mark.parametrize("patch,needle", [
    (("kind = \"hmc\"", "kind = \"nuts\""), "kernel.kind"),
    (("seed = 11", "seed = 11\ncolour = 3"), "unknown key"),
    (("step_size = 0.3", "step_size = -0.3"), "step_size"),
    (("name = \"small\"", ""), "name"),
])
def test_invalid_configs(tmp_path, capsys, patch, needle):
    text = SMALL.replace(*patch)
    assert main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.toml")]) == 2


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, SMALL)), "--out", str(out), "--seed", "5"]) == 0
    samples = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
    assert samples.shape == (400, 2)
    assert (out / "samples.csv").read_text().splitlines()[0] == "x1,x2"
    meta = json.loads((out / "meta.json").read_text())
    assert meta["seed"] == 5 and meta["status"] == "ok"
    assert 0 < meta["acceptance"] <= 1
    assert "wall_time_seconds" in meta
    for name in ("summary.csv", "acf.csv", "density.csv"):
        assert (out / name).is_file()


def test_samples_round_trip_exactly(tmp_path):
    cfg = parse_config({"name": "rt", "iterations": 200, "seed": 3, "target": {"kind": "gaussian"},
                        "kernel": {"kind": "hmc"}, "tuning": {"step_size": 0.7, "num_steps": 3}})
    status, out = run_experiment(cfg, tmp_path)
    assert status == 0
    ref = run_chain(GaussianTarget(), IdentityMass(1), LeapfrogConfig(0.7, 3), 200, None, chain_stream(3, 0))
    written = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(written, ref.samples[:, 0])


def test_same_seed_gives_identical_bytes_and_other_seed_differs(tmp_path):
    path = _write(tmp_path, SMALL)
    for d, seed in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["run", str(path), "--out", str(tmp_path / d), "--seed", seed]) == 0
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples.csv").read_bytes()
    assert a != (tmp_path / "c" / "samples.csv").read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SAMPLER_OUT", str(tmp_path / "root"))
    assert main(["run", str(_write(tmp_path, SMALL))]) == 0
    assert (tmp_path / "root" / "small" / "samples.csv").is_file()


@pytest.mark.parametrize("kernel", [
    '[kernel]\nkind = "rwm"\nscale = 1.0',
    '[kernel]\nkind = "mala"\nscale = 0.5',
    '[kernel]\nkind = "mhgj-demo"\ninvolution = "gaussian-flow"\ntime = 1.0',
    '[kernel]\nkind = "mhgj-demo"\ninvolution = "scale"',
])
def test_other_kernels_run(tmp_path, kernel):
    text = ('name = "k"\niterations = 300\nseed = 1\n[target]\nkind = "gaussian"\n' + kernel)
    if "scale\"" in kernel:
        text = text.replace('kind = "gaussian"', 'kind = "gaussian"\ndim = 3')
        text += '\nx0 = [1.0, 1.0, 1.0]'
    assert main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0


def test_sweep_writes_table(tmp_path):
    text = SMALL.replace("[tuning]\nstep_size = 0.3\nnum_steps = 4",
                         "[[sweep]]\nstep_size = 0.5\nnum_steps = 2\n\n[[sweep]]\nstep_size = 0.1\nnum_steps = 10")
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, text)), "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("chain,time,step_size,num_steps,acceptance,divergences")
    assert len(lines) == 3
    samples = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
    assert samples.shape == (800, 3)
    assert set(samples[:, 0]) == {0.0, 1.0}


def test_tuning_failure_exit_code_and_partial_report(tmp_path, monkeypatch):
    report = StepSizeReport(0.1, 0.85, (Probe(0.1, 0.2, 3),), False, "could not bracket")

    def failing(*args, **kwargs):
        raise TuningFailed("stage 1", report, {"stage1": report})

    monkeypatch.setattr(experiment, "warmup_pipeline", failing)
    text = SMALL.replace("step_size = 0.3\nnum_steps = 4", "auto = true")
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, text)), "--out", str(out)]) == 3
    meta = json.loads((out / "meta.json").read_text())
    assert meta["status"] == "tuning_failed" and meta["stage"] == "stage 1"
    assert (out / "tuning.csv").read_text().splitlines()[1].startswith("stage1,0,0.10000000000000001")


def test_missing_dataset_exit_code(tmp_path):
    text = ('name = "d"\niterations = 10\n[target]\nkind = "logistic"\ndataset = "'
            + str(tmp_path / "none.csv") + '"\n[kernel]\nkind = "hmc"\n[tuning]\nstep_size = 0.01\nnum_steps = 2\n')
    assert main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 4


@pytest.mark.parametrize("target", ["gaussian", "gaussian:3", "pima"])
def test_check_gradient_command(capsys, target):
    assert main(["check-gradient", target]) == 0
    assert "ok" in capsys.readouterr().out


def test_with_overrides_revalidates():
    cfg = load_config("table1")
    assert cfg.with_overrides(iterations=100).iterations == 100
    with pytest.raises(ConfigurationError):
        cfg.with_overrides(iterations=0)
