"""Declarative experiment configs and the runner behind the ``sampler`` command.

A config is a TOML file. Top-level keys are ``name``, ``iterations``, ``seed``
and an optional ``description``; the tables ``[target]``, ``[kernel]``,
``[tuning]``, ``[[sweep]]`` and ``[output]`` select what to run. The schema
is documented in the README.

Random streams: the single 64-bit seed feeds ``numpy.random.SeedSequence``
and chain ``k`` draws from ``Generator(PCG64(SeedSequence(seed,
spawn_key=(k,))))``. Sweep entries use ``k`` = entry index. The two-stage
workflow uses stream 0 for warmup and tuning, 1 for the stage-1 chain and 2
for the stage-2 chain.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .adapt import TuningFailed, suggest_trajectory, warmup_pipeline
from .diagnostics import histogram, summarize
from .errors import ConfigurationError
from .hamiltonian import DiagonalMass, IdentityMass, LeapfrogConfig, PhaseState, leapfrog_trajectory
from .hmc import ChainResult, ideal_hmc_chain, run_chain, run_mh_chain, run_mhgj_chain
from .kernels import (
    GaussianFlowInvolution,
    GaussianMomentum,
    LeapfrogInvolution,
    LogNormalScale,
    MomentumFlipInvolution,
    ScaleInvolution,
    mala_proposal,
    rwm_proposal,
)
from .targets import GaussianTarget, LogisticPosterior, TargetDensity, load_dataset, load_pima, pima_path

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "list_experiments",
    "bundled_config_path",
    "build_target",
    "chain_stream",
    "run_experiment",
    "EXIT_OK",
    "EXIT_INVALID_CONFIG",
    "EXIT_TUNING_FAILED",
    "EXIT_DATA_ERROR",
]

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_TUNING_FAILED = 3
EXIT_DATA_ERROR = 4

KERNELS = ("rwm", "mala", "ideal-hmc", "hmc", "mhgj-demo")
TARGETS = ("gaussian", "logistic")
INVOLUTIONS = ("flip", "gaussian-flow", "leapfrog", "scale")
FLOAT_FMT = "%.17g"

_TOP_KEYS = {"name", "description", "iterations", "seed", "target", "kernel", "tuning", "sweep", "output"}
_TARGET_KEYS = {"kind", "dim", "dataset", "response", "prior_variance"}
_KERNEL_KEYS = {"kind", "scale", "time", "involution", "sigma", "x0"}
_TUNING_KEYS = {"auto", "step_size", "num_steps", "mass", "warmup"}
_WARMUP_KEYS = {"iterations", "mode", "accept_target", "tune_steps", "num_steps", "budget_gradients"}
_SWEEP_KEYS = {"label", "step_size", "num_steps", "time", "scale"}
_OUTPUT_KEYS = {"acf_lags", "histogram_bins", "samples", "trajectory"}
_TRAJ_KEYS = {"position", "momentum", "step_size", "num_steps"}


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description. ``raw`` keeps the parsed TOML for echoing."""

    name: str
    iterations: int
    seed: int
    target: dict
    kernel: dict
    tuning: dict
    sweep: tuple = ()
    output: dict = field(default_factory=dict)
    description: str = ""
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> ExperimentConfig:
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return parse_config(raw, self.source)

    def with_overrides(self, **top) -> ExperimentConfig:
        """Copy with top-level keys replaced, e.g. ``iterations``."""
        raw = copy.deepcopy(self.raw)
        raw.update(top)
        return parse_config(raw, self.source)


def _unknown(section: str, table: dict, allowed: set):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigurationError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _positive(section: str, key: str, value, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{section}.{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigurationError(f"{section}.{key} must be an integer, got {value!r}")
    if not (math.isfinite(value) and value > 0):
        raise ConfigurationError(f"{section}.{key} must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _table(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigurationError(f"[{key}] must be a table")
    return value


def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document.

    Raises:
        ConfigurationError: on any missing, unknown or inconsistent key.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a table")
    _unknown("config", raw, _TOP_KEYS)
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigurationError("config needs a non-empty 'name'")
    if "iterations" not in raw:
        raise ConfigurationError("config needs 'iterations'")
    iterations = _positive("config", "iterations", raw["iterations"], integer=True)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigurationError(f"seed must be an integer in [0, 2^64), got {seed!r}")

    target = dict(_table(raw, "target"))
    _unknown("[target]", target, _TARGET_KEYS)
    kind = target.get("kind")
    if kind not in TARGETS:
        raise ConfigurationError(f"target.kind must be one of {TARGETS}, got {kind!r}")
    if kind == "gaussian":
        target["dim"] = _positive("target", "dim", target.get("dim", 1), integer=True)
        for key in ("dataset", "response", "prior_variance"):
            if key in target:
                raise ConfigurationError(f"target.{key} applies to logistic targets only")
    else:
        target.setdefault("dataset", "pima")
        target.setdefault("response", "type")
        target["prior_variance"] = _positive("target", "prior_variance", target.get("prior_variance", 100.0))
        if "dim" in target:
            raise ConfigurationError("target.dim is set by the dataset for logistic targets")

    kernel = dict(_table(raw, "kernel"))
    _unknown("[kernel]", kernel, _KERNEL_KEYS)
    kkind = kernel.get("kind")
    if kkind not in KERNELS:
        raise ConfigurationError(f"kernel.kind must be one of {KERNELS}, got {kkind!r}")
    if kkind in ("ideal-hmc", "mhgj-demo") and not (kind == "gaussian" and target["dim"] == 1):
        if not (kkind == "mhgj-demo" and kernel.get("involution") in ("leapfrog", "scale", "flip")):
            raise ConfigurationError(f"kernel {kkind!r} needs the one-dimensional gaussian target")
    if kkind == "mhgj-demo" and kernel.get("involution") not in INVOLUTIONS:
        raise ConfigurationError(f"kernel.involution must be one of {INVOLUTIONS}")
    if "x0" in kernel and not isinstance(kernel["x0"], list):
        raise ConfigurationError("kernel.x0 must be a list of numbers")

    tuning = dict(_table(raw, "tuning"))
    _unknown("[tuning]", tuning, _TUNING_KEYS)
    auto = tuning.get("auto", False)
    if not isinstance(auto, bool):
        raise ConfigurationError("tuning.auto must be true or false")
    if auto:
        mixed = sorted({"step_size", "num_steps", "mass"} & set(tuning))
        if mixed:
            raise ConfigurationError(
                f"tuning.auto = true conflicts with explicit {', '.join(mixed)}; "
                "put auto-tuning options under [tuning.warmup]"
            )
        if kkind != "hmc":
            raise ConfigurationError("auto-tuning is available for the hmc kernel only")
        warm = dict(tuning.get("warmup", {}))
        _unknown("[tuning.warmup]", warm, _WARMUP_KEYS)
        warm["iterations"] = _positive("tuning.warmup", "iterations", warm.get("iterations", 2000), integer=True)
        if warm["iterations"] < 1000:
            raise ConfigurationError("tuning.warmup.iterations must be at least 1000")
        if warm.setdefault("mode", "diagonal") not in ("diagonal", "dense"):
            raise ConfigurationError("tuning.warmup.mode must be 'diagonal' or 'dense'")
        if "accept_target" in warm:
            at = warm["accept_target"]
            if isinstance(at, bool) or not isinstance(at, (int, float)) or not 0.05 < at < 1:
                raise ConfigurationError("tuning.warmup.accept_target must lie in (0.05, 1)")
        for key in ("tune_steps", "num_steps", "budget_gradients"):
            if key in warm:
                warm[key] = _positive("tuning.warmup", key, warm[key], integer=True)
        tuning["warmup"] = warm
    elif "warmup" in tuning:
        raise ConfigurationError("[tuning.warmup] requires tuning.auto = true")
    if "mass" in tuning and not (tuning["mass"] == "identity" or isinstance(tuning["mass"], list)):
        raise ConfigurationError("tuning.mass must be 'identity' or a list of diagonal entries")

    sweep = raw.get("sweep", [])
    if not isinstance(sweep, list):
        raise ConfigurationError("[[sweep]] must be an array of tables")
    sweep = tuple(dict(entry) for entry in sweep)
    for i, entry in enumerate(sweep):
        if not isinstance(entry, dict):
            raise ConfigurationError(f"sweep entry {i} must be a table")
        _unknown(f"sweep entry {i}", entry, _SWEEP_KEYS)
        if auto and ({"step_size", "num_steps"} & set(entry)):
            raise ConfigurationError("sweep entries cannot set step_size or num_steps with tuning.auto = true")
    if auto and sweep:
        raise ConfigurationError("auto-tuned experiments do not support [[sweep]]")

    runs = [{**tuning, **kernel, **entry} for entry in (sweep or ({},))]
    for i, run in enumerate(runs):
        where = f"sweep entry {i}" if sweep else "[tuning]"
        if kkind == "hmc" and not auto:
            for key in ("step_size", "num_steps"):
                if key not in run:
                    raise ConfigurationError(f"{where}: hmc needs {key} (or tuning.auto = true)")
            _positive(where, "step_size", run["step_size"])
            _positive(where, "num_steps", run["num_steps"], integer=True)
        if kkind in ("rwm", "mala"):
            if "scale" not in run:
                raise ConfigurationError(f"{where}: {kkind} needs scale")
            _positive(where, "scale", run["scale"])
        if kkind == "ideal-hmc":
            _positive(where, "time", run.get("time"))
        if kkind == "mhgj-demo":
            if kernel["involution"] == "gaussian-flow":
                _positive(where, "time", run.get("time"))
            if kernel["involution"] == "leapfrog":
                _positive(where, "step_size", run.get("step_size"))
                _positive(where, "num_steps", run.get("num_steps"), integer=True)

    output = dict(_table(raw, "output"))
    _unknown("[output]", output, _OUTPUT_KEYS)
    output["acf_lags"] = _positive("output", "acf_lags", output.get("acf_lags", 40), integer=True)
    output["histogram_bins"] = _positive("output", "histogram_bins", output.get("histogram_bins", 50), integer=True)
    if not isinstance(output.setdefault("samples", True), bool):
        raise ConfigurationError("output.samples must be true or false")
    if "trajectory" in output:
        traj = dict(output["trajectory"])
        _unknown("[output.trajectory]", traj, _TRAJ_KEYS)
        if not (isinstance(traj.get("position"), list) and isinstance(traj.get("momentum"), list)):
            raise ConfigurationError("output.trajectory needs position and momentum lists")
        if "step_size" in traj:
            _positive("output.trajectory", "step_size", traj["step_size"])
        if "num_steps" in traj:
            _positive("output.trajectory", "num_steps", traj["num_steps"], integer=True)
        if kind != "gaussian":
            raise ConfigurationError("output.trajectory is available for gaussian targets only")
        output["trajectory"] = traj

    return ExperimentConfig(
        name=name,
        iterations=iterations,
        seed=int(seed),
        target=target,
        kernel=kernel,
        tuning=tuning,
        sweep=sweep,
        output=output,
        description=str(raw.get("description", "")),
        source=source,
        raw=copy.deepcopy(raw),
    )


def bundled_config_path(name: str) -> Path:
    path = Path(str(resources.files("hmckit") / "configs" / f"{name}.toml"))
    if not path.is_file():
        raise ConfigurationError(f"no bundled experiment named {name!r}; try 'sampler list'")
    return path


def list_experiments() -> list[str]:
    """Names of the bundled reproduction configs."""
    root = resources.files("hmckit") / "configs"
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(path_or_name) -> ExperimentConfig:
    """Read a config file, or a bundled config by name."""
    path = Path(path_or_name)
    if not path.is_file():
        if path.suffix == "" and path.name == str(path_or_name):
            path = bundled_config_path(str(path_or_name))
        else:
            raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(raw, str(path))


def build_target(spec: dict) -> TargetDensity:
    if spec["kind"] == "gaussian":
        return GaussianTarget(spec["dim"])
    dataset = spec["dataset"]
    if dataset == "pima" and spec["response"] == "type":
        data = load_pima()
    else:
        data = load_dataset(pima_path() if dataset == "pima" else dataset, spec["response"])
    return LogisticPosterior(data, spec["prior_variance"])


def chain_stream(seed: int, k: int) -> np.random.Generator:
    """Independent generator for chain ``k`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))


def _mass_from(spec, dim: int):
    if spec is None or spec == "identity":
        return IdentityMass(dim)
    return DiagonalMass(spec)


def _start(cfg: ExperimentConfig, target: TargetDensity):
    x0 = cfg.kernel.get("x0")
    if x0 is None:
        return np.zeros(target.dim)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (target.dim,):
        raise ConfigurationError(f"kernel.x0 must have {target.dim} entries")
    return x0


def _run_one(cfg: ExperimentConfig, target: TargetDensity, run: dict, rng) -> tuple[ChainResult, dict]:
    """One chain for a merged (tuning + kernel + sweep entry) parameter set."""
    kind = cfg.kernel["kind"]
    x0 = _start(cfg, target)
    t = cfg.iterations
    if kind == "hmc":
        lf = LeapfrogConfig(run["step_size"], run["num_steps"])
        mass = _mass_from(run.get("mass"), target.dim)
        chain = run_chain(target, mass, lf, t, x0, rng)
        return chain, {"step_size": lf.step_size, "num_steps": lf.num_steps, "time": lf.trajectory_length}
    if kind == "ideal-hmc":
        chain = ideal_hmc_chain(float(run["time"]), t, float(x0[0]), rng)
        return chain, {"time": float(run["time"])}
    if kind in ("rwm", "mala"):
        h = float(run["scale"])
        prop = rwm_proposal(h) if kind == "rwm" else mala_proposal(target, h)
        return run_mh_chain(target, prop, t, x0, rng, kernel=kind), {"scale": h}
    inv = cfg.kernel["involution"]
    mass = IdentityMass(target.dim)
    if inv == "scale":
        aux, g, params = LogNormalScale(cfg.kernel.get("sigma", 0.5)), ScaleInvolution(), {}
    elif inv == "flip":
        aux, g, params = GaussianMomentum(mass), MomentumFlipInvolution(), {}
    elif inv == "gaussian-flow":
        aux, g, params = GaussianMomentum(mass), GaussianFlowInvolution(run["time"]), {"time": float(run["time"])}
    else:
        lf = LeapfrogConfig(run["step_size"], run["num_steps"])
        aux, g = GaussianMomentum(mass), LeapfrogInvolution(target, mass, lf)
        params = {"step_size": lf.step_size, "num_steps": lf.num_steps, "time": lf.trajectory_length}
    return run_mhgj_chain(target, aux, g, t, x0, rng), params


def _names(target: TargetDensity) -> list[str]:
    names = getattr(target, "names", None)
    if names:
        return list(names)
    return [f"x{j + 1}" for j in range(target.dim)]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def _write_rows(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_samples(path: Path, names: list[str], blocks: list[tuple[int | None, np.ndarray]]):
    """Write T x d draws; a leading ``chain`` column is added when several chains share a file."""
    with_chain = blocks[0][0] is not None
    with open(path, "w", newline="") as fh:
        header = (["chain"] if with_chain else []) + names
        fh.write(",".join(header) + "\n")
        for k, x in blocks:
            if with_chain:
                x = np.column_stack([np.full(x.shape[0], k, dtype=float), x])
                fmt = ["%d"] + [FLOAT_FMT] * (x.shape[1] - 1)
            else:
                fmt = FLOAT_FMT
            np.savetxt(fh, x, fmt=fmt, delimiter=",")


def _summary_rows(k, report):
    for row in report.rows():
        yield ([k] if k is not None else []) + [row[c] for c in
                                                ("coordinate", "mean", "variance", "q05", "q50", "q95", "ess",
                                                 "degenerate")]


_SUMMARY_HEADER = ["coordinate", "mean", "variance", "q05", "q50", "q95", "ess", "degenerate"]


def _write_diagnostics(out: Path, prefix: str, names, chains: list[tuple[int | None, ChainResult]], cfg):
    """samples/summary/acf/density files for one or more chains; returns the reports."""
    reports = []
    with_chain = chains[0][0] is not None
    lead = ["chain"] if with_chain else []
    summary_rows, acf_rows, dens_rows = [], [], []
    for k, chain in chains:
        rep = summarize(chain, cfg.output["acf_lags"], names)
        reports.append(rep)
        summary_rows.extend(_summary_rows(k, rep))
        for lag in range(rep.acf.shape[1]):
            acf_rows.append(([k] if with_chain else []) + [lag] + list(rep.acf[:, lag]))
        for j, name in enumerate(names):
            col = chain.samples[:, j]
            if rep.degenerate[j]:
                dens_rows.append(([k] if with_chain else []) + [name, col[0], col[0], col.shape[0]])
                continue
            for left, right, count in zip(*histogram(col, cfg.output["histogram_bins"])):
                dens_rows.append(([k] if with_chain else []) + [name, left, right, int(count)])
    if cfg.output["samples"]:
        _write_samples(out / f"{prefix}samples.csv", names, [(k, c.samples) for k, c in chains])
    _write_rows(out / f"{prefix}summary.csv", lead + _SUMMARY_HEADER, summary_rows)
    _write_rows(out / f"{prefix}acf.csv", lead + ["lag"] + names, acf_rows)
    _write_rows(out / f"{prefix}density.csv", lead + ["coordinate", "left", "right", "count"], dens_rows)
    return reports


def _chain_meta(chain: ChainResult, rep) -> dict:
    return {
        "acceptance": chain.acceptance_rate,
        "divergences": int(len(chain.divergences)),
        "min_ess": float(np.nanmin(rep.ess)) if np.isfinite(rep.ess).any() else None,
    }


def _probe_rows(stage, report):
    for i, pr in enumerate(report.probes):
        yield [stage, i, pr.step_size, pr.acceptance, pr.divergences, pr.step_size == report.step_size]


def _write_tuning(out: Path, partial: dict):
    rows = []
    for stage in ("stage1", "stage2"):
        if partial.get(stage) is not None:
            rows.extend(_probe_rows(stage, partial[stage]))
    _write_rows(out / "tuning.csv", ["stage", "probe", "step_size", "acceptance", "divergences", "chosen"], rows)


def _write_meta(out: Path, cfg: ExperimentConfig, body: dict, wall: float):
    meta = {
        "name": cfg.name,
        "config": cfg.raw,
        "seed": cfg.seed,
        "rng": "PCG64, stream k = SeedSequence(seed, spawn_key=(k,))",
        **body,
        "wall_time_seconds": wall,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _trajectory(cfg: ExperimentConfig, target, runs: list[dict]):
    """Leapfrog paths from one fixed phase-space point, one per run (or one per the given config)."""
    spec = cfg.output["trajectory"]
    z = PhaseState(spec["position"], spec["momentum"])
    if z.dim != target.dim:
        raise ConfigurationError("output.trajectory position and momentum must match the target dimension")
    configs = []
    if "step_size" in spec and "num_steps" in spec:
        configs.append((None, LeapfrogConfig(spec["step_size"], spec["num_steps"])))
    else:
        for k, run in enumerate(runs):
            if "step_size" in run and "num_steps" in run:
                configs.append((k, LeapfrogConfig(run["step_size"], run["num_steps"])))
    mass = IdentityMass(target.dim)
    rows = []
    for k, lf in configs:
        xs, ps = leapfrog_trajectory(target, mass, z, lf)
        for i in range(xs.shape[0]):
            h = -target.log_density(xs[i]) + mass.kinetic(ps[i])
            rows.append([k if k is not None else 0, lf.step_size, lf.num_steps, i, i * lf.step_size,
                         *xs[i], *ps[i], h])
    names = _names(target)
    header = (["chain", "step_size", "num_steps", "step", "time"] + [f"position_{n}" for n in names]
              + [f"momentum_{n}" for n in names] + ["hamiltonian"])
    return header, rows


def _run_fixed(cfg: ExperimentConfig, target, out: Path) -> dict:
    names = _names(target)
    runs = [{**cfg.tuning, **cfg.kernel, **entry} for entry in (cfg.sweep or ({},))]
    chains, params = [], []
    for k, run in enumerate(runs):
        chain, p = _run_one(cfg, target, run, chain_stream(cfg.seed, k))
        chains.append((k if cfg.sweep else None, chain))
        params.append({"label": run["label"], **p} if "label" in run else p)
        logger.info("chain %d: acceptance %.4f", k, chain.acceptance_rate)
    reports = _write_diagnostics(out, "", names, chains, cfg)
    body = {"chains": []}
    for (k, chain), rep, p in zip(chains, reports, params):
        body["chains"].append({"chain": k if k is not None else 0, **p, **_chain_meta(chain, rep)})
    if cfg.sweep:
        keys = [key for key in ("label", "time", "step_size", "num_steps", "scale") if any(key in p for p in params)]
        rows = []
        for (k, chain), rep, p in zip(chains, reports, params):
            lag1 = rep.acf[:, 1] if rep.acf.shape[1] > 1 else np.full(target.dim, math.nan)
            rows.append([k] + [p.get(key, "") for key in keys]
                        + [chain.acceptance_rate, len(chain.divergences)]
                        + list(rep.mean) + list(rep.variance) + list(lag1) + list(rep.ess))
        header = (["chain"] + keys + ["acceptance", "divergences"] + [f"mean_{n}" for n in names]
                  + [f"variance_{n}" for n in names] + [f"acf1_{n}" for n in names] + [f"ess_{n}" for n in names])
        _write_rows(out / "sweep.csv", header, rows)
    if "trajectory" in cfg.output:
        header, rows = _trajectory(cfg, target, runs)
        _write_rows(out / "trajectory.csv", header, rows)
        if "step_size" in runs[0]:
            sug = suggest_trajectory(target, IdentityMass(target.dim), runs[0]["step_size"], 10_000)
            body["half_period_suggestion"] = {"num_steps": sug.num_steps, "time": sug.uturn_time,
                                              "truncated": sug.truncated}
    body["acceptance"] = chains[0][1].acceptance_rate if len(chains) == 1 else None
    body["divergences"] = sum(int(len(c.divergences)) for _, c in chains)
    return body


def _run_auto(cfg: ExperimentConfig, target, out: Path) -> dict:
    """Two-stage workflow: tune and run naive HMC, then re-tune and run the preconditioned sampler."""
    warm = cfg.tuning["warmup"]
    names = _names(target)
    x0 = _start(cfg, target)
    kwargs = {key: warm[key] for key in ("tune_steps", "num_steps", "budget_gradients") if key in warm}
    result = warmup_pipeline(target, warm["iterations"], warm["mode"], warm.get("accept_target"),
                             chain_stream(cfg.seed, 0), x0=x0, **kwargs)
    _write_tuning(out, {"stage1": result.stage1, "stage2": result.stage2})
    _write_diagnostics(out, "warmup_", names, [(None, result.warmup_chain)], cfg)

    start = result.warmup_chain.samples[-1]
    steps = result.config.num_steps
    lf1 = LeapfrogConfig(result.stage1.step_size, steps)
    stage1 = run_chain(target, IdentityMass(target.dim), lf1, cfg.iterations, start, chain_stream(cfg.seed, 1))
    stage2 = run_chain(target, result.mass, result.config, cfg.iterations, start, chain_stream(cfg.seed, 2))
    (rep1,) = _write_diagnostics(out, "stage1_", names, [(None, stage1)], cfg)
    (rep2,) = _write_diagnostics(out, "", names, [(None, stage2)], cfg)
    mass_desc = result.mass.describe()
    _write_rows(out / "mass.csv", ["coordinate", "inverse_mass", "mass"],
                [[n, result.mass_estimate.covariance[j] if result.mass_estimate.covariance.ndim == 1
                  else result.mass_estimate.covariance[j, j],
                  mass_desc["diagonal"][j] if "diagonal" in mass_desc else mass_desc["matrix"][j][j]]
                 for j, n in enumerate(names)])
    body = {
        "stage1": {"step_size": lf1.step_size, "num_steps": lf1.num_steps, "mass": "identity",
                   "tuning_acceptance": result.stage1.acceptance, **_chain_meta(stage1, rep1),
                   "ess": list(rep1.ess)},
        "stage2": {"step_size": result.config.step_size, "num_steps": steps, "mass": result.mass.form,
                   "tuning_acceptance": result.stage2.acceptance, **_chain_meta(stage2, rep2),
                   "ess": list(rep2.ess)},
        "step_size_ratio": result.config.step_size / lf1.step_size,
        "min_ess_ratio": (float(np.nanmin(rep2.ess)) / float(np.nanmin(rep1.ess))),
        "coordinates": names,
        "acceptance": stage2.acceptance_rate,
        "divergences": int(len(stage2.divergences)),
    }
    if result.trajectory is not None:
        body["half_period_suggestion"] = {"num_steps": result.trajectory.num_steps,
                                          "time": result.trajectory.uturn_time,
                                          "truncated": result.trajectory.truncated}
    return body


def output_dir(cfg: ExperimentConfig, out: str | os.PathLike | None) -> Path:
    """``out`` if given, else ``$SAMPLER_OUT/<name>``, else ``./sampler_out/<name>``."""
    if out is not None:
        return Path(out)
    root = os.environ.get("SAMPLER_OUT") or "sampler_out"
    return Path(root) / cfg.name


def run_experiment(cfg: ExperimentConfig, out=None) -> tuple[int, Path]:
    """Run ``cfg`` and write its artifacts. Returns (exit status, output directory).

    Exit status is ``EXIT_OK`` on success and ``EXIT_TUNING_FAILED`` if a
    step-size search misses its target; in that case ``tuning.csv`` and
    ``meta.json`` hold the partial report. Invalid configs never get here
    (``parse_config`` raises).
    """
    out = output_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    target = build_target(cfg.target)
    try:
        if cfg.tuning.get("auto"):
            body = _run_auto(cfg, target, out)
        else:
            body = _run_fixed(cfg, target, out)
    except TuningFailed as exc:
        _write_tuning(out, exc.partial)
        _write_meta(out, cfg, {"status": "tuning_failed", "stage": exc.stage, "message": str(exc)},
                    time.perf_counter() - t0)
        return EXIT_TUNING_FAILED, out
    _write_meta(out, cfg, {"status": "ok", **body}, time.perf_counter() - t0)
    return EXIT_OK, out
