"""Experiment configs, seeded trial runner and result files.

A run writes three kinds of files into the output directory:

``records.csv``
    Long format, header ``solver,seed,iter,mse,mse_db,se_v_hat_x``.
``summary.json``
    Final-MSE mean and standard error per solver, plus warnings.
``qq_iter<t>.csv``
    QQ pairs of the QMP normalized residuals at iteration ``t``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from dataclasses import field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import baselines, solver
from .metrics import qq_data
from .model import ChannelSpec, PriorSpec, generate_instance
from .state_evolution import SeConfig, run_se

SCENARIOS = ("cs_awgn", "mimo_01", "mimo_uniform")
SOLVERS = ("qmp", "wf", "twf")
CSV_HEADER = ("solver", "seed", "iter", "mse", "mse_db", "se_v_hat_x")
QQ_HEADER = ("seed", "sample", "theoretical")
THREADS_ENV = "QMP_LAB_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_SCENARIO_DEFAULTS = {
    "mimo_01": (PriorSpec.bernoulli01(0.55), ChannelSpec.awgn(0.1)),
    "mimo_uniform": (PriorSpec.uniform(0.1, 2.1), ChannelSpec.awgn(0.05)),
    # pixel intensities in [0, 1] observed with 8-bit quantization noise
    "cs_awgn": (PriorSpec.uniform(0.0, 1.0), ChannelSpec.awgn(1.0 / 255)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "mimo_01"
    n: int = 64
    m_ratio: float = 4.0
    field: str = "real"
    prior: Optional[PriorSpec] = None
    channel: Optional[ChannelSpec] = None
    trials: int = 20
    seed: int = 0
    solvers: tuple = SOLVERS
    with_se: bool = False
    qq_iters: tuple = ()
    qmp: solver.QmpConfig = dc_field(default_factory=solver.QmpConfig)
    se: SeConfig = dc_field(default_factory=SeConfig)
    wf: baselines.WfConfig = dc_field(default_factory=baselines.WfConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        prior, channel = _SCENARIO_DEFAULTS[self.scenario]
        if self.prior is None:
            object.__setattr__(self, "prior", prior)
        if self.channel is None:
            object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "solvers", tuple(self.solvers))
        object.__setattr__(self, "qq_iters", tuple(int(t) for t in self.qq_iters))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.m_ratio > 0:
            raise ConfigError("m_ratio must be > 0")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.field not in ("real", "complex"):
            raise ConfigError("field must be 'real' or 'complex'")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad or not self.solvers or len(set(self.solvers)) != len(self.solvers):
            raise ConfigError(f"solvers must be distinct names from {SOLVERS}, got {self.solvers}")
        if any(t < 1 or t > self.qmp.max_iters for t in self.qq_iters):
            raise ConfigError("qq_iters must lie in [1, qmp.max_iters]")

    @property
    def m(self) -> int:
        return max(1, int(round(self.m_ratio * self.n)))

    def to_dict(self):
        def plain(obj):
            return {k: v for k, v in asdict(obj).items() if v is not None}
        return {
            "scenario": self.scenario, "n": self.n, "m_ratio": self.m_ratio,
            "field": self.field, "trials": self.trials, "seed": self.seed,
            "solvers": list(self.solvers), "with_se": self.with_se,
            "qq_iters": list(self.qq_iters),
            "prior": self.prior.to_dict(), "channel": self.channel.to_dict(),
            "qmp": plain(self.qmp), "se": plain(self.se), "wf": plain(self.wf),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            sub = {}
            for key, typ in (("qmp", solver.QmpConfig), ("se", SeConfig),
                             ("wf", baselines.WfConfig)):
                raw = d.pop(key, {})
                known = {f.name for f in fields(typ)}
                extra = set(raw) - known
                if extra:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(extra)}")
                sub[key] = typ(**raw)
            if "prior" in d:
                d["prior"] = PriorSpec.from_dict(d["prior"])
            if "channel" in d:
                d["channel"] = ChannelSpec.from_dict(d["channel"])
            known = {f.name for f in fields(cls)}
            extra = set(d) - known
            if extra:
                raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
            return cls(**d, **sub)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str):
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)


PRESETS = {
    # full scale
    "fig10a": dict(scenario="mimo_01", n=256, trials=20, with_se=True),
    "fig10b": dict(scenario="mimo_uniform", n=256, trials=20),
    "cs_awgn": dict(scenario="cs_awgn", n=256, trials=5),
    # desk scale
    "fig10a_small": dict(scenario="mimo_01", n=64, trials=20, with_se=True, qq_iters=(3,)),
    "fig10b_small": dict(scenario="mimo_uniform", n=64, trials=20),
}


def preset(name) -> ExperimentConfig:
    try:
        return ExperimentConfig(**PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- trial execution --------------------------------------------------------

@dataclass
class TrialResult:
    seed: int
    records: dict          # solver -> list of IterationRecord
    residuals: dict        # iteration -> residual vector (QMP only)
    warnings: list


_NUMERICAL = (solver.QmpNumericalError, np.linalg.LinAlgError, ArithmeticError,
              FloatingPointError, ValueError)


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    seed = config.seed + trial
    inst = generate_instance(config.n, config.m, config.prior, config.channel,
                             config.field, seed)
    records, residuals, warnings = {}, {}, []
    for name in config.solvers:
        try:
            if name == "qmp":
                qcfg = replace(config.qmp, seed=seed, record_residuals=bool(config.qq_iters))
                out = solver.run(inst, config.prior, config.channel, qcfg)
                for r in out.records:
                    if r.iteration in config.qq_iters:
                        residuals[r.iteration] = r.residual_samples
            else:
                wcfg = replace(config.wf, seed=seed)
                if name == "wf":
                    out = baselines.run_wf(inst, wcfg, config.prior)
                else:
                    out = baselines.run_twf(inst, config.prior, wcfg)
                if out.termination == "diverged":
                    warnings.append(f"{name} seed {seed}: diverged")
            records[name] = out.records
        except _NUMERICAL as exc:
            warnings.append(f"{name} seed {seed}: {type(exc).__name__}: {exc}")
            records[name] = []
    return TrialResult(seed, records, residuals, warnings)


def _workers(requested=None):
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(requested))


def run_trials(config: ExperimentConfig, workers=None):
    """Run every trial; results come back ordered by seed whatever the pool does."""
    n_workers = min(_workers(workers), config.trials)
    if n_workers == 1:
        results = [run_trial(config, k) for k in range(config.trials)]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_trial, [config] * config.trials, range(config.trials)))
    return sorted(results, key=lambda r: r.seed)


# --- file formats -------------------------------------------------------------

def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def format_records_csv(rows) -> str:
    """Rows are ``(solver, seed, iter, mse, se_v_hat_x)`` tuples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for solver_id, seed, it, mse, se in rows:
        mse_db = 10.0 * math.log10(mse) if mse > 0 else -math.inf
        w.writerow((solver_id, seed, it, _fmt(mse), _fmt(mse_db), _fmt(se)))
    return buf.getvalue()


def parse_records_csv(text: str):
    """Inverse of :func:`format_records_csv`; returns a list of dict rows."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for line in reader:
        if len(line) != len(CSV_HEADER):
            raise ValueError(f"malformed row {line}")
        rows.append({"solver": line[0], "seed": int(line[1]), "iter": int(line[2]),
                     "mse": float(line[3]), "mse_db": float(line[4]),
                     "se_v_hat_x": float(line[5])})
    return rows


def format_qq_csv(pairs) -> str:
    """``pairs`` is a list of ``(seed, sample, theoretical)`` triples of arrays."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(QQ_HEADER)
    for seed, sample, theo in pairs:
        for s, q in zip(sample, theo):
            w.writerow((seed, _fmt(s), _fmt(q)))
    return buf.getvalue()


def parse_qq_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    if tuple(next(reader, ())) != QQ_HEADER:
        raise ValueError("unexpected QQ header")
    out = {}
    for seed, s, q in reader:
        out.setdefault(int(seed), ([], []))
        out[int(seed)][0].append(float(s))
        out[int(seed)][1].append(float(q))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}


def summarize(rows, solvers, warnings):
    """Per-solver mean and standard error of the final-iteration MSE."""
    final = {}
    for r in rows:
        key = (r["solver"], r["seed"])
        if key not in final or r["iter"] > final[key][0]:
            final[key] = (r["iter"], r["mse"])
    out = {}
    for name in solvers:
        vals = np.array([v for (s, _), (_, v) in sorted(final.items()) if s == name])
        if vals.size == 0:
            out[name] = {"trials": 0, "final_mse_mean": None, "final_mse_stderr": None}
            continue
        se = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[name] = {"trials": int(vals.size), "final_mse_mean": float(np.mean(vals)),
                     "final_mse_stderr": se}
    return {"solvers": out, "warnings": list(warnings)}


def format_summary(summary) -> str:
    return json.dumps(summary, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_summary(text: str):
    data = json.loads(text)
    if "solvers" not in data or "warnings" not in data:
        raise ValueError("summary is missing required keys")
    return data


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


@dataclass
class ExperimentResult:
    exit_code: int
    files: list
    summary: dict
    se_trajectory: Optional[list] = None


def run_experiment(config: ExperimentConfig, out_dir, workers=None) -> ExperimentResult:
    """Run all trials and write the result files.

    The exit code is 0 on success (possibly with per-trial warnings) and 3
    when no trial of any solver produced a record.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_trials(config, workers)

    se_traj = None
    if config.with_se:
        inst = generate_instance(config.n, config.m, config.prior, config.channel,
                                 config.field, config.seed)
        se_cfg = replace(config.se, iters=config.qmp.max_iters)
        se_traj = list(run_se(config.prior, config.channel, inst.matrices, se_cfg).v_hat_x)

    rows, warnings = [], []
    for name in config.solvers:
        for res in results:
            for r in res.records.get(name, []):
                se = se_traj[r.iteration - 1] if se_traj and name == "qmp" else math.nan
                rows.append((name, res.seed, r.iteration, r.mse, se))
    for res in results:
        warnings.extend(res.warnings)

    files = []
    csv_text = format_records_csv(rows)
    _write(out / "records.csv", csv_text)
    files.append(out / "records.csv")
    summary = summarize(parse_records_csv(csv_text), config.solvers, warnings)
    summary["config"] = config.to_dict()
    if se_traj is not None:
        summary["se_v_hat_x"] = se_traj
    _write(out / "summary.json", format_summary(summary))
    files.append(out / "summary.json")
    _write(out / "config.toml", config.to_toml())
    files.append(out / "config.toml")
    for t in config.qq_iters:
        pairs = [(res.seed, *qq_data(res.residuals[t])) for res in results
                 if t in res.residuals]
        path = out / f"qq_iter{t}.csv"
        _write(path, format_qq_csv(pairs))
        files.append(path)

    code = EXIT_OK if rows else EXIT_NUMERICAL
    return ExperimentResult(code, files, summary, se_traj)
