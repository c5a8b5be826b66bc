"""Experiment orchestration: paired trials, metrics, statistics, files.

Every trial draws fresh ground truth and observations from seeded
substreams, runs each requested method on the same data, and lands in one
CSV row.  Method comparisons are paired by construction: the sampling rng
substream is recreated per method, so guided and unguided runs consume
identical noise and an ablation's lambda=0 column is bit-identical to a
standalone unguided run.  Wall-clock runtime stays out of the CSV so the
per-trial rows are bit-reproducible from (config, seed).
"""
from __future__ import annotations

import json
import os
import tempfile
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import metrics
from .dataset import generate_corpus, load_trajectories, make_observations
from .enkf import EnkfConfig, run_filter
from .errors import ConfigError, EstimationError, PidmError
from .guidance import GuidanceConfig, sample
from .lyapunov import config_for, rosenstein_mle
from .presets import get_preset
from .systems import get_system
from .training import DenoiserModel

METHOD_ORDER = ("pidm", "pure_ai", "enkf")
SAMPLING_METHODS = ("pidm", "pure_ai")
RABINOVICH_STATE_CLIP = 50.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one evaluation run."""

    system: str
    condition: str = "id"
    n_trials: int | None = None
    methods: tuple = METHOD_ORDER
    preset: str = "desk"
    seed: int = 0
    lambda_base: float | None = None
    model_path: str | None = None
    corpus_path: str | None = None
    out_dir: str = "results"
    workers: int = 1
    obs_density: float | None = None
    obs_sigma: float | None = None
    length: int | None = None
    label: str | None = None

    def validate(self) -> None:
        if self.condition not in ("id", "ood"):
            raise ConfigError(f"condition must be 'id' or 'ood', got {self.condition!r}")
        bad = [m for m in self.methods if m not in METHOD_ORDER]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHOD_ORDER}, got {self.methods}")
        if self.n_trials is not None and self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        needs_model = any(m in SAMPLING_METHODS for m in self.methods)
        if needs_model and not self.model_path:
            raise ConfigError("methods pidm/pure_ai need model_path")
        if not needs_model and not (self.model_path or self.corpus_path):
            raise ConfigError("enkf-only runs need model_path or corpus_path for normalization stats")

    def resolved(self) -> "ExperimentConfig":
        """Fill preset-dependent fields left unset."""
        p = get_preset(self.preset)
        return replace(
            self,
            n_trials=self.n_trials if self.n_trials is not None else p.n_trials,
            obs_density=self.obs_density if self.obs_density is not None else p.obs_density,
            obs_sigma=self.obs_sigma if self.obs_sigma is not None else p.obs_sigma,
            length=self.length if self.length is not None else p.length,
            methods=tuple(m for m in METHOD_ORDER if m in self.methods),
            label=self.label or f"{self.system}_{self.condition}_{self.preset}",
        )


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    files: dict
    aborted: int = 0


# ---------------------------------------------------------------------------
# config file parsing

_CONFIG_KEYS = {
    "system": str,
    "condition": str,
    "n_trials": int,
    "methods": lambda s: tuple(m.strip() for m in s.split(",") if m.strip()),
    "preset": str,
    "seed": int,
    "lambda_base": float,
    "model": str,
    "corpus": str,
    "out_dir": str,
    "workers": int,
    "obs_density": float,
    "obs_sigma": float,
    "length": int,
    "label": str,
}
_KEY_ALIASES = {"model": "model_path", "corpus": "corpus_path"}


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the key=value experiment format ('#' starts a comment)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _CONFIG_KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        values[_KEY_ALIASES.get(key, key)] = parsed
    if "system" not in values:
        raise ConfigError("config must set 'system'")
    return ExperimentConfig(**values)


def parse_config_file(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# seeding and per-trial execution

def trial_rng(seed: int, trial: int, role: str) -> np.random.Generator:
    """Independent substream keyed by (trial, role), stable across runs."""
    key = zlib.crc32(role.encode("ascii"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial, key)))


def _load_stats_source(cfg: ExperimentConfig):
    """Model (preferred) or bare corpus stats for the normalization map."""
    if cfg.model_path:
        model = DenoiserModel.load(cfg.model_path)
        if model.system != cfg.system:
            raise ConfigError(f"model was trained on {model.system!r}, config says {cfg.system!r}")
        return model, model.stats
    corpus = load_trajectories(cfg.corpus_path)
    if corpus.system != cfg.system:
        raise ConfigError(f"corpus holds {corpus.system!r}, config says {cfg.system!r}")
    return None, corpus.stats


def _lyap_or_nan(states: np.ndarray, system) -> float:
    try:
        return rosenstein_mle(states, system.dt, config_for(system)).lambda_max
    except (EstimationError, ConfigError):
        return float("nan")


def _single_trial(cfg: ExperimentConfig, trial: int, model, stats) -> tuple:
    """One trial: fresh truth + observations, every method, one row."""
    system = get_system(cfg.system)
    d = system.dim
    lam = system.lambda_base if cfg.lambda_base is None else cfg.lambda_base
    row: dict = {"trial": trial}
    runtimes: dict = {}

    truth_set = generate_corpus(
        system, 1, cfg.length, trial_rng(cfg.seed, trial, "truth"), condition=cfg.condition
    )
    z_phys = truth_set.z_raw[0]
    true_params = truth_set.params[0]
    states_true = z_phys[:d].T
    row["lyap_truth"] = _lyap_or_nan(states_true, system)

    z_norm = stats.normalize(z_phys)
    obs = make_observations(
        z_norm, d, cfg.obs_density, cfg.obs_sigma, trial_rng(cfg.seed, trial, "obs")
    )
    lo, span = stats.z_min[:d], stats.span[:d]
    obs_phys = lo + (obs.values + 1.0) * span / 2.0
    r_diag = (cfg.obs_sigma * span / 2.0) ** 2

    for method in cfg.methods:
        start = time.perf_counter()
        if method in SAMPLING_METHODS:
            gcfg = GuidanceConfig(lambda_base=lam if method == "pidm" else 0.0)
            out = sample(
                model, system, obs, gcfg, trial_rng(cfg.seed, trial, "sampling"), length=cfg.length
            )
            recon_joint = stats.denormalize(out.x0_hat)
            recon_states = recon_joint[:d].T
            mape_vals = metrics.mape(recon_joint[d:], true_params)
            for k, pname in enumerate(system.param_names):
                row[f"mape_{method}_{pname}"] = float(mape_vals[k])
        else:
            ecfg = EnkfConfig(
                prop_dt=system.dt,
                sigma_obs=cfg.obs_sigma,
                state_clip=RABINOVICH_STATE_CLIP if system.name == "rabinovich" else None,
            )
            result = run_filter(
                system,
                obs.indices,
                obs_phys,
                true_params,
                cfg.length,
                ecfg,
                trial_rng(cfg.seed, trial, "enkf"),
                r_diag=r_diag,
            )
            recon_states = result.estimate
        row[f"rmse_{method}"] = metrics.rmse(recon_states, states_true)
        row[f"lyap_{method}"] = _lyap_or_nan(recon_states, system)
        runtimes[method] = time.perf_counter() - start

    row["note"] = ""
    return row, runtimes


def _abort_row(cfg: ExperimentConfig, trial: int, exc: Exception) -> dict:
    system = get_system(cfg.system)
    row: dict = {"trial": trial, "lyap_truth": float("nan")}
    for method in cfg.methods:
        if method in SAMPLING_METHODS:
            for pname in system.param_names:
                row[f"mape_{method}_{pname}"] = float("nan")
        row[f"rmse_{method}"] = float("nan")
        row[f"lyap_{method}"] = float("nan")
    row["note"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return row


_WORKER_MODELS: dict = {}


def _trial_worker(cfg_dict: dict, trial: int):
    cfg = ExperimentConfig(**cfg_dict)
    key = (cfg.model_path, cfg.corpus_path)
    if key not in _WORKER_MODELS:
        _WORKER_MODELS[key] = _load_stats_source(cfg)
    model, stats = _WORKER_MODELS[key]
    try:
        return _single_trial(cfg, trial, model, stats)
    except (PidmError, np.linalg.LinAlgError) as exc:
        return _abort_row(cfg, trial, exc), {}


# ---------------------------------------------------------------------------
# file output

def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    return f"{float(value):.17g}"


def _columns(cfg: ExperimentConfig) -> list:
    system = get_system(cfg.system)
    cols = ["trial", "lyap_truth"]
    for method in cfg.methods:
        cols.append(f"rmse_{method}")
        cols.append(f"lyap_{method}")
        if method in SAMPLING_METHODS:
            cols.extend(f"mape_{method}_{p}" for p in system.param_names)
    cols.append("note")
    return cols


def _write_outputs(cfg: ExperimentConfig, rows: list, summary: dict) -> dict:
    os.makedirs(cfg.out_dir, exist_ok=True)
    cols = _columns(cfg)
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for col in cols:
            v = row[col]
            cells.append(str(v) if col in ("trial", "note") else _fmt(metrics.sanitize(v)))
        lines.append(",".join(cells))
    files = {"csv": os.path.join(cfg.out_dir, f"{cfg.label}.csv")}
    _atomic_write(files["csv"], "\n".join(lines) + "\n")

    files["summary"] = os.path.join(cfg.out_dir, f"{cfg.label}_summary.json")
    _atomic_write(files["summary"], json.dumps(summary, indent=2, sort_keys=True) + "\n")

    for method in cfg.methods:
        key = f"plot_rmse_{method}"
        files[key] = os.path.join(cfg.out_dir, f"{cfg.label}_{key}.txt")
        body = "\n".join(
            f"{row['trial']} {_fmt(metrics.sanitize(row[f'rmse_{method}']))}" for row in rows
        )
        _atomic_write(files[key], body + "\n")
    return files


# ---------------------------------------------------------------------------
# top-level runs

def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all trials and write CSV + JSON summary + plot data files."""
    cfg.validate()
    cfg = cfg.resolved()
    system = get_system(cfg.system)
    started = time.perf_counter()

    outcomes: list
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(
                pool.map(_trial_worker, [asdict(cfg)] * cfg.n_trials, range(cfg.n_trials))
            )
    else:
        model, stats = _load_stats_source(cfg)
        outcomes = []
        for trial in range(cfg.n_trials):
            try:
                outcomes.append(_single_trial(cfg, trial, model, stats))
            except (PidmError, np.linalg.LinAlgError) as exc:
                outcomes.append((_abort_row(cfg, trial, exc), {}))

    rows = [row for row, _ in outcomes]
    aborted = sum(1 for row in rows if row["note"])
    runtime_by_method = {m: 0.0 for m in cfg.methods}
    for _, runtimes in outcomes:
        for m, sec in runtimes.items():
            runtime_by_method[m] += sec

    summary = _summarize(cfg, system, rows)
    summary["runtime_seconds"] = {
        "total": time.perf_counter() - started,
        "per_method": runtime_by_method,
    }
    files = _write_outputs(cfg, rows, summary)
    return ExperimentResult(rows=rows, summary=summary, files=files, aborted=aborted)


def _summarize(cfg: ExperimentConfig, system, rows: list) -> dict:
    def clean(col):
        return np.array([float(metrics.sanitize(row[col])) for row in rows])

    per_method: dict = {}
    for method in cfg.methods:
        r = clean(f"rmse_{method}")
        entry = {
            "rmse_mean": float(r.mean()),
            "rmse_std": float(r.std(ddof=1)) if len(r) > 1 else 0.0,
            "lyap_mean": float(clean(f"lyap_{method}").mean()),
        }
        if method in SAMPLING_METHODS:
            entry["mape_mean"] = {
                p: float(clean(f"mape_{method}_{p}").mean()) for p in system.param_names
            }
        per_method[method] = entry

    wilcoxon: dict = {}
    for i, m1 in enumerate(cfg.methods):
        for m2 in cfg.methods[i + 1 :]:
            pairs = np.column_stack([clean(f"rmse_{m1}"), clean(f"rmse_{m2}")])
            try:
                stat, p = metrics.wilcoxon_signed_rank(pairs)
                wilcoxon[f"{m1}_vs_{m2}"] = {"statistic": stat, "p": p}
            except (ConfigError, EstimationError) as exc:
                wilcoxon[f"{m1}_vs_{m2}"] = {"statistic": None, "p": None, "note": str(exc)}

    summary = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        "n_trials": cfg.n_trials,
        "aborted": sum(1 for row in rows if row["note"]),
        "lyap_truth_mean": float(clean("lyap_truth").mean()),
        "methods": per_method,
        "wilcoxon": wilcoxon,
    }
    if cfg.condition == "ood" and system.ood_is_widened_id:
        summary["ood_note"] = (
            "OOD parameter box for this system is the training box widened by 20% per side"
        )
    return summary


def ablation_sweep(cfg: ExperimentConfig, lambdas) -> dict:
    """run_experiment per lambda with shared trial seeds; writes sweep table."""
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ConfigError("ablation needs at least one lambda value")
    cfg.validate()
    base = cfg.resolved()
    per_lambda: dict = {}
    results: dict = {}
    for lam in lambdas:
        sub = replace(
            base,
            lambda_base=lam,
            methods=("pidm",),
            out_dir=os.path.join(base.out_dir, f"lambda_{lam:g}"),
            label=f"{base.label}_lambda_{lam:g}",
        )
        res = run_experiment(sub)
        results[lam] = res
        per_lambda[lam] = [float(metrics.sanitize(row["rmse_pidm"])) for row in res.rows]

    os.makedirs(base.out_dir, exist_ok=True)
    mean_rmse = {lam: float(np.mean(vals)) for lam, vals in per_lambda.items()}
    header = ["lambda", "rmse_mean"] + [f"trial_{i}" for i in range(base.n_trials)]
    lines = [",".join(header)]
    for lam in lambdas:
        lines.append(
            ",".join([_fmt(lam), _fmt(mean_rmse[lam])] + [_fmt(v) for v in per_lambda[lam]])
        )
    csv_path = os.path.join(base.out_dir, f"{base.label}_ablation.csv")
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    plot_path = os.path.join(base.out_dir, f"{base.label}_plot_ablation.txt")
    _atomic_write(plot_path, "\n".join(f"{_fmt(l)} {_fmt(mean_rmse[l])}" for l in lambdas) + "\n")

    aborted = sum(results[lam].aborted for lam in lambdas)
    return {
        "lambdas": lambdas,
        "mean_rmse": mean_rmse,
        "per_trial": per_lambda,
        "files": {"csv": csv_path, "plot": plot_path},
        "aborted": aborted,
    }
