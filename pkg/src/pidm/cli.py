"""Command-line interface tying the pipeline together.

Subcommands mirror the pipeline stages: validate-integrator, generate,
observe, train, sample, enkf, lyapunov, evaluate, ablate.  Relative paths
resolve against PIDM_DATA_DIR when that variable is set.  evaluate/ablate
exit nonzero when any trial aborted.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .container import read_container, resolve_path, write_container
from .dataset import (
    NormStats,
    generate_corpus,
    load_observations,
    load_trajectories,
    make_observations,
    save_observations,
    save_trajectories,
)
from .enkf import EnkfConfig, run_filter
from .errors import ContainerError, PidmError
from .experiment import (
    RABINOVICH_STATE_CLIP,
    ExperimentConfig,
    ablation_sweep,
    parse_config_file,
    run_experiment,
)
from .guidance import GuidanceConfig, sample
from .integrator import DP45, convergence_order
from .lyapunov import config_for, rosenstein_mle
from .metrics import rmse
from .presets import get_preset
from .systems import SYSTEMS, get_system
from .training import DenoiserModel, TrainConfig, train_denoiser


def _save_reconstruction(path, system_name, dt, states, params, extra_meta=None):
    meta = {"kind": "reconstruction", "system": system_name, "dt": dt}
    if extra_meta:
        meta.update(extra_meta)
    arrays = {"states": np.asarray(states, dtype=np.float64)}
    if params is not None:
        arrays["params"] = np.asarray(params, dtype=np.float64)
    write_container(path, meta, arrays)


def _load_states(path):
    """States [L, D] from a reconstruction or trajectories container."""
    meta, arrays = read_container(path)
    kind = meta.get("kind")
    if kind == "reconstruction":
        return arrays["states"], meta
    if kind == "trajectories":
        corpus = load_trajectories(path)
        dim = get_system(meta["system"]).dim
        return corpus.z_raw[0, :dim].T, meta
    raise ContainerError(f"{path}: cannot read states from kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_validate_integrator(args) -> int:
    print(f"tableau rational residual: {DP45.rational_residual():.3e}")
    print(f"tableau row-sum residual:  {DP45.row_sum_residual():.3e}")
    print(f"tableau weight-sum residual: {DP45.weight_sum_residual():.3e}")
    names = [args.system] if args.system else ["lorenz", "rossler"]
    ok = True
    for name in names:
        system = get_system(name)
        params = system.nominal_params()
        x0 = system.nominal_initial()
        report = convergence_order(system, x0, params, horizon=0.5)
        order = report["order"]
        ok &= order >= 4.7
        print(f"{name}: empirical order {order:.2f} (orders {report['orders']})")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_generate(args) -> int:
    system = get_system(args.system)
    preset = get_preset(args.preset)
    n = args.n if args.n is not None else preset.n_train
    length = args.len if args.len is not None else preset.length
    rng = np.random.default_rng(args.seed)
    corpus = generate_corpus(system, n, length, rng, condition=args.condition, seed=args.seed)
    out = resolve_path(args.out)
    save_trajectories(out, corpus)
    print(f"wrote {n} {args.system}/{args.condition} trajectories of length {length} to {out}")
    return 0


def _cmd_observe(args) -> int:
    corpus = load_trajectories(resolve_path(args.corpus))
    system = get_system(corpus.system)
    if not 0 <= args.index < corpus.n_traj:
        raise PidmError(f"trajectory index {args.index} outside corpus of {corpus.n_traj}")
    z_norm = corpus.z_normalized[args.index]
    rng = np.random.default_rng(args.seed)
    obs = make_observations(z_norm, system.dim, args.density, args.sigma, rng)
    out = resolve_path(args.out)
    save_observations(
        out,
        obs,
        corpus.system,
        extra={"source_index": args.index, "dt": corpus.dt, "seed": args.seed},
        extra_arrays={
            "z_min": corpus.stats.z_min,
            "z_max": corpus.stats.z_max,
            "params": corpus.params[args.index],
            "truth_states": corpus.z_raw[args.index, : system.dim].T,
        },
    )
    print(f"wrote {obs.n_obs} observations ({args.density:.0%} of {obs.length}) to {out}")
    return 0


def _cmd_train(args) -> int:
    corpus = load_trajectories(resolve_path(args.corpus))
    preset = get_preset(args.preset)
    cfg = TrainConfig(
        steps=args.steps if args.steps is not None else preset.train_steps,
        lr=args.lr if args.lr is not None else preset.train_lr,
        diffusion_steps=preset.diffusion_steps,
        seed=args.seed,
    )
    model = train_denoiser(corpus, cfg)
    out = resolve_path(args.out)
    model.save(out)
    first, last = model.loss_history[0], float(np.mean(model.loss_history[-20:]))
    print(f"trained {cfg.steps} steps on {corpus.n_traj} trajectories; loss {first:.4f} -> {last:.4f}")
    print(f"wrote model to {out}")
    return 0


def _cmd_sample(args) -> int:
    model = DenoiserModel.load(resolve_path(args.model))
    obs, meta, extra = load_observations(resolve_path(args.obs))
    system = get_system(meta["system"])
    lam = args.lambda_base if args.lambda_base is not None else system.lambda_base
    rng = np.random.default_rng(args.seed)
    out = sample(model, system, obs, GuidanceConfig(lambda_base=lam), rng, length=obs.length)
    recon = model.stats.denormalize(out.x0_hat)
    states = recon[: system.dim].T
    path = resolve_path(args.out)
    _save_reconstruction(
        path,
        system.name,
        model.dt,
        states,
        out.p_hat,
        {"lambda_base": lam, "fallback_count": out.fallback_count, "seed": args.seed},
    )
    print(f"sampled {states.shape[0]} steps (lambda_base={lam}, fallbacks={out.fallback_count})")
    print(f"parameter estimate: {np.array2string(out.p_hat, precision=4)}")
    if "truth_states" in extra:
        print(f"rmse vs truth: {rmse(states, extra['truth_states']):.4f}")
    print(f"wrote reconstruction to {path}")
    if args.trace:
        with open(resolve_path(args.trace), "w", encoding="utf-8") as fh:
            json.dump(out.guidance_trace, fh, indent=2)
        print(f"wrote guidance trace to {resolve_path(args.trace)}")
    return 0


def _cmd_enkf(args) -> int:
    obs, meta, extra = load_observations(resolve_path(args.obs))
    system = get_system(args.system or meta["system"])
    if "z_min" not in extra or "params" not in extra:
        raise PidmError("observation file lacks normalization stats/params; create it with 'observe'")
    stats = NormStats(z_min=extra["z_min"], z_max=extra["z_max"])
    d = system.dim
    lo, span = stats.z_min[:d], stats.span[:d]
    obs_phys = lo + (obs.values + 1.0) * span / 2.0
    r_diag = (obs.sigma * span / 2.0) ** 2
    cfg = EnkfConfig(
        n_members=args.members,
        prop_dt=system.dt,
        sigma_obs=obs.sigma,
        state_clip=RABINOVICH_STATE_CLIP if system.name == "rabinovich" else None,
        augment_params=args.augment_params,
    )
    result = run_filter(
        system,
        obs.indices,
        obs_phys,
        extra["params"],
        obs.length,
        cfg,
        np.random.default_rng(args.seed),
        r_diag=r_diag,
    )
    path = resolve_path(args.out)
    p_est = result.param_estimate if result.param_estimate is not None else extra["params"]
    _save_reconstruction(
        path, system.name, system.dt, result.estimate, p_est,
        {"members": args.members, "seed": args.seed, "reinit_count": result.reinit_count},
    )
    print(f"filtered {obs.length} steps with {args.members} members; rmse at obs: {result.rmse_obs:.4f}")
    if "truth_states" in extra:
        print(f"rmse vs truth: {rmse(result.estimate, extra['truth_states']):.4f}")
    print(f"wrote reconstruction to {path}")
    return 0


def _cmd_lyapunov(args) -> int:
    states, meta = _load_states(resolve_path(args.traj))
    system = get_system(args.system or meta["system"])
    dt = args.dt if args.dt is not None else float(meta.get("dt", system.dt))
    est = rosenstein_mle(states, dt, config_for(system))
    print(f"lambda_max: {est.lambda_max:.4f}  (r2 {est.r2:.3f}, fit steps {est.fit_range})")
    print("per-window: " + ", ".join(f"{v:.4f}" for v in est.per_window))
    return 0


def _cmd_evaluate(args) -> int:
    cfg = parse_config_file(resolve_path(args.config))
    result = run_experiment(cfg)
    for method, entry in result.summary["methods"].items():
        print(f"{method}: rmse {entry['rmse_mean']:.4f} +- {entry['rmse_std']:.4f}")
    for pair, entry in result.summary["wilcoxon"].items():
        if entry["p"] is not None:
            print(f"wilcoxon {pair}: p = {entry['p']:.4f}")
    print(f"wrote {result.files['csv']} and {result.files['summary']}")
    if result.aborted:
        print(f"{result.aborted} trial(s) aborted", file=sys.stderr)
        return 1
    return 0


def _cmd_ablate(args) -> int:
    cfg = parse_config_file(resolve_path(args.config))
    lambdas = [float(v) for v in args.lambdas.split(",") if v.strip() != ""]
    table = ablation_sweep(cfg, lambdas)
    print("lambda  mean_rmse")
    for lam in table["lambdas"]:
        print(f"{lam:<7g} {table['mean_rmse'][lam]:.4f}")
    print(f"wrote {table['files']['csv']}")
    if table["aborted"]:
        print(f"{table['aborted']} trial(s) aborted", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pidm", description="Chaotic-trajectory reconstruction laboratory"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-integrator", help="check tableau exactness and convergence order")
    p.add_argument("--system", choices=sorted(SYSTEMS), default=None)
    p.set_defaults(func=_cmd_validate_integrator)

    p = sub.add_parser("generate", help="integrate a training corpus")
    p.add_argument("--system", choices=sorted(SYSTEMS), required=True)
    p.add_argument("--condition", choices=["id", "ood"], default="id")
    p.add_argument("--n", type=int, default=None, help="trajectory count (default: preset)")
    p.add_argument("--len", type=int, default=None, help="trajectory length (default: preset)")
    p.add_argument("--preset", default="desk")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("observe", help="draw sparse noisy observations from a corpus trajectory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--density", type=float, default=0.10)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_observe)

    p = sub.add_parser("train", help="train the denoiser on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", default="desk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="guided reverse-diffusion reconstruction")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--lambda-base", type=float, default=None, dest="lambda_base")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="write guidance trace JSON here")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("enkf", help="ensemble Kalman filter reconstruction")
    p.add_argument("--system", choices=sorted(SYSTEMS), default=None)
    p.add_argument("--obs", required=True)
    p.add_argument("--members", type=int, default=50)
    p.add_argument("--augment-params", action="store_true", dest="augment_params")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_enkf)

    p = sub.add_parser("lyapunov", help="maximal Lyapunov exponent of a trajectory file")
    p.add_argument("--traj", required=True)
    p.add_argument("--system", choices=sorted(SYSTEMS), default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=_cmd_lyapunov)

    p = sub.add_parser("evaluate", help="run a multi-trial experiment from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="physics-weight sweep over a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", default="0,0.5,1,2,5")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PidmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
