"""Command-line front end: simulate, fit, evaluate, reproduce.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .driver import CeemConfig, ceem_fit, read_params, write_history, write_params
from .evaluation import EkfSettings, MetricReport, dynamics_error, ekf_evaluate, \
    write_metric_report
from .exceptions import CesysidError, ConfigurationError
from .experiments import perturb_theta, run_fig2, run_fig3, run_table1
from .learner import LearnerOptions
from .models import GaussianNoise, make_model
from .particle import PemConfig, pem_fit
from .simulate import (InitialConditionSpec, generate_dataset, lorenz_initial_condition,
                       model_from_manifest, read_dataset, write_dataset)

__all__ = ["main"]


def _build_true_model(cfg: ExperimentConfig, seed):
    mc = cfg.model
    return make_model(
        mc.id, dt=mc.dt, K=mc.K, obs_dim=mc.obs_dim, seed=seed, h_scale=mc.h_scale,
        A=np.array(mc.A, dtype=float) if mc.A is not None else None,
        B=np.array(mc.B, dtype=float) if mc.B is not None else None,
        C=np.array(mc.C, dtype=float) if mc.C is not None else None,
    )


def _ic_spec(cfg, model):
    if cfg.model.id in ("lorenz", "coupled_lorenz"):
        return lorenz_initial_condition(cfg.model.K if cfg.model.id != "lorenz" else 1)
    return InitialConditionSpec(np.zeros(model.n), np.ones(model.n))


def _noise(cfg, model):
    return GaussianNoise(np.full(model.n, cfg.data.sigma_w),
                         np.full(model.m, cfg.data.sigma_v))


def _simulate(cfg, seed, out_dir):
    model = _build_true_model(cfg, seed)
    noise = _noise(cfg, model)
    ic = _ic_spec(cfg, model)
    dataset = generate_dataset(
        model, noise, ic, cfg.data.trajectories, cfg.data.T, seed=seed,
        model_params={"K": cfg.model.K, "obs_dim": model.m,
                      "h_scale": cfg.model.h_scale, "model_seed": seed,
                      **({"A": cfg.model.A, "B": cfg.model.B, "C": cfg.model.C}
                         if cfg.model.id == "lti" else {})},
        theta_true=model.theta,
    )
    ds_dir = os.path.join(out_dir, "dataset")
    write_dataset(dataset, ds_dir)
    return dataset, ds_dir


def cmd_simulate(args):
    cfg = load_config(args.config)
    seed = cfg.data.seed if args.seed is None else args.seed
    dataset, ds_dir = _simulate(cfg, seed, args.out_dir)
    man = dataset.manifest
    print(f"wrote {len(dataset)} trajectories to {ds_dir}")
    print(f"model={man['model_id']} n={man['n']} m={man['m']} T={man['T']} "
          f"dt={man['dt']} seed={man['seed']}")
    return 0


def _learner_options(cfg):
    ls = cfg.learner
    return LearnerOptions(
        rho_theta=ls.rho_theta if ls.rho_theta is not None else cfg.ceem.rho_theta,
        strategy=ls.strategy, max_iterations=ls.max_iterations,
        step_size=ls.step_size, nm_max_iterations=ls.nm_max_iterations)


def cmd_fit(args):
    cfg = load_config(args.config)
    seed = cfg.data.seed if args.seed is None else args.seed
    os.makedirs(args.out_dir, exist_ok=True)
    ds_dir = os.path.join(args.out_dir, "dataset")
    if os.path.isdir(ds_dir):
        dataset = read_dataset(ds_dir)
    else:
        dataset, _ = _simulate(cfg, seed, args.out_dir)
    model_true = model_from_manifest(dataset.manifest)
    noise = _noise(cfg, model_true)
    ic = _ic_spec(cfg, model_true)
    theta_true = (np.array(dataset.manifest["theta_true"], dtype=float)
                  if "theta_true" in dataset.manifest else None)
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(11,)))
    model_init = model_true.with_theta(
        perturb_theta(model_true.theta, init_rng, cfg.model.theta_init_spread))

    eval_fn = None
    if theta_true is not None:
        def eval_fn(theta, _m=model_init, _t=theta_true, _ic=ic):
            rng = np.random.default_rng(1234)
            return dynamics_error(_m, theta, _t, _ic, 1024, rng)[0]

    try:
        if args.algorithm == "ceem":
            ccfg = CeemConfig(rho_x=cfg.ceem.rho_x, rho_theta=cfg.ceem.rho_theta,
                              tol=cfg.ceem.tol, max_epochs=cfg.ceem.max_epochs,
                              learner=_learner_options(cfg))
            report = ceem_fit(dataset, model_init, noise, ccfg, eval_fn=eval_fn)
        else:
            pcfg = PemConfig(n_particles=cfg.pem.n_particles, n_samples=cfg.pem.n_samples,
                             max_epochs=cfg.pem.max_epochs, saem_burnin=cfg.pem.saem_burnin,
                             saem_decay=cfg.pem.saem_decay,
                             ess_threshold=cfg.pem.ess_threshold,
                             learner=_learner_options(cfg))
            report = pem_fit(dataset, model_init, noise, pcfg, ic, seed=seed,
                             eval_fn=eval_fn)
    except CesysidError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    hist_path = os.path.join(args.out_dir, cfg.output.history_name)
    params_path = os.path.join(args.out_dir, cfg.output.params_name)
    write_history(report, hist_path)
    write_params(report.theta, params_path, layout=model_init.theta_layout,
                 termination=report.termination)
    print(f"{args.algorithm} finished after {len(report.records)} epochs "
          f"({report.termination}); J={report.records[-1].objective:.6g}")
    print(f"wrote {hist_path} and {params_path}")
    return 0


def cmd_evaluate(args):
    cfg = load_config(args.config)
    ds_dir = os.path.join(args.out_dir, "dataset")
    dataset = read_dataset(ds_dir)
    model_true = model_from_manifest(dataset.manifest)
    theta = read_params(args.params)
    model = model_true.with_theta(theta)
    ic = _ic_spec(cfg, model_true)

    eps = float("nan")
    if "theta_true" in dataset.manifest:
        rng = np.random.default_rng(1234)
        eps, _ = dynamics_error(model_true, theta,
                                np.array(dataset.manifest["theta_true"], dtype=float),
                                ic, 1024, rng)
    elif args.require_eps:
        print("dataset manifest carries no theta_true; dynamics error unavailable",
              file=sys.stderr)
        return 1

    settings = EkfSettings()
    scores = []
    preds_all = []
    for tr in dataset.trajectories:
        preds, rep = ekf_evaluate(model, tr.y, tr.u, settings)
        scores.append(rep.mean_rmse)
        preds_all.append(preds)
    scores = np.array(scores)
    report = MetricReport(scores, float(scores.mean()),
                          float(scores.std(ddof=1)) if scores.size > 1 else 0.0, eps)
    out_path = os.path.join(args.out_dir, "metrics.csv")
    header = "ekf: Q=I R=I Sigma0=I x0=0 drop_first=25"
    write_metric_report(report, out_path, header_extra=header)
    print(f"mean EKF prediction RMSE: {report.mean_rmse:.6g}")
    if np.isfinite(eps):
        print(f"dynamics error eps: {eps:.6g}")
    print(f"wrote {out_path}")
    return 0


def cmd_reproduce(args):
    os.makedirs(args.out_dir, exist_ok=True)
    workers = args.threads
    if args.experiment == "table1":
        rows = run_table1(workers=workers)
        path = os.path.join(args.out_dir, "table1.csv")
        with open(path, "w") as fh:
            fh.write("sigma_w,sigma_v,seeds,mean_sigma,se_sigma,mean_rho,se_rho,"
                     "mean_beta,se_beta\n")
            for row in rows:
                mean, se = row.mean, row.stderr
                fh.write(f"{row.sigma_w},{row.sigma_v},{len(row.seeds_used)},"
                         f"{mean[0]:.6g},{se[0]:.3g},{mean[1]:.6g},{se[1]:.3g},"
                         f"{mean[2]:.6g},{se[2]:.3g}\n")
        print(f"wrote {path}")
        for row in rows:
            print(f"sigma_w={row.sigma_w}: mean={np.round(row.mean, 4)} "
                  f"se={np.round(row.stderr, 5)}")
    elif args.experiment == "fig2":
        res = run_fig2(workers=workers)
        path = os.path.join(args.out_dir, "fig2_traces.csv")
        with open(path, "w") as fh:
            fh.write("algorithm,seed,epoch,sigma,rho,beta\n")
            for alg, traces in (("ceem", res.ceem_traces), ("pem", res.pem_traces)):
                for seed, tr in zip(res.seeds, traces):
                    for e, th in enumerate(tr, start=1):
                        fh.write(f"{alg},{seed},{e},{th[0]:.9g},{th[1]:.9g},{th[2]:.9g}\n")
        ratio = res.pem_epoch_seconds.mean() / res.ceem_epoch_seconds.mean()
        print(f"wrote {path}")
        print(f"mean epoch seconds: ceem={res.ceem_epoch_seconds.mean():.3f} "
              f"pem={res.pem_epoch_seconds.mean():.3f} (ratio {ratio:.1f}x)")
    elif args.experiment == "fig3-reduced":
        runs = run_fig3(K=6 if args.full_scale else 3, workers=workers)
        path = os.path.join(args.out_dir, "fig3_scaling.csv")
        with open(path, "w") as fh:
            fh.write("n_traj,seed,eps_initial,eps_final\n")
            for r in runs:
                fh.write(f"{r.n_traj},{r.seed},{r.eps_initial:.9g},{r.eps_final:.9g}\n")
        print(f"wrote {path}")
        for r in runs:
            print(f"n_traj={r.n_traj} seed={r.seed}: eps {r.eps_initial:.4g} -> "
                  f"{r.eps_final:.4g}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cesysid",
                                     description="Gray-box identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit model parameters to a dataset")
    common(p)
    p.add_argument("--algorithm", choices=("ceem", "pem"), default="ceem")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="evaluate fitted parameters")
    common(p)
    p.add_argument("--params", required=True, help="fitted parameters file")
    p.add_argument("--require-eps", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="run a benchmark reproduction protocol")
    p.add_argument("experiment", choices=("table1", "fig2", "fig3-reduced"))
    common(p, needs_config=False)
    p.add_argument("--full-scale", action="store_true",
                   help="fig3 at full dimension (K=6)")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CesysidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
