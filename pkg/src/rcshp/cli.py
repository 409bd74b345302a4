"""Command-line entry points.

  rcshp run         --config cfg.yaml --out results/ [--profile desk|paper] ...
  rcshp convergence --config cfg.yaml --out results/ [--profile ...]
  rcshp gradcheck   [--trials N] [--seed N]
  rcshp init-config -o cfg.yaml [--profile desk|paper]
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .channel import SystemDims, build_geometry_stats, GeometryModelParams, sample_channels
from .errors import ConfigurationError
from .estimation import generate_pilots
from .harness import (ExperimentConfig, PROFILES, SCHEMES, emit_results, run_experiment,
                      write_trace_csv)
from .jacobian import finite_difference_jacobian, rate_jacobian_single
from .precoding import ControlVariable
from .rate_utility import instantaneous_rates
from .seeding import derive, rng_from
from .ssca import initialize_policy, ssca_optimize


SCHEME_ALIASES = {"rzf": "rzf_equal_power", "duality": "duality_equal_power",
                  "perfect": "perfect_csi_rcshp"}


def _load_config(args) -> ExperimentConfig:
    cfg = PROFILES[args.profile]()
    if args.config:
        cfg = ExperimentConfig.from_yaml(args.config)
    if getattr(args, "scheme", None):
        cfg.schemes = [SCHEME_ALIASES.get(s, s) for s in args.scheme]
    if getattr(args, "sweep", None):
        cfg.sweep.axis = args.sweep
        if not cfg.sweep.values:
            cfg.sweep.values = {"pilots": [2, 4, 6, 8],
                                "snr": [0.0, 5.0, 10.0, 15.0, 20.0]}[args.sweep]
    if getattr(args, "seed", None) is not None:
        cfg.seeds.stats = args.seed
        cfg.seeds.optimizer = args.seed + 1
        cfg.seeds.evaluation = args.seed + 2
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    records = run_experiment(cfg, progress=True)
    written = emit_results(records, args.out, config=cfg)
    print(f"wrote {written.get('csv')} and {written.get('json')}")
    return 0


def cmd_convergence(args) -> int:
    cfg = _load_config(args)
    dims = cfg.dims
    stats = cfg.channel.build(dims, cfg.seeds.stats)
    pilots = generate_pilots(dims.T_p, dims.S, dims.P_max, derive(cfg.seeds.stats, 21))
    init = initialize_policy(dims, stats, derive(cfg.seeds.optimizer, 22))
    _, trace = ssca_optimize(stats, pilots, dims, cfg.utility, cfg.schedule, init,
                             cfg.run.n_iters, cfg.run.batch_size, cfg.seeds.optimizer,
                             csi_mode=cfg.csi_mode, noise_var=cfg.run.noise_var,
                             mc_eval_every=cfg.run.mc_eval_every,
                             mc_eval_samples=cfg.run.mc_eval_samples)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trace.csv")
    write_trace_csv(trace, path)
    print(f"wrote {path} ({len(trace.iters)} iterations, "
          f"final surrogate utility {trace.surrogate_utility[-1]:.4f})")
    return 0


def cmd_gradcheck(args) -> int:
    """Analytic vs central-finite-difference gradients on random small systems."""
    rng = rng_from(args.seed)
    worst = 0.0
    failures = 0
    for trial in range(args.trials):
        M = int(rng.choice([4, 8]))
        K = int(rng.choice([2, 3]))
        T_p = int(rng.choice([2, 3]))
        dims = SystemDims(M=M, S=2, K=K, T_p=T_p, L=1, T=20, P_max=4.0)
        stats = build_geometry_stats(dims, GeometryModelParams(n_paths=4),
                                     derive(args.seed, trial, 0))
        pilots = generate_pilots(T_p, 2, dims.P_max, derive(args.seed, trial, 1))
        sample = sample_channels(stats, 1, derive(args.seed, trial, 2))[0]
        gamma = ControlVariable(theta=rng.uniform(0, 2 * np.pi, M * 2),
                                p=rng.uniform(0.2, 1.0, K) * dims.P_max / K)
        d_theta, d_p = rate_jacobian_single(gamma, sample, stats, pilots)

        def rates_at(x, gamma=gamma, sample=sample, stats=stats, pilots=pilots):
            g = ControlVariable(theta=x[:gamma.theta.size], p=x[gamma.theta.size:])
            return instantaneous_rates(g, sample, stats, pilots)

        fd = finite_difference_jacobian(rates_at, np.concatenate([gamma.theta, gamma.p]),
                                        step=1e-5)
        analytic = np.vstack([d_theta, d_p])
        err = _mixed_error(analytic, fd)
        worst = max(worst, err)
        ok = err <= 1e-4
        failures += 0 if ok else 1
        print(f"trial {trial:3d}  M={M} K={K} T_p={T_p}  mixed error {err:.3e}  "
              f"{'ok' if ok else 'FAIL'}")
    print(f"worst mixed error over {args.trials} trials: {worst:.3e}")
    return 0 if failures == 0 else 1


def _mixed_error(analytic: np.ndarray, fd: np.ndarray, abs_floor: float = 1e-3) -> float:
    """Relative error for sizable entries, absolute (scaled) for tiny ones."""
    denom = np.maximum(np.abs(fd), abs_floor)
    return float(np.max(np.abs(analytic - fd) / denom))


def cmd_init_config(args) -> int:
    cfg = PROFILES[args.profile]()
    cfg.to_yaml(args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcshp",
                                 description="hybrid precoding policy optimizer and simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a (swept) experiment and emit CSV/JSON")
    run.add_argument("--config", default=None, help="YAML config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    run.add_argument("--scheme", action="append",
                     choices=sorted(set(SCHEMES) | set(SCHEME_ALIASES)),
                     help="restrict to given scheme(s); rzf/duality/perfect are "
                          "shorthand for the equal-power and perfect-CSI variants")
    run.add_argument("--sweep", choices=["pilots", "snr"], default=None)
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("convergence", help="single optimization, trace CSV out")
    conv.add_argument("--config", default=None)
    conv.add_argument("--out", required=True)
    conv.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    conv.add_argument("--seed", type=int, default=None)
    conv.set_defaults(func=cmd_convergence)

    grad = sub.add_parser("gradcheck", help="finite-difference check of the rate Jacobian")
    grad.add_argument("--trials", type=int, default=20)
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(func=cmd_gradcheck)

    init = sub.add_parser("init-config", help="write a reference config with all defaults")
    init.add_argument("-o", "--output", required=True)
    init.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    init.set_defaults(func=cmd_init_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
