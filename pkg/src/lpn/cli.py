"""Command line entry point: ``lpn <subcommand> ...``.

Subcommands write a JSON summary (also printed to stdout), CSV curves or
histories and checkpoints. The exit code is 1 when anything was flagged
(failed inversion, unconverged solve, violated step-size bound) and 2 on
usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .experiments import (ExperimentSpec, mixture_source, run_inverse_problem, run_laplacian, run_prior_sweep,
                          smooth_signal_source, write_columns, _json_default)
from .icnn import IcnnArch
from .prior import eval_prior_batch
from .training import DataSource, GammaSchedule, TrainConfig, load_config, train, write_log


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _stages(text: str) -> tuple[tuple[float, ...], ...]:
    """``"n:lr;n:lr"`` or ``"n:gamma:lr;..."``."""
    return tuple(tuple(float(x) for x in part.split(":")) for part in text.split(";") if part.strip())


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))


def _source(args, dim: int) -> DataSource:
    if args.source == "laplacian":
        return DataSource.laplacian(dim=dim)
    if args.source == "mixture":
        return mixture_source(dim)
    if args.source == "signals":
        return smooth_signal_source(dim)
    if args.data is None:
        raise SystemExit("--data is required with --source file")
    return DataSource("file_dataset", dim=dim, path=args.data)


def cmd_train(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        schedule = GammaSchedule(tuple((int(n), g, lr) for n, g, lr in _stages(args.schedule))) \
            if args.schedule else GammaSchedule()
        pretrain = tuple((int(n), lr) for n, lr in _stages(args.pretrain)) if args.pretrain else ()
        config = TrainConfig(sigma=args.sigma, batch_size=args.batch_size, pretrain=pretrain,
                             pretrain_loss=args.pretrain_loss, schedule=schedule, seed=args.seed,
                             loss_form=args.loss_form)
    arch = IcnnArch(args.dim, _ints(args.hidden), alpha=args.alpha, beta=args.beta)
    init = None
    if args.init:
        init, _ = load_checkpoint(args.init)
        arch = init.arch
    params, log = train(arch, config, _source(args, arch.input_dim), init=init, progress_every=args.progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out, seed=config.seed, meta={"config": config.to_dict(), "source": args.source})
    if args.log:
        write_log(log, args.log)
    _emit({"checkpoint": str(out), "iterations": len(log), "final_loss": log[-1].loss if log else None,
           "config": config.to_dict(), "arch": arch.to_dict(), "ok": True})
    return 0


def cmd_eval_prior(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    n = params.arch.input_dim
    if args.points:
        path = Path(args.points)
        pts = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, n)
    else:
        if n != 1:
            raise SystemExit("--grid needs a 1-D model; pass --points for higher dimensions")
        lo, hi, num = args.grid
        pts = np.linspace(lo, hi, int(num))[:, None]
    R, res, iters, conv = eval_prior_batch(params, pts, tol=args.tol, max_iters=args.max_iters)
    cols = {f"x{j}": pts[:, j] for j in range(n)} if n > 1 else {"x": pts[:, 0]}
    cols.update(R=R, R_normalized=R - R.min(), residual=res, iterations=iters, converged=conv.astype(int))
    write_columns(args.out, cols)
    ok = bool(conv.all())
    _emit({"points": len(pts), "csv": args.out, "failed_inversions": int((~conv).sum()),
           "max_residual": float(res.max()), "ok": ok})
    return 0 if ok else 1


def _pnp_overrides(args) -> dict:
    d = {"max_iters": args.max_iters, "fp_tol": args.fp_tol}
    if args.rho is not None:
        d["rho"] = args.rho
    if args.eta is not None:
        d["eta"] = args.eta
    return d


def cmd_solve(args) -> int:
    operator = json.loads(Path(args.operator).read_text()) if args.operator else {}
    spec = ExperimentSpec(name=args.problem, out_dir=args.out, seed=args.seed, checkpoint=args.checkpoint,
                          operator=operator, solver=args.solver, pnp=_pnp_overrides(args),
                          measurement_noise=args.noise, iteration_scale=args.scale)
    summary = run_inverse_problem(spec)
    flagged = not summary["ok"] or not summary["solver_meta"].get("rho_bound_ok", True) \
        or not summary["solver_meta"].get("eta_bound_ok", True)
    _emit(summary)
    return 1 if flagged else 0


def cmd_demo_laplacian(args) -> int:
    train_over = {"batch_size": args.batch_size}
    spec = ExperimentSpec(name="laplacian", out_dir=args.out, seed=args.seed, train=train_over,
                          iteration_scale=args.scale)
    summary = run_laplacian(spec)
    _emit(summary)
    return 0 if summary["ok"] else 1


def cmd_prior_sweep(args) -> int:
    spec = ExperimentSpec(name="prior_sweep", out_dir=args.out, seed=args.seed, checkpoint=args.checkpoint,
                          noise_levels=_floats(args.noise_levels), lambdas=_floats(args.lambdas),
                          n_samples=args.samples, iteration_scale=args.scale)
    summary = run_prior_sweep(spec)
    _emit(summary)
    return 0 if summary["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpn", description="Learned proximal networks: training, priors, PnP solvers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an LPN on denoising pairs")
    t.add_argument("--source", choices=("laplacian", "mixture", "signals", "file"), default="laplacian")
    t.add_argument("--data", help=".npy array of clean samples for --source file")
    t.add_argument("--dim", type=int, default=1)
    t.add_argument("--hidden", default="50,50,50,50", help="comma separated hidden widths")
    t.add_argument("--alpha", type=float, default=0.01)
    t.add_argument("--beta", type=float, default=10.0)
    t.add_argument("--config", help="TrainConfig JSON; overrides the flags below")
    t.add_argument("--sigma", type=float, default=1.0)
    t.add_argument("--batch-size", type=int, default=2000)
    t.add_argument("--pretrain", default="10000:1e-3;10000:1e-4", help="'iters:lr;...'")
    t.add_argument("--pretrain-loss", choices=("l1", "l2"), default="l1")
    t.add_argument("--schedule", default="", help="proximal matching stages 'iters:gamma:lr;...'")
    t.add_argument("--loss-form", choices=("unnormalized", "normalized"), default="unnormalized")
    t.add_argument("--init", help="checkpoint to continue from")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--progress", type=int, default=0, help="log every N iterations")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-prior", help="evaluate the learned regularizer")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--points", help=".npy or comma separated file, one point per row")
    e.add_argument("--grid", nargs=3, type=float, default=(-3.0, 3.0, 121), metavar=("LO", "HI", "N"))
    e.add_argument("--tol", type=float, default=1e-8)
    e.add_argument("--max-iters", type=int, default=10_000)
    e.add_argument("--out", required=True, help="CSV output")
    e.set_defaults(func=cmd_eval_prior)

    s = sub.add_parser("solve", help="toy deblurring or compressed sensing with PnP")
    s.add_argument("--problem", choices=("deblur", "compressed_sensing"), default="deblur")
    s.add_argument("--checkpoint", help="trained 64-dim model; trains a quick one if omitted")
    s.add_argument("--operator", help="operator spec JSON file")
    s.add_argument("--solver", choices=("admm", "pgd"), default="admm")
    s.add_argument("--rho", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--fp-tol", type=float, default=1e-8)
    s.add_argument("--noise", type=float, help="measurement noise std (default 0.001 for CS, 0 for deblur)")
    s.add_argument("--scale", type=float, default=1.0, help="training iteration scale when training")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("demo-laplacian", help="l2 / l1 / proximal matching on Laplace(0,1)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--batch-size", type=int, default=500)
    d.add_argument("--scale", type=float, default=1.0, help="fraction of every training stage")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demo_laplacian)

    w = sub.add_parser("prior-sweep", help="regularizer versus noise and interpolation on a mixture")
    w.add_argument("--checkpoint")
    w.add_argument("--noise-levels", default="0,0.1,0.2,0.4")
    w.add_argument("--lambdas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    w.add_argument("--samples", type=int, default=100)
    w.add_argument("--scale", type=float, default=1.0)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_prior_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"lpn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
