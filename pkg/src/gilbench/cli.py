"""Command-line entry point: ``gilbench <command> [options]``.

Exit codes: 0 success, 1 failed check or unreadable input, 2 configuration
error, 3 a sweep cell diverged in every seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .autodiff import CheckpointError, ContractError
from .dynamics import DomainError, Kind, SeededSampler, TrajectoryParseError, attractor, load_trajectory, save_trajectory
from .evaluation import evaluate
from .experiment import PRESETS, SweepSpec, dump_rollouts, preset, run_sweep
from .gradcheck import TOLERANCE, run_suite
from .models import ModelConfig, build_model, load_model, save_model
from .nn import ConfigError
from .train import TrainConfig, train, write_loss_curve

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
ATTRACTORS = [k.value for k in (Kind.POINT, Kind.CYCLIC, Kind.FIGURE_EIGHT)]


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajs = attractor(args.attractor).training_set(args.n, SeededSampler(args.seed))
    for i, traj in enumerate(trajs):
        save_trajectory(traj, out / f"traj_{i:03d}.txt")
    print(f"wrote {len(trajs)} {args.attractor} trajectories to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    files = sorted(Path(args.data).glob("*.txt"))
    if not files:
        raise ConfigError(f"no trajectory files (*.txt) in {args.data}")
    dataset = [load_trajectory(f) for f in files]
    cfg = ModelConfig.from_dict(_read_json(args.config)) if args.config else ModelConfig(kind=args.model)
    cfg = replace(cfg, init_seed=args.seed)
    if args.dropout is not None:
        cfg = replace(cfg, dropout_rate=args.dropout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, len(dataset))
    tcfg = TrainConfig(epochs=args.epochs, seed=args.seed, loss_log_stride=args.log_stride,
                       checkpoint_every=args.checkpoint_every, checkpoint_dir=str(out))
    result = train(model, dataset, tcfg)
    write_loss_curve(result.loss_curve, out / "loss_curve.csv")
    print(f"trained {cfg.kind.value} on {len(dataset)} sequences for {args.epochs} epochs: "
          f"final loss {result.final_loss:.3e} ({result.wall_time:.1f}s); checkpoint {out / 'final.npz'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.checkpoint)
    report = evaluate(model, attractor(args.attractor), n_inits=args.n_inits, sampler=SeededSampler(args.seed))
    report.meta.update(checkpoint=str(args.checkpoint), sampler_seed=args.seed)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _sweep_spec(args) -> SweepSpec:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    spec = SweepSpec.from_dict(_read_json(args.config)) if args.config else preset(args.preset or "paper-main")
    if args.epochs is not None:
        spec = replace(spec, epochs=args.epochs)
    if args.seeds is not None:
        spec = replace(spec, seeds=tuple(args.seeds))
    elif args.seed is not None:
        spec = replace(spec, seeds=(args.seed,))
    return spec


def cmd_sweep(args) -> int:
    spec = _sweep_spec(args)

    def show(row):
        print(f"{row.attractor} {row.model} p={row.dropout} n={row.n_train} seed={row.seed}: "
              f"DTW {row.mean_dtw:.3f} +- {row.se_dtw:.3f}", flush=True)

    result = run_sweep(spec, args.out, parallelism=args.parallelism, progress=show)
    print(f"{len(result.rows)} rows in {Path(args.out) / 'report.csv'}")
    bad = result.all_seeds_diverged()
    if bad:
        print(f"training diverged in every seed for {bad}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_dump_rollouts(args) -> int:
    written = dump_rollouts(args.checkpoint, attractor(args.attractor), args.n_inits, args.out, seed=args.seed)
    print(f"wrote {len(written)} trajectory files to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, include_models=not args.primitives_only)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:40s} {r.error:.2e}  ({r.seconds:.2f}s)")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g}")
    return EXIT_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gilbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write ground-truth training trajectories")
    p.add_argument("--attractor", choices=ATTRACTORS, required=True)
    p.add_argument("--n", type=int, default=1, help="number of trajectories")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a directory of trajectory files")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["rnn", "transformer"], default="rnn")
    p.add_argument("--config", help="JSON model config (overrides --model)")
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int, default=25_000)
    p.add_argument("--log-stride", type=int, default=100)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint with DTW over random initials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attractor", choices=ATTRACTORS, required=True)
    p.add_argument("--n-inits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run (or resume) a sweep of cells")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--config", help="JSON sweep spec")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-rollouts", help="write generated and reference trajectories for plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attractor", choices=ATTRACTORS, required=True)
    p.add_argument("--n-inits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_rollouts)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--primitives-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, TrajectoryParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
