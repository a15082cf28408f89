"""Command-line interface.

Subcommands:

* ``pgprof run``    -- one experiment cell family over the given seeds
* ``pgprof sweep``  -- grid over E, variant, or lambda
* ``pgprof verify`` -- the lemma-level property suites
* ``pgprof report`` -- recompute the summary from written results CSVs

Flag values override config-file values, which override defaults. The config
file is flat ``key = value`` text; keys are the long flag names with
underscores (grammar in the README).
"""

from __future__ import annotations

import argparse
import sys

from . import algos, harness, profiling, verify
from .errors import DomainError

_BOOL_KEYS = {"independent_eval_seeds", "reuse_eval_samples", "timing",
              "log_oracle", "cache_old_estimate"}
_INT_KEYS = {"rounds", "steps_per_round", "eval_rollouts", "horizon",
             "n_states", "workers", "epochs", "minibatch", "buffer_size",
             "batch_size"}
_FLOAT_KEYS = {"gamma", "lr", "epsilon", "delta", "mix_lambda", "clip_ratio",
               "tau", "noise_sigma", "critic_lr"}


def parse_seed_spec(spec: str) -> tuple[int, ...]:
    """``0..4`` (inclusive range), ``0,3,7`` (list), or a single integer."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(s) for s in spec.split(","))


def parse_config_file(path: str) -> dict:
    """Flat key = value lines; ``#`` starts a comment; blanks ignored."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key in _BOOL_KEYS:
                if value.lower() not in ("true", "false", "0", "1"):
                    raise DomainError(f"{path}:{lineno}: bad boolean {value!r}")
                values[key] = value.lower() in ("true", "1")
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "seeds":
                values[key] = parse_seed_spec(value)
            elif key == "beta":
                a, b = value.split(",")
                values[key] = (float(a), float(b))
            elif key == "e_grid":
                values[key] = tuple(int(v) for v in value.split(","))
            elif key == "lambda_grid":
                values[key] = tuple(float(v) for v in value.split(","))
            else:
                values[key] = value
    return values


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--env", choices=["chain", "cartpole", "reacher"])
    p.add_argument("--algo", choices=list(algos.ALGO_KINDS))
    p.add_argument("--variant", choices=list(profiling.VARIANTS))
    p.add_argument("--eval-rollouts", type=int, dest="eval_rollouts",
                   help="evaluation rollouts per candidate per round")
    p.add_argument("--lambda", type=float, dest="mix_lambda",
                   help="fixed mix weight in [0, 1]")
    p.add_argument("--beta", help="a,b: draw the mix weight from Beta(a, b)")
    p.add_argument("--rounds", type=int, help="profiling rounds T")
    p.add_argument("--steps-per-round", type=int, dest="steps_per_round")
    p.add_argument("--seeds", help="e.g. 0..4 or 0,2,5")
    p.add_argument("--out", help="output directory")
    p.add_argument("--independent-eval-seeds",
                   action=argparse.BooleanOptionalAction, default=None,
                   dest="independent_eval_seeds")
    p.add_argument("--rollback", choices=["full", "actor"])
    p.add_argument("--reuse-eval-samples",
                   action=argparse.BooleanOptionalAction, default=None,
                   dest="reuse_eval_samples")
    p.add_argument("--cache-old-estimate",
                   action=argparse.BooleanOptionalAction, default=None,
                   dest="cache_old_estimate")
    p.add_argument("--epsilon", type=float, help="comparison tolerance")
    p.add_argument("--delta", type=float, help="confidence parameter")
    p.add_argument("--gamma", type=float, help="discount override")
    p.add_argument("--horizon", type=int, help="episode truncation override")
    p.add_argument("--n-states", type=int, dest="n_states",
                   help="chain environment size")
    p.add_argument("--lr", type=float, help="inner learning rate")
    p.add_argument("--clip-ratio", type=float, dest="clip_ratio")
    p.add_argument("--epochs", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--buffer-size", type=int, dest="buffer_size")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--tau", type=float)
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--noise-kind", choices=["gaussian", "ou"],
                   dest="noise_kind")
    p.add_argument("--critic-lr", type=float, dest="critic_lr")
    p.add_argument("--log-oracle", action=argparse.BooleanOptionalAction,
                   default=None, dest="log_oracle")
    p.add_argument("--timing", action=argparse.BooleanOptionalAction,
                   default=None,
                   help="fill wall_ms (breaks byte-reproducibility)")
    p.add_argument("--workers", type=int, help="parallel cell workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgprof",
        description="gated policy-gradient training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment cell family")
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", help="grid over E, variant, or lambda")
    _add_run_flags(sweep)
    sweep.add_argument("--sweep", choices=["e", "variant", "lambda"],
                       default=None)
    sweep.add_argument("--e-grid", dest="e_grid",
                       help="comma list of E values")
    sweep.add_argument("--lambda-grid", dest="lambda_grid",
                       help="comma list of mix weights")

    ver = sub.add_parser("verify", help="run the lemma property suites")
    ver.add_argument("--quiet", action="store_true")

    rep = sub.add_parser("report", help="recompute a summary from CSVs")
    rep.add_argument("--out", required=True, help="directory with results")
    return parser


def _merged_settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is None:
            continue
        if key == "seeds" and isinstance(value, str):
            value = parse_seed_spec(value)
        if key == "beta" and isinstance(value, str):
            a, b = value.split(",")
            value = (float(a), float(b))
        if key == "e_grid" and isinstance(value, str):
            value = tuple(int(v) for v in value.split(","))
        if key == "lambda_grid" and isinstance(value, str):
            value = tuple(float(v) for v in value.split(","))
        settings[key] = value
    return settings


def config_from_settings(settings: dict, mode: str) -> harness.ExperimentConfig:
    algo_kind = settings.get("algo", algos.REINFORCE)
    algo_over = {}
    if "lr" in settings:
        algo_over["learning_rate"] = settings["lr"]
    if "steps_per_round" in settings:
        algo_over["steps_per_round"] = settings["steps_per_round"]
    for key in ("clip_ratio", "epochs", "minibatch", "buffer_size",
                "batch_size", "tau", "noise_sigma", "critic_lr",
                "noise_kind"):
        if key in settings:
            algo_over[key] = settings[key]
    algo_cfg = algos.default_algo_config(algo_kind, **algo_over)

    prof_kwargs: dict = {}
    for src, dst in (("variant", "variant"), ("eval_rollouts", "eval_rollouts"),
                     ("mix_lambda", "mix_lambda"), ("epsilon", "epsilon"),
                     ("delta", "delta"), ("rounds", "total_rounds"),
                     ("reuse_eval_samples", "reuse_eval_samples"),
                     ("independent_eval_seeds", "independent_eval_seeds"),
                     ("cache_old_estimate", "cache_old_estimate")):
        if src in settings:
            prof_kwargs[dst] = settings[src]
    if "rollback" in settings:
        prof_kwargs["rollback_scope"] = settings["rollback"]
    if "beta" in settings:
        a, b = settings["beta"]
        prof_kwargs.update(lambda_mode="beta", beta_a=a, beta_b=b)
    prof_cfg = profiling.ProfilingConfig(**prof_kwargs)

    exp_kwargs: dict = dict(mode=mode, algo=algo_cfg, prof=prof_cfg)
    for key in ("env", "gamma", "horizon", "n_states", "seeds", "out",
                "log_oracle", "timing", "workers", "sweep", "e_grid",
                "lambda_grid"):
        if key in settings:
            exp_kwargs[key] = settings[key]
    return harness.ExperimentConfig(**exp_kwargs)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        echo = (lambda *_: None) if args.quiet else print
        return 0 if verify.run_all(echo) else 1
    if args.command == "report":
        recomputed = harness.recompute_from_csv(args.out)
        for s in recomputed:
            r95 = "-" if s["rounds_to_95"] is None else s["rounds_to_95"]
            var_red = s.get("variability_reduction_pct")
            var_red = "-" if var_red is None else f"{var_red:.1f}"
            print(f"{s['file']}: {s['env']}/{s['algo']}/{s['variant']} "
                  f"seeds={s['n_seeds']} final={s['final_return_mean']:.3f}"
                  f"+-{s['final_return_std']:.3f} rounds_to_95={r95} "
                  f"variability_reduction_pct={var_red}")
        return 0
    cfg = config_from_settings(_merged_settings(args),
                               mode="sweep" if args.command == "sweep"
                               else "single")
    result = harness.run_experiment(cfg)
    for failure in result["failures"]:
        print(f"cell failed: {failure}", file=sys.stderr)
    n_rows = sum(len(r) for r in result["rows_by_arm"].values())
    print(f"wrote {len(result['rows_by_arm'])} results file(s), "
          f"{n_rows} rows, {len(result['summaries'])} summary row(s) "
          f"to {cfg.out}")
    return 0 if not result["failures"] else 2


if __name__ == "__main__":
    sys.exit(main())
