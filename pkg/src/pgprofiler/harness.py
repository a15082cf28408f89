"""Experiment runner: seeded cells, metrics, and plot-ready result files.

A run is a grid of cells (seed x sweep point). Every cell is self-contained
and keyed by counter-based streams, so cells can execute in any order or in
parallel worker processes and still produce identical files: rows are
gathered, sorted by cell key and round, and written through one sink.

Output layout (``out`` directory):

* ``results.csv``      -- one row per round with the exact header
  ``seed,round,env,algo,variant,env_steps,j_hat_old,j_hat_new,j_hat_mix,selected,lambda,oracle_j,wall_ms``
  (sweeps write one such file per arm, ``results__<arm>.csv``)
* ``summary.csv``      -- per-arm aggregates over seeds
* ``manifest.txt``     -- full configuration, code version, formulas

``wall_ms`` stays empty unless timing was requested; filling it makes reruns
differ, and byte-identical reruns are part of the contract.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, algos, kernel_backend, profiling
from .envs import CHAIN, make_env
from .errors import DomainError

CSV_HEADER = ("seed,round,env,algo,variant,env_steps,j_hat_old,j_hat_new,"
              "j_hat_mix,selected,lambda,oracle_j,wall_ms")

_FINAL_WINDOW = 10  # rounds averaged for the 'final return' metric
_SMOOTH_WINDOW = 3  # trailing-mean smoothing for rounds-to-fraction


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = CHAIN
    gamma: float | None = None
    horizon: int | None = None
    n_states: int | None = None
    algo: algos.AlgoConfig = field(default_factory=algos.AlgoConfig)
    prof: profiling.ProfilingConfig = field(
        default_factory=profiling.ProfilingConfig)
    seeds: tuple[int, ...] = (0,)
    out: str = "results"
    mode: str = "single"  # or "sweep"
    sweep: str = "e"  # "e" | "variant" | "lambda"
    e_grid: tuple[int, ...] = (10, 50, 200)
    lambda_grid: tuple[float, ...] = (0.25, 0.5, 0.75)
    log_oracle: bool | None = None  # None: oracle on tabular envs only
    timing: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.seeds:
            raise DomainError("need at least one seed")
        if self.mode not in ("single", "sweep"):
            raise DomainError("mode must be 'single' or 'sweep'")
        if self.mode == "sweep":
            if self.sweep not in ("e", "variant", "lambda"):
                raise DomainError("sweep must be 'e', 'variant' or 'lambda'")
            if self.sweep == "e" and not self.e_grid:
                raise DomainError("empty E grid")
            if self.sweep == "lambda" and not self.lambda_grid:
                raise DomainError("empty lambda grid")


def build_env(cfg: ExperimentConfig):
    overrides = {}
    if cfg.gamma is not None:
        overrides["gamma"] = cfg.gamma
    if cfg.horizon is not None:
        overrides["horizon"] = cfg.horizon
    if cfg.env == CHAIN and cfg.n_states is not None:
        overrides["n_states"] = cfg.n_states
    if cfg.env == "reacher":
        # all bundled policies are unbounded linear maps, so the harness
        # always runs the reacher with action clipping
        overrides["clip_actions"] = True
    return make_env(cfg.env, **overrides)


def _arm_label(cfg: ExperimentConfig) -> str:
    if cfg.mode == "single":
        return ""
    if cfg.sweep == "e":
        return f"E{cfg.prof.eval_rollouts}"
    if cfg.sweep == "variant":
        return cfg.prof.variant
    return f"lam{cfg.prof.mix_lambda:g}"


def sweep_arms(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """The per-arm configs of a sweep (a single run is its own arm)."""
    if cfg.mode == "single":
        return [cfg]
    if cfg.sweep == "e":
        return [replace(cfg, prof=replace(cfg.prof, eval_rollouts=e))
                for e in cfg.e_grid]
    if cfg.sweep == "variant":
        return [replace(cfg, prof=replace(cfg.prof, variant=v))
                for v in profiling.VARIANTS]
    return [replace(cfg, prof=replace(cfg.prof, mix_lambda=lam))
            for lam in cfg.lambda_grid]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_rows(cfg: ExperimentConfig, seed: int) -> list[dict]:
    env = build_env(cfg)
    log_oracle = cfg.log_oracle if cfg.log_oracle is not None \
        else cfg.env == CHAIN
    records = profiling.profiled_train(
        env, cfg.algo, cfg.prof, seed, log_oracle=log_oracle,
        record_wall=cfg.timing)
    rows = []
    for rec in records:
        rows.append({
            "seed": seed,
            "round": rec.round_index,
            "env": cfg.env,
            "algo": cfg.algo.kind,
            "variant": cfg.prof.variant,
            "env_steps": rec.env_steps,
            "j_hat_old": rec.j_hat.get("old"),
            "j_hat_new": rec.j_hat.get("new"),
            "j_hat_mix": rec.j_hat.get("mix"),
            "selected": rec.selected,
            "lambda": rec.mix_lambda,
            "oracle_j": rec.oracle_j,
            "wall_ms": rec.wall_ms if cfg.timing else None,
        })
    return rows


def _run_cell(args: tuple[ExperimentConfig, int]):
    cfg, seed = args
    try:
        return (seed, _cell_rows(cfg, seed), None)
    except Exception as exc:  # cell failures are recorded, not fatal
        return (seed, [], f"{type(exc).__name__}: {exc}")


def rounds_to_fraction(curve, fraction: float, window: int = 1):
    """First round whose (optionally trailing-mean smoothed) value reaches
    ``fraction`` of the curve's best; ``None`` when never reached."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise DomainError("empty curve")
    if not 0.0 < fraction <= 1.0:
        raise DomainError("fraction must lie in (0, 1]")
    if window > 1:
        smoothed = np.array([curve[max(0, i - window + 1):i + 1].mean()
                             for i in range(curve.size)])
    else:
        smoothed = curve
    threshold = fraction * smoothed.max()
    hits = np.nonzero(smoothed >= threshold)[0]
    return int(hits[0]) if hits.size else None


def variability_reduction(variant_vars, baseline_vars):
    """100 * (1 - mean variant variance / mean baseline variance); negative
    when the variant is noisier; ``None`` when the baseline has no variance."""
    v = float(np.mean(np.asarray(variant_vars, dtype=np.float64)))
    b = float(np.mean(np.asarray(baseline_vars, dtype=np.float64)))
    if b == 0.0:
        return None
    return 100.0 * (1.0 - v / b)


def _selected_score(row: dict) -> float:
    tag = row["selected"]
    return float(row[f"j_hat_{tag}"])


def _curves_by_seed(rows: list[dict]) -> dict[int, list[float]]:
    curves: dict[int, list[float]] = {}
    for row in sorted(rows, key=lambda r: (r["seed"], r["round"])):
        curves.setdefault(row["seed"], []).append(_selected_score(row))
    return curves


def summarize_arm(arm: ExperimentConfig, rows: list[dict]) -> dict:
    """Per-arm metrics over seeds: final return, rounds to 0.95 x best,
    and the per-round across-seed variance curve for variability ratios."""
    curves = _curves_by_seed(rows)
    lengths = {len(c) for c in curves.values()}
    if len(lengths) != 1:
        raise DomainError("seeds produced unequal round counts")
    mat = np.array([curves[s] for s in sorted(curves)])
    finals = mat[:, -min(_FINAL_WINDOW, mat.shape[1]):].mean(axis=1)
    mean_curve = mat.mean(axis=0)
    var_curve = mat.var(axis=0, ddof=0)
    r95 = rounds_to_fraction(mean_curve, 0.95, window=_SMOOTH_WINDOW)
    return {
        "env": arm.env,
        "algo": arm.algo.kind,
        "variant": arm.prof.variant,
        "eval_rollouts": arm.prof.eval_rollouts,
        "mix_lambda": arm.prof.mix_lambda if arm.prof.variant in
        (profiling.MIXUP, profiling.THREE_POINTS) else None,
        "n_seeds": mat.shape[0],
        "final_return_mean": float(finals.mean()),
        "final_return_std": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
        "rounds_to_95": r95,
        "_var_curve": var_curve,
    }


def _attach_variability(summaries: list[dict]) -> None:
    """Fill variability reduction versus the vanilla arm of the same cell
    family, when one exists."""
    baselines = {(s["env"], s["algo"], s["eval_rollouts"]): s["_var_curve"]
                 for s in summaries if s["variant"] == profiling.VANILLA}
    for s in summaries:
        key = (s["env"], s["algo"], s["eval_rollouts"])
        if s["variant"] == profiling.VANILLA or key not in baselines:
            s["variability_reduction_pct"] = None
            continue
        s["variability_reduction_pct"] = variability_reduction(
            s["_var_curve"], baselines[key])


SUMMARY_HEADER = ("env,algo,variant,eval_rollouts,mix_lambda,n_seeds,"
                  "final_return_mean,final_return_std,rounds_to_95,"
                  "variability_reduction_pct")


def _summary_line(s: dict) -> str:
    r95 = "-" if s["rounds_to_95"] is None else str(s["rounds_to_95"])
    var_red = s.get("variability_reduction_pct")
    var_red = "-" if var_red is None else repr(var_red)
    return ",".join([
        s["env"], s["algo"], s["variant"], str(s["eval_rollouts"]),
        _fmt(s["mix_lambda"]), str(s["n_seeds"]),
        repr(s["final_return_mean"]), repr(s["final_return_std"]),
        r95, var_red,
    ])


def _manifest_lines(cfg: ExperimentConfig, failures: list[str]) -> list[str]:
    flat: dict[str, object] = {}
    for key, value in asdict(cfg).items():
        if key == "out":  # the directory is self-evident from location
            continue
        if isinstance(value, dict):
            for k2, v2 in value.items():
                flat[f"{key}.{k2}"] = v2
        else:
            flat[key] = value
    flat["package_version"] = __version__
    flat["kernel_backend"] = kernel_backend
    flat["variability_reduction_formula"] = \
        "100*(1 - mean(var_variant)/mean(var_vanilla))"
    flat["rounds_to_95_smoothing"] = f"trailing mean, window {_SMOOTH_WINDOW}"
    flat["final_return_window"] = str(_FINAL_WINDOW)
    lines = [f"{k} = {_fmt(v) if not isinstance(v, tuple) else list(v)}"
             for k, v in sorted(flat.items())]
    for i, failure in enumerate(failures):
        lines.append(f"cell_failure.{i} = {failure}")
    return lines


def results_filename(cfg: ExperimentConfig, arm: ExperimentConfig) -> str:
    label = _arm_label(arm) if cfg.mode == "sweep" else ""
    return f"results__{label}.csv" if label else "results.csv"


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (arm x seed) cell, write result files, return a summary
    dict with rows per arm, summaries, and recorded cell failures."""
    os.makedirs(cfg.out, exist_ok=True)
    arms = sweep_arms(cfg)
    failures: list[str] = []
    rows_by_arm: dict[str, list[dict]] = {}
    summaries: list[dict] = []

    for arm in arms:
        jobs = [(arm, seed) for seed in cfg.seeds]
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_run_cell, jobs))
        else:
            results = [_run_cell(job) for job in jobs]
        rows: list[dict] = []
        for seed, cell_rows, err in sorted(results, key=lambda r: r[0]):
            if err is not None:
                failures.append(f"arm={_arm_label(arm) or 'single'} "
                                f"seed={seed}: {err}")
                continue
            rows.extend(cell_rows)
        rows.sort(key=lambda r: (r["seed"], r["round"]))
        rows_by_arm[results_filename(cfg, arm)] = rows
        if rows:
            summaries.append(summarize_arm(arm, rows))
    _attach_variability(summaries)
    write_results(cfg, rows_by_arm, summaries, failures)
    return {"rows_by_arm": rows_by_arm, "summaries": summaries,
            "failures": failures}


def write_rows(path: str, rows: list[dict]) -> None:
    fields = CSV_HEADER.split(",")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[f]) for f in fields) + "\n")


def write_results(cfg: ExperimentConfig, rows_by_arm: dict[str, list[dict]],
                  summaries: list[dict], failures: list[str]) -> None:
    for fname, rows in rows_by_arm.items():
        write_rows(os.path.join(cfg.out, fname), rows)
    with open(os.path.join(cfg.out, "summary.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for s in summaries:
            fh.write(_summary_line(s) + "\n")
    with open(os.path.join(cfg.out, "manifest.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        for line in _manifest_lines(cfg, failures):
            fh.write(line + "\n")


def read_rows(path: str) -> list[dict]:
    """Parse a results CSV back into typed row dicts."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DomainError(f"unexpected results header in {path}")
        fields = header.split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row: dict = dict(zip(fields, parts))
            for key in ("seed", "round", "env_steps"):
                row[key] = int(row[key])
            for key in ("j_hat_old", "j_hat_new", "j_hat_mix", "lambda",
                        "oracle_j", "wall_ms"):
                row[key] = float(row[key]) if row[key] else None
            rows.append(row)
    return rows


def read_summary(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SUMMARY_HEADER:
            raise DomainError(f"unexpected summary header in {path}")
        fields = header.split(",")
        return [dict(zip(fields, line.rstrip("\n").split(",")))
                for line in fh]


def recompute_from_csv(out_dir: str) -> list[dict]:
    """Recompute the summary metrics from the written result files.

    Used by ``pgprof report`` and the round-trip consistency test: the
    recomputed metric columns must equal the stored ``summary.csv``.
    """
    files = sorted(f for f in os.listdir(out_dir)
                   if f.startswith("results") and f.endswith(".csv"))
    if not files:
        raise DomainError(f"no results CSVs under {out_dir}")
    summaries = []
    for fname in files:
        rows = read_rows(os.path.join(out_dir, fname))
        if not rows:
            continue
        curves = _curves_by_seed(rows)
        mat = np.array([curves[s] for s in sorted(curves)])
        finals = mat[:, -min(_FINAL_WINDOW, mat.shape[1]):].mean(axis=1)
        summaries.append({
            "file": fname,
            "env": rows[0]["env"],
            "algo": rows[0]["algo"],
            "variant": rows[0]["variant"],
            "n_seeds": mat.shape[0],
            "final_return_mean": float(finals.mean()),
            "final_return_std": float(finals.std(ddof=1))
            if len(finals) > 1 else 0.0,
            "rounds_to_95": rounds_to_fraction(mat.mean(axis=0), 0.95,
                                               window=_SMOOTH_WINDOW),
            "_var_curve": mat.var(axis=0, ddof=0),
        })
    _attach_variability_by_file(summaries)
    return summaries


def _attach_variability_by_file(summaries: list[dict]) -> None:
    baselines = {(s["env"], s["algo"]): s["_var_curve"] for s in summaries
                 if s["variant"] == profiling.VANILLA}
    for s in summaries:
        key = (s["env"], s["algo"])
        if s["variant"] == profiling.VANILLA or key not in baselines:
            s["variability_reduction_pct"] = None
            continue
        s["variability_reduction_pct"] = variability_reduction(
            s["_var_curve"], baselines[key])
