"""Command-line orchestration for the experiment families.

Subcommands: gen-data, run, sweep, stat-test, simulate-delays.  Every CSV
written carries a comment line with the generating configuration; cells of
a sweep are runnable independently and are reproducible given (seed,
config) in simulated or single-worker modes.

An optional plain-text config file (key=value per line, '#' comments) can
seed any flag's default; explicit command-line flags win on conflict.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import csvio, stats
from .datagen import SynthSpec, gen_linreg, load_svmlight, save_svmlight
from .engine import (DelayModel, RunConfig, StepsizeSchedule, run_simulated,
                     run_sync_averaged, run_threads)
from .model import Problem, second_order_info
from .nonlinear import affine_problem, run_nonlinear
from .stats import ReplicateBatch

DESK_N = 100_000
DESK_D = 100
PAPER_N = 1_000_000
PAPER_D = 1_000
DEFAULT_DENSITIES = (0.005, 0.01, 0.2, 1.0)
DEFAULT_CORES = (1, 4, 8, 10)

EXPERIMENT_KINDS = ("gap_vs_epoch", "speedup_sweep", "density_sweep",
                    "batch_sweep", "stat_test", "delay_test")


@dataclass
class ExperimentSpec:
    """One experiment family: sweep axes, seeds, and run template.

    kind names the family; cores/densities/batches are the sweep axes
    (each non-empty where used); seeds must be distinct so replicate cells
    stay independent.
    """

    kind: str
    seeds: list
    out_dir: str
    cores: list = field(default_factory=lambda: list(DEFAULT_CORES))
    densities: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    replicates: int = 1
    batch: int = 10
    epochs: int = 20
    schedule: StepsizeSchedule = field(default_factory=StepsizeSchedule.poly)
    n_rows: int = DESK_N
    dim: int = DESK_D
    noise_sd: float = 1.0
    data_seed: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.cores:
            raise ValueError("cores sweep list must be non-empty")
        if self.kind == "density_sweep" and not self.densities:
            raise ValueError("density sweep needs a non-empty density list")
        if self.kind == "batch_sweep" and not self.batches:
            raise ValueError("batch sweep needs a non-empty batch list")


def parse_delay(text: str) -> DelayModel:
    """none | bounded:M | geometric:p | pareto:tail[,scale]"""
    if text == "none":
        return DelayModel.none()
    kind, _, args = text.partition(":")
    if kind == "bounded":
        return DelayModel.bounded(int(args))
    if kind == "geometric":
        return DelayModel.geometric(float(args))
    if kind == "pareto":
        parts = [float(v) for v in args.split(",")]
        return DelayModel.pareto(parts[0], parts[1] if len(parts) > 1 else 1.0)
    raise argparse.ArgumentTypeError(f"unknown delay model {text!r}")


def parse_int_list(text: str):
    return [int(v) for v in text.split(",") if v]


def parse_float_list(text: str):
    return [float(v) for v in text.split(",") if v]


def make_schedule(args) -> StepsizeSchedule:
    if args.schedule == "poly":
        return StepsizeSchedule.poly(args.alpha, args.beta)
    return StepsizeSchedule.epoch_backoff(args.alpha, args.decay)


def _load_config_file(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config file line not key=value: {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _problem_from_args(args):
    """(problem, note) from either --data or the synthetic flags."""
    if args.data:
        ds = load_svmlight(args.data, zero_one_labels=args.zero_one_labels)
        loss = args.loss or ("logistic" if ds.task == "binary" else "least_squares")
        return Problem(ds, loss), {"data": args.data, "loss": loss}
    n = args.n or (PAPER_N if args.paper_scale else DESK_N)
    d = args.d or (PAPER_D if args.paper_scale else DESK_D)
    spec = SynthSpec(n_rows=n, dim=d, density=args.density,
                     noise_sd=args.noise_sd, seed=args.data_seed)
    ds, _ = gen_linreg(spec)
    note = {"synthetic": {"n": n, "d": d, "density": args.density,
                          "noise_sd": args.noise_sd, "seed": args.data_seed}}
    return Problem(ds, args.loss or "least_squares"), note


def _schedule_note(sched: StepsizeSchedule) -> dict:
    return {"variant": sched.variant, "alpha": sched.alpha,
            "beta": sched.beta, "decay": sched.decay}


def cmd_gen_data(args) -> int:
    spec = SynthSpec(n_rows=args.n, dim=args.d, density=args.density,
                     noise_sd=args.noise_sd, seed=args.seed)
    ds, u_star = gen_linreg(spec)
    save_svmlight(ds, args.out)
    sidecar = args.out + ".meta.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"n": args.n, "d": args.d, "density": args.density,
                   "noise_sd": args.noise_sd, "seed": args.seed,
                   "u_star": u_star.tolist()}, fh, indent=2)
    print(f"wrote {args.out} ({ds.n_rows} rows, dim {ds.dim}) and {sidecar}")
    return 0


def cmd_run(args) -> int:
    problem, note = _problem_from_args(args)
    info = second_order_info(problem)
    os.makedirs(args.out_dir, exist_ok=True)
    sched = make_schedule(args)
    seeds = args.seeds or [args.seed]
    cores = args.cores or [args.threads]
    written = []
    for m in cores:
        for seed in seeds:
            cfg = RunConfig(
                workers=m, batch=args.batch, epochs=args.epochs,
                schedule=sched, seed=seed, mode=args.mode,
                delay=args.delay if args.mode == "simulated" else DelayModel.none(),
                average_burn_in=args.burn_in, sampling=args.sampling,
                accumulate_average=not args.no_average)
            runner = run_simulated if args.mode == "simulated" else run_threads
            result = runner(problem, cfg, f_star=info.f_star)
            path = os.path.join(args.out_dir, f"trace_c{m}_s{seed}.csv")
            csvio.write_trace_csv(path, result.trace, {
                **note, "cores": m, "seed": seed, "batch": args.batch,
                "epochs": args.epochs, "mode": args.mode,
                "schedule": _schedule_note(sched), "f_star": info.f_star})
            written.append(path)
    print("\n".join(written))
    return 0


def _aggregate_gap_rows(traces_by_cores: dict):
    """[(cores, epoch, gap_mean, gap_stderr)] over per-seed traces."""
    rows = []
    for m in sorted(traces_by_cores):
        gaps = np.array(traces_by_cores[m])  # seeds x epochs
        mean = gaps.mean(axis=0)
        se = (gaps.std(axis=0, ddof=1) / np.sqrt(gaps.shape[0])
              if gaps.shape[0] > 1 else np.zeros(gaps.shape[1]))
        for e in range(gaps.shape[1]):
            rows.append((m, e, float(mean[e]), float(se[e])))
    return rows


def _mean_stderr(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    se = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
    return float(arr.mean()), float(se)


def _spec_from_args(args) -> ExperimentSpec:
    kind = {"density": "density_sweep", "batch": "batch_sweep"}[args.kind]
    return ExperimentSpec(
        kind=kind,
        seeds=list(range(args.seed, args.seed + args.n_seeds)),
        out_dir=args.out_dir,
        cores=args.cores or list(DEFAULT_CORES),
        densities=(args.densities or list(DEFAULT_DENSITIES)
                   if kind == "density_sweep" else []),
        batches=(args.batches or [1, 10]) if kind == "batch_sweep" else [],
        batch=args.batch, epochs=args.epochs, schedule=make_schedule(args),
        n_rows=args.n or (PAPER_N if args.paper_scale else DESK_N),
        dim=args.d or (PAPER_D if args.paper_scale else DESK_D),
        noise_sd=args.noise_sd, data_seed=args.data_seed)


def cmd_sweep(args) -> int:
    exp = _spec_from_args(args)
    os.makedirs(exp.out_dir, exist_ok=True)
    written, failures = [], []

    def run_cell(problem, f_star, m, seed, batch, comparator=False):
        cfg = RunConfig(workers=m, batch=batch, epochs=exp.epochs,
                        schedule=exp.schedule, seed=seed, mode="threads",
                        accumulate_average=False)
        runner = run_sync_averaged if comparator else run_threads
        return runner(problem, cfg, f_star=f_star)

    if exp.kind == "density_sweep":
        for p_nz in exp.densities:
            spec = SynthSpec(n_rows=exp.n_rows, dim=exp.dim, density=p_nz,
                             noise_sd=exp.noise_sd, seed=exp.data_seed)
            ds, _ = gen_linreg(spec)
            problem = Problem(ds, "least_squares")
            f_star = second_order_info(problem).f_star
            gap_curves: dict = {}
            speed_rows = []
            base_times: dict = {}
            for m in exp.cores:
                per_seed_gaps, atimes, stimes = [], [], []
                for seed in exp.seeds:
                    try:
                        r = run_cell(problem, f_star, m, seed, exp.batch)
                        rs = run_cell(problem, f_star, m, seed, exp.batch,
                                      comparator=True)
                    except Exception as err:  # record and keep sweeping
                        failures.append({"density": p_nz, "cores": m,
                                         "seed": seed, "error": repr(err)})
                        continue
                    per_seed_gaps.append([t.gap for t in r.trace])
                    atimes.append(float(np.mean(r.epoch_times)))
                    stimes.append(float(np.mean(rs.epoch_times)))
                if not per_seed_gaps:
                    continue
                gap_curves[m] = per_seed_gaps
                base_times[m] = (atimes, stimes)
            note = {"kind": "density", "density": p_nz, "n": exp.n_rows,
                    "d": exp.dim, "batch": exp.batch, "epochs": exp.epochs,
                    "seeds": exp.seeds, "schedule": _schedule_note(exp.schedule)}
            tag = ("%g" % p_nz).replace(".", "p")
            gpath = os.path.join(exp.out_dir, f"gap_density{tag}.csv")
            csvio.write_rows_csv(gpath, ["cores", "epoch", "gap_mean", "gap_stderr"],
                                 _aggregate_gap_rows(gap_curves), note)
            written.append(gpath)
            if 1 in base_times:
                a1 = np.asarray(base_times[1][0])
                for m in exp.cores:
                    if m not in base_times:
                        continue
                    am = np.asarray(base_times[m][0])
                    sm = np.asarray(base_times[m][1])
                    am_m, am_se = _mean_stderr(am)
                    sm_m, sm_se = _mean_stderr(sm)
                    asp_m, asp_se = _mean_stderr(a1 / am)
                    ssp_m, ssp_se = _mean_stderr(a1 / sm)
                    speed_rows.append((m, am_m, am_se, asp_m, asp_se,
                                       sm_m, sm_se, ssp_m, ssp_se))
                spath = os.path.join(exp.out_dir, f"speedup_density{tag}.csv")
                csvio.write_rows_csv(
                    spath,
                    ["cores", "async_epoch_seconds_mean", "async_epoch_seconds_stderr",
                     "async_speedup_mean", "async_speedup_stderr",
                     "sync_epoch_seconds_mean", "sync_epoch_seconds_stderr",
                     "sync_speedup_mean", "sync_speedup_stderr"],
                    speed_rows, note)
                written.append(spath)
    else:
        spec = SynthSpec(n_rows=exp.n_rows, dim=exp.dim, density=args.density,
                         noise_sd=exp.noise_sd, seed=exp.data_seed)
        ds, _ = gen_linreg(spec)
        problem = Problem(ds, "least_squares")
        f_star = second_order_info(problem).f_star
        rows = []
        for batch in exp.batches:
            times: dict = {}
            for m in exp.cores:
                per_seed = []
                for seed in exp.seeds:
                    try:
                        r = run_cell(problem, f_star, m, seed, batch)
                    except Exception as err:
                        failures.append({"batch": batch, "cores": m,
                                         "seed": seed, "error": repr(err)})
                        continue
                    per_seed.append(float(np.mean(r.epoch_times)))
                if per_seed:
                    times[m] = per_seed
            if 1 not in times:
                continue
            t1 = np.asarray(times[1])
            for m in exp.cores:
                if m not in times:
                    continue
                tm_m, tm_se = _mean_stderr(times[m])
                sp_m, sp_se = _mean_stderr(t1 / np.asarray(times[m]))
                rows.append((batch, m, tm_m, tm_se, sp_m, sp_se))
        note = {"kind": "batch", "n": exp.n_rows, "d": exp.dim,
                "density": args.density, "epochs": exp.epochs,
                "seeds": exp.seeds, "schedule": _schedule_note(exp.schedule)}
        path = os.path.join(exp.out_dir, "batch_sweep.csv")
        csvio.write_rows_csv(
            path, ["batch", "cores", "epoch_seconds_mean", "epoch_seconds_stderr",
                   "speedup_mean", "speedup_stderr"], rows, note)
        written.append(path)

    if failures:
        fpath = os.path.join(exp.out_dir, "failures.json")
        with open(fpath, "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2)
        written.append(fpath)
    print("\n".join(written))
    return 0


def run_stat_test(hess_diag, replicates, steps, delay, schedule, seed,
                  burn_in=None, cov_tol=0.20, gap_tol=0.25):
    """Replicate battery for the averaged-error covariance and gap claims.

    Runs R independent simulated replicates of the affine problem with the
    given Hessian diagonal and identity noise covariance, averages each
    after the burn-in (default steps // 5), and compares the empirical
    covariance of sqrt(n_eff) (x_bar - x_star) against H^-1 Sigma H^-1 and
    the mean scaled gap against (1/2) tr(H^-1 Sigma).
    """
    hess = np.diag(np.asarray(hess_diag, dtype=np.float64))
    sigma = np.eye(len(hess_diag))
    problem = affine_problem(hess, sigma)
    if burn_in is None:
        burn_in = steps // 5
    errors, gaps = [], []
    n_eff = steps - burn_in
    for rep in range(replicates):
        cfg = RunConfig(mode="simulated", total_steps=steps, seed=seed + rep,
                        schedule=schedule, delay=delay, average_burn_in=burn_in)
        r = run_nonlinear(problem, cfg)
        errors.append(np.sqrt(r.avg_count) * (r.x_bar - problem.x_star))
        gaps.append(r.avg_count * problem.quadratic_gap(r.x_bar))
    batch_out = ReplicateBatch(n=n_eff, errors=np.asarray(errors),
                               gaps=np.asarray(gaps))
    emp = stats.empirical_covariance(batch_out.errors)
    theo = stats.sandwich(hess, sigma)
    match = stats.covariance_match(emp, theo)
    gap = stats.gap_statistic(batch_out.gaps, hess, sigma)
    report = {
        "replicates": replicates,
        "steps": steps,
        "burn_in": burn_in,
        "n_eff": steps - burn_in,
        "hess_diag": list(map(float, hess_diag)),
        "delay": {"variant": delay.variant,
                  "assumption_moments_ok": delay.assumption_moments_ok},
        "covariance_match": match,
        "cov_tol": cov_tol,
        "cov_pass": bool(match <= cov_tol),
        "gap_sample_mean": gap.sample_mean,
        "gap_predicted_mean": gap.predicted_mean,
        "gap_ratio": gap.ratio,
        "gap_tol": gap_tol,
        "gap_pass": bool(abs(gap.ratio - 1.0) <= gap_tol),
        "low_power": bool(replicates < 30),
    }
    return report, batch_out.errors, emp


def cmd_stat_test(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    sched = make_schedule(args)
    if args.replicates_csv:
        errors, n_eff, _ = csvio.read_replicates_csv(args.replicates_csv)
        hess = np.diag(np.asarray(args.hess_diag, dtype=np.float64))
        sigma = np.eye(len(args.hess_diag))
        emp = stats.empirical_covariance(errors)
        match = stats.covariance_match(emp, stats.sandwich(hess, sigma))
        report = {"replicates": errors.shape[0], "n_eff": n_eff,
                  "covariance_match": match, "cov_tol": args.cov_tol,
                  "cov_pass": bool(match <= args.cov_tol),
                  "low_power": bool(errors.shape[0] < 30)}
    else:
        report, errors, _ = run_stat_test(
            args.hess_diag, args.replicates, args.steps, args.delay, sched,
            args.seed, burn_in=args.burn_in, cov_tol=args.cov_tol,
            gap_tol=args.gap_tol)
        if args.write_replicates:
            rpath = os.path.join(args.out_dir, "replicates.csv")
            csvio.write_replicates_csv(rpath, errors, report["n_eff"],
                                       {"hess_diag": report["hess_diag"]})
    path = os.path.join(args.out_dir, "stat_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    return 0 if report.get("cov_pass", True) else 1


def cmd_simulate_delays(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    hess = np.diag(np.asarray(args.hess_diag, dtype=np.float64))
    problem = affine_problem(hess, np.eye(len(args.hess_diag)))
    cfg = RunConfig(mode="simulated", total_steps=args.steps, seed=args.seed,
                    schedule=make_schedule(args), delay=args.delay,
                    average_burn_in=args.burn_in or 0)
    r = run_nonlinear(problem, cfg)
    delays = r.delay_stats.delays
    report = {
        "model": args.delay.variant,
        "assumption_moments_ok": args.delay.assumption_moments_ok,
        "steps": args.steps,
        "realized": r.delay_stats.moments,
        "moment_norms": {str(o): stats.delay_moment(delays, o)
                         for o in (1.0, 2.0, 4.0)},
        "final_error_norm": float(np.linalg.norm(r.x_final - problem.x_star)),
        "avg_error_norm": float(np.linalg.norm(r.x_bar - problem.x_star)),
    }
    path = os.path.join(args.out_dir, "delay_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    return 0


def _add_common(p, include_problem=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--schedule", choices=["poly", "backoff"], default="poly")
    p.add_argument("--alpha", type=float, default=None,
                   help="poly constant or backoff alpha0 (defaults: 1.0 / 0.1)")
    p.add_argument("--beta", type=float, default=0.55)
    p.add_argument("--decay", type=float, default=0.95)
    if include_problem:
        p.add_argument("--data", help="svmlight file (otherwise synthetic)")
        p.add_argument("--loss", choices=["least_squares", "logistic"])
        p.add_argument("--zero-one-labels", action="store_true")
        p.add_argument("--n", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--density", type=float, default=1.0)
        p.add_argument("--noise-sd", type=float, default=1.0)
        p.add_argument("--data-seed", type=int, default=1)
        p.add_argument("--paper-scale", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="asyncsgd-bench",
        description="Asynchronous SGD benchmark and verification harness")
    ap.add_argument("--config", help="key=value defaults file; flags win")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic svmlight dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--density", type=float, default=1.0)
    g.add_argument("--noise-sd", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    r = sub.add_parser("run", help="run one experiment, emit trace CSVs")
    _add_common(r)
    r.add_argument("--cores", type=parse_int_list)
    r.add_argument("--seeds", type=parse_int_list)
    r.add_argument("--batch", type=int, default=10)
    r.add_argument("--epochs", type=int, default=20)
    r.add_argument("--mode", choices=["threads", "simulated"], default="threads")
    r.add_argument("--delay", type=parse_delay, default=DelayModel.none())
    r.add_argument("--burn-in", type=int, default=0)
    r.add_argument("--sampling", choices=["permute", "iid"], default="permute")
    r.add_argument("--no-average", action="store_true")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="grid experiments with aggregation")
    _add_common(s)
    s.add_argument("--kind", choices=["density", "batch"], required=True)
    s.add_argument("--cores", type=parse_int_list)
    s.add_argument("--densities", type=parse_float_list)
    s.add_argument("--batches", type=parse_int_list)
    s.add_argument("--batch", type=int, default=10)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--n-seeds", type=int, default=10)
    s.set_defaults(fn=cmd_sweep)

    t = sub.add_parser("stat-test", help="averaged-error covariance and gap test")
    _add_common(t, include_problem=False)
    t.add_argument("--hess-diag", type=parse_float_list, default=[1, 2, 3, 4])
    t.add_argument("--replicates", type=int, default=200)
    t.add_argument("--steps", type=int, default=50_000)
    t.add_argument("--burn-in", type=int, default=None,
                   help="average burn-in steps (default steps // 5)")
    t.add_argument("--delay", type=parse_delay, default=DelayModel.none())
    t.add_argument("--cov-tol", type=float, default=0.20)
    t.add_argument("--gap-tol", type=float, default=0.25)
    t.add_argument("--write-replicates", action="store_true")
    t.add_argument("--replicates-csv", help="score an existing replicate CSV")
    t.set_defaults(fn=cmd_stat_test)

    d = sub.add_parser("simulate-delays", help="realized-delay report for a model")
    _add_common(d, include_problem=False)
    d.add_argument("--hess-diag", type=parse_float_list, default=[1, 2, 3, 4])
    d.add_argument("--steps", type=int, default=20_000)
    d.add_argument("--burn-in", type=int, default=None)
    d.add_argument("--delay", type=parse_delay, required=True)
    d.set_defaults(fn=cmd_simulate_delays)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    if "--config" in argv:
        i = argv.index("--config")
        defaults = _load_config_file(argv[i + 1])
        ns, _ = ap.parse_known_args(argv)
        known = {k: v for k, v in defaults.items() if hasattr(ns, k)}
        for action in ap._subparsers._group_actions[0].choices.values():
            action.set_defaults(**{
                k: _coerce_default(action, k, v) for k, v in known.items()})
    args = ap.parse_args(argv)
    if getattr(args, "alpha", None) is None and hasattr(args, "schedule"):
        args.alpha = 1.0 if args.schedule == "poly" else 0.1
    return args.fn(args)


def _coerce_default(parser, key, value):
    for action in parser._actions:
        if action.dest == key and action.type is not None:
            return action.type(value)
        if action.dest == key and isinstance(action.const, bool):
            return value.lower() in ("1", "true", "yes")
    return value


if __name__ == "__main__":
    raise SystemExit(main())
