"""Experiment runner: ``nsbfgs {example1,example2,example3,run} [flags]``.

Every experiment writes plain CSV files into ``--out``.  Each file starts with
``#``-prefixed metadata lines (all parameters, precision, tolerances) followed
by one header row.  Parameters come from built-in defaults, then an optional
``--config`` file of ``key = value`` lines, then explicit flags.

Exit status: 0 on success (numerical failures of individual runs are recorded
in the output), 2 on invalid configuration, 1 on I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from mpmath.libmp import to_str

from . import diagnostics, mpnum, problems
from .mpnum import MACHINE, Precision
from .piecewise import default_hull_tol, default_tie_tol, nspace_basis
from .solver import RunTrace, SolverConfig, WolfeParams, run

log = logging.getLogger(__name__)

EXPERIMENTS = ("example1", "example2", "example3", "run")
PROBLEMS = ("max", "quadratic", "sphere", "abs", "quad_plus_abs", "euclid_norm")
CSV_DIGITS = 30          # significant digits written for extended-precision values

# Sub-streams of np.random.default_rng((seed, stream)) used by the experiments.
STREAM_X0, STREAM_H0, STREAM_POINTS, STREAM_MATRIX = 1, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int = 10
    m: int = 6
    seed: int = 0
    runs: int = 10
    iters: int = 1000
    c1: float = 1e-4
    c2: float = 0.5
    digits: int | None = mpnum.DEFAULT_DIGITS
    restart_period: int | None = None
    points: int = 100
    log10_range: tuple[float, float] = (-30.0, 2.0)
    periods: int = 18
    compare_shorter: bool = False
    problem: str = "max"
    x0: tuple[float, ...] | None = None
    instance: str | None = None
    out: str = "results"
    jobs: int = 1

    @property
    def precision(self) -> Precision:
        return MACHINE if self.digits is None else Precision(self.digits)

    def validate(self) -> ExperimentConfig:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.experiment in EXPERIMENTS, f"unknown experiment {self.experiment!r}")
        need(self.n >= 1, "n must be >= 1")
        need(self.m >= 1, "m must be >= 1")
        need(self.experiment == "run" and self.problem != "max" or self.m <= self.n + 1,
             f"m={self.m} exceeds n+1={self.n + 1}")
        need(self.runs >= 1, "runs must be >= 1")
        need(self.iters >= 1, "iters must be >= 1")
        need(0 < self.c1 < self.c2 < 1, f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        need(self.digits is None or self.digits >= mpnum.MIN_EXTENDED_DIGITS,
             f"digits must be >= {mpnum.MIN_EXTENDED_DIGITS}")
        need(self.restart_period is None or self.restart_period >= 1,
             "restart period must be >= 1")
        need(self.points >= 2, "points must be >= 2")
        need(self.log10_range[0] < self.log10_range[1], "log10 range needs lo < hi")
        need(self.periods >= 1, "periods must be >= 1")
        need(self.problem in PROBLEMS, f"unknown problem {self.problem!r}")
        need(self.jobs >= 1, "jobs must be >= 1")
        return self


# Defaults per experiment; everything else falls back to the dataclass.
DEFAULTS = {
    "example1": dict(n=10, m=6, runs=10, iters=1000, c1=1e-4, c2=0.5,
                     digits=mpnum.DEFAULT_DIGITS),
    "example2": dict(n=10, m=6, points=100, log10_range=(-30.0, 2.0), c1=1e-4, c2=0.5,
                     digits=mpnum.DEFAULT_DIGITS),
    "example3": dict(n=100, m=80, periods=18, c1=0.5, c2=0.75, digits=None),
    "run": dict(n=2, m=2, iters=100, c1=1e-4, c2=0.5, digits=None, problem="quad_plus_abs"),
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "machine") else int(text)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


CONFIG_KEYS = {
    "n": int, "m": int, "seed": int, "runs": int, "iters": int,
    "c1": float, "c2": float, "digits": _parse_optional_int,
    "restart_period": _parse_optional_int, "points": int,
    "log10_range": _parse_floats, "periods": int, "compare_shorter": _parse_bool,
    "problem": str, "x0": _parse_floats, "instance": str, "out": str, "jobs": int,
    "machine_precision": _parse_bool,
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    if out.pop("machine_precision", False):
        out["digits"] = None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsbfgs", description="BFGS experiments on piecewise differentiable max-functions")
    sub = parser.add_subparsers(dest="experiment", required=True)
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--n", type=int, default=S, help="dimension")
    common.add_argument("--m", type=int, default=S, help="number of selection functions")
    common.add_argument("--seed", type=int, default=S, help="base random seed")
    common.add_argument("--iters", type=int, default=S, help="BFGS iterations per run")
    common.add_argument("--c1", type=float, default=S, help="Wolfe sufficient-decrease parameter")
    common.add_argument("--c2", type=float, default=S, help="Wolfe curvature parameter")
    prec = common.add_mutually_exclusive_group()
    prec.add_argument("--digits", type=int, default=S, help="extended precision digits")
    prec.add_argument("--machine-precision", action="store_true", default=S,
                      help="use IEEE double arithmetic")
    common.add_argument("--restart-period", type=int, default=S,
                        help="reset H to H0 every this many iterations")
    common.add_argument("--points", type=int, default=S, help="initial points (example2)")
    common.add_argument("--log10-range", type=float, nargs=2, metavar=("LO", "HI"), default=S,
                        help="log10 distance range of initial points (example2)")
    common.add_argument("--runs", type=int, default=S, help="number of random instances (example1)")
    common.add_argument("--periods", type=int, default=S, help="restart periods (example3)")
    common.add_argument("--compare-shorter", action="store_true", default=S,
                        help="also run with restart period one shorter (example3)")
    common.add_argument("--problem", choices=PROBLEMS, default=S, help="problem for 'run'")
    common.add_argument("--x0", type=_parse_floats, default=S,
                        help="initial point as comma-separated values (run)")
    common.add_argument("--instance", default=S, help="max-instance file to load (run)")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--jobs", type=int, default=S, help="parallel worker processes")
    common.add_argument("--config", default=S, help="key = value configuration file")
    common.add_argument("-v", "--verbose", action="store_true", default=S)
    helps = {
        "example1": "eigenvalue gap and memory metric over long runs",
        "example2": "exploration of all pieces from initial points near the minimizer",
        "example3": "BFGS with periodic restarts of the quasi-Newton matrix",
        "run": "a single run on one problem",
    }
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    given = vars(ns).copy()
    experiment = given.pop("experiment")
    given.pop("verbose", None)
    values = dict(DEFAULTS[experiment])
    if "config" in given:
        values.update(read_config_file(given.pop("config")))
    if given.pop("machine_precision", False):
        given["digits"] = None
    if "log10_range" in given:
        given["log10_range"] = tuple(given["log10_range"])
    values.update(given)
    names = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig(experiment, **{k: v for k, v in values.items() if k in names})
    return cfg.validate()


# -- CSV helpers ---------------------------------------------------------------

def fmt(prec: Precision, x) -> str:
    if x is None:
        return ""
    if prec.is_machine:
        return format(float(x), ".17e")
    return to_str(x._mpf_, CSV_DIGITS, min_fixed=0, max_fixed=0, show_zero_exponent=True)


def metadata(cfg: ExperimentConfig, **extra) -> list[str]:
    prec = cfg.precision
    lines = [f"experiment: {cfg.experiment}"]
    for key, value in asdict(cfg).items():
        if key not in ("experiment", "out", "jobs"):    # neither affects the numbers
            lines.append(f"{key}: {value}")
    lines += [
        f"precision: {prec}",
        f"eig_tol: {fmt(prec, mpnum.default_eig_tol(prec))}",
        f"tie_tol: {fmt(prec, default_tie_tol(prec))}",
        f"hull_tol: {fmt(prec, default_hull_tol(prec))}",
        "line_search: bracketing weak Wolfe, t0=1, cap=100, expansion 2",
        "rng: numpy PCG64 default_rng",
    ]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    return lines


def write_csv(path: Path, meta: list[str], header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Metadata lines (without '# ') and data rows of a file written here."""
    meta, body = [], []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                meta.append(line[1:].strip())
            else:
                body.append(line)
    return meta, list(csv.DictReader(body))


def _step_rows(trace: RunTrace):
    """Records that took a step, plus the final one when the run stopped early."""
    recs = [r for r in trace.records if r.step is not None]
    if trace.termination != "max_iter":
        recs.append(trace.final)
    return recs


# -- experiments -----------------------------------------------------------------

def _solver_config(cfg: ExperimentConfig, **kw) -> SolverConfig:
    return SolverConfig(wolfe=WolfeParams(cfg.c1, cfg.c2), precision=cfg.precision, **kw)


def _example1_one(cfg: ExperimentConfig, seed: int, path: str) -> list[str]:
    prec = cfg.precision
    inst = problems.generate_max_instance(cfg.n, cfg.m, seed, prec)
    f = problems.instance_as_piecewise(inst)
    x0 = problems.random_start(cfg.n, (seed, STREAM_X0), prec)
    H0 = problems.random_spd(cfg.n, (seed, STREAM_H0), prec)
    scfg = _solver_config(cfg, max_iter=cfg.iters, restart_period=cfg.restart_period)
    trace = run(f, x0, H0, scfg, reference_gradients=list(inst.g))
    _, dim_N = nspace_basis(list(inst.g))
    rows = []
    for r in _step_rows(trace):
        t = r.step.t if r.step is not None else None
        rows.append([r.k, fmt(prec, r.fval)] + [fmt(prec, v) for v in r.eigenvalues]
                    + [fmt(prec, t), r.active_index, fmt(prec, r.memory_metric)])
    header = ["k", "fgap"] + [f"lambda_{j}" for j in range(1, cfg.n + 1)] + [
        "t_k", "active_index", "memory_metric"]
    write_csv(Path(path), metadata(cfg, run_seed=seed, termination=trace.termination,
                                   message=trace.message, x_bar="0", H0="B^T B/n + I"),
              header, rows)
    rep = diagnostics.eigen_partition_series(trace, dim_N)
    return [str(seed), trace.termination, str(trace.final.k), fmt(prec, trace.final.fval),
            str(dim_N), fmt(prec, rep.lower[-1]) if dim_N else "", fmt(prec, rep.sigma_L),
            fmt(prec, rep.sigma_U), fmt(prec, rep.memory[0]), fmt(prec, rep.memory[-1])]


def run_example1(cfg: ExperimentConfig) -> list[Path]:
    out = Path(cfg.out)
    seeds = [cfg.seed + r for r in range(cfg.runs)]
    paths = [out / f"example1_seed{s}.csv" for s in seeds]
    args = [(cfg, s, str(p)) for s, p in zip(seeds, paths)]
    if cfg.jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            summary = list(pool.map(_example1_one, *zip(*args)))
    else:
        summary = [_example1_one(*a) for a in args]
    header = ["seed", "termination", "last_k", "final_fgap", "dim_N", "lambda_dimN_last",
              "sigma_L", "sigma_U", "memory_metric_first", "memory_metric_last"]
    spath = out / "example1_summary.csv"
    write_csv(spath, metadata(cfg), header, summary)
    return paths + [spath]


def run_example2(cfg: ExperimentConfig) -> list[Path]:
    prec = cfg.precision
    inst = problems.generate_max_instance(cfg.n, cfg.m, cfg.seed, prec)
    lo, hi = cfg.log10_range
    pts = problems.initial_points_logspaced(inst.x_star, cfg.points, lo, hi,
                                            (cfg.seed, STREAM_POINTS))
    report = diagnostics.b2_sweep(inst, pts, _solver_config(cfg))
    rows = []
    for r in report.records:
        rows.append([repr(float(r.log10_dist)), fmt(prec, r.min_partition_eig), fmt(prec, r.max_eig),
                     fmt(prec, r.exploration), str(r.explored_all).lower(),
                     " ".join(str(i) for i in r.order), r.ambiguous, r.termination])
    header = ["log10_dist", "min_partition_eig", "max_eig", "exploration_metric",
              "explored_all", "visit_order", "ambiguous", "termination"]
    path = Path(cfg.out) / "example2.csv"
    write_csv(path, metadata(cfg, H0="I", iterations_per_point=cfg.m - 1), header, rows)
    return [path]


def run_example3(cfg: ExperimentConfig) -> list[Path]:
    prec = cfg.precision
    inst = problems.generate_max_instance(cfg.n, cfg.m, cfg.seed, prec)
    f = problems.instance_as_piecewise(inst)
    x0 = problems.random_start(cfg.n, (cfg.seed, STREAM_X0), prec)
    H0 = prec.identity(cfg.n)
    base = cfg.restart_period or cfg.m
    periods = [base] + ([base - 1] if cfg.compare_shorter and base > 1 else [])
    paths = []
    for r in periods:
        scfg = _solver_config(cfg, max_iter=cfg.periods * cfg.m, restart_period=r,
                              track_eigenvalues=False)
        trace = run(f, x0, H0, scfg)
        meta = metadata(cfg, active_restart_period=r, H0="I", termination=trace.termination,
                        message=trace.message)
        rows = [[rec.k, fmt(prec, rec.fval), fmt(prec, rec.step.t if rec.step else None),
                 rec.active_index, int(rec.restarted)] for rec in _step_rows(trace)]
        tpath = Path(cfg.out) / f"example3_trace_r{r}.csv"
        write_csv(tpath, meta, ["k", "fgap", "t_k", "active_index", "restarted"], rows)
        prows = [[j, c, fmt(prec, g)] for j, c, g in diagnostics.period_summary(trace, r)]
        ppath = Path(cfg.out) / f"example3_periods_r{r}.csv"
        write_csv(ppath, meta, ["period_index", "unique_selection_count", "end_of_period_fgap"],
                  prows)
        paths += [tpath, ppath]
    return paths


def single_problem(cfg: ExperimentConfig):
    """(function, x0, H0) for the 'run' verb."""
    prec = cfg.precision
    if cfg.problem == "max":
        if cfg.instance:
            try:
                inst = problems.read_instance(cfg.instance)
            except ValueError as exc:
                raise ConfigError(f"bad instance file {cfg.instance}: {exc}") from None
        else:
            inst = problems.generate_max_instance(cfg.n, cfg.m, cfg.seed, prec)
        if inst.precision != prec:
            raise ConfigError(f"instance file is at {inst.precision}, run requested {prec}")
        f = problems.instance_as_piecewise(inst)
    elif cfg.problem == "quadratic":
        f = problems.quadratic_problem(problems.random_spd(cfg.n, (cfg.seed, STREAM_MATRIX), prec), prec)
    elif cfg.problem == "sphere":
        f = problems.quadratic_problem(prec.identity(cfg.n), prec)
    else:
        f = problems.analytic_problem(cfg.problem, cfg.n, prec)
    if cfg.x0 is not None:
        if len(cfg.x0) != f.dim:
            raise ConfigError(f"x0 has {len(cfg.x0)} entries, problem dimension is {f.dim}")
        x0 = prec.vector([prec.decimal(v) for v in cfg.x0])
    else:
        x0 = problems.random_start(f.dim, (cfg.seed, STREAM_X0), prec)
    return f, x0, prec.identity(f.dim)


def run_single(cfg: ExperimentConfig) -> list[Path]:
    prec = cfg.precision
    f, x0, H0 = single_problem(cfg)
    trace = run(f, x0, H0, _solver_config(cfg, max_iter=cfg.iters,
                                           restart_period=cfg.restart_period))
    rows = [[r.k, fmt(prec, r.fval), fmt(prec, r.grad_norm),
             fmt(prec, r.step.t if r.step else None), r.active_index, int(r.ambiguous)]
            for r in _step_rows(trace)]
    path = Path(cfg.out) / f"run_{cfg.problem}.csv"
    write_csv(path, metadata(cfg, function=f.name, termination=trace.termination,
                             message=trace.message),
              ["k", "fval", "grad_norm", "t_k", "active_index", "ambiguous"], rows)
    return [path]


RUNNERS = {"example1": run_example1, "example2": run_example2,
           "example3": run_example3, "run": run_single}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
    except (ConfigError, ValueError) as exc:
        print(f"nsbfgs: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"nsbfgs: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        paths = RUNNERS[cfg.experiment](cfg)
    except ConfigError as exc:
        print(f"nsbfgs: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"nsbfgs: I/O error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
