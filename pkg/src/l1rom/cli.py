"""Experiment registry and batch runner.

``python -m l1rom run CONFIG.json --out DIR`` builds the dictionary for one
experiment, runs every requested functional and writes ``solutions.csv``,
``residuals.csv``, ``coefficients.csv`` and ``manifest.json`` (config echo,
versions and a sha256 per output file). A functional that raises is
reported in the manifest and left out of the CSVs, so the other columns
are unaffected. ``python -m l1rom diff RUN REF`` compares two run
directories numerically.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import platform
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import hdm, pod, rom
from .errors import ConfigInvalid, L1romError
from .minimize import Functional, minimize_linear

FUNCTIONALS = ("l2", "l1lp", "l1irls", "huber", "galerkin")
REGRESSION_OUTLIERS = ((0.5, 3.5), (0.9, 4.5))
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


@dataclass(frozen=True)
class ExperimentSpec:
    """Defaults and limits for one registered experiment."""

    mus: tuple
    target: float | None
    n: int | None
    desk_n: int | None
    domain: tuple
    functionals: tuple = ("l2", "l1lp", "l1irls", "huber")
    perturb: bool = False


EXPERIMENTS = {
    "regression": ExperimentSpec((), None, 22, 22, (-np.inf, np.inf)),
    "advect1d": ExperimentSpec((0.3, 0.34, 0.38, 0.42, 0.46, 0.5), 0.45, 1000, 250, (0.0, 1.0),
                               FUNCTIONALS),
    "advdiff2d": ExperimentSpec((np.pi / 3, np.pi / 6), np.pi / 4, 304, 64, (0.0, np.pi / 2),
                                FUNCTIONALS),
    "burgers-steady": ExperimentSpec((0.3, 0.34, 0.38, 0.42, 0.46, 0.5), 0.45, 1000, 250,
                                     (0.0, 1.0), FUNCTIONALS),
    "burgers-unsteady": ExperimentSpec((0.0, 0.2, 0.4, 0.6, 1.0), 0.5, 1000, 250, (0.0, 1.0),
                                       perturb=True),
    "euler": ExperimentSpec((0.0, 0.2, 0.4, 0.5, 0.8, 1.0), 0.6, 1000, 300, (0.0, 1.0),
                            perturb=True),
    "pod-decay": ExperimentSpec((), None, None, None, (-np.inf, np.inf), ()),
}
OPEN_DOMAIN = {"advect1d", "advdiff2d", "burgers-steady"}


@dataclass
class ExperimentConfig:
    experiment: str
    mus: list
    target: float | None
    functionals: list
    n: int | None
    cfl: float = 0.5
    seed: int = 0
    eta: float = 0.0
    perturbation: rom.PerturbationConfig = field(default_factory=rom.PerturbationConfig)
    dictionaries: dict = field(default_factory=dict)  # extra named dictionaries
    sizes: list = field(default_factory=lambda: [400])  # pod-decay grids
    svd: str = "lapack"
    strategies: list = field(default_factory=lambda: ["single", "per-variable"])
    outliers: list = field(default_factory=lambda: [list(p) for p in REGRESSION_OUTLIERS])

    def echo(self):
        d = dataclasses.asdict(self)
        d["perturbation"] = dataclasses.asdict(self.perturbation)
        return d


CONFIG_KEYS = {"experiment", "mus", "target", "functionals", "n", "cfl", "seed", "eta",
               "perturbation", "dictionaries", "sizes", "svd", "strategies", "outliers"}


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def config_from_dict(raw, text=None, seed=None, functionals=None, desk_scale=False):
    """Validate a parsed config; all problems are reported together."""
    problems = []

    def bad(key, msg):
        line = _line_of(text, key)
        problems.append(f"line {line}: {key}: {msg}" if line else f"{key}: {msg}")

    if not isinstance(raw, dict):
        raise ConfigInvalid(["config must be a JSON object"])
    for key in sorted(set(raw) - CONFIG_KEYS):
        bad(key, "unknown key")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        bad("experiment", f"must be one of {sorted(EXPERIMENTS)}")
        raise ConfigInvalid(problems)
    spec = EXPERIMENTS[name]
    lo, hi = spec.domain
    inside = (lambda m: lo < m < hi) if name in OPEN_DOMAIN else (lambda m: lo <= m <= hi)

    mus = raw.get("mus", list(spec.mus))
    if not isinstance(mus, list) or not all(isinstance(m, (int, float)) for m in mus):
        bad("mus", "must be a list of numbers")
        mus = []
    elif not all(inside(m) for m in mus):
        bad("mus", f"samples must lie in the parameter domain {spec.domain}")
    elif len(set(mus)) != len(mus):
        bad("mus", "samples must be distinct")
    target = raw.get("target", spec.target)
    if spec.target is not None and (not isinstance(target, (int, float)) or not inside(target)):
        bad("target", f"must be a number in the parameter domain {spec.domain}")
    for key, alt in (raw.get("dictionaries") or {}).items():
        if not isinstance(alt, list) or not all(isinstance(m, (int, float)) and inside(m)
                                                for m in alt):
            bad("dictionaries", f"{key!r} must list samples inside {spec.domain}")

    funcs = functionals if functionals is not None else raw.get("functionals",
                                                                list(spec.functionals))
    if not isinstance(funcs, list) or any(f not in FUNCTIONALS for f in funcs):
        bad("functionals", f"entries must be among {FUNCTIONALS}")
        funcs = []
    elif "galerkin" in funcs and "galerkin" not in spec.functionals:
        bad("functionals", f"galerkin is not available for {name}")

    n = raw.get("n", spec.n)
    if desk_scale:
        n = spec.desk_n
    if spec.n is not None and (not isinstance(n, int) or n < 3):
        bad("n", "must be an integer >= 3")
    cfl = raw.get("cfl", 0.5)
    if not isinstance(cfl, (int, float)) or not 0 < cfl <= 1:
        bad("cfl", "must lie in (0, 1]")
    eta = raw.get("eta", 0.0)
    if not isinstance(eta, (int, float)) or eta < 0:
        bad("eta", "must be a non-negative number")
    cfg_seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(cfg_seed, int) or cfg_seed < 0:
        bad("seed", "must be a non-negative integer")

    pert = raw.get("perturbation", {})
    perturbation = None
    if not isinstance(pert, dict) or set(pert) - {"enabled", "scale"}:
        bad("perturbation", "must be an object with keys enabled, scale")
    else:
        try:
            perturbation = rom.PerturbationConfig(bool(pert.get("enabled", spec.perturb)),
                                                  float(pert.get("scale", 1e-8)),
                                                  cfg_seed if isinstance(cfg_seed, int) else 0)
        except (TypeError, ValueError) as exc:
            bad("perturbation", str(exc))

    sizes = raw.get("sizes", [400])
    if not isinstance(sizes, list) or not all(isinstance(s, int) and s >= 10 for s in sizes):
        bad("sizes", "must be a list of integers >= 10")
    svd = raw.get("svd", "lapack")
    if svd not in ("jacobi", "lapack"):
        bad("svd", "must be 'jacobi' or 'lapack'")
    strategies = raw.get("strategies", ["single", "per-variable"])
    if not isinstance(strategies, list) or set(strategies) - {"single", "per-variable"}:
        bad("strategies", "entries must be 'single' or 'per-variable'")
    outliers = raw.get("outliers", [list(p) for p in REGRESSION_OUTLIERS])
    if not isinstance(outliers, list) or not all(isinstance(p, list) and len(p) == 2
                                                 for p in outliers):
        bad("outliers", "must be a list of [x, y] pairs")

    if problems:
        raise ConfigInvalid(problems)
    return ExperimentConfig(name, [float(m) for m in mus],
                            None if target is None else float(target), funcs, n,
                            float(cfl), cfg_seed, float(eta), perturbation,
                            {k: [float(m) for m in v] for k, v in
                             (raw.get("dictionaries") or {}).items()},
                            sizes, svd, strategies, outliers)


def load_config(path, **overrides):
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid([f"line {exc.lineno}: invalid JSON: {exc.msg}"]) from exc
    return config_from_dict(raw, text, **overrides)


# ---------------------------------------------------------------------------
# tables


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        self.rows.append(list(row))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, table: Table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


@dataclass
class RunResult:
    tables: dict  # file name -> Table
    failures: dict  # functional -> message
    notes: dict = field(default_factory=dict)


def _functional(name, cfg):
    return Functional.from_name(name, eta=cfg.eta)


# ---------------------------------------------------------------------------
# experiments


def regression_instance(seed, n_points=22):
    """Points with ``y = 2 x + 0.4 + 0.1 U(-1, 1)``, ``x ~ U(0, 1)``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n_points)
    y = 2.0 * x + 0.4 + 0.1 * rng.uniform(-1.0, 1.0, n_points)
    return x, y


def fit_line(x, y, name, eta=0.0):
    A = np.column_stack([x, np.ones_like(x)])
    return minimize_linear(A, -np.asarray(y, dtype=float), Functional.from_name(name, eta=eta))


def run_regression(cfg: ExperimentConfig) -> RunResult:
    """Fit ``y ~ a1 x + a2`` with and without outliers for every functional."""
    x, y = regression_instance(cfg.seed, cfg.n)
    ox = np.array([p[0] for p in cfg.outliers], dtype=float)
    oy = np.array([p[1] for p in cfg.outliers], dtype=float)
    cases = {"clean": (x, y), "outliers": (np.r_[x, ox], np.r_[y, oy])}
    funcs = [f for f in cfg.functionals if f != "galerkin"]
    coef = Table(["case", "functional", "alpha1", "alpha2", "converged", "objective"])
    sol = Table(["case", "x", "y", "outlier"])
    res = Table(["case", "point"] + funcs)
    failures = {}
    fits = {}
    for case, (cx, cy) in cases.items():
        for i, (a, b) in enumerate(zip(cx, cy)):
            sol.add(case, a, b, i >= len(x))
        for f in funcs:
            try:
                fits[case, f] = fit_line(cx, cy, f, cfg.eta)
            except (L1romError, np.linalg.LinAlgError) as exc:
                failures[f] = f"{type(exc).__name__}: {exc}"
    funcs = [f for f in funcs if f not in failures]
    res.header = ["case", "point"] + funcs
    for case, (cx, cy) in cases.items():
        for f in funcs:
            rep = fits[case, f]
            coef.add(case, f, rep.solution[0], rep.solution[1], rep.converged, rep.objective)
        A = np.column_stack([cx, np.ones_like(cx)])
        for i in range(len(cx)):
            res.add(case, i, *[float(A[i] @ fits[case, f].solution - cy[i]) for f in funcs])
    return RunResult({"coefficients.csv": coef, "solutions.csv": sol, "residuals.csv": res},
                     failures)


STEADY_FACTORIES = {
    "advect1d": hdm.advect1d_steady,
    "burgers-steady": hdm.burgers1d_steady,
    "advdiff2d": lambda mu, n: hdm.advdiff2d(mu, nx=n),
}


def run_steady(cfg: ExperimentConfig) -> RunResult:
    factory = STEADY_FACTORIES[cfg.experiment]
    problem = factory(cfg.target, cfg.n)
    dictionary = rom.build_dictionary(lambda mu: factory(mu, cfg.n), cfg.mus)
    u_hdm = problem.solve()
    results, failures = {}, {}
    for name in cfg.functionals:
        try:
            if name == "galerkin":
                results[name] = rom.solve_galerkin(problem, dictionary)
            else:
                results[name] = rom.solve_steady_rom(problem, dictionary, _functional(name, cfg))
        except (L1romError, np.linalg.LinAlgError) as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    names = [f for f in cfg.functionals if f in results]

    coef = Table(["functional"] + [f"alpha{k + 1}" for k in range(dictionary.size)]
                 + ["converged", "objective", "message"])
    for f in names:
        c = results[f].coefficients
        coef.add(f, *c.alpha, c.converged, c.objective, c.message)

    if isinstance(problem.grid, hdm.Grid2D):
        X, Y = problem.grid.mesh()
        coords, coord_names = [X.ravel(), Y.ravel()], ["x", "y"]
    else:
        coords, coord_names = [problem.grid.x], ["x"]
    sol = Table(coord_names + ["hdm"] + names)
    res = Table(coord_names + ["hdm"] + names)
    r_hdm = problem.residual(u_hdm)
    for i in range(u_hdm.size):
        c = [a[i] for a in coords]
        sol.add(*c, u_hdm[i], *[results[f].reconstruction[i] for f in names])
        res.add(*c, r_hdm[i], *[results[f].residual[i] for f in names])
    return RunResult({"coefficients.csv": coef, "solutions.csv": sol, "residuals.csv": res},
                     failures)


def _burgers_dictionary(mus, n, dt, cache):
    for mu in mus:
        if mu not in cache:
            cache[mu] = hdm.burgers1d_unsteady(mu, n, np.pi, dt=dt)
    x = cache[mus[0]].grid.x
    return rom.UnsteadyDictionary(mus, [cache[m] for m in mus],
                                  lambda mu: hdm.burgers_initial(x, mu))


def run_burgers_unsteady(cfg: ExperimentConfig) -> RunResult:
    """Main dictionary plus any extra named ones, all on one time grid."""
    dicts = {"D": cfg.mus, **cfg.dictionaries}
    every = sorted({m for mus in dicts.values() for m in mus} | {cfg.target})
    dt = hdm.burgers_time_step(every, cfg.n, cfg.cfl)
    cache = {}
    truth = hdm.burgers1d_unsteady(cfg.target, cfg.n, np.pi, dt=dt)
    out_idx = [truth.index_of(t) for t in hdm.BURGERS_OUTPUT_TIMES]
    funcs = [f for f in cfg.functionals if f != "galerkin"]
    runs, failures = {}, {}
    for label, mus in dicts.items():
        D = _burgers_dictionary(mus, cfg.n, dt, cache)
        for f in funcs:
            if f in failures:
                continue
            try:
                runs[label, f] = rom.run_unsteady_rom(D, cfg.target, _functional(f, cfg),
                                                      perturbation=cfg.perturbation)
            except (L1romError, np.linalg.LinAlgError) as exc:
                failures[f] = f"{type(exc).__name__}: {exc}"
    funcs = [f for f in funcs if f not in failures]
    return _unsteady_tables(dicts, funcs, runs, truth, out_idx, failures,
                            lambda s: [(None, s)])


def run_euler(cfg: ExperimentConfig) -> RunResult:
    """Single-expansion and per-variable reduced models for each functional."""
    dt = hdm.euler_time_step(list(cfg.mus) + [cfg.target], cfg.n, cfg.cfl)
    trajs = [hdm.euler1d_unsteady(mu, cfg.n, dt=dt) for mu in cfg.mus]
    truth = hdm.euler1d_unsteady(cfg.target, cfg.n, dt=dt)
    x = trajs[0].grid.x
    D = rom.UnsteadyDictionary(cfg.mus, trajs,
                               lambda mu: hdm.euler_initial_state(x, mu).as_array())
    runners = {"single": rom.euler_rom_single_expansion,
               "per-variable": rom.euler_rom_per_variable}
    runs, failures = {}, {}
    for f in [f for f in cfg.functionals if f != "galerkin"]:
        for s in cfg.strategies:
            try:
                runs[s, f] = runners[s](D, cfg.target, _functional(f, cfg),
                                        perturbation=cfg.perturbation)
            except (L1romError, np.linalg.LinAlgError) as exc:
                failures[f] = f"{type(exc).__name__}: {exc}"
    funcs = [f for f in cfg.functionals if f != "galerkin" and f not in failures]
    runs = {k: v for k, v in runs.items() if k[1] in funcs}

    def primitives(U):
        return [("rho", U[0]), ("u", U[1] / U[0]), ("p", hdm.pressure(U))]

    return _unsteady_tables({s: None for s in cfg.strategies}, funcs, runs, truth,
                            [0, truth.n_steps], failures, primitives)


def _unsteady_tables(labels, funcs, runs, truth, out_idx, failures, split):
    keys = [(label, f) for label in labels for f in funcs if (label, f) in runs]
    cols = [f"{f}@{label}" for label, f in keys]
    r = len(np.atleast_2d(runs[keys[0]].coefficients[0].alpha)[0]) if keys else 0
    coef = Table(["run", "step", "time", "component"] + [f"alpha{k + 1}" for k in range(r)]
                 + ["converged"])
    sol = Table(["step", "time", "variable", "x", "hdm"] + cols)
    res = Table(["step", "time"] + cols)
    x = truth.grid.x
    for n in out_idx:
        t = n * truth.dt
        for key, col in zip(keys, cols):
            c = runs[key].coefficients[n]
            for k, a in enumerate(np.atleast_2d(c.alpha)):
                coef.add(col, n, t, k, *a, c.converged)
        parts = [split(runs[k].reconstructed[n]) for k in keys]
        for v, (var, u) in enumerate(split(truth.states[n])):
            for i in range(x.size):
                sol.add(n, t, var or "u", x[i], u[i], *[p[v][1][i] for p in parts])
    for n in range(truth.n_steps + 1):
        res.add(n, n * truth.dt, *[runs[k].residual_norms[n] for k in keys])
    return RunResult({"coefficients.csv": coef, "solutions.csv": sol, "residuals.csv": res},
                     failures)


def run_pod_decay(cfg: ExperimentConfig) -> RunResult:
    results = pod.pod_decay_study(cfg.sizes, method=cfg.svd)
    decay = Table(["N", "ell", "lambda_ratio"], [list(r) for r in pod.decay_table(results)])
    summary = Table(["N", "sigma1", "sigma1_over_N", "slope_2_40"])
    for res in results:
        s1 = float(res.singular_values[0])
        summary.add(res.N, s1, s1 / res.N, res.slope((2, min(40, res.N // 10))))
    return RunResult({"solutions.csv": decay, "coefficients.csv": summary}, {})


RUNNERS = {
    "regression": run_regression,
    "advect1d": run_steady,
    "advdiff2d": run_steady,
    "burgers-steady": run_steady,
    "burgers-unsteady": run_burgers_unsteady,
    "euler": run_euler,
    "pod-decay": run_pod_decay,
}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Run, write every table and the manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RUNNERS[cfg.experiment](cfg)
    files = {}
    for name, table in sorted(result.tables.items()):
        write_csv(out / name, table)
        files[name] = _sha256(out / name)
    from importlib.metadata import PackageNotFoundError, version
    try:
        pkg_version = version("artifact")
    except PackageNotFoundError:
        pkg_version = "unknown"
    manifest = {
        "config": cfg.echo(),
        "seed": cfg.seed,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "artifact": pkg_version},
        "files": files,
        "failures": result.failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# comparison


@dataclass
class Tolerance:
    atol: float = 1e-12
    rtol: float = 1e-9


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _as_float(s):
    try:
        return float(s)
    except ValueError:
        return None


def diff_against_reference(run_dir, reference_dir, tolerances=None, default=Tolerance()):
    """Compare every CSV of ``reference_dir`` with the same file in ``run_dir``.

    ``tolerances`` maps file names to :class:`Tolerance`. Numbers pass when
    ``|a - b| <= atol + rtol |b|``; other cells must match exactly. Returns
    ``(ok, problems)`` with one message per mismatch.
    """
    tolerances = tolerances or {}
    problems = []
    ref_files = sorted(p.name for p in Path(reference_dir).glob("*.csv"))
    if not ref_files:
        problems.append(f"{reference_dir}: no CSV files")
    for name in ref_files:
        tol = tolerances.get(name, default)
        run_path = Path(run_dir) / name
        if not run_path.exists():
            problems.append(f"{name}: missing from run")
            continue
        a, b = _read_csv(run_path), _read_csv(Path(reference_dir) / name)
        if len(a) != len(b):
            problems.append(f"{name}: {len(a)} rows vs {len(b)} in reference")
            continue
        header = b[0] if b else []
        for i, (ra, rb) in enumerate(zip(a, b)):
            if len(ra) != len(rb):
                problems.append(f"{name}: row {i}: {len(ra)} columns vs {len(rb)}")
                continue
            for j, (x, y) in enumerate(zip(ra, rb)):
                fx, fy = _as_float(x), _as_float(y)
                col = header[j] if j < len(header) else j
                if fx is None or fy is None or i == 0:
                    if x != y:
                        problems.append(f"{name}: row {i}, column {col}: {x!r} != {y!r}")
                elif not abs(fx - fy) <= tol.atol + tol.rtol * abs(fy):
                    problems.append(f"{name}: row {i}, column {col}: {fx!r} vs {fy!r}")
    return not problems, problems


# ---------------------------------------------------------------------------
# command line


def build_parser():
    parser = argparse.ArgumentParser(prog="l1rom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--functionals", default=None,
                     help="comma-separated subset of " + ",".join(FUNCTIONALS))
    run.add_argument("--desk-scale", action="store_true", help="use the small desk grids")
    diff = sub.add_parser("diff", help="compare a run directory with a reference")
    diff.add_argument("run_dir")
    diff.add_argument("reference_dir")
    diff.add_argument("--atol", type=float, default=1e-12)
    diff.add_argument("--rtol", type=float, default=1e-9)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "diff":
        ok, problems = diff_against_reference(args.run_dir, args.reference_dir,
                                              default=Tolerance(args.atol, args.rtol))
        for p in problems:
            print(p)
        print("pass" if ok else f"fail ({len(problems)} mismatches)")
        return EXIT_OK if ok else EXIT_SOLVER
    funcs = None if args.functionals is None else [f.strip() for f in
                                                   args.functionals.split(",") if f.strip()]
    try:
        cfg = load_config(args.config, seed=args.seed, functionals=funcs,
                          desk_scale=args.desk_scale)
    except (ConfigInvalid, OSError) as exc:
        for p in getattr(exc, "problems", [str(exc)]):
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = run_experiment(cfg, args.out)
    for name, msg in manifest["failures"].items():
        print(f"{name} failed: {msg}", file=sys.stderr)
    print(f"wrote {len(manifest['files'])} files to {args.out}")
    return EXIT_SOLVER if manifest["failures"] else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
