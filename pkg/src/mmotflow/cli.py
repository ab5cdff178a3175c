"""Experiment harness.

Usage:
    mmotflow run <config> [--out DIR] [--threads K]
    mmotflow validate <config> [--threads K]

Configs are flat key=value files with sections [problem], [solver], [output];
see the README for the key reference.  Exit codes: 0 success, 2 bad config,
3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError, MMOTError

EXPERIMENTS = ("convergence_study", "compare", "trajectory", "euler")


@dataclass
class RunConfig:
    # problem
    grid_n: int = 40
    grid_domain: tuple = (0.0, 1.0)
    grid_periodic: bool = False
    cost_kind: str = "log"
    cost_a: float = 0.1
    cost_cap: float | None = None
    eta: float = 0.05
    m: int = 3
    anchor_index: int = 0
    # solver
    experiment: str = "compare"
    schemes: tuple = ("rk3",)
    h_values: tuple = (Fraction(1, 100),)
    tol: float = 1e-10
    euler_f: str = "reflect"
    euler_beta: float = 20.0
    euler_t: float = 1.0
    # output
    out_dir: str = "out"
    heatmaps: bool = False
    snapshots: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    raw: dict = field(default_factory=dict)


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad step size {text!r}") from exc


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = RunConfig()
    cfg.raw = {s: dict(parser[s]) for s in parser.sections()}

    def section(name):
        return parser[name] if parser.has_section(name) else {}

    try:
        prob = section("problem")
        if "grid.n" in prob:
            cfg.grid_n = int(prob["grid.n"])
        if "grid.domain" in prob:
            lo, hi = (float(v) for v in prob["grid.domain"].split(","))
            cfg.grid_domain = (lo, hi)
        if "grid.periodic" in prob:
            cfg.grid_periodic = _parse_bool(prob["grid.periodic"])
        if "cost.kind" in prob:
            cfg.cost_kind = prob["cost.kind"].strip()
        if "cost.a" in prob:
            cfg.cost_a = float(prob["cost.a"])
        if "cost.cap" in prob:
            cfg.cost_cap = float(prob["cost.cap"])
        if "eta" in prob:
            cfg.eta = float(prob["eta"])
        if "m" in prob:
            cfg.m = int(prob["m"])
        if "anchor_index" in prob:
            cfg.anchor_index = int(prob["anchor_index"])

        sol = section("solver")
        if "experiment" in sol:
            cfg.experiment = sol["experiment"].strip()
        if "scheme" in sol:
            cfg.schemes = tuple(s.strip() for s in sol["scheme"].split(",") if s.strip())
        if "h" in sol:
            cfg.h_values = tuple(
                _parse_fraction(v) for v in sol["h"].split(",") if v.strip()
            )
        if "tol" in sol:
            cfg.tol = float(sol["tol"])
        if "euler.F" in sol:
            cfg.euler_f = sol["euler.F"].strip()
        if "euler.beta" in sol:
            cfg.euler_beta = float(sol["euler.beta"])
        if "euler.T" in sol:
            cfg.euler_t = float(sol["euler.T"])

        out = section("output")
        if "dir" in out:
            cfg.out_dir = out["dir"].strip()
        if "heatmaps" in out:
            cfg.heatmaps = _parse_bool(out["heatmaps"])
        if "snapshots" in out:
            cfg.snapshots = tuple(
                float(v) for v in out["snapshots"].split(",") if v.strip()
            )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {cfg.experiment!r}, expected one of {EXPERIMENTS}"
        )
    if cfg.eta <= 0:
        raise ConfigError("eta must be positive")
    if cfg.grid_n < 2:
        raise ConfigError("grid.n must be at least 2")
    return cfg


def build_problem(cfg: RunConfig):
    from . import costs
    from .dual import ProblemParams

    grid = costs.uniform_grid(cfg.grid_n, cfg.grid_domain, cfg.grid_periodic)
    rho = costs.uniform_marginal(grid)
    kw = {}
    if cfg.cost_kind == "log":
        kw["a"] = cfg.cost_a
    if cfg.cost_kind == "coulomb_truncated" and cfg.cost_cap is not None:
        kw["cap"] = cfg.cost_cap
    bundle = costs.build_cost_matrix(grid, cfg.cost_kind, cfg.m, **kw)
    return ProblemParams(
        eta=cfg.eta, m=cfg.m, marginal=rho, bundle=bundle, anchor=cfg.anchor_index
    )


def build_euler_problem(cfg: RunConfig):
    from . import costs
    from .euler_chain import EulerProblem, final_map

    grid = costs.uniform_grid(cfg.grid_n, cfg.grid_domain, cfg.grid_periodic)
    rho = costs.uniform_marginal(grid)
    spec = cfg.euler_f
    if "," in spec:
        spec = [int(v) for v in spec.split(",")]
    return EulerProblem(
        marginal=rho,
        m=cfg.m,
        final_map=final_map(grid, spec),
        beta=cfg.euler_beta,
        T=cfg.euler_t,
        eta=cfg.eta,
        anchor=cfg.anchor_index,
    )


# ---------------------------------------------------------------------------
# output writers

def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_potentials_csv(path, snapshots, grid):
    """snapshots: iterable of (epsilon, phi_vector); sorted on write."""
    xs = grid.coords()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epsilon", "index", "x", "phi"])
        for eps, phi in sorted(snapshots, key=lambda t: t[0]):
            for idx, value in enumerate(phi):
                writer.writerow([_fmt(float(eps)), idx, _fmt(float(xs[idx])),
                                 _fmt(float(value))])


def read_potentials_csv(path):
    """Inverse of write_potentials_csv: {epsilon: phi array}."""
    import numpy as np

    data = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            data.setdefault(float(row["epsilon"]), []).append(
                (int(row["index"]), float(row["phi"]))
            )
    return {
        eps: np.array([v for _, v in sorted(rows)]) for eps, rows in data.items()
    }


def write_coupling_csv(path, matrix, grid):
    xs = grid.coords()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["i", "j", "x_i", "x_j", "gamma"])
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                writer.writerow(
                    [i, j, _fmt(float(xs[i])), _fmt(float(xs[j])),
                     _fmt(float(matrix[i, j]))]
                )


def write_report(path, entries):
    with open(path, "w") as handle:
        for key, value in entries:
            handle.write(f"{key}={_fmt(value)}\n")


def read_report(path) -> dict:
    out = {}
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                out[key] = value
    return out


def write_pgm(path, matrix):
    """Plain portable graymap of a nonnegative matrix, max scaled to white."""
    import numpy as np

    mat = np.asarray(matrix, dtype=float)
    top = mat.max()
    levels = np.zeros_like(mat, dtype=int) if top <= 0 else np.rint(
        255.0 * mat / top
    ).astype(int)
    with open(path, "w") as handle:
        handle.write(f"P2\n{mat.shape[1]} {mat.shape[0]}\n255\n")
        for row in levels:
            handle.write(" ".join(str(v) for v in row) + "\n")


def convergence_slope(errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    import numpy as np

    pts = [(float(h), float(e)) for h, e in errors]
    if len(pts) < 3:
        raise MMOTError("need at least 3 points for a slope estimate")
    if any(e <= 0 for _, e in pts) or any(h <= 0 for h, _ in pts):
        raise MMOTError("slope estimation needs positive h and errors")
    hs = np.log([h for h, _ in pts])
    es = np.log([e for _, e in pts])
    if np.ptp(hs) == 0:
        raise MMOTError("slope estimation needs distinct h values")
    return float(np.polyfit(hs, es, 1)[0])


# ---------------------------------------------------------------------------
# experiments

def _initial_potential(params, tol):
    from .dual import Potential
    from .two_marginal import sinkhorn_two_marginal

    sol = sinkhorn_two_marginal(
        params.marginal, params.bundle.W, params.eta, tol=tol,
        anchor=params.anchor,
    )
    return Potential(sol.phi, params.anchor), sol


def run_convergence_study(cfg: RunConfig, out: Path) -> str:
    import numpy as np

    from .ode import integrate
    from .refsolve import minimize_backtracking

    params = build_problem(cfg)
    phi0, _ = _initial_potential(params, min(cfg.tol, 1e-10))
    ref, ref_report = minimize_backtracking(params, 1.0, tol=cfg.tol)

    rows = []
    slopes = []
    for scheme in cfg.schemes:
        errs = []
        for h in cfg.h_values:
            traj = integrate(params, phi0, scheme, h)
            err = float(np.max(np.abs(traj.phis[-1] - ref.values)))
            rows.append((scheme, h, err))
            errs.append((float(h), err))
        slopes.append((scheme, convergence_slope(errs)))

    with open(out / "errors.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["scheme", "h", "error"])
        for scheme, h, err in rows:
            writer.writerow([scheme, _fmt(float(h)), _fmt(err)])
    entries = [
        ("experiment", "convergence_study"),
        ("ref_iterations", ref_report.iterations),
        ("ref_residual", ref_report.grad_norm),
    ]
    for scheme, slope in slopes:
        entries.append((f"slope_{scheme}", slope))
    write_report(out / "report.txt", entries)
    return ", ".join(f"{s} slope {v:.3f}" for s, v in slopes)


def run_compare(cfg: RunConfig, out: Path) -> str:
    import numpy as np

    from .ode import integrate
    from .refsolve import minimize_backtracking
    from .sinkhorn_mm import solve_symmetric_mm

    params = build_problem(cfg)
    phi0, _ = _initial_potential(params, min(cfg.tol, 1e-10))
    ref, ref_report = minimize_backtracking(params, 1.0, tol=cfg.tol)
    scale = float(np.max(np.abs(ref.values)))

    rows = []
    for scheme in cfg.schemes:
        start = time.perf_counter()
        traj = integrate(params, phi0, scheme, cfg.h_values[0])
        wall = time.perf_counter() - start
        rel = float(np.max(np.abs(traj.phis[-1] - ref.values))) / scale
        rows.append((scheme, rel, traj.steps, wall))
    start = time.perf_counter()
    phi_s, report = solve_symmetric_mm(params, 1.0, tol=cfg.tol)
    wall = time.perf_counter() - start
    rel = float(np.max(np.abs(phi_s.values - ref.values))) / scale
    rows.append(("sinkhorn", rel, report.iterations, wall))

    with open(out / "compare.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["scheme", "relative_error", "iterations", "wall_seconds"])
        for name, rel, iters, wall in rows:
            writer.writerow([name, _fmt(rel), iters, _fmt(wall)])
    entries = [("experiment", "compare"),
               ("ref_iterations", ref_report.iterations),
               ("ref_residual", ref_report.grad_norm)]
    for name, rel, iters, wall in rows:
        entries += [(f"relative_error_{name}", rel), (f"iterations_{name}", iters),
                    (f"wall_seconds_{name}", wall)]
    write_report(out / "report.txt", entries)
    return "; ".join(f"{n}: rel {r:.2e}, {i} its, {w:.1f}s" for n, r, i, w in rows)


def run_trajectory(cfg: RunConfig, out: Path) -> str:
    import numpy as np

    from . import dual
    from .coupling import reconstruct_pair_marginal
    from .ode import integrate

    params = build_problem(cfg)
    phi0, _ = _initial_potential(params, min(cfg.tol, 1e-10))
    traj = integrate(params, phi0, cfg.schemes[0], cfg.h_values[0])

    snaps = []
    entries = [("experiment", "trajectory"), ("scheme", traj.scheme),
               ("h", traj.h)]
    for eps in cfg.snapshots:
        k = int(round(eps * traj.steps))
        if abs(k / traj.steps - eps) > 1e-12:
            raise MMOTError(f"snapshot {eps} is not an integration node")
        phi = traj.phis[k]
        snaps.append((k / traj.steps, phi))
        pair = reconstruct_pair_marginal(params, phi, k / traj.steps)
        label = format(eps, "g").replace(".", "p")
        write_coupling_csv(out / f"coupling_eps{label}.csv", pair,
                           params.marginal.grid)
        if cfg.heatmaps:
            write_pgm(out / f"coupling_eps{label}.pgm", pair)
        residual = float(np.max(np.abs(dual.gradient(params, phi, k / traj.steps))))
        entries.append((f"residual_eps{label}", residual))
    write_potentials_csv(out / "potentials.csv", snaps, params.marginal.grid)
    entries.append(("final_grad_norm", float(traj.grad_norms[-1])))
    write_report(out / "report.txt", entries)
    return f"{len(snaps)} snapshots, final residual {traj.grad_norms[-1]:.2e}"


def run_euler(cfg: RunConfig, out: Path) -> str:
    import numpy as np

    from .euler_chain import chain_contract, chain_sinkhorn, integrate_chain

    problem = build_euler_problem(cfg)
    start = time.perf_counter()
    traj = integrate_chain(problem, scheme=cfg.schemes[0], h=cfg.h_values[0])
    ode_wall = time.perf_counter() - start
    start = time.perf_counter()
    stack_s, report = chain_sinkhorn(problem, 1.0, tol=cfg.tol)
    sink_wall = time.perf_counter() - start

    final = traj.final(problem.anchor)
    scale = float(np.max(np.abs(stack_s.values)))
    rel = float(np.max(np.abs(final.values - stack_s.values))) / scale

    xs = problem.marginal.grid.coords()
    with open(out / "euler_potentials.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time", "index", "x", "phi_ode", "phi_sinkhorn"])
        for i in range(problem.m):
            for idx in range(problem.n):
                writer.writerow([i, idx, _fmt(float(xs[idx])),
                                 _fmt(float(final.values[i, idx])),
                                 _fmt(float(stack_s.values[i, idx]))])
    stats = chain_contract(problem, final, 1.0, need_eps=False)
    for i in range(1, problem.m):
        mat = stats.pair_marginals[(0, i)]
        write_coupling_csv(out / f"transition_0_{i}.csv", mat,
                           problem.marginal.grid)
        if cfg.heatmaps:
            write_pgm(out / f"transition_0_{i}.pgm", mat)

    entries = [
        ("experiment", "euler"),
        ("scheme", traj.scheme),
        ("h", traj.h),
        ("relative_error_vs_sinkhorn", rel),
        ("ode_grad_norm", float(traj.grad_norms[-1])),
        ("sinkhorn_sweeps", report.sweeps),
        ("sinkhorn_residual", report.residual),
        ("wall_seconds_ode", ode_wall),
        ("wall_seconds_sinkhorn", sink_wall),
    ]
    write_report(out / "report.txt", entries)
    return f"rel err vs sinkhorn {rel:.2e} ({report.sweeps} sweeps)"


RUNNERS = {
    "convergence_study": run_convergence_study,
    "compare": run_compare,
    "trajectory": run_trajectory,
    "euler": run_euler,
}


def run(config_path, out_override=None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(out_override) if out_override else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = RUNNERS[cfg.experiment](cfg, out)
    except MMOTError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    print(f"{cfg.experiment}: {summary} -> {out}")
    return 0


def validate(config_path) -> int:
    try:
        cfg = load_config(config_path)
        if cfg.experiment == "euler":
            build_euler_problem(cfg)
        else:
            build_problem(cfg)
    except (ConfigError, MMOTError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(
        f"ok: experiment={cfg.experiment} n={cfg.grid_n} m={cfg.m} "
        f"eta={cfg.eta} schemes={','.join(cfg.schemes)}"
    )
    return 0


def _set_threads(k: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(k)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(k)
    except ImportError:
        pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mmotflow",
        description="multi-marginal entropic transport experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="execute the experiment in a config")
    run_parser.add_argument("config")
    run_parser.add_argument("--out", default=None, help="override output directory")
    run_parser.add_argument("--threads", type=int, default=None)
    val_parser = sub.add_parser("validate", help="parse and check a config")
    val_parser.add_argument("config")
    val_parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    if args.threads:
        _set_threads(args.threads)
    if args.command == "run":
        return run(args.config, args.out)
    return validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
