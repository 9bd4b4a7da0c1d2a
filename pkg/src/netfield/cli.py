"""Command-line experiment driver.

Every subcommand reads one JSON config, writes CSVs, a JSON summary, figures,
a run log, and a manifest under --out.  Exit codes: 0 ok, 2 config/schema
problem, 3 numerical abort, 4 I/O failure.

Heavy imports happen inside the handlers so --threads can pin BLAS pools
before the first numpy import.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

SUBCOMMANDS = (
    "sample", "build-graph", "energy-compare", "rates",
    "recover", "recover-sweep", "pde-run", "boundary-gap",
)


class _Log:
    def __init__(self, path, quiet):
        self.fh = open(path, "w")
        self.quiet = quiet
        self.t0 = time.time()

    def __call__(self, msg):
        line = f"[{time.time() - self.t0:8.2f}s] {msg}"
        self.fh.write(line + "\n")
        self.fh.flush()
        if not self.quiet:
            print(line)

    def close(self):
        self.fh.close()


def _parser():
    p = argparse.ArgumentParser(
        prog="netfield",
        description="Weighted-metric graph energies, field recovery, and "
                    "reaction-diffusion experiments.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="path to a JSON config file")
    p.add_argument("--out", default=None,
                   help="output directory (default: 'out' key in the config, else ./out)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP thread pools")
    p.add_argument("--quiet", action="store_true", help="suppress stdout progress")
    return p


# ---------------------------------------------------------------------------
# subcommand handlers; each returns a list of output paths


def _cmd_sample(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import build_domain, build_field, require
    from .fields import ConstantField
    from .geometry import sample_points

    domain = build_domain(cfg)
    n = require(cfg, "n", int, "sample")
    rho = build_field(cfg, "rho", default=ConstantField(1.0)) if "rho" in cfg else None
    log(f"sampling {n} points, seed {seed}")
    cloud = sample_points(domain, rho, n, seed)
    d = cloud.points.shape[1]
    cols = [f"x{k}" for k in range(d)]
    outs = [rep.write_csv(outdir / "points.csv", cols, cloud.points)]
    outs.append(rep.fig_cloud(outdir / "points.png", cloud.points,
                              title=f"n={n}, seed={seed}"))
    outs.append(rep.write_json(outdir / "summary.json", {
        "n": n, "d": d, "seed": seed,
        "bbox_lo": cloud.points.min(axis=0), "bbox_hi": cloud.points.max(axis=0),
    }))
    return outs


def _cmd_build_graph(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import build_domain, build_field, build_kernel, build_quad, require, resolve_eps
    from .geometry import sample_points
    from .graph import build_graph, write_edge_list

    domain = build_domain(cfg)
    n = require(cfg, "n", int, "build-graph")
    rho = build_field(cfg, "rho", default=None) if "rho" in cfg else None
    backend = cfg.get("backend", "euclidean")
    g = build_field(cfg, "g") if backend != "euclidean" else None
    kernel = build_kernel(cfg)
    quad = build_quad(cfg)
    cloud = sample_points(domain, rho, n, seed)
    eps = resolve_eps(cfg, n, domain.d)
    log(f"building {backend} graph at eps={eps:.5g} on {n} points")
    graph = build_graph(cloud, eps, kernel, g=g, backend=backend,
                        domain=domain if backend == "segment" else None,
                        quad=quad)
    log(f"{graph.n_edges} edges kept")
    outs = [Path(write_edge_list(outdir / "edges.txt", graph))]
    outs.append(rep.fig_degree_hist(outdir / "degrees.png", graph))
    outs.append(rep.write_json(outdir / "summary.json", {
        "n": n, "d": domain.d, "eps": eps, "n_edges": graph.n_edges,
        "backend": backend, "kernel": kernel.profile, "seed": seed,
        "mean_degree": 2.0 * graph.n_edges / n,
    }))
    return outs


def _cmd_energy_compare(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import (build_domain, build_field, build_kernel, build_quad,
                         require, resolve_eps)
    from .energy import local_energy, nonlocal_energy, nonlocal_energy_grid
    from .fields import ConstantField
    from .geometry import Box, sample_points
    from .graph import build_graph, dirichlet_energy

    domain = build_domain(cfg)
    g = build_field(cfg, "g")
    u = build_field(cfg, "u")
    rho = build_field(cfg, "rho", default=ConstantField(1.0))
    n = require(cfg, "n", int, "energy-compare")
    kernel = build_kernel(cfg)
    quad = build_quad(cfg)
    eps = resolve_eps(cfg, n, domain.d)

    cloud = sample_points(domain, rho, n, seed)
    graph = build_graph(cloud, eps, kernel, g=g, backend="segment", quad=quad)
    e_n = dirichlet_energy(graph, u(cloud.points))
    log(f"discrete energy {e_n:.6g} (eps={eps:.5g}, {graph.n_edges} edges)")

    if isinstance(domain, Box):
        i_eps = nonlocal_energy_grid(domain, rho, g, u, eps, kernel,
                                     nx=int(cfg.get("nx", 128)),
                                     ns=int(cfg.get("ns", 32)), quad=quad)
        i_err = 0.0
    else:
        i_eps, i_err = nonlocal_energy(domain, rho, g, u, eps, kernel,
                                       mc_pairs=int(cfg.get("mc_pairs", 20000)),
                                       seed=seed + 1, quad=quad)
    log(f"nonlocal energy {i_eps:.6g}")
    i_loc = local_energy(domain, rho, g, u, tol=float(cfg.get("local_tol", 1e-6)))
    log(f"local energy {i_loc:.6g}")

    rows = [("discrete", e_n, 0.0), ("nonlocal", i_eps, i_err), ("local", i_loc, 0.0)]
    outs = [rep.write_csv(outdir / "energies.csv", ["quantity", "value", "stderr"], rows)]
    outs.append(rep.fig_energy_bars(
        outdir / "energies.png", [r[0] for r in rows], [r[1] for r in rows],
        errors=[r[2] for r in rows], title=f"eps={eps:.4g}, n={n}"))
    outs.append(rep.write_json(outdir / "summary.json", {
        "eps": eps, "n": n, "seed": seed, "n_edges": graph.n_edges,
        "discrete": e_n, "nonlocal": i_eps, "nonlocal_stderr": i_err,
        "local": i_loc,
        "gap_discrete_nonlocal": abs(e_n - i_eps),
        "gap_nonlocal_local": abs(i_eps - i_loc),
    }))
    return outs


def _cmd_rates(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import build_domain, build_field, build_kernel, build_quad, require
    from .energy import (rate_experiment_discrete_vs_nonlocal,
                         rate_experiment_nonlocal_vs_local,
                         rate_experiment_straight_line)
    from .fields import ConstantField, estimate_bounds

    kind = require(cfg, "kind", str, "rates")
    domain = build_domain(cfg)
    g = build_field(cfg, "g")
    if kind == "nonlocal-vs-local":
        u = build_field(cfg, "u")
        rho = build_field(cfg, "rho", default=ConstantField(1.0))
        kernel = build_kernel(cfg, default_profile="triangular")
        report = rate_experiment_nonlocal_vs_local(
            domain, rho, g, u, cfg["eps_values"], kernel,
            nx=int(cfg.get("nx", 2048)), ns=int(cfg.get("ns", 512)),
            quad=build_quad(cfg), local_tol=float(cfg.get("local_tol", 1e-7)),
            drop_largest=bool(cfg.get("drop_largest", False)))
    elif kind == "discrete-vs-nonlocal":
        u = build_field(cfg, "u")
        rho = build_field(cfg, "rho", default=ConstantField(1.0))
        kernel = build_kernel(cfg, default_profile="triangular")
        from .config import eps_spec
        spec = eps_spec(cfg)
        rule, C = (spec[1], spec[2]) if spec[0] == "rule" else ("per-d-plus-2", 1.0)
        report = rate_experiment_discrete_vs_nonlocal(
            domain, rho, g, u, cfg["n_values"], int(cfg["n_seeds"]), kernel,
            C=C, rule=rule, quad=build_quad(cfg),
            nx=int(cfg.get("nx", 128)), ns=int(cfg.get("ns", 32)),
            base_seed=seed)
    else:
        bounds = estimate_bounds(g, domain, seed=seed)
        report = rate_experiment_straight_line(
            g, domain, cfg["x0"], cfg["radii"], float(cfg["h"]), bounds,
            B=float(cfg.get("B", 0.0)),
            include_diagonals=bool(cfg.get("include_diagonals", True)))
    log(f"{kind}: fitted slope {report.slope:.3f} over {len(report.sweep_values)} points")
    outs = rep.rate_report_files(outdir, "rates", report)
    outs.append(rep.fig_rate(outdir / "rates.png", report, title=kind))
    return outs


def _recover_once(cfg, seed, log):
    from .config import build_domain, build_field, build_kernel, build_quad, build_train_config, eps_spec
    from .recovery import recovery_experiment

    domain = build_domain(cfg)
    g = build_field(cfg, "g")
    kernel = build_kernel(cfg)
    quad = build_quad(cfg)
    spec = eps_spec(cfg)
    rule, C = (spec[1], spec[2]) if spec[0] == "rule" else ("per-d-plus-2", 1.0)
    tc = build_train_config(cfg, seed)
    n = cfg["n"]
    run = recovery_experiment(domain, g, n, kernel=kernel, rule=rule, C=C,
                              n_test=int(cfg["n_test"]), seed=seed,
                              config=tc, quad=quad)
    m = run.metrics
    log(f"n={n} seed={seed}: loss {m.final_train_loss:.3e} "
        f"({run.result.stop_reason} after {run.result.n_iters} iters), "
        f"rel MAE {m.rmae:.4g}")
    return run


def _cmd_recover(cfg, outdir, seed, log):
    from . import reporting as rep
    from .recovery import kfold_cv, save_checkpoint, write_pair_dataset
    from .config import build_train_config, require

    require(cfg, "n", int, "recover")
    run = _recover_once(cfg, seed, log)
    m = run.metrics
    outs = []
    write_pair_dataset(outdir / "pairs.csv", run.dataset)
    outs.append(outdir / "pairs.csv")
    save_checkpoint(outdir / "model.ckpt", run.result.model)
    outs.append(outdir / "model.ckpt")
    summary = {
        "n": cfg["n"], "seed": seed, "eps": run.eps,
        "n_pairs": run.dataset.size,
        "final_train_loss": m.final_train_loss,
        "stop_reason": run.result.stop_reason,
        "n_iters": run.result.n_iters,
        "mae": m.mae, "rmse": m.rmse, "rmae": m.rmae, "rrmse": m.rrmse,
        "normalization_mu": run.stats.mu, "normalization_var": run.stats.var,
    }
    if cfg.get("cv", False):
        tc = build_train_config(cfg, seed)
        folds = kfold_cv(run.dataset, tc)
        summary["cv_folds"] = [{"train_loss": a, "val_loss": b} for a, b in folds]
        log(f"{len(folds)}-fold CV val losses: "
            + ", ".join(f"{b:.3e}" for _, b in folds))
    outs.append(rep.write_json(outdir / "summary.json", summary))
    outs.append(rep.fig_loss_trace(outdir / "loss.png", run.result.trace))
    from .config import build_domain, build_field
    domain = build_domain(cfg)
    import numpy as np
    radius = float(np.max(np.abs(run.test_points)))
    outs.append(rep.fig_recovery_profile(
        outdir / "profile.png", build_field(cfg, "g"), run.result.model,
        radius, domain.d))
    return outs


def _cmd_recover_sweep(cfg, outdir, seed, log):
    import numpy as np

    from . import reporting as rep
    from .recovery import aggregate_log_stats

    n_values = cfg["n_values"]
    n_seeds = int(cfg["n_seeds"])
    rows = []
    agg_rows = []
    seeds_used = []
    series_rmae = []
    series_mstd = []
    for n in n_values:
        one = dict(cfg)
        one["n"] = int(n)
        rmaes, losses = [], []
        for k in range(n_seeds):
            run_seed = seed + 100 * k
            seeds_used.append(run_seed)
            run = _recover_once(one, run_seed, log)
            m = run.metrics
            rows.append((n, run_seed, run.eps, run.dataset.size,
                         m.final_train_loss, run.result.stop_reason,
                         run.result.n_iters, m.mae, m.rmse, m.rmae, m.rrmse))
            rmaes.append(m.rmae)
            losses.append(m.final_train_loss)
        gm, mstd = aggregate_log_stats(rmaes)
        gl, _ = aggregate_log_stats(losses)
        agg_rows.append((n, gm, mstd, gl,
                         int(sum(1 for v in losses if v <= 1e-6))))
        series_rmae.append(gm)
        series_mstd.append(mstd)
        log(f"n={n}: geometric-mean rel MAE {gm:.4g} (mult std {mstd:.3g})")
    outs = [rep.write_csv(
        outdir / "runs.csv",
        ["n", "seed", "eps", "n_pairs", "final_train_loss", "stop_reason",
         "n_iters", "mae", "rmse", "rmae", "rrmse"], rows)]
    outs.append(rep.write_csv(
        outdir / "aggregate.csv",
        ["n", "gm_rmae", "mstd_rmae", "gm_final_loss", "n_loss_le_1e-6"],
        agg_rows))
    outs.append(rep.write_json(outdir / "summary.json", {
        "n_values": n_values, "n_seeds": n_seeds,
        "gm_rmae": series_rmae, "mstd_rmae": series_mstd,
        "seeds": seeds_used,
    }))
    outs.append(rep.fig_sweep(
        outdir / "sweep.png", np.array(n_values, dtype=float),
        {"rel MAE of 1/g^(d+2)": (series_rmae, series_mstd)},
        title=f"{n_seeds} seeds per n"))
    return outs, seeds_used


def _cmd_pde_run(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import build_domain, build_field
    from .diffusion import problem_from_fields, run

    domain = build_domain(cfg)
    g = build_field(cfg, "g") if "g" in cfg else None
    D = build_field(cfg, "D") if "D" in cfg else None
    u0 = build_field(cfg, "u0")
    prob = problem_from_fields(
        domain, g=g, D_field=D, C=float(cfg.get("C", 0.0)), u0_field=u0,
        dt=float(cfg["dt"]), T=float(cfg["T"]),
        resolution=cfg.get("resolution"),
        d_exponent=cfg.get("d_exponent"))
    log(f"{prob.n_cells} cells, dt={prob.dt}, T={prob.T}")
    trace = run(prob, cg_tol=float(cfg.get("cg_tol", 1e-12)))
    rel_drift = abs(trace.mass[-1] - trace.mass[0]) / abs(trace.mass[0])
    log(f"final mass {trace.mass[-1]:.9g} (relative drift {rel_drift:.3e})")
    outs = [rep.write_csv(
        outdir / "trace.csv",
        ["t", "mass", "min", "max", "boundary_integral"],
        zip(trace.t, trace.mass, trace.min, trace.max, trace.boundary_integral))]
    outs.append(rep.fig_trace(outdir / "trace.png", trace))
    outs.append(rep.write_json(outdir / "summary.json", {
        "n_cells": prob.n_cells, "dt": prob.dt, "T": prob.T,
        "C": prob.C, "final_mass": trace.mass[-1],
        "relative_mass_drift": rel_drift,
        "final_min": trace.min[-1], "final_max": trace.max[-1],
    }))
    return outs


def _cmd_boundary_gap(cfg, outdir, seed, log):
    from . import reporting as rep
    from .config import build_domain, build_field
    from .diffusion import boundary_gap_experiment

    domain = build_domain(cfg)
    g = build_field(cfg, "g")
    u0 = build_field(cfg, "u0")
    gt = boundary_gap_experiment(
        g, domain, float(cfg.get("C", 0.0)), u0,
        dt=float(cfg.get("dt", 1e-3)), T=float(cfg.get("T", 1.0)),
        resolution=cfg.get("resolution"),
        d_exponent=cfg.get("d_exponent"),
        cg_tol=float(cfg.get("cg_tol", 1e-12)))
    log(f"gap peaks at t={gt.argmax_time:.4g} with value {gt.peak:.4e}")
    outs = [rep.write_csv(outdir / "gap.csv", ["t", "gap"], zip(gt.t, gt.gap))]
    outs.append(rep.fig_gap(outdir / "gap.png", gt))
    outs.append(rep.write_json(outdir / "summary.json", {
        "argmax_time": gt.argmax_time, "peak": gt.peak,
        "first_gap": gt.gap[0], "last_gap": gt.gap[-1],
    }))
    return outs


_HANDLERS = {
    "sample": _cmd_sample,
    "build-graph": _cmd_build_graph,
    "energy-compare": _cmd_energy_compare,
    "rates": _cmd_rates,
    "recover": _cmd_recover,
    "recover-sweep": _cmd_recover_sweep,
    "pde-run": _cmd_pde_run,
    "boundary-gap": _cmd_boundary_gap,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .config import load_config, validate
    from .errors import ConfigError, NumericalError

    log = None
    try:
        cfg = load_config(args.config)
        validate(cfg, args.command)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        outdir = Path(args.out or cfg.get("out", "out"))
        outdir.mkdir(parents=True, exist_ok=True)
        log = _Log(outdir / "run.log", args.quiet)
        log(f"netfield {args.command}, config {args.config}, out {outdir}")
        result = _HANDLERS[args.command](cfg, outdir, seed, log)
        if isinstance(result, tuple):
            outputs, seeds = result
        else:
            outputs, seeds = result, [seed]
        from .reporting import write_manifest
        write_manifest(outdir, args.command, cfg, seeds, outputs)
        log("done")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # config values that pass the schema but fail library validation
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    finally:
        if log is not None:
            log.close()


if __name__ == "__main__":
    sys.exit(main())
