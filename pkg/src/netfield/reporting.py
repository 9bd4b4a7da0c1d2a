"""Deterministic file output: CSV, JSON summaries, manifests, figures.

Floats are formatted with repr (shortest round-trip decimal), so rerunning
a seeded experiment reproduces byte-identical files on one platform.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _fmt(v):
    if isinstance(v, (bool, int, str)):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    try:
        import numpy as np
        if isinstance(v, np.integer):
            return str(int(v))
        if isinstance(v, np.floating):
            return repr(float(v))
    except ImportError:
        pass
    return str(v)


def write_csv(path, columns, rows):
    """columns: list of names; rows: iterable of same-length value tuples."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(", ".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError("row width does not match header")
            fh.write(", ".join(_fmt(v) for v in row) + "\n")
    return path


def write_json(path, obj):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(v):
    import numpy as np
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON-serializable: {type(v)}")


def write_manifest(outdir, command, config, seeds, outputs):
    """Audit record: resolved config, package version, seeds, output files."""
    from . import __version__
    return write_json(Path(outdir) / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": list(seeds),
        "outputs": sorted(str(o) for o in outputs),
    })


def rate_report_files(outdir, name, report):
    """CSV of (sweep_value, gap, stderr) plus a JSON summary with the slope."""
    outdir = Path(outdir)
    csv_path = write_csv(
        outdir / f"{name}.csv",
        ["sweep_value", "gap", "stderr"],
        zip(report.sweep_values, report.gaps, report.stderrs),
    )
    summary = {
        "sweep_name": report.sweep_name,
        "slope": report.slope,
        "intercept": report.intercept,
        "fit_residual": report.fit_residual,
        "n_points": len(report.sweep_values),
    }
    summary.update(report.extra)
    json_path = write_json(outdir / f"{name}_summary.json", summary)
    return [csv_path, json_path]


def fig_rate(path, report, title=None):
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.loglog(report.sweep_values, report.gaps, "o-", label="measured gap")
    import numpy as np
    xs = np.array([report.sweep_values.min(), report.sweep_values.max()])
    ax.loglog(xs, np.exp(report.intercept) * xs**report.slope, "--",
              label=f"fit slope {report.slope:.2f}")
    if np.any(report.stderrs > 0):
        ax.errorbar(report.sweep_values, report.gaps, yerr=report.stderrs,
                    fmt="none", alpha=0.5)
    ax.set_xlabel(report.sweep_name)
    ax.set_ylabel("energy gap")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_cloud(path, points, title=None):
    import numpy as np
    pts = np.asarray(points)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    if pts.shape[1] == 1:
        ax.hist(pts[:, 0], bins=40)
        ax.set_xlabel("x")
    else:
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.6)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_degree_hist(path, graph):
    import numpy as np
    deg = np.zeros(graph.n, dtype=int)
    np.add.at(deg, graph.edge_i, 1)
    np.add.at(deg, graph.edge_j, 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.hist(deg, bins=min(40, max(5, deg.max() + 1)))
    ax.set_xlabel("node degree")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_energy_bars(path, labels, values, errors=None, title=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    x = range(len(labels))
    ax.bar(x, values, yerr=errors, capsize=4, color="#4878a8")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylabel("energy")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_trace(path, trace, title=None):
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].plot(trace.t, trace.mass)
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("total mass")
    axes[1].plot(trace.t, trace.min, label="min u")
    axes[1].plot(trace.t, trace.max, label="max u")
    axes[1].set_xlabel("t")
    axes[1].legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_gap(path, gap_trace, title=None):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.plot(gap_trace.t, gap_trace.gap)
    ax.axvline(gap_trace.argmax_time, ls="--", alpha=0.5,
               label=f"peak at t={gap_trace.argmax_time:.3g}")
    ax.set_xlabel("t")
    ax.set_ylabel("boundary integral difference")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_sweep(path, n_values, series, title=None):
    """Log-log metric-vs-n plot; series maps label -> (gm array, mstd array)."""
    import numpy as np
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    for label, (gm, mstd) in series.items():
        gm = np.asarray(gm)
        mstd = np.asarray(mstd)
        ax.loglog(n_values, gm, "o-", label=label)
        ax.fill_between(n_values, gm / mstd, gm * mstd, alpha=0.2)
    ax.set_xlabel("n")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_recovery_profile(path, g_true, model, radius, d, title=None):
    """Radial profile comparison between truth and the fitted field."""
    import numpy as np
    r = np.linspace(0.0, radius, 200)
    pts = np.zeros((len(r), d))
    pts[:, 0] = r
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.plot(r, g_true(pts), label="true g")
    ax.plot(r, model(pts), "--", label="recovered g")
    ax.set_xlabel("radius")
    ax.set_ylabel("g")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def fig_loss_trace(path, trace, title=None):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.semilogy(trace)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)
