"""Delimited outputs and report figures.

CSV writers format floats with ``repr`` so identical inputs always
produce byte-identical files. Figures are rendered with matplotlib
(Figure objects directly, no global pyplot state) and written as SVG,
except the degradation strip which is a PNG image matrix.
"""

import csv
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return value


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_region_csv(regions, path) -> None:
    write_csv(path, ["id", "centroid_x", "centroid_y", "size"],
              [(r.id, float(r.centroid[0]), float(r.centroid[1]), r.size) for r in regions])


def write_bandgap_csv(path, results, composition=None, errors=None) -> None:
    """Rows: region_id,x_composition,e_g_ev,rmse,n_candidates (x blank if unknown)."""
    composition = composition or {}
    rows = []
    for rid in sorted(results):
        res = results[rid]
        entry = composition.get(rid)
        rows.append((rid, None if entry is None else float(entry.x),
                     float(res.e_g), float(res.rmse), res.n_candidates))
    write_csv(path, ["region_id", "x_composition", "e_g_ev", "rmse", "n_candidates"], rows)
    if errors:
        err_path = Path(path).with_name(Path(path).stem + "_errors.csv")
        write_csv(err_path, ["region_id", "error"],
                  [(rid, errors[rid]) for rid in sorted(errors)])


def write_stability_csv(path, results, composition=None) -> None:
    """Rows: region_id,x_composition,i_c_px_hr,degraded."""
    composition = composition or {}
    rows = []
    for r in results:
        entry = composition.get(r.region_id)
        rows.append((r.region_id, None if entry is None else float(entry.x),
                     float(r.i_c), int(r.degraded)))
    write_csv(path, ["region_id", "x_composition", "i_c_px_hr", "degraded"], rows)


def write_metrics_csvs(report, outdir) -> dict:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "accuracy_curve": out / "accuracy_curve.csv",
        "pr_curve": out / "pr_curve.csv",
        "boundary_sweep": out / "boundary_sweep.csv",
        "summary": out / "summary.csv",
    }
    write_csv(paths["accuracy_curve"], ["tolerance_ev", "accuracy"],
              [(float(t), float(a)) for t, a in report.accuracy_curve])
    write_csv(paths["pr_curve"], ["boundary", "precision", "recall"],
              [(float(b), float(p), float(r)) for b, p, r in report.pr_points])
    write_csv(paths["boundary_sweep"], ["boundary", "accuracy"],
              [(float(b), float(a)) for b, a in report.sweep_curve])
    write_csv(paths["summary"],
              ["n_records", "tolerance_ev", "bandgap_accuracy", "pr_auc",
               "best_boundary", "best_accuracy"],
              [(report.n_records, float(report.tol), float(report.accuracy_at_tol),
                float(report.pr_auc), float(report.best_boundary),
                float(report.best_accuracy))])
    return {k: str(v) for k, v in paths.items()}


def _new_axes(xlabel, ylabel, title=None, figsize=(5.0, 3.8)):
    fig = Figure(figsize=figsize)
    ax = fig.add_subplot(111)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)


def plot_parity(records, path) -> None:
    """Automatic vs expert band gap, colored by composition, with the y=x line."""
    pairs = [(r.expert_eg, r.auto_eg, r.x) for r in records
             if r.expert_eg is not None and r.auto_eg is not None]
    fig, ax = _new_axes("expert band gap (eV)", "automatic band gap (eV)")
    if pairs:
        ex, au, xs = map(np.array, zip(*pairs))
        lo, hi = min(ex.min(), au.min()) - 0.02, max(ex.max(), au.max()) + 0.02
        ax.plot([lo, hi], [lo, hi], "k--", linewidth=0.8, label="y = x")
        sc = ax.scatter(ex, au, c=xs, cmap="viridis", s=14, vmin=0.0, vmax=1.0)
        fig.colorbar(sc, ax=ax, label="mix fraction x")
        if ex.size >= 2:
            m, b = np.polyfit(ex, au, 1)
            ax.plot([lo, hi], [m * lo + b, m * hi + b], "k-", linewidth=0.8, label="fit")
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
        ax.legend(loc="upper left", fontsize=8)
    _save(fig, path)


def plot_accuracy_curve(curve, tol, path) -> None:
    fig, ax = _new_axes("band-gap tolerance (eV)", "accuracy")
    ts = [t for t, _ in curve]
    accs = [a for _, a in curve]
    ax.plot(ts, accs, "-", color="tab:blue")
    ax.axvline(tol, color="k", linestyle="--", linewidth=0.8)
    ax.set_ylim(0.0, 1.05)
    _save(fig, path)


def plot_pr_curve(points, auc, path) -> None:
    fig, ax = _new_axes("recall", "precision", title=f"PR-AUC = {auc:.3f}")
    ordered = sorted(points, key=lambda p: (p[2], -p[1]))
    ax.plot([p[2] for p in ordered], [p[1] for p in ordered], "-o",
            color="tab:red", markersize=3)
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.05)
    _save(fig, path)


def plot_boundary_sweep(curve, best_boundary, best_accuracy, path) -> None:
    fig, ax = _new_axes("decision boundary (px hr)", "accuracy")
    ax.plot([b for b, _ in curve], [a for _, a in curve], "-", color="tab:green")
    ax.axvline(best_boundary, color="k", linestyle="--", linewidth=0.8,
               label=f"best {best_accuracy:.3f} @ {best_boundary:.3g}")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_tauc_fit(curve, result, path) -> None:
    """One region's transformed spectrum with the winning edge line."""
    fig, ax = _new_axes("photon energy (eV)", "transformed absorption")
    ax.plot(curve.energies, curve.values, "-", color="0.4", linewidth=0.9)
    lo, hi = result.window
    span = (curve.energies >= lo - 0.05) & (curve.energies <= hi + 0.1)
    line = result.fit.slope * curve.energies + result.fit.intercept
    ax.plot(curve.energies[span], line[span], "r-", linewidth=1.6)
    ax.axvline(result.e_g, color="r", linestyle=":", linewidth=0.8)
    ax.annotate(f"gap = {result.e_g:.3f} eV", (result.e_g, 0.0),
                textcoords="offset points", xytext=(6, 10), fontsize=8)
    ax.set_ylim(bottom=-0.02 * float(curve.values.max() or 1.0))
    _save(fig, path)


def plot_series_strip(series_list, path) -> None:
    """Per-region color trajectories as one image row per region (PNG)."""
    if not series_list:
        raise ValueError("no series to plot")
    mat = np.stack([np.clip(s.colors, 0.0, 1.0) for s in series_list])
    fig = Figure(figsize=(6.0, max(1.5, 0.12 * len(series_list))))
    ax = fig.add_subplot(111)
    ax.imshow(mat, aspect="auto", interpolation="nearest")
    ax.set_xlabel("frame")
    ax.set_ylabel("region")
    _save(fig, path)
